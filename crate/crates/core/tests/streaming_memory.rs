//! Kept in its own binary so the peak-RSS reading is not polluted by other
//! tests.

use scf_core::campaign::{generate_campaign, PlaintextSource};
use scf_core::cpa::{recover_key, AttackOptions};
use scf_core::leakage::LeakageConfig;
use scf_core::Key128;

fn peak_rss_bytes() -> u64 {
    let s = std::fs::read_to_string("/proc/self/status").expect("procfs");
    let kib: u64 = s
        .lines()
        .find(|l| l.starts_with("VmHWM:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|v| v.parse().ok())
        .expect("VmHWM line");
    kib * 1024
}

#[test]
fn attack_memory_does_not_scale_with_file_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.scf");
    let key = Key128::from_hex("000102030405060708090a0b0c0d0e0f").unwrap();
    let cfg = LeakageConfig { seed: 31, ..LeakageConfig::default() };
    generate_campaign(160_000, &key, cfg, None, PlaintextSource::Random, &path).unwrap();
    let file_len = std::fs::metadata(&path).unwrap().len();

    let opts = AttackOptions { jobs: 2, truth: Some(key), ..AttackOptions::default() };
    let report = recover_key(&path, &opts).unwrap();
    assert_eq!(report.recovered_key, key);

    let peak = peak_rss_bytes();
    assert!(
        peak < file_len,
        "peak RSS {} MiB should stay below the {} MiB file",
        peak >> 20,
        file_len >> 20
    );
}
