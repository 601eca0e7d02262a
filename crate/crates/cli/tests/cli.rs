use std::path::Path;
use std::process::{Command, Output};

const KEY: &str = "2b7e151628aed2a6abf7158809cf4f3c";

fn scf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scf"))
        .args(args)
        .output()
        .expect("spawn scf")
}

fn ok(args: &[&str]) -> Output {
    let out = scf(args);
    assert!(
        out.status.success(),
        "scf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_the_requested_count_and_a_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.scf");
    let o = ok(&["simulate", "--traces", "256", "--enumerate-pt-byte", "0", "--noise", "0", "--key", KEY, "--out", p(&out)]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("256 traces"), "{stdout}");
    let info = ok(&["info", p(&out), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&info.stdout).unwrap();
    assert_eq!(v["n_traces"], 256);
    assert_eq!(v["n_samples"], 200);
    assert_eq!(v["variant_log"], false);
    assert_eq!(v["metadata"]["plaintext_source"], "enumerate:0001");
    let spec = json(&dir.path().join("t.scf.spec.json"));
    assert_eq!(spec["command"], "simulate");
    assert_eq!(spec["args"]["leakage"]["noise"], 0.0);
    assert_eq!(spec["args"]["leakage"]["trace_length"], 200);
    assert!(!std::fs::read_to_string(dir.path().join("t.scf.spec.json")).unwrap().is_empty());
}

#[test]
fn variant_log_flag_follows_the_option() {
    let dir = tempfile::tempdir().unwrap();
    let with = dir.path().join("with.scf");
    let without = dir.path().join("without.scf");
    let base = ["simulate", "--traces", "8", "--defense", "swapper", "--variants", "3", "--reselect", "per-trace", "--key", KEY];
    ok(&[&base[..], &["--log-variants", "--out", p(&with)]].concat());
    ok(&[&base[..], &["--out", p(&without)]].concat());
    let flag = |f: &Path| {
        let o = ok(&["info", p(f), "--json"]);
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()["variant_log"].clone()
    };
    assert_eq!(flag(&with), true);
    assert_eq!(flag(&without), false);
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.scf");
    assert!(!scf(&["simulate", "--traces", "10", "--out", p(&out)]).status.success());
    assert!(!scf(&["simulate", "--traces", "10", "--key", "abc", "--out", p(&out)]).status.success());
    assert!(!scf(&["simulate", "--traces", "10", "--key", KEY, "--log-variants", "--out", p(&out)]).status.success());
    assert!(!scf(&["simulate", "--traces", "0", "--key", KEY, "--out", p(&out)]).status.success());
    assert!(!scf(&["simulate", "--traces", "10", "--key", KEY, "--defense", "maybe", "--out", p(&out)]).status.success());
    assert!(!scf(&["evaluate", "--traces", "100", "--trials", "0", "--out", p(dir.path())]).status.success());
    assert!(!scf(&["evaluate", "--out", p(dir.path())]).status.success());
}

#[test]
fn noiseless_attack_recovers_the_campaign_key() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.scf");
    let all = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15";
    ok(&["simulate", "--traces", "256", "--enumerate-pt-byte", all, "--noise", "0", "--key", KEY, "--out", p(&t)]);
    let o = ok(&["attack", p(&t)]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["recovered_key"], KEY);
    assert!(report.get("true_key").is_none());

    let r = dir.path().join("r.json");
    ok(&["attack", p(&t), "--truth", KEY, "--window", "12:28", "--out", p(&r)]);
    let report = json(&r);
    assert_eq!(report["window"]["start"], 12);
    assert_eq!(report["window"]["end"], 28);
    for b in report["bytes"].as_array().unwrap() {
        assert_eq!(b["true_rank"], 0);
        let peak = b["guesses"][0]["peak_sample"].as_u64().unwrap();
        assert!((12..28).contains(&peak));
    }
    assert!(dir.path().join("r.json.spec.json").exists());
}

#[test]
fn failed_recovery_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.scf");
    ok(&["simulate", "--traces", "20", "--noise", "5", "--key", KEY, "--out", p(&t)]);
    let o = ok(&["attack", p(&t), "--truth", KEY]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_ne!(report["recovered_key"], KEY);
}

#[test]
fn corrupt_files_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.scf");
    ok(&["simulate", "--traces", "20", "--key", KEY, "--out", p(&t)]);
    let bytes = std::fs::read(&t).unwrap();
    std::fs::write(&t, &bytes[..bytes.len() - 100]).unwrap();
    assert!(!scf(&["attack", p(&t)]).status.success());
    std::fs::write(&t, b"not a trace file at all, definitely").unwrap();
    assert!(!scf(&["attack", p(&t)]).status.success());
    assert!(!scf(&["info", p(&t)]).status.success());
    assert!(!scf(&["attack", p(&dir.path().join("missing.scf"))]).status.success());
}

#[test]
fn evaluate_emits_one_row_per_trial_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["evaluate", "--traces", "200", "--defenses", "none,swapper", "--trials", "3", "--seed", "7", "--out", p(&out)]);
        out
    };
    let a = run("a");
    let b = run("b");
    let rows = std::fs::read_to_string(a.join("outcomes.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 6);
    for f in ["outcomes.csv", "summary.csv", "comparison.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let spec = json(&a.join("spec.json"));
    assert_eq!(spec["resolved"]["grid"]["trials"], 3);
    assert_eq!(spec["resolved"]["setup"]["leakage"]["noise_sigma"], 2.0);
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<_> = ["a.scf", "b.scf"]
        .iter()
        .map(|n| {
            let f = dir.path().join(n);
            ok(&["simulate", "--traces", "300", "--defense", "swapper", "--reselect", "per-op", "--log-variants", "--seed", "3", "--key", KEY, "--out", p(&f)]);
            f
        })
        .collect();
    assert_eq!(std::fs::read(&files[0]).unwrap(), std::fs::read(&files[1]).unwrap());
}

#[test]
fn plaintext_file_drives_the_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.txt");
    std::fs::write(&pts, "# two blocks\n00112233445566778899aabbccddeeff\n\nffeeddccbbaa99887766554433221100\n").unwrap();
    let t = dir.path().join("t.scf");
    ok(&["simulate", "--traces", "2", "--pt-file", p(&pts), "--key", KEY, "--out", p(&t)]);
    assert!(!scf(&["simulate", "--traces", "3", "--pt-file", p(&pts), "--key", KEY, "--out", p(&t)]).status.success());
}
