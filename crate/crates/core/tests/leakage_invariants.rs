use proptest::prelude::*;
use scf_core::aes::{self, Block128, Key128, OpKind};
use scf_core::bank::{Variant, VariantBank, DEFAULT_LADDER, HW_MAX};
use scf_core::campaign::{Campaign, PlaintextSource};
use scf_core::leakage::{hamming_weight, Defense, LeakageConfig, OpsLayout, Reselect};

fn swapper(seed: u64, sigma: f64, reselect: Reselect) -> LeakageConfig {
    LeakageConfig {
        noise_sigma: sigma,
        defense: Defense::Swapper,
        reselect,
        seed,
        log_variants: true,
        ..LeakageConfig::default()
    }
}

fn ladder3() -> VariantBank {
    VariantBank::ladder(&DEFAULT_LADDER, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_never_changes_ciphertexts(key in any::<[u8; 16]>(), seed in any::<u64>(), per_op in any::<bool>()) {
        let key = Key128(key);
        let reselect = if per_op { Reselect::PerOp } else { Reselect::PerTrace };
        let c = Campaign::new(&key, swapper(seed, 1.0, reselect), Some(ladder3()), PlaintextSource::Random).unwrap();
        for t in 0..8 {
            let tr = c.trace(t).unwrap();
            prop_assert_eq!(tr.ciphertext, aes::encrypt_block(&tr.plaintext, &key, false).0);
        }
    }

    #[test]
    fn noiseless_samples_stay_inside_the_chosen_variant_range(key in any::<[u8; 16]>(), seed in any::<u64>()) {
        let bank = ladder3();
        let cfg = swapper(seed, 0.0, Reselect::PerOp);
        let layout = cfg.layout.clone();
        let c = Campaign::new(&Key128(key), cfg, Some(bank.clone()), PlaintextSource::Random).unwrap();
        for t in 0..4 {
            let tr = c.trace(t).unwrap();
            let log = tr.variant_log.as_ref().unwrap();
            for (i, slot) in layout.slots.iter().enumerate() {
                let v = bank.for_op(slot.op).unwrap()[log[i] as usize];
                for &s in &tr.samples[slot.offset..slot.end()] {
                    let s = s as f64;
                    prop_assert!(s >= v.range_lo - 1e-6 && s <= v.range_hi + 1e-6, "{s} outside {v:?}");
                }
            }
        }
    }

    #[test]
    fn unprotected_attack_slot_is_the_sbox_hamming_weight(key in any::<[u8; 16]>(), seed in any::<u64>()) {
        let cfg = LeakageConfig { noise_sigma: 0.0, seed, ..LeakageConfig::default() };
        let base = cfg.layout.attack_base().unwrap();
        let c = Campaign::new(&Key128(key), cfg, None, PlaintextSource::Random).unwrap();
        let tr = c.trace(0).unwrap();
        for b in 0..16 {
            let want = hamming_weight(aes::attack_point_value(tr.plaintext[b], key[b]));
            prop_assert_eq!(tr.samples[base + b], want as f32);
        }
    }
}

#[test]
fn default_layout_places_the_attack_point_at_twelve() {
    let layout = OpsLayout::standard(200, 4, 8).unwrap();
    assert_eq!(layout.attack_base(), Some(12));
    assert_eq!(layout.slots.len(), 40);
    let ap: Vec<_> = layout.slots.iter().filter(|s| s.is_attack_point()).collect();
    assert_eq!(ap.len(), 1);
    assert_eq!(ap[0].width, 16);
}

#[test]
fn ladder_bank_has_overlapping_neighbours_and_cross_op_collisions() {
    let bank = ladder3();
    assert!(bank.consecutive_overlap());
    assert!(!bank.cross_op_collisions().is_empty());
    for op in OpKind::ALL {
        let l = bank.for_op(op).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!((l[0].range_lo, l[0].range_hi), (1.0, 3.0));
        assert_eq!((l[2].range_lo, l[2].range_hi), (3.0, 5.0));
    }
}

#[test]
fn per_trace_reselection_reuses_one_variant_per_op_kind() {
    let cfg = swapper(9, 0.0, Reselect::PerTrace);
    let layout = cfg.layout.clone();
    let c = Campaign::new(&Key128([3; 16]), cfg, Some(ladder3()), PlaintextSource::Random).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for t in 0..64 {
        let log = c.trace(t).unwrap().variant_log.unwrap();
        for op in OpKind::ALL {
            let picks: std::collections::BTreeSet<u8> = layout
                .slots
                .iter()
                .zip(&log)
                .filter(|(s, _)| s.op == op)
                .map(|(_, &v)| v)
                .collect();
            assert_eq!(picks.len(), 1);
            seen.extend(picks);
        }
    }
    assert_eq!(seen.len(), 3, "all variants get used");
}

#[test]
fn per_op_reselection_varies_within_a_trace() {
    let cfg = swapper(9, 0.0, Reselect::PerOp);
    let c = Campaign::new(&Key128([3; 16]), cfg, Some(ladder3()), PlaintextSource::Random).unwrap();
    let log = c.trace(0).unwrap().variant_log.unwrap();
    let distinct: std::collections::BTreeSet<u8> = log.iter().copied().collect();
    assert!(distinct.len() > 1);
}

#[test]
fn noise_has_the_configured_moments() {
    let sigma = 2.0;
    let cfg = LeakageConfig {
        noise_sigma: sigma,
        seed: 77,
        layout: OpsLayout::empty(200),
        ..LeakageConfig::default()
    };
    let c = Campaign::new(&Key128([0; 16]), cfg, None, PlaintextSource::Random).unwrap();
    let xs: Vec<f64> = c
        .traces(0, 1000)
        .unwrap()
        .iter()
        .flat_map(|t| t.samples.iter().map(|&s| s as f64))
        .collect();
    let n = xs.len() as f64;
    assert!(n >= 1e5);
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // Standard errors of the mean and of the standard deviation.
    assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    assert!((var.sqrt() - sigma).abs() < 3.0 * sigma / (2.0 * n).sqrt(), "std {}", var.sqrt());
}

#[test]
fn zero_noise_is_exact() {
    let cfg = LeakageConfig { noise_sigma: 0.0, seed: 1, ..LeakageConfig::default() };
    let c = Campaign::new(&Key128([0; 16]), cfg, None, PlaintextSource::Random).unwrap();
    let tr = c.trace(5).unwrap();
    assert!(tr.samples[..8].iter().all(|&s| s == 0.0));
    assert!(tr.samples.iter().all(|&s| (0.0..=HW_MAX as f32).contains(&s)));
}

#[test]
fn synthesis_is_deterministic_and_order_free() {
    let c = Campaign::new(&Key128([7; 16]), swapper(5, 2.0, Reselect::PerOp), Some(ladder3()), PlaintextSource::Random)
        .unwrap();
    let batch = c.traces(0, 300).unwrap();
    for t in (0..300).rev().step_by(37) {
        assert_eq!(c.trace(t).unwrap(), batch[t as usize]);
    }
    let again = Campaign::new(&Key128([7; 16]), swapper(5, 2.0, Reselect::PerOp), Some(ladder3()), PlaintextSource::Random)
        .unwrap();
    assert_eq!(again.traces(0, 300).unwrap(), batch);
    let other = Campaign::new(&Key128([7; 16]), swapper(6, 2.0, Reselect::PerOp), Some(ladder3()), PlaintextSource::Random)
        .unwrap();
    assert_ne!(other.trace(0).unwrap(), batch[0]);
}

#[test]
fn enumeration_covers_every_byte_value_per_position() {
    let cfg = LeakageConfig { noise_sigma: 0.0, seed: 3, ..LeakageConfig::default() };
    let c = Campaign::new(&Key128([0; 16]), cfg, None, PlaintextSource::enumerate_all()).unwrap();
    let pts: Vec<Block128> = (0..256).map(|t| c.plaintext(t).unwrap()).collect();
    for b in 0..16 {
        let mut seen = [false; 256];
        for p in &pts {
            seen[p[b] as usize] = true;
        }
        assert!(seen.iter().all(|&s| s), "position {b}");
    }
}

#[test]
fn swapper_requires_a_bank_and_none_rejects_one() {
    let k = Key128([0; 16]);
    let cfg = swapper(0, 0.0, Reselect::PerTrace);
    assert!(Campaign::new(&k, cfg, None, PlaintextSource::Random).is_err());
    let cfg = LeakageConfig::default();
    assert!(Campaign::new(&k, cfg, Some(VariantBank::single(Variant::unit())), PlaintextSource::Random).is_err());
}
