//! Repeated attack trials and protected/unprotected comparisons.
//!
//! Trial `i` of a sweep cell with `n` traces uses the seed
//! `derive(derive(master, n), i)`. The seed fixes the key, plaintexts, noise
//! and PUF stream, and does not depend on the defense flag, so trial `i` of
//! the unprotected arm and trial `i` of the protected arm see the same key,
//! plaintexts and noise.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aes::Key128;
use crate::bank::VariantBank;
use crate::campaign::{Campaign, PlaintextSource};
use crate::cpa::{partitions, recover_from_accumulator, CpaAccumulator, KeyRecoveryReport};
use crate::error::{Error, Result};
use crate::leakage::{Defense, LeakageConfig, LeakageModel};
use crate::metrics::{mean_guessing_entropy, success_rate, TrialOutcome};
use crate::seed::{self, TAG_KEY};

pub fn trial_seed(master: u64, n_traces: u64, trial: u32) -> u64 {
    seed::derive(seed::derive(master, n_traces), trial as u64)
}

pub fn trial_key(trial_seed: u64) -> Key128 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(trial_seed, TAG_KEY));
    let mut k = [0u8; 16];
    rng.fill_bytes(&mut k);
    Key128(k)
}

/// Everything a sweep needs except the defense flag and trace count, which
/// vary per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub leakage: LeakageConfig,
    pub bank: VariantBank,
    pub attack_model: LeakageModel,
}

impl TrialSetup {
    fn arm(&self, defense: Defense, seed: u64) -> (LeakageConfig, Option<VariantBank>) {
        let config = LeakageConfig {
            defense,
            seed,
            log_variants: false,
            ..self.leakage.clone()
        };
        let bank = (defense == Defense::Swapper).then(|| self.bank.clone());
        (config, bank)
    }
}

/// Simulates and attacks one campaign in memory.
pub fn run_campaign_attack(
    campaign: &Campaign,
    n_traces: u64,
    model: LeakageModel,
    truth: Option<&Key128>,
) -> Result<KeyRecoveryReport> {
    let trace_len = campaign.config().trace_length();
    let parts = partitions(n_traces, rayon::current_num_threads());
    let accs: Vec<CpaAccumulator> = parts
        .par_iter()
        .map(|&(start, len)| {
            let mut acc = CpaAccumulator::full(trace_len)?;
            for t in start..start + len {
                acc.accumulate(&campaign.trace(t)?)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut it = accs.into_iter();
    let mut total = it.next().expect("one partition");
    for a in it {
        total.merge(&a)?;
    }
    recover_from_accumulator(&total, model, truth)
}

pub fn run_trial(setup: &TrialSetup, defense: Defense, n_traces: u64, trial: u32, master: u64) -> Result<TrialOutcome> {
    let seed = trial_seed(master, n_traces, trial);
    let key = trial_key(seed);
    let (config, bank) = setup.arm(defense, seed);
    let campaign = Campaign::new(&key, config, bank, PlaintextSource::Random)?;
    let report = run_campaign_attack(&campaign, n_traces, setup.attack_model, Some(&key))?;
    Ok(TrialOutcome {
        defense,
        n_traces,
        trial,
        seed,
        ranks: report.true_ranks().expect("truth supplied"),
        recovered: report.recovered_key,
        truth: key,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub defenses: Vec<Defense>,
    pub n_traces: Vec<u64>,
    pub trials: u32,
    pub master_seed: u64,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(Defense, u64)> {
        self.n_traces
            .iter()
            .flat_map(|&n| self.defenses.iter().map(move |&d| (d, n)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells().is_empty() || self.trials == 0 {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.n_traces.iter().any(|&n| n < 2) {
            return Err(Error::Config("every cell needs at least 2 traces".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub defense: Defense,
    pub n_traces: u64,
    pub trials: usize,
    pub mean_guessing_entropy: f64,
    pub success_rate: f64,
    pub mean_wrong_bytes: f64,
    /// `wrong_bytes_hist[k]` counts trials with exactly `k` wrong bytes.
    pub wrong_bytes_hist: Vec<usize>,
}

impl ArmSummary {
    pub fn from_outcomes(outcomes: &[TrialOutcome]) -> Result<ArmSummary> {
        let first = outcomes.first().ok_or(Error::Empty)?;
        let mut hist = vec![0usize; 17];
        for o in outcomes {
            hist[o.wrong_bytes()] += 1;
        }
        Ok(ArmSummary {
            defense: first.defense,
            n_traces: first.n_traces,
            trials: outcomes.len(),
            mean_guessing_entropy: mean_guessing_entropy(outcomes)?,
            success_rate: success_rate(outcomes, 0)?,
            mean_wrong_bytes: outcomes.iter().map(|o| o.wrong_bytes() as f64).sum::<f64>() / outcomes.len() as f64,
            wrong_bytes_hist: hist,
        })
    }
}

/// Unprotected vs. protected arms at one trace count, paired by trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseComparison {
    pub n_traces: u64,
    pub baseline: ArmSummary,
    pub swapper: ArmSummary,
    pub pairs: usize,
    /// Pairs where the protected trial's mean rank exceeds the unprotected one's.
    pub pairs_ge_greater: usize,
    /// Pairs where the unprotected trial recovered the full key and the
    /// protected one did not.
    pub pairs_success_lower: usize,
}

impl DefenseComparison {
    pub fn from_pairs(baseline: &[TrialOutcome], swapper: &[TrialOutcome]) -> Result<DefenseComparison> {
        if baseline.len() != swapper.len() {
            return Err(Error::Config("arms have different trial counts".into()));
        }
        for (b, s) in baseline.iter().zip(swapper) {
            if b.seed != s.seed || b.n_traces != s.n_traces || b.truth != s.truth {
                return Err(Error::Config(format!("trial {} is not paired across arms", b.trial)));
            }
        }
        let pairs = baseline.iter().zip(swapper);
        Ok(DefenseComparison {
            n_traces: baseline.first().ok_or(Error::Empty)?.n_traces,
            baseline: ArmSummary::from_outcomes(baseline)?,
            swapper: ArmSummary::from_outcomes(swapper)?,
            pairs: baseline.len(),
            pairs_ge_greater: pairs.clone().filter(|(b, s)| s.mean_rank() > b.mean_rank()).count(),
            pairs_success_lower: pairs
                .filter(|(b, s)| b.full_key_success(0) && !s.full_key_success(0))
                .count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub outcomes: Vec<TrialOutcome>,
    pub summaries: Vec<ArmSummary>,
    pub comparisons: Vec<DefenseComparison>,
}

pub fn run_sweep(setup: &TrialSetup, grid: &SweepGrid) -> Result<SweepResult> {
    grid.validate()?;
    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    for (defense, n) in grid.cells() {
        let cell: Vec<TrialOutcome> = (0..grid.trials)
            .map(|i| run_trial(setup, defense, n, i, grid.master_seed))
            .collect::<Result<_>>()?;
        summaries.push(ArmSummary::from_outcomes(&cell)?);
        outcomes.extend(cell);
    }
    let mut comparisons = Vec::new();
    for &n in &grid.n_traces {
        let arm = |d: Defense| -> Vec<TrialOutcome> {
            outcomes
                .iter()
                .filter(|o| o.defense == d && o.n_traces == n)
                .cloned()
                .collect()
        };
        let (b, s) = (arm(Defense::None), arm(Defense::Swapper));
        if !b.is_empty() && !s.is_empty() {
            comparisons.push(DefenseComparison::from_pairs(&b, &s)?);
        }
    }
    Ok(SweepResult {
        outcomes,
        summaries,
        comparisons,
    })
}

pub fn write_outcomes_csv<W: Write>(out: W, outcomes: &[TrialOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = ["defense", "n_traces", "trial", "seed", "true_key", "recovered_key", "wrong_bytes", "mean_rank"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    head.extend((0..16).map(|b| format!("rank_{b:02}")));
    w.write_record(&head)?;
    for o in outcomes {
        let mut row = vec![
            o.defense.as_str().to_string(),
            o.n_traces.to_string(),
            o.trial.to_string(),
            o.seed.to_string(),
            o.truth.to_hex(),
            o.recovered.to_hex(),
            o.wrong_bytes().to_string(),
            o.mean_rank().to_string(),
        ];
        row.extend(o.ranks.iter().map(|r| r.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[ArmSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["defense", "n_traces", "trials", "mean_guessing_entropy", "success_rate", "mean_wrong_bytes", "wrong_bytes_hist"])?;
    for s in summaries {
        let hist = s.wrong_bytes_hist.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        w.write_record([
            s.defense.as_str().to_string(),
            s.n_traces.to_string(),
            s.trials.to_string(),
            s.mean_guessing_entropy.to_string(),
            s.success_rate.to_string(),
            s.mean_wrong_bytes.to_string(),
            hist,
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(out: W, comparisons: &[DefenseComparison]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n_traces",
        "pairs",
        "baseline_mean_ge",
        "swapper_mean_ge",
        "baseline_success_rate",
        "swapper_success_rate",
        "pairs_ge_greater",
        "pairs_success_lower",
    ])?;
    for c in comparisons {
        w.write_record([
            c.n_traces.to_string(),
            c.pairs.to_string(),
            c.baseline.mean_guessing_entropy.to_string(),
            c.swapper.mean_guessing_entropy.to_string(),
            c.baseline.success_rate.to_string(),
            c.swapper.success_rate.to_string(),
            c.pairs_ge_greater.to_string(),
            c.pairs_success_lower.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_on_cell_and_trial_only() {
        let a = trial_seed(1, 100, 0);
        assert_eq!(a, trial_seed(1, 100, 0));
        assert_ne!(a, trial_seed(1, 100, 1));
        assert_ne!(a, trial_seed(1, 200, 0));
        assert_ne!(a, trial_seed(2, 100, 0));
        assert_ne!(trial_key(a), trial_key(trial_seed(1, 100, 1)));
    }

    #[test]
    fn empty_grid_rejected() {
        let g = SweepGrid {
            defenses: vec![],
            n_traces: vec![100],
            trials: 3,
            master_seed: 0,
        };
        assert!(g.validate().is_err());
        let g = SweepGrid {
            defenses: vec![Defense::None],
            n_traces: vec![100],
            trials: 0,
            master_seed: 0,
        };
        assert!(g.validate().is_err());
    }
}
