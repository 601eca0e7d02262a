//! Correlation power analysis on the first-round S-box output.
//!
//! For each key byte the attack predicts the leakage of
//! `sbox(pt[b] ^ guess)` for all 256 guesses, correlates each prediction with
//! every measured sample, and ranks guesses by their largest absolute
//! correlation.

mod accumulator;
mod pearson;

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use accumulator::{
    dequantize, quantize, CellSums, CorrelationMatrix, CpaAccumulator, HypothesisTable, Window,
    FRAC_BITS, SAMPLE_LIMIT,
};
pub use pearson::{pearson, Pearson};

use crate::aes::{attack_point_value, Key128};
use crate::error::{Error, Result};
use crate::leakage::LeakageModel;
use crate::store::{TraceReader, TraceRecord};

#[inline]
pub fn hypothetical_intermediate(pt_byte: u8, guess: u8) -> u8 {
    attack_point_value(pt_byte, guess)
}

/// Predicted power of an intermediate value. With Hamming distance the
/// model's reference byte is the assumed previous register value.
#[inline]
pub fn hypothetical_power(intermediate: u8, model: LeakageModel) -> f64 {
    model.leak(intermediate) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessScore {
    pub guess: u8,
    /// Signed correlation at the peak.
    pub peak_r: f64,
    /// Absolute sample index of the peak.
    pub peak_sample: usize,
    pub rank: usize,
}

/// Orders guesses by `max_s |r(g, s)|`, descending; equal peaks go to the
/// lower guess. Within a row the earliest sample wins ties.
pub fn rank_guesses(m: &CorrelationMatrix) -> Vec<GuessScore> {
    let mut scores: Vec<GuessScore> = (0..=255u8)
        .map(|g| {
            let (s, r) = m
                .row(g)
                .iter()
                .enumerate()
                .fold((0usize, 0.0f64), |best, (s, &r)| {
                    if r.abs() > best.1.abs() {
                        (s, r)
                    } else {
                        best
                    }
                });
            GuessScore {
                guess: g,
                peak_r: r,
                peak_sample: m.window.start + s,
                rank: 0,
            }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.peak_r
            .abs()
            .total_cmp(&a.peak_r.abs())
            .then(a.guess.cmp(&b.guess))
    });
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i;
    }
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByteReport {
    pub position: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_rank: Option<usize>,
    pub guesses: Vec<GuessScore>,
}

impl ByteReport {
    pub fn best(&self) -> &GuessScore {
        &self.guesses[0]
    }

    pub fn rank_of(&self, guess: u8) -> usize {
        self.guesses
            .iter()
            .position(|s| s.guess == guess)
            .expect("all 256 guesses are ranked")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecoveryReport {
    pub recovered_key: Key128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_key: Option<Key128>,
    pub n_traces: u64,
    pub model: LeakageModel,
    pub window: Window,
    /// Absolute indices of samples that were constant across all traces.
    pub degenerate_samples: Vec<usize>,
    pub bytes: Vec<ByteReport>,
}

impl KeyRecoveryReport {
    pub fn true_ranks(&self) -> Option<Vec<usize>> {
        self.bytes.iter().map(|b| b.true_rank).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOptions {
    pub model: LeakageModel,
    /// Restrict to `start..end`; `None` uses every sample.
    pub window: Option<Window>,
    /// Number of record partitions processed in parallel.
    pub jobs: usize,
    pub truth: Option<Key128>,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            model: LeakageModel::HammingWeight,
            window: None,
            jobs: rayon::current_num_threads(),
            truth: None,
        }
    }
}

/// Ranks all 16 bytes from a filled accumulator.
pub fn recover_from_accumulator(
    acc: &CpaAccumulator,
    model: LeakageModel,
    truth: Option<&Key128>,
) -> Result<KeyRecoveryReport> {
    if acc.n_traces() < 2 {
        return Err(Error::TooFewTraces(acc.n_traces()));
    }
    let hyp = HypothesisTable::new(model);
    let matrices: Vec<CorrelationMatrix> = (0..16)
        .into_par_iter()
        .map(|pos| acc.correlate_all(&hyp, pos))
        .collect::<Result<_>>()?;
    let window = acc.window();
    let degenerate_samples: Vec<usize> = matrices[0]
        .degenerate_sample
        .iter()
        .enumerate()
        .filter(|(_, &d)| d)
        .map(|(s, _)| window.start + s)
        .collect();
    if !degenerate_samples.is_empty() {
        warn!(
            "{} of {} samples are constant across traces and score 0",
            degenerate_samples.len(),
            window.len()
        );
    }
    let mut key = [0u8; 16];
    let bytes = matrices
        .iter()
        .enumerate()
        .map(|(pos, m)| {
            let guesses = rank_guesses(m);
            key[pos] = guesses[0].guess;
            let mut b = ByteReport {
                position: pos,
                true_rank: None,
                guesses,
            };
            b.true_rank = truth.map(|t| b.rank_of(t[pos]));
            b
        })
        .collect();
    Ok(KeyRecoveryReport {
        recovered_key: Key128(key),
        true_key: truth.copied(),
        n_traces: acc.n_traces(),
        model,
        window,
        degenerate_samples,
        bytes,
    })
}

/// Accumulates traces `start..start + count` of a file.
pub fn accumulate_range(path: &Path, start: u64, count: u64, window: Window) -> Result<CpaAccumulator> {
    let mut reader = TraceReader::open_range(path, start, count)?;
    let n_samples = reader.header().n_samples as usize;
    let all: Vec<usize> = (0..16).collect();
    let mut acc = CpaAccumulator::new(n_samples, window, &all)?;
    let mut rec = TraceRecord::empty(n_samples);
    while reader.read_into(&mut rec)? {
        acc.accumulate(&rec)?;
    }
    Ok(acc)
}

/// Splits `n` records into `jobs` contiguous partitions.
pub fn partitions(n: u64, jobs: usize) -> Vec<(u64, u64)> {
    let jobs = (jobs.max(1) as u64).min(n.max(1));
    let base = n / jobs;
    let extra = n % jobs;
    let mut start = 0;
    (0..jobs)
        .map(|j| {
            let len = base + u64::from(j < extra);
            let p = (start, len);
            start += len;
            p
        })
        .collect()
}

/// Full key recovery from a trace file: partition the records, accumulate
/// each partition with its own reader, merge, then correlate and rank.
pub fn recover_key(path: impl AsRef<Path>, opts: &AttackOptions) -> Result<KeyRecoveryReport> {
    let path = path.as_ref();
    let header = TraceReader::open(path)?.header().clone();
    if header.n_traces < 2 {
        return Err(Error::TooFewTraces(header.n_traces));
    }
    let n_samples = header.n_samples as usize;
    let window = opts.window.unwrap_or(Window::full(n_samples));
    let parts = partitions(header.n_traces, opts.jobs);
    let accs: Vec<CpaAccumulator> = parts
        .par_iter()
        .map(|&(start, len)| accumulate_range(path, start, len, window))
        .collect::<Result<_>>()?;
    let mut iter = accs.into_iter();
    let mut total = iter.next().expect("at least one partition");
    for a in iter {
        total.merge(&a)?;
    }
    recover_from_accumulator(&total, opts.model, opts.truth.as_ref())
}
