//! Attack-quality metrics and the operation-confusion report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aes::{Key128, OpKind};
use crate::bank::{variant_power, VariantBank, HW_MID};
use crate::error::{Error, Result};
use crate::leakage::{Defense, OpsLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub defense: Defense,
    pub n_traces: u64,
    pub trial: u32,
    pub seed: u64,
    /// Rank of the true key byte, per position, in `0..=255`.
    pub ranks: Vec<usize>,
    pub recovered: Key128,
    pub truth: Key128,
}

impl TrialOutcome {
    pub fn wrong_bytes(&self) -> usize {
        (0..16).filter(|&i| self.recovered[i] != self.truth[i]).count()
    }

    pub fn mean_rank(&self) -> f64 {
        self.ranks.iter().sum::<usize>() as f64 / self.ranks.len() as f64
    }

    pub fn full_key_success(&self, threshold_rank: usize) -> bool {
        self.ranks.iter().all(|&r| r <= threshold_rank)
    }
}

/// Mean rank of the true key byte, per position.
pub fn guessing_entropy(outcomes: &[TrialOutcome]) -> Result<Vec<f64>> {
    let first = outcomes.first().ok_or(Error::Empty)?;
    let n = outcomes.len() as f64;
    Ok((0..first.ranks.len())
        .map(|b| outcomes.iter().map(|o| o.ranks[b] as f64).sum::<f64>() / n)
        .collect())
}

/// Guessing entropy averaged over byte positions.
pub fn mean_guessing_entropy(outcomes: &[TrialOutcome]) -> Result<f64> {
    let ge = guessing_entropy(outcomes)?;
    Ok(ge.iter().sum::<f64>() / ge.len() as f64)
}

/// Fraction of trials in which every byte ranks at or below `threshold_rank`.
pub fn success_rate(outcomes: &[TrialOutcome], threshold_rank: usize) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty);
    }
    let ok = outcomes
        .iter()
        .filter(|o| o.full_key_success(threshold_rank))
        .count();
    Ok(ok as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NibblePos {
    pub byte: usize,
    pub high: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyErrorMap {
    pub byte_diffs: Vec<usize>,
    pub nibble_diffs: Vec<NibblePos>,
    /// Recovered key in hex with every wrong nibble in brackets.
    pub rendered: String,
}

impl KeyErrorMap {
    pub fn is_empty(&self) -> bool {
        self.byte_diffs.is_empty()
    }
}

pub fn key_error_map(recovered: &Key128, truth: &Key128) -> KeyErrorMap {
    let mut byte_diffs = Vec::new();
    let mut nibble_diffs = Vec::new();
    let mut rendered = String::with_capacity(48);
    for i in 0..16 {
        let (r, t) = (recovered[i], truth[i]);
        if r != t {
            byte_diffs.push(i);
        }
        for (high, shift) in [(true, 4), (false, 0)] {
            let (rn, tn) = ((r >> shift) & 0xf, (t >> shift) & 0xf);
            if rn != tn {
                nibble_diffs.push(NibblePos { byte: i, high });
                let _ = write!(rendered, "[{rn:x}]");
            } else {
                let _ = write!(rendered, "{rn:x}");
            }
        }
    }
    KeyErrorMap {
        byte_diffs,
        nibble_diffs,
        rendered,
    }
}

/// Magnitude an observer associates with each operation on the unprotected
/// device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpReference {
    pub magnitudes: [f64; 4],
}

impl OpReference {
    /// Mid-scale output of each operation's native variant (index 0).
    pub fn from_natives(bank: &VariantBank) -> Result<OpReference> {
        let mut magnitudes = [0.0; 4];
        for op in OpKind::ALL {
            magnitudes[op.index()] = variant_power(&bank.for_op(op)?[0], HW_MID);
        }
        Ok(OpReference { magnitudes })
    }

    /// Nearest reference magnitude; ties go to the lower operation.
    pub fn infer(&self, magnitude: f64) -> OpKind {
        let mut best = OpKind::ALL[0];
        for op in OpKind::ALL {
            let d = (magnitude - self.magnitudes[op.index()]).abs();
            if d < (magnitude - self.magnitudes[best.index()]).abs() {
                best = op;
            }
        }
        best
    }
}

/// Mean sample value of every slot of one trace.
pub fn slot_magnitudes(layout: &OpsLayout, samples: &[f32]) -> Result<Vec<f64>> {
    if samples.len() != layout.trace_length {
        return Err(Error::Geometry {
            expected: layout.trace_length,
            actual: samples.len(),
        });
    }
    Ok(layout
        .slots
        .iter()
        .map(|s| samples[s.offset..s.end()].iter().map(|&v| v as f64).sum::<f64>() / s.width as f64)
        .collect())
}

/// Mid-scale magnitude of the variant that served each slot.
pub fn nominal_magnitudes(layout: &OpsLayout, bank: &VariantBank, variant_log: &[u8]) -> Result<Vec<f64>> {
    if variant_log.len() != layout.slots.len() {
        return Err(Error::Geometry {
            expected: layout.slots.len(),
            actual: variant_log.len(),
        });
    }
    layout
        .slots
        .iter()
        .zip(variant_log)
        .map(|(s, &v)| {
            let list = bank.for_op(s.op)?;
            let var = list
                .get(v as usize)
                .ok_or_else(|| Error::Config(format!("variant {v} out of range for {}", s.op)))?;
            Ok(variant_power(var, HW_MID))
        })
        .collect()
}

pub fn infer_ops(magnitudes: &[f64], reference: &OpReference) -> Vec<OpKind> {
    magnitudes.iter().map(|&m| reference.infer(m)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub slot: usize,
    pub round: usize,
    pub executed: OpKind,
    pub variant: u8,
    pub inferred: OpKind,
    pub mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub rows: Vec<ConfusionRow>,
}

impl ConfusionReport {
    pub fn mismatches(&self) -> usize {
        self.rows.iter().filter(|r| r.mismatch).count()
    }

    /// Per round: the executed sequence and the sequence an observer infers,
    /// e.g. `OP-2/OP-3/OP-4/OP-1` vs `[OP-3]/OP-3/[OP-1]/OP-1`, with
    /// misattributed peaks bracketed.
    pub fn sequences(&self) -> Vec<(usize, String, String)> {
        let mut out: Vec<(usize, String, String)> = Vec::new();
        for row in &self.rows {
            let inferred = if row.mismatch {
                format!("[{}]", row.inferred)
            } else {
                row.inferred.to_string()
            };
            match out.last_mut() {
                Some((r, exec, inf)) if *r == row.round => {
                    exec.push('/');
                    exec.push_str(row.executed.label());
                    inf.push('/');
                    inf.push_str(&inferred);
                }
                _ => out.push((row.round, row.executed.to_string(), inferred)),
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::from("round  executed              observed\n");
        for (r, exec, inf) in self.sequences() {
            let _ = writeln!(s, "{r:>5}  {exec:<20}  {inf}");
        }
        let _ = writeln!(s, "{} of {} peaks misattributed", self.mismatches(), self.rows.len());
        s
    }
}

/// Lines up executed operations (and the variant that ran them) with the
/// operations an observer inferred from peak magnitudes.
pub fn op_confusion_report(
    layout: &OpsLayout,
    variant_log: Option<&[u8]>,
    inferred: &[OpKind],
) -> Result<ConfusionReport> {
    let log = variant_log.ok_or(Error::MissingVariantLog)?;
    let n = layout.slots.len();
    if log.len() != n || inferred.len() != n {
        return Err(Error::Geometry {
            expected: n,
            actual: if log.len() != n { log.len() } else { inferred.len() },
        });
    }
    Ok(ConfusionReport {
        rows: layout
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| ConfusionRow {
                slot: i,
                round: s.round,
                executed: s.op,
                variant: log[i],
                inferred: inferred[i],
                mismatch: inferred[i] != s.op,
            })
            .collect(),
    })
}
