//! Variant bank and PUF-modelled selection for the swapping countermeasure.
//!
//! Each AES operation can be served by several functionally identical
//! implementations ("variants") whose power draw differs. A variant maps the
//! Hamming weight of the processed data, `hw` in `[0, 8]`, affinely into its
//! own power range. Ranges are cut from an increasing ladder
//! `p1 < p2 < ... < pn`; variant `j` spans `[p_j, p_{j+2}]`, so neighbouring
//! variants overlap by one rung.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aes::OpKind;
use crate::error::{Error, Result};
use crate::seed::splitmix64;

pub const HW_MAX: f64 = 8.0;
pub const HW_MID: f64 = 4.0;
const RANGE_EPS: f64 = 1e-9;

/// The default ladder `p1..p5`, in arbitrary power units.
pub const DEFAULT_LADDER: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub gain: f64,
    pub offset: f64,
    pub range_lo: f64,
    pub range_hi: f64,
}

impl Variant {
    /// Variant whose output sweeps exactly `[lo, hi]` as `hw` goes 0..=8.
    pub fn spanning(lo: f64, hi: f64) -> Variant {
        Variant {
            gain: (hi - lo) / HW_MAX,
            offset: lo,
            range_lo: lo,
            range_hi: hi,
        }
    }

    /// Unit-gain variant, identical to the unprotected leakage.
    pub fn unit() -> Variant {
        Variant::spanning(0.0, HW_MAX)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.gain, self.offset, self.range_lo, self.range_hi]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.gain <= 0.0 {
            return Err(Error::Config(format!(
                "variant needs finite values and gain > 0: {self:?}"
            )));
        }
        let (lo, hi) = (self.offset, self.gain * HW_MAX + self.offset);
        if lo < self.range_lo - RANGE_EPS || hi > self.range_hi + RANGE_EPS {
            return Err(Error::Config(format!(
                "variant maps hw 0..8 to [{lo}, {hi}], outside its range [{}, {}]",
                self.range_lo, self.range_hi
            )));
        }
        Ok(())
    }

    pub fn overlaps(&self, other: &Variant) -> bool {
        self.range_lo.max(other.range_lo) <= self.range_hi.min(other.range_hi)
    }
}

/// `gain * hw + offset`. `hw` may be fractional (mean Hamming weight of a
/// whole operation) but must lie in `[0, 8]`.
pub fn variant_power(variant: &Variant, hw: f64) -> f64 {
    debug_assert!((0.0..=HW_MAX).contains(&hw), "hw {hw} out of range");
    variant.gain * hw + variant.offset
}

/// Per-operation lists of interchangeable variants. Index 0 of each list is
/// the operation's native implementation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VariantBank {
    pub variants: BTreeMap<OpKind, Vec<Variant>>,
}

fn check_ladder(ladder: &[f64], variants: usize, extra_rungs: usize) -> Result<()> {
    if variants == 0 {
        return Err(Error::Config("need at least one variant per operation".into()));
    }
    if ladder.iter().any(|p| !p.is_finite()) || ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "ladder must be finite and strictly increasing: {ladder:?}"
        )));
    }
    let need = variants + 2 + extra_rungs;
    if ladder.len() < need {
        return Err(Error::Config(format!(
            "{variants} variants need a ladder of at least {need} rungs, got {}",
            ladder.len()
        )));
    }
    Ok(())
}

impl VariantBank {
    /// Every operation gets the same `n` variants `[p_j, p_{j+2}]`,
    /// `j = 0..n`.
    pub fn ladder(ladder: &[f64], n: usize) -> Result<VariantBank> {
        check_ladder(ladder, n, 0)?;
        let list: Vec<Variant> = (0..n)
            .map(|j| Variant::spanning(ladder[j], ladder[j + 2]))
            .collect();
        Ok(VariantBank {
            variants: OpKind::ALL.into_iter().map(|k| (k, list.clone())).collect(),
        })
    }

    /// Operation `k` natively runs on rung window `k` and borrows the next
    /// `n - 1` windows (cyclically) as alternates, so every alternate of one
    /// operation coincides with the native window of another. The ladder needs
    /// one window per operation, i.e. at least six rungs.
    pub fn staggered(ladder: &[f64], n: usize) -> Result<VariantBank> {
        let windows = ladder.len().saturating_sub(2);
        if windows < OpKind::ALL.len() {
            return Err(Error::Config(format!(
                "staggered bank needs {} rungs, got {}",
                OpKind::ALL.len() + 2,
                ladder.len()
            )));
        }
        check_ladder(ladder, n.min(windows), 0)?;
        let variants = OpKind::ALL
            .into_iter()
            .map(|k| {
                let list = (0..n)
                    .map(|j| {
                        let w = (k.index() + j) % windows;
                        Variant::spanning(ladder[w], ladder[w + 2])
                    })
                    .collect();
                (k, list)
            })
            .collect();
        Ok(VariantBank { variants })
    }

    /// One variant per operation.
    pub fn single(v: Variant) -> VariantBank {
        VariantBank {
            variants: OpKind::ALL.into_iter().map(|k| (k, vec![v])).collect(),
        }
    }

    /// Bank holding only each operation's native variant.
    pub fn natives_only(&self) -> VariantBank {
        VariantBank {
            variants: self
                .variants
                .iter()
                .map(|(k, l)| (*k, l.iter().take(1).copied().collect()))
                .collect(),
        }
    }

    pub fn for_op(&self, op: OpKind) -> Result<&[Variant]> {
        match self.variants.get(&op) {
            Some(l) if !l.is_empty() => Ok(l),
            _ => Err(Error::Config(format!("variant bank has no entry for {op}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for op in OpKind::ALL {
            for v in self.for_op(op)? {
                v.validate()?;
            }
        }
        Ok(())
    }

    /// True when, for every operation, consecutive variants' ranges overlap.
    pub fn consecutive_overlap(&self) -> bool {
        self.variants.values().all(|l| {
            l.windows(2)
                .all(|w| w[1].range_lo < w[0].range_hi && w[0].overlaps(&w[1]))
        })
    }

    /// Pairs `(op_a, variant_a, op_b, variant_b)` with `op_a < op_b` whose
    /// power ranges intersect, i.e. where the two operations can produce the
    /// same magnitude.
    pub fn cross_op_collisions(&self) -> Vec<(OpKind, usize, OpKind, usize)> {
        let mut out = Vec::new();
        for (a, la) in &self.variants {
            for (b, lb) in self.variants.range(*a..).skip(1) {
                for (i, va) in la.iter().enumerate() {
                    for (j, vb) in lb.iter().enumerate() {
                        if va.overlaps(vb) {
                            out.push((*a, i, *b, j));
                        }
                    }
                }
            }
        }
        out
    }

    /// Compact text form: `OP-1=gain:offset:lo:hi,...;OP-2=...`.
    pub fn to_compact(&self) -> String {
        let mut s = String::new();
        for (i, (op, list)) in self.variants.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            let _ = write!(s, "{op}=");
            for (j, v) in list.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}:{}:{}:{}", v.gain, v.offset, v.range_lo, v.range_hi);
            }
        }
        s
    }

    pub fn from_compact(s: &str) -> Result<VariantBank> {
        let bad = |why: &str| Error::Config(format!("bad bank string {s:?}: {why}"));
        let mut variants = BTreeMap::new();
        for part in s.split(';').filter(|p| !p.is_empty()) {
            let (label, list) = part.split_once('=').ok_or_else(|| bad("missing '='"))?;
            let op = OpKind::from_label(label).ok_or_else(|| bad("unknown operation"))?;
            let list = list
                .split(',')
                .map(|v| {
                    let f: Vec<f64> = v
                        .split(':')
                        .map(|x| x.parse::<f64>().map_err(|_| bad("not a number")))
                        .collect::<Result<_>>()?;
                    match f[..] {
                        [gain, offset, range_lo, range_hi] => Ok(Variant {
                            gain,
                            offset,
                            range_lo,
                            range_hi,
                        }),
                        _ => Err(bad("variant needs 4 fields")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            variants.insert(op, list);
        }
        let bank = VariantBank { variants };
        bank.validate()?;
        Ok(bank)
    }
}

/// Stand-in for the PUF that drives variant selection: a counter-based
/// SplitMix64 stream. Draw `c` depends only on `(seed, c)`, so any counter
/// range can be produced independently of the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PufSelector {
    pub seed: u64,
    pub counter: u64,
}

impl PufSelector {
    pub fn new(seed: u64) -> PufSelector {
        PufSelector { seed, counter: 0 }
    }

    pub fn at(seed: u64, counter: u64) -> PufSelector {
        PufSelector { seed, counter }
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = splitmix64(self.seed.wrapping_add(self.counter.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        self.counter = self.counter.wrapping_add(1);
        x
    }

    /// Index in `0..n`, by multiply-shift; the bias is at most `n / 2^64`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

pub fn select_variant(selector: &mut PufSelector, bank: &VariantBank, op: OpKind) -> Result<usize> {
    let n = bank.for_op(op)?.len();
    Ok(selector.next_index(n))
}
