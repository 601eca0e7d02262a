//! Power-trace synthesis from AES intermediates.
//!
//! A trace is a row of `trace_length` samples. The layout places every AES
//! operation in its own slot of `samples_per_op` samples, except the attack
//! point (round-1 SubBytes), which gets 16 samples: state byte `b` leaks alone
//! at `attack_base + b`. Other slots leak the mean per-byte Hamming weight (or
//! distance) of the operation's output state, so every slot value lies in
//! `[0, 8]`. Samples not covered by any slot carry noise only.
//!
//! Without the countermeasure a slot's value is written as-is (unit gain).
//! With the swapper, each slot is rendered through the affine map of a
//! variant picked by the [`PufSelector`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aes::{self, Block128, IntermediateTrace, Key128, OpKind, RoundKeys};
use crate::bank::{variant_power, PufSelector, VariantBank};
use crate::error::{Error, Result};

pub use crate::store::TraceRecord as Trace;

pub const ATTACK_ROUND: usize = 1;
pub const ATTACK_OP: OpKind = OpKind::SubBytes;

#[inline]
pub fn hamming_weight(b: u8) -> u32 {
    b.count_ones()
}

#[inline]
pub fn hamming_distance(a: u8, b: u8) -> u32 {
    hamming_weight(a ^ b)
}

/// Leakage of a single byte value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeakageModel {
    #[default]
    HammingWeight,
    /// Distance from a fixed reference (precharge) value.
    HammingDistance { reference: u8 },
}

impl LeakageModel {
    #[inline]
    pub fn leak(self, v: u8) -> u32 {
        match self {
            LeakageModel::HammingWeight => hamming_weight(v),
            LeakageModel::HammingDistance { reference } => hamming_distance(v, reference),
        }
    }

    pub fn to_compact(self) -> String {
        match self {
            LeakageModel::HammingWeight => "hw".into(),
            LeakageModel::HammingDistance { reference } => format!("hd:{reference:02x}"),
        }
    }

    pub fn from_compact(s: &str) -> Result<LeakageModel> {
        match s {
            "hw" | "hamming_weight" => Ok(LeakageModel::HammingWeight),
            "hd" | "hamming_distance" => Ok(LeakageModel::HammingDistance { reference: 0 }),
            _ => s
                .strip_prefix("hd:")
                .and_then(|r| u8::from_str_radix(r, 16).ok())
                .map(|reference| LeakageModel::HammingDistance { reference })
                .ok_or_else(|| Error::Config(format!("unknown leakage model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    Swapper,
}

impl Defense {
    pub fn as_str(self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Swapper => "swapper",
        }
    }
}

/// How often the swapper draws a fresh variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reselect {
    /// One draw per operation kind per trace; all slots of that kind share it.
    #[default]
    PerTrace,
    /// An independent draw for every slot.
    PerOp,
}

impl Reselect {
    pub fn as_str(self) -> &'static str {
        match self {
            Reselect::PerTrace => "per_trace",
            Reselect::PerOp => "per_op",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub round: usize,
    pub op: OpKind,
    pub offset: usize,
    pub width: usize,
}

impl Slot {
    pub fn is_attack_point(&self) -> bool {
        self.round == ATTACK_ROUND && self.op == ATTACK_OP
    }

    pub fn end(&self) -> usize {
        self.offset + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpsLayout {
    pub trace_length: usize,
    pub slots: Vec<Slot>,
}

impl OpsLayout {
    /// All 40 operations back to back after `lead` idle samples.
    pub fn standard(trace_length: usize, samples_per_op: usize, lead: usize) -> Result<OpsLayout> {
        if samples_per_op == 0 {
            return Err(Error::Config("samples_per_op must be positive".into()));
        }
        let mut offset = lead;
        let slots = aes::op_sequence()
            .map(|(round, op)| {
                let width = if round == ATTACK_ROUND && op == ATTACK_OP {
                    16
                } else {
                    samples_per_op
                };
                let s = Slot {
                    round,
                    op,
                    offset,
                    width,
                };
                offset += width;
                s
            })
            .collect();
        let layout = OpsLayout {
            trace_length,
            slots,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// No slots: every sample is pure noise.
    pub fn empty(trace_length: usize) -> OpsLayout {
        OpsLayout {
            trace_length,
            slots: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trace_length == 0 {
            return Err(Error::Config("trace length must be positive".into()));
        }
        let mut sorted: Vec<&Slot> = self.slots.iter().collect();
        sorted.sort_by_key(|s| s.offset);
        for s in &sorted {
            if s.width == 0 {
                return Err(Error::Config(format!("empty slot {s:?}")));
            }
            if s.end() > self.trace_length {
                return Err(Error::Config(format!(
                    "slot {} {} ends at sample {}, past trace length {}",
                    s.round,
                    s.op,
                    s.end(),
                    self.trace_length
                )));
            }
            if s.is_attack_point() && s.width != 16 {
                return Err(Error::Config("attack-point slot must be 16 samples wide".into()));
            }
            if aes::round_ops(s.round.min(aes::ROUNDS)).iter().all(|&o| o != s.op) || s.round > aes::ROUNDS {
                return Err(Error::Config(format!("round {} has no {}", s.round, s.op)));
            }
        }
        for w in sorted.windows(2) {
            if w[0].end() > w[1].offset {
                return Err(Error::Config(format!(
                    "slots overlap at samples {}..{} and {}..{}",
                    w[0].offset,
                    w[0].end(),
                    w[1].offset,
                    w[1].end()
                )));
            }
        }
        for (i, a) in self.slots.iter().enumerate() {
            if self.slots[..i].iter().any(|b| b.round == a.round && b.op == a.op) {
                return Err(Error::Config(format!("duplicate slot for round {} {}", a.round, a.op)));
            }
        }
        Ok(())
    }

    /// First sample of the attack point, if the layout has one.
    pub fn attack_base(&self) -> Option<usize> {
        self.slots
            .iter()
            .find(|s| s.is_attack_point())
            .map(|s| s.offset)
    }

    /// `round:OP-k:offset:width` entries joined by commas.
    pub fn to_compact(&self) -> String {
        self.slots
            .iter()
            .map(|s| format!("{}:{}:{}:{}", s.round, s.op, s.offset, s.width))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_compact(trace_length: usize, s: &str) -> Result<OpsLayout> {
        let bad = || Error::Config(format!("bad layout string {s:?}"));
        let slots = s
            .split(',')
            .filter(|p| !p.is_empty())
            .map(|p| {
                let f: Vec<&str> = p.split(':').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(Slot {
                    round: f[0].parse().map_err(|_| bad())?,
                    op: OpKind::from_label(f[1]).ok_or_else(bad)?,
                    offset: f[2].parse().map_err(|_| bad())?,
                    width: f[3].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = OpsLayout {
            trace_length,
            slots,
        };
        layout.validate()?;
        Ok(layout)
    }
}

pub const DEFAULT_TRACE_LENGTH: usize = 200;
pub const DEFAULT_SAMPLES_PER_OP: usize = 4;
pub const DEFAULT_LEAD: usize = 8;
pub const DEFAULT_NOISE_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageConfig {
    pub model: LeakageModel,
    pub noise_sigma: f64,
    pub samples_per_op: usize,
    pub layout: OpsLayout,
    pub defense: Defense,
    pub reselect: Reselect,
    pub seed: u64,
    pub log_variants: bool,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        LeakageConfig {
            model: LeakageModel::HammingWeight,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            samples_per_op: DEFAULT_SAMPLES_PER_OP,
            layout: OpsLayout::standard(DEFAULT_TRACE_LENGTH, DEFAULT_SAMPLES_PER_OP, DEFAULT_LEAD)
                .expect("default layout fits"),
            defense: Defense::None,
            reselect: Reselect::PerTrace,
            seed: 0,
            log_variants: false,
        }
    }
}

impl LeakageConfig {
    pub fn trace_length(&self) -> usize {
        self.layout.trace_length
    }

    pub fn validate(&self, bank: Option<&VariantBank>) -> Result<()> {
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!("noise sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        self.layout.validate()?;
        if self.layout.slots.len() > u8::MAX as usize + 1 && self.log_variants {
            return Err(Error::Config("too many slots to log".into()));
        }
        match (self.defense, bank) {
            (Defense::Swapper, None) => Err(Error::Config("swapper defense needs a variant bank".into())),
            (Defense::None, Some(_)) => Err(Error::Config("variant bank given but defense is none".into())),
            (Defense::Swapper, Some(b)) => {
                b.validate()?;
                if b.variants.values().any(|l| l.len() > u8::MAX as usize + 1) {
                    return Err(Error::Config("at most 256 variants per operation".into()));
                }
                Ok(())
            }
            (Defense::None, None) => Ok(()),
        }
    }

    /// Selector counters reserved per trace: trace `t` draws from
    /// `t * stride .. (t + 1) * stride`.
    pub fn selection_stride(&self) -> u64 {
        self.layout.slots.len().max(OpKind::ALL.len()) as u64
    }

    pub fn logs_variants(&self) -> bool {
        self.log_variants && self.defense == Defense::Swapper
    }
}

/// Config, key schedule and bank bundled for repeated synthesis.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    config: LeakageConfig,
    bank: Option<VariantBank>,
    keys: RoundKeys,
    record_index: Vec<usize>,
    noise: Option<Normal<f64>>,
}

impl Synthesizer {
    pub fn new(key: &Key128, config: LeakageConfig, bank: Option<VariantBank>) -> Result<Synthesizer> {
        config.validate(bank.as_ref())?;
        let seq: Vec<_> = aes::op_sequence().collect();
        let record_index = config
            .layout
            .slots
            .iter()
            .map(|s| seq.iter().position(|&(r, o)| r == s.round && o == s.op).unwrap())
            .collect();
        let noise = (config.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, config.noise_sigma).expect("sigma validated"));
        Ok(Synthesizer {
            keys: aes::key_expansion(key),
            config,
            bank,
            record_index,
            noise,
        })
    }

    pub fn config(&self) -> &LeakageConfig {
        &self.config
    }

    pub fn bank(&self) -> Option<&VariantBank> {
        self.bank.as_ref()
    }

    /// Variant index per slot, or `None` without the countermeasure.
    fn choose_variants(&self, selector: &mut PufSelector) -> Result<Option<Vec<u8>>> {
        let Some(bank) = self.bank.as_ref() else {
            return Ok(None);
        };
        let slots = &self.config.layout.slots;
        let picks = match self.config.reselect {
            Reselect::PerTrace => {
                let mut per_kind = [0u8; 4];
                for k in OpKind::ALL {
                    let n = bank.for_op(k)?.len();
                    per_kind[k.index()] = selector.next_index(n) as u8;
                }
                slots.iter().map(|s| per_kind[s.op.index()]).collect()
            }
            Reselect::PerOp => slots
                .iter()
                .map(|s| Ok(selector.next_index(bank.for_op(s.op)?.len()) as u8))
                .collect::<Result<_>>()?,
        };
        Ok(Some(picks))
    }

    /// Noiseless leakage per sample, plus the variant picks.
    pub fn clean_samples(
        &self,
        rec: &IntermediateTrace,
        selector: &mut PufSelector,
    ) -> Result<(Vec<f64>, Option<Vec<u8>>)> {
        let picks = self.choose_variants(selector)?;
        let mut out = vec![0.0f64; self.config.trace_length()];
        let model = self.config.model;
        for (i, slot) in self.config.layout.slots.iter().enumerate() {
            let state = &rec.records[self.record_index[i]].output;
            let render = |hw: f64| match (&self.bank, &picks) {
                (Some(bank), Some(p)) => {
                    let v = &bank.for_op(slot.op).expect("validated")[p[i] as usize];
                    variant_power(v, hw)
                }
                _ => hw,
            };
            if slot.is_attack_point() {
                for b in 0..16 {
                    out[slot.offset + b] = render(model.leak(state.0[b]) as f64);
                }
            } else {
                let total: u32 = state.0.iter().map(|&v| model.leak(v)).sum();
                let v = render(total as f64 / 16.0);
                out[slot.offset..slot.end()].fill(v);
            }
        }
        Ok((out, picks))
    }

    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        pt: &Block128,
        selector: &mut PufSelector,
        noise_rng: &mut R,
    ) -> Result<Trace> {
        let (ct, rec) = aes::encrypt_with_keys(pt, &self.keys, true);
        let rec = rec.expect("recording requested");
        let (clean, picks) = self.clean_samples(&rec, selector)?;
        let samples = match &self.noise {
            Some(n) => clean.iter().map(|&v| (v + n.sample(noise_rng)) as f32).collect(),
            None => clean.iter().map(|&v| v as f32).collect(),
        };
        Ok(Trace {
            plaintext: *pt,
            ciphertext: ct,
            samples,
            variant_log: if self.config.log_variants { picks } else { None },
        })
    }
}

/// One-shot synthesis of a single trace.
pub fn synthesize_trace<R: Rng + ?Sized>(
    pt: &Block128,
    key: &Key128,
    config: &LeakageConfig,
    bank: Option<&VariantBank>,
    selector: &mut PufSelector,
    noise_rng: &mut R,
) -> Result<Trace> {
    Synthesizer::new(key, config.clone(), bank.cloned())?.synthesize(pt, selector, noise_rng)
}
