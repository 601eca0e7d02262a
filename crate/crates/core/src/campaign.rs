//! Trace campaigns: plaintext sourcing, per-trace seeding and output.
//!
//! Every trace is a pure function of its index `t`. Plaintext bytes come from
//! ChaCha8 stream `t` of the plaintext seed, noise from stream `t` of the
//! noise seed, and variant selection from PUF counters
//! `t * stride .. (t + 1) * stride`. Campaigns can therefore be generated in
//! any order or in parallel and still produce identical bytes.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aes::{Block128, Key128};
use crate::bank::{PufSelector, VariantBank};
use crate::error::{Error, Result};
use crate::leakage::{LeakageConfig, Synthesizer, Trace};
use crate::seed::{self, TAG_NOISE, TAG_PLAINTEXT, TAG_PUF};
use crate::store::{Metadata, TraceSetHeader, TraceWriter, FLAG_VARIANT_LOG, VARIANT_LOG_KEY};

pub const FORMAT_VERSION: u32 = 1;
const WRITE_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlaintextSource {
    /// Uniformly random plaintexts.
    Random,
    /// Positions whose bit is set in the mask run through a fixed seeded
    /// permutation of 0..=255 (trace `t` takes entry `t % 256`); the other
    /// positions are random.
    Enumerate { positions: u16 },
    /// Explicit plaintexts, one per trace.
    List(Vec<Block128>),
}

impl PlaintextSource {
    pub fn enumerate_all() -> PlaintextSource {
        PlaintextSource::Enumerate { positions: 0xffff }
    }

    pub fn describe(&self) -> String {
        match self {
            PlaintextSource::Random => "random".into(),
            PlaintextSource::Enumerate { positions } => format!("enumerate:{positions:04x}"),
            PlaintextSource::List(l) => format!("list:{}", l.len()),
        }
    }
}

/// Reads one 32-digit hex plaintext per non-empty line.
pub fn read_plaintexts(path: impl AsRef<Path>) -> Result<Vec<Block128>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(Block128::from_hex)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignSeeds {
    pub master: u64,
    pub plaintext: u64,
    pub noise: u64,
    pub puf: u64,
}

impl CampaignSeeds {
    pub fn derive(master: u64) -> CampaignSeeds {
        CampaignSeeds {
            master,
            plaintext: seed::derive(master, TAG_PLAINTEXT),
            noise: seed::derive(master, TAG_NOISE),
            puf: seed::derive(master, TAG_PUF),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    synth: Synthesizer,
    source: PlaintextSource,
    seeds: CampaignSeeds,
    perms: Vec<[u8; 256]>,
    stride: u64,
}

impl Campaign {
    pub fn new(
        key: &Key128,
        config: LeakageConfig,
        bank: Option<VariantBank>,
        source: PlaintextSource,
    ) -> Result<Campaign> {
        let seeds = CampaignSeeds::derive(config.seed);
        let stride = config.selection_stride();
        let perms = match &source {
            PlaintextSource::Enumerate { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds.plaintext);
                rng.set_stream(u64::MAX);
                (0..16)
                    .map(|_| {
                        let mut p: [u8; 256] = std::array::from_fn(|i| i as u8);
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Campaign {
            synth: Synthesizer::new(key, config, bank)?,
            source,
            seeds,
            perms,
            stride,
        })
    }

    pub fn config(&self) -> &LeakageConfig {
        self.synth.config()
    }

    pub fn seeds(&self) -> CampaignSeeds {
        self.seeds
    }

    pub fn source(&self) -> &PlaintextSource {
        &self.source
    }

    pub fn plaintext(&self, t: u64) -> Result<Block128> {
        let random = || {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seeds.plaintext);
            rng.set_stream(t);
            let mut b = [0u8; 16];
            rng.fill_bytes(&mut b);
            Block128(b)
        };
        match &self.source {
            PlaintextSource::Random => Ok(random()),
            PlaintextSource::Enumerate { positions } => {
                let mut pt = random();
                for (i, perm) in self.perms.iter().enumerate() {
                    if positions & (1 << i) != 0 {
                        pt.0[i] = perm[(t % 256) as usize];
                    }
                }
                Ok(pt)
            }
            PlaintextSource::List(l) => l.get(t as usize).copied().ok_or_else(|| {
                Error::Config(format!("plaintext list has {} entries, trace {t} requested", l.len()))
            }),
        }
    }

    pub fn trace(&self, t: u64) -> Result<Trace> {
        let pt = self.plaintext(t)?;
        let mut selector = PufSelector::at(self.seeds.puf, t.wrapping_mul(self.stride));
        let mut noise = ChaCha8Rng::seed_from_u64(self.seeds.noise);
        noise.set_stream(t);
        self.synth.synthesize(&pt, &mut selector, &mut noise)
    }

    /// Traces `start..end`, generated in parallel, returned in order.
    pub fn traces(&self, start: u64, end: u64) -> Result<Vec<Trace>> {
        (start..end).into_par_iter().map(|t| self.trace(t)).collect()
    }

    /// Header metadata describing every configuration field and seed. The
    /// key itself is not recorded.
    pub fn metadata(&self, n_traces: u64) -> Metadata {
        let c = self.config();
        let mut m = Metadata::new();
        m.push("format_version", FORMAT_VERSION)
            .push("n_traces", n_traces)
            .push("model", c.model.to_compact())
            .push("noise_sigma", c.noise_sigma)
            .push("samples_per_op", c.samples_per_op)
            .push("trace_length", c.trace_length())
            .push("attack_base", c.layout.attack_base().map_or("none".to_string(), |b| b.to_string()))
            .push("layout", c.layout.to_compact())
            .push("defense", c.defense.as_str())
            .push("reselect", c.reselect.as_str())
            .push("plaintext_source", self.source.describe())
            .push("seed", self.seeds.master)
            .push("plaintext_seed", self.seeds.plaintext)
            .push("noise_seed", self.seeds.noise)
            .push("puf_seed", self.seeds.puf)
            .push("puf_stride", self.stride)
            .push("log_variants", c.logs_variants());
        if let Some(bank) = self.synth.bank() {
            m.push("bank", bank.to_compact());
        }
        if c.logs_variants() {
            m.push(VARIANT_LOG_KEY, c.layout.slots.len());
        }
        m
    }

    pub fn header(&self, n_traces: u64) -> Result<TraceSetHeader> {
        let n_samples = u32::try_from(self.config().trace_length())
            .map_err(|_| Error::Config("trace length exceeds u32".into()))?;
        let mut h = TraceSetHeader::new(n_traces, n_samples, self.metadata(n_traces));
        if self.config().logs_variants() {
            h.flags |= FLAG_VARIANT_LOG;
        }
        Ok(h)
    }

    /// Writes `n` traces to `path`, synthesizing in parallel chunks.
    pub fn write(&self, n: u64, path: impl AsRef<Path>) -> Result<TraceSetHeader> {
        let header = self.header(n)?;
        let mut w = TraceWriter::create(path, header.clone())?;
        let mut start = 0;
        while start < n {
            let end = (start + WRITE_CHUNK as u64).min(n);
            for t in self.traces(start, end)? {
                w.write(&t)?;
            }
            start = end;
        }
        w.finish()?;
        Ok(header)
    }
}

pub fn generate_campaign(
    n: u64,
    key: &Key128,
    config: LeakageConfig,
    bank: Option<VariantBank>,
    source: PlaintextSource,
    path: impl AsRef<Path>,
) -> Result<TraceSetHeader> {
    if n == 0 {
        return Err(Error::Config("campaign needs at least one trace".into()));
    }
    if let PlaintextSource::List(l) = &source {
        if (l.len() as u64) < n {
            return Err(Error::Config(format!("{n} traces requested but only {} plaintexts", l.len())));
        }
    }
    Campaign::new(key, config, bank, source)?.write(n, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes;
    use crate::leakage::{hamming_weight, Defense};
    use crate::store::read_traceset;

    #[test]
    fn single_trace_campaign() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.scf");
        let h = generate_campaign(1, &Key128::default(), LeakageConfig::default(), None, PlaintextSource::Random, &p).unwrap();
        assert_eq!(h.n_traces, 1);
        let (h2, it) = read_traceset(&p).unwrap();
        assert_eq!(h2.n_traces, 1);
        assert_eq!(it.count(), 1);
    }

    #[test]
    fn zero_traces_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = generate_campaign(0, &Key128::default(), LeakageConfig::default(), None, PlaintextSource::Random, dir.path().join("z"));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn enumeration_covers_every_hw_class() {
        let key = Key128::from_hex("51720187c36e0c8523acb8535a870703").unwrap();
        let config = LeakageConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let base = config.layout.attack_base().unwrap();
        let c = Campaign::new(&key, config, None, PlaintextSource::Enumerate { positions: 1 }).unwrap();
        let traces = c.traces(0, 256).unwrap();
        let mut byte0: Vec<u8> = traces.iter().map(|t| t.plaintext[0]).collect();
        byte0.sort_unstable();
        assert_eq!(byte0, (0..=255).collect::<Vec<u8>>());
        let mut seen = [false; 9];
        for t in &traces {
            let hw = t.samples[base] as usize;
            assert_eq!(hw as u32, hamming_weight(aes::attack_point_value(t.plaintext[0], key[0])));
            seen[hw] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn parallel_equals_serial() {
        let bank = VariantBank::ladder(&crate::bank::DEFAULT_LADDER, 3).unwrap();
        let config = LeakageConfig {
            defense: Defense::Swapper,
            log_variants: true,
            seed: 77,
            ..Default::default()
        };
        let c = Campaign::new(&Key128([3; 16]), config, Some(bank), PlaintextSource::Random).unwrap();
        let par = c.traces(0, 300).unwrap();
        let serial: Vec<_> = (0..300).map(|t| c.trace(t).unwrap()).collect();
        assert_eq!(par, serial);
        let reversed: Vec<_> = (0..300).rev().map(|t| c.trace(t).unwrap()).collect();
        assert!(reversed.into_iter().rev().eq(serial));
    }

    #[test]
    fn files_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let make = |name: &str| {
            let p = dir.path().join(name);
            let config = LeakageConfig {
                seed: 1234,
                ..Default::default()
            };
            generate_campaign(500, &Key128([0xaa; 16]), config, None, PlaintextSource::Random, &p).unwrap();
            std::fs::read(p).unwrap()
        };
        assert_eq!(make("a.scf"), make("b.scf"));
    }

    #[test]
    fn plaintext_list_source() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.txt");
        std::fs::write(&p, "# header\n00112233445566778899aabbccddeeff\n\nffeeddccbbaa99887766554433221100\n").unwrap();
        let pts = read_plaintexts(&p).unwrap();
        assert_eq!(pts.len(), 2);
        let r = generate_campaign(3, &Key128::default(), LeakageConfig::default(), None, PlaintextSource::List(pts.clone()), dir.path().join("x"));
        assert!(r.is_err());
        let c = Campaign::new(&Key128::default(), LeakageConfig::default(), None, PlaintextSource::List(pts.clone())).unwrap();
        assert_eq!(c.trace(1).unwrap().plaintext, pts[1]);
    }
}
