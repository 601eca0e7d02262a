//! Mergeable CPA sums.
//!
//! The hypothesis for guess `g` at byte position `b` depends on the trace only
//! through the plaintext byte `pt[b]`. So instead of updating 256 guesses per
//! sample per trace, the accumulator keeps, per position, the sum of measured
//! samples for each of the 256 plaintext-byte classes. All per-guess sums
//! (`Σx`, `Σx²`, `Σxy`) are reconstructed from these at correlation time.
//!
//! Measured samples are converted to fixed point with [`FRAC_BITS`]
//! fractional bits and summed in `i128`, so every sum is an exact integer.
//! Merging accumulators in any grouping or order gives identical sums, and a
//! partitioned run matches a serial run bit for bit.

use rayon::prelude::*;

use crate::aes::Block128;
use crate::cpa::{hypothetical_intermediate, hypothetical_power};
use crate::error::{Error, Result};
use crate::leakage::LeakageModel;
use crate::store::TraceRecord;

pub const FRAC_BITS: i32 = 32;
const SCALE: f64 = (1u64 << FRAC_BITS) as f64;
/// Largest accepted |sample|.
pub const SAMPLE_LIMIT: f32 = (1u32 << 20) as f32;

/// Fixed-point image of one sample.
#[inline]
pub fn quantize(y: f32) -> Result<i64> {
    if y.is_nan() || y.abs() >= SAMPLE_LIMIT {
        return Err(Error::SampleRange(y));
    }
    Ok((y as f64 * SCALE).round() as i64)
}

#[inline]
pub fn dequantize(q: i128) -> f64 {
    q as f64 / SCALE
}

/// Sample range `start..end` the attack looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn full(n: usize) -> Window {
        Window { start: 0, end: n }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Parses `start:end`.
    pub fn parse(s: &str) -> Result<Window> {
        let bad = || Error::Config(format!("window must be START:END, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let w = Window {
            start: a.trim().parse().map_err(|_| bad())?,
            end: b.trim().parse().map_err(|_| bad())?,
        };
        if w.is_empty() {
            return Err(Error::Config(format!("empty window {s:?}")));
        }
        Ok(w)
    }
}

/// Exact sums for one (guess, sample) cell. `sy`, `syy`, `sxy` are in
/// fixed-point units (`2^-FRAC_BITS` and its square).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSums {
    pub n: u64,
    pub sx: i128,
    pub sxx: i128,
    pub sy: i128,
    pub syy: i128,
    pub sxy: i128,
}

/// Pre-computed hypothesis `x(pt_byte, guess)` as a small integer.
#[derive(Debug, Clone)]
pub struct HypothesisTable {
    model: LeakageModel,
    // [guess][pt]
    table: Vec<[u8; 256]>,
}

impl HypothesisTable {
    pub fn new(model: LeakageModel) -> HypothesisTable {
        let table = (0..256)
            .map(|g| std::array::from_fn(|p| {
                    hypothetical_power(hypothetical_intermediate(p as u8, g as u8), model) as u8
                }))
            .collect();
        HypothesisTable { model, table }
    }

    #[inline]
    pub fn get(&self, pt: u8, guess: u8) -> u8 {
        self.table[guess as usize][pt as usize]
    }

    pub fn model(&self) -> LeakageModel {
        self.model
    }
}

/// Correlation of every guess with every windowed sample, for one byte
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub window: Window,
    /// Row-major, 256 rows of `window.len()` entries.
    pub r: Vec<f64>,
    /// Guesses whose hypothesis is constant over the traces.
    pub degenerate_guess: Vec<bool>,
    /// Window samples that are constant over the traces.
    pub degenerate_sample: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn from_rows(window: Window, r: Vec<f64>) -> CorrelationMatrix {
        assert_eq!(r.len(), 256 * window.len());
        CorrelationMatrix {
            window,
            r,
            degenerate_guess: vec![false; 256],
            degenerate_sample: vec![false; window.len()],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.window.len()
    }

    pub fn row(&self, guess: u8) -> &[f64] {
        let w = self.n_samples();
        &self.r[guess as usize * w..(guess as usize + 1) * w]
    }

    /// `s` is relative to the window start.
    pub fn get(&self, guess: u8, s: usize) -> f64 {
        self.row(guess)[s]
    }

    pub fn is_degenerate(&self, guess: u8, s: usize) -> bool {
        self.degenerate_guess[guess as usize] || self.degenerate_sample[s]
    }

    pub fn all_degenerate(&self) -> bool {
        self.degenerate_guess.iter().all(|&d| d) || self.degenerate_sample.iter().all(|&d| d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PositionSums {
    count: Vec<u64>,
    // [pt class][window sample]
    class_sum: Vec<i128>,
}

/// Streaming CPA state over a set of byte positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpaAccumulator {
    trace_len: usize,
    window: Window,
    positions: Vec<usize>,
    n: u64,
    sum_y: Vec<i128>,
    sum_yy: Vec<i128>,
    per_pos: Vec<PositionSums>,
}

impl CpaAccumulator {
    /// Tracks `positions` (byte indices 0..16) over `window` of traces that
    /// are `trace_len` samples long.
    pub fn new(trace_len: usize, window: Window, positions: &[usize]) -> Result<CpaAccumulator> {
        if window.is_empty() || window.end > trace_len {
            return Err(Error::Config(format!(
                "window {}..{} does not fit traces of {trace_len} samples",
                window.start, window.end
            )));
        }
        if positions.iter().any(|&p| p >= 16) {
            return Err(Error::Config(format!("byte positions must be < 16: {positions:?}")));
        }
        let w = window.len();
        Ok(CpaAccumulator {
            trace_len,
            window,
            positions: positions.to_vec(),
            n: 0,
            sum_y: vec![0; w],
            sum_yy: vec![0; w],
            per_pos: positions
                .iter()
                .map(|_| PositionSums {
                    count: vec![0; 256],
                    class_sum: vec![0; 256 * w],
                })
                .collect(),
        })
    }

    /// All 16 positions over the whole trace.
    pub fn full(trace_len: usize) -> Result<CpaAccumulator> {
        let all: Vec<usize> = (0..16).collect();
        CpaAccumulator::new(trace_len, Window::full(trace_len), &all)
    }

    pub fn n_traces(&self) -> u64 {
        self.n
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Folds one trace into every tracked position.
    pub fn accumulate(&mut self, trace: &TraceRecord) -> Result<()> {
        self.accumulate_samples(&trace.plaintext, &trace.samples)
    }

    pub fn accumulate_samples(&mut self, pt: &Block128, samples: &[f32]) -> Result<()> {
        if samples.len() != self.trace_len {
            return Err(Error::Geometry {
                expected: self.trace_len,
                actual: samples.len(),
            });
        }
        let w = self.window.len();
        let win = &samples[self.window.start..self.window.end];
        // Validate the whole row before touching any sum.
        let mut q = [0i64; 256];
        let mut qbuf;
        let q: &mut [i64] = if w <= q.len() {
            &mut q[..w]
        } else {
            qbuf = vec![0i64; w];
            &mut qbuf
        };
        for (d, &y) in q.iter_mut().zip(win) {
            *d = quantize(y)?;
        }
        for ((sy, syy), &v) in self.sum_y.iter_mut().zip(self.sum_yy.iter_mut()).zip(q.iter()) {
            *sy += v as i128;
            *syy += v as i128 * v as i128;
        }
        for (ps, &pos) in self.per_pos.iter_mut().zip(&self.positions) {
            let class = pt.0[pos] as usize;
            ps.count[class] += 1;
            let row = &mut ps.class_sum[class * w..(class + 1) * w];
            for (acc, &v) in row.iter_mut().zip(q.iter()) {
                *acc += v as i128;
            }
        }
        self.n += 1;
        Ok(())
    }

    fn same_geometry(&self, other: &CpaAccumulator) -> Result<()> {
        if self.trace_len != other.trace_len || self.window != other.window || self.positions != other.positions {
            return Err(Error::Config("cannot merge accumulators with different geometry".into()));
        }
        Ok(())
    }

    /// Adds `other`'s sums into `self`.
    pub fn merge(&mut self, other: &CpaAccumulator) -> Result<()> {
        self.same_geometry(other)?;
        self.n += other.n;
        for (a, b) in self.sum_y.iter_mut().zip(&other.sum_y) {
            *a += b;
        }
        for (a, b) in self.sum_yy.iter_mut().zip(&other.sum_yy) {
            *a += b;
        }
        for (pa, pb) in self.per_pos.iter_mut().zip(&other.per_pos) {
            for (a, b) in pa.count.iter_mut().zip(&pb.count) {
                *a += b;
            }
            for (a, b) in pa.class_sum.iter_mut().zip(&pb.class_sum) {
                *a += b;
            }
        }
        Ok(())
    }

    fn pos_index(&self, pos: usize) -> Result<usize> {
        self.positions
            .iter()
            .position(|&p| p == pos)
            .ok_or_else(|| Error::Config(format!("byte position {pos} is not tracked")))
    }

    /// Exact sums for one cell; `sample` is relative to the window start.
    pub fn cell_sums(&self, hyp: &HypothesisTable, pos: usize, guess: u8, sample: usize) -> Result<CellSums> {
        let ps = &self.per_pos[self.pos_index(pos)?];
        let w = self.window.len();
        let (mut sx, mut sxx, mut sxy) = (0i128, 0i128, 0i128);
        for class in 0..256 {
            let x = hyp.get(class as u8, guess) as i128;
            sx += x * ps.count[class] as i128;
            sxx += x * x * ps.count[class] as i128;
            sxy += x * ps.class_sum[class * w + sample];
        }
        Ok(CellSums {
            n: self.n,
            sx,
            sxx,
            sy: self.sum_y[sample],
            syy: self.sum_yy[sample],
            sxy,
        })
    }

    /// Pearson correlation for all 256 guesses against every window sample
    /// at byte position `pos`.
    pub fn correlate_all(&self, hyp: &HypothesisTable, pos: usize) -> Result<CorrelationMatrix> {
        if self.n < 2 {
            return Err(Error::TooFewTraces(self.n));
        }
        let ps = &self.per_pos[self.pos_index(pos)?];
        let w = self.window.len();
        let n = self.n as i128;

        let var_y: Vec<Option<f64>> = self
            .sum_y
            .iter()
            .zip(&self.sum_yy)
            .map(|(&sy, &syy)| centered(n, syy, sy, sy))
            .collect();

        let rows: Vec<(Vec<f64>, bool)> = (0..256usize)
            .into_par_iter()
            .map(|g| {
                let mut sx = 0i128;
                let mut sxx = 0i128;
                // Class sums grouped by hypothesis value (0..=8).
                let mut by_h = vec![0i128; 9 * w];
                for class in 0..256 {
                    let h = hyp.get(class as u8, g as u8) as usize;
                    let c = ps.count[class] as i128;
                    sx += h as i128 * c;
                    sxx += (h * h) as i128 * c;
                    if h == 0 || c == 0 {
                        continue;
                    }
                    let dst = &mut by_h[h * w..(h + 1) * w];
                    for (d, s) in dst.iter_mut().zip(&ps.class_sum[class * w..(class + 1) * w]) {
                        *d += s;
                    }
                }
                let var_x = centered(n, sxx, sx, sx).unwrap_or(0.0);
                if var_x <= 0.0 {
                    return (vec![0.0; w], true);
                }
                let row = (0..w)
                    .map(|s| {
                        let Some(vy) = var_y[s].filter(|&v| v > 0.0) else {
                            return 0.0;
                        };
                        let sxy: i128 = (1..9).map(|h| h as i128 * by_h[h * w + s]).sum();
                        let cov = centered(n, sxy, sx, self.sum_y[s]).unwrap_or(0.0);
                        (cov / (var_x.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)
                    })
                    .collect();
                (row, false)
            })
            .collect();

        let mut r = Vec::with_capacity(256 * w);
        let mut degenerate_guess = Vec::with_capacity(256);
        for (row, d) in rows {
            r.extend(row);
            degenerate_guess.push(d);
        }
        Ok(CorrelationMatrix {
            window: self.window,
            r,
            degenerate_guess,
            degenerate_sample: var_y.iter().map(|v| !matches!(v, Some(x) if *x > 0.0)).collect(),
        })
    }
}

/// `n * s_ab - s_a * s_b`, exactly when it fits in `i128`, otherwise from
/// the means in `f64`. The result is `n^2` times the (co)variance, in the
/// product of the operands' units.
fn centered(n: i128, s_ab: i128, s_a: i128, s_b: i128) -> Option<f64> {
    match n
        .checked_mul(s_ab)
        .zip(s_a.checked_mul(s_b))
        .and_then(|(p, q)| p.checked_sub(q))
    {
        Some(v) => Some(v as f64),
        None => {
            let nf = n as f64;
            let (ma, mb) = (s_a as f64 / nf, s_b as f64 / nf);
            Some((s_ab as f64 / nf - ma * mb) * nf * nf)
        }
    }
}
