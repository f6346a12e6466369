//! Complexity harness comparing the softmax attention core with the chunked
//! SSD core: analytic flop proxies, counted multiplies and wall time.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blocks::attention_core;
use crate::rng::Seed;
use crate::ssd::kernels::{chunked_forward, Head};
use crate::ssd::{flop_proxy, CostModel};
use crate::tensor::kernels::with_multiply_counter;
use crate::{Error, Result};

pub const BENCH_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "mode,T,D,flop_proxy,measured_multiplies,wall_ns,ratio";
/// Sizes used for the scaling fit.
pub const SCALING_T: [usize; 6] = [128, 256, 320, 512, 1024, 2048];
/// Sequence length and width where the attention-to-SSD cost ratio is reported.
pub const HEADLINE_POINT: (usize, usize) = (320, 16);
pub const DECODER_POINT: (usize, usize) = (31, 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    Attention,
    SsdChunked,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Attention => "attention",
            BenchMode::SsdChunked => "ssd-chunked",
        }
    }

    pub fn cost_model(self) -> CostModel {
        match self {
            BenchMode::Attention => CostModel::Attention,
            BenchMode::SsdChunked => CostModel::Ssd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub len: usize,
    pub dim: usize,
    pub flop_proxy: u64,
    pub measured_multiplies: u64,
    pub wall_ns: u64,
    /// Attention proxy over SSD proxy at this `(T, D)`.
    pub ratio: f64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mode.name(),
            self.len,
            self.dim,
            self.flop_proxy,
            self.measured_multiplies,
            self.wall_ns,
            self.ratio
        )
    }

    /// Counted multiplies over the proxy.
    pub fn count_ratio(&self) -> f64 {
        self.measured_multiplies as f64 / self.flop_proxy as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub t_list: Vec<usize>,
    pub d_list: Vec<usize>,
    /// Extra `(T, D)` points appended after the grid.
    pub extra_points: Vec<(usize, usize)>,
    pub chunk: usize,
    /// Timed repetitions per row; the minimum is reported.
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            t_list: SCALING_T.to_vec(),
            d_list: vec![16],
            extra_points: vec![DECODER_POINT],
            chunk: 16,
            reps: 3,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() || self.d_list.is_empty() {
            return Err(Error::Config("bench needs at least one T and one D".into()));
        }
        let points = self.points();
        if let Some(&(t, d)) = points.iter().find(|&&(t, d)| t == 0 || d == 0) {
            return Err(Error::Config(format!("bench sizes must be positive, got T={t} D={d}")));
        }
        if self.chunk == 0 || self.reps == 0 {
            return Err(Error::Config("bench chunk and reps must be positive".into()));
        }
        Ok(())
    }

    /// Grid points followed by the extra points, duplicates removed.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &d in &self.d_list {
            for &t in &self.t_list {
                out.push((t, d));
            }
        }
        for &p in &self.extra_points {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

struct Workload {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    dt: Vec<f64>,
}

impl Workload {
    fn new(len: usize, dim: usize, seed: Seed) -> Self {
        let mut rng = seed.split(len as u64).split(dim as u64).rng();
        let n = len * dim;
        Self {
            q: rng.vec_normal(n, 1.0),
            k: rng.vec_normal(n, 1.0),
            v: rng.vec_normal(n, 1.0),
            dt: rng.vec_uniform(len, 0.01, 0.1),
        }
    }

    /// SSD head with `P = N = D`; `x`, `B`, `C` reuse the attention operands.
    fn head(&self, len: usize, dim: usize) -> Head<'_> {
        Head { len, head_dim: dim, state_dim: dim, x: &self.v, dt: &self.dt, a: -1.0, b: &self.k, c: &self.q }
    }
}

fn run_once(mode: BenchMode, w: &Workload, len: usize, dim: usize, chunk: usize) -> Vec<f64> {
    match mode {
        BenchMode::Attention => attention_core(len, len, dim, &w.q, &w.k, &w.v),
        BenchMode::SsdChunked => chunked_forward(&w.head(len, dim), chunk),
    }
}

/// One row: multiply count from a single counted run, wall time as the
/// minimum over `reps` runs.
pub fn measure(mode: BenchMode, len: usize, dim: usize, chunk: usize, reps: usize, seed: Seed) -> BenchRow {
    let w = Workload::new(len, dim, seed);
    let (_, measured) = with_multiply_counter(|| run_once(mode, &w, len, dim, chunk));
    let mut best = u64::MAX;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let y = run_once(mode, &w, len, dim, chunk);
        let ns = start.elapsed().as_nanos() as u64;
        std::hint::black_box(y);
        best = best.min(ns.max(1));
    }
    let (t, d) = (len as u64, dim as u64);
    BenchRow {
        mode,
        len,
        dim,
        flop_proxy: flop_proxy(mode.cost_model(), t, d),
        measured_multiplies: measured,
        wall_ns: best,
        ratio: flop_proxy(CostModel::Attention, t, d) as f64 / flop_proxy(CostModel::Ssd, t, d) as f64,
    }
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let seed = Seed(cfg.seed);
    let mut rows = Vec::new();
    for (t, d) in cfg.points() {
        for mode in [BenchMode::Attention, BenchMode::SsdChunked] {
            rows.push(measure(mode, t, d, cfg.chunk, cfg.reps, seed));
        }
    }
    Ok(rows)
}

pub fn csv_preamble() -> String {
    format!("# drama-bench version {BENCH_VERSION}\n{CSV_HEADER}\n")
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = csv_preamble();
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Wall-time scaling exponent of `mode` over rows with `D = dim` and
/// `T` in `[t_min, t_max]`.
pub fn wall_time_slope(rows: &[BenchRow], mode: BenchMode, dim: usize, t_min: usize, t_max: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mode == mode && r.dim == dim && (t_min..=t_max).contains(&r.len))
        .map(|r| (r.len as f64, r.wall_ns as f64))
        .collect();
    loglog_slope(&pts)
}
