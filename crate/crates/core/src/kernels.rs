//! Exponential-sum memory kernels and their Ornstein-Uhlenbeck embedding.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::noise::substream;
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    /// Coupling weight.
    pub lambda: f64,
    /// Decay rate.
    pub alpha: f64,
}

impl Mode {
    pub fn new(lambda: f64, alpha: f64) -> Self {
        Self { lambda, alpha }
    }
}

/// Per-particle lists of `(lambda, alpha)` modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSpec {
    pub modes: Vec<Vec<Mode>>,
}

impl KernelSpec {
    pub fn new(modes: Vec<Vec<Mode>>) -> Result<Self> {
        for (i, list) in modes.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::invalid(format!("particle {i} has no kernel modes")));
            }
            for m in list {
                if !(m.lambda > 0.0 && m.alpha > 0.0) || !m.lambda.is_finite() || !m.alpha.is_finite() {
                    return Err(Error::invalid(format!(
                        "particle {i}: kernel modes need lambda > 0 and alpha > 0"
                    )));
                }
            }
        }
        Ok(Self { modes })
    }

    /// Every particle gets the same list of modes.
    pub fn uniform(n: usize, modes: &[Mode]) -> Result<Self> {
        Self::new(vec![modes.to_vec(); n])
    }

    pub fn particles(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_count(&self, i: usize) -> usize {
        self.modes[i].len()
    }

    pub fn total_modes(&self) -> usize {
        self.modes.iter().map(Vec::len).sum()
    }

    /// Length of the flat auxiliary vector in dimension `dim`.
    pub fn z_len(&self, dim: usize) -> usize {
        self.total_modes() * dim
    }

    /// Start of `z_{i,0}` in the flat auxiliary vector.
    pub fn z_offset(&self, i: usize, dim: usize) -> usize {
        self.modes[..i].iter().map(Vec::len).sum::<usize>() * dim
    }

    /// `K_i(t) = sum_l lambda^2 exp(-alpha t)`.
    pub fn eval(&self, i: usize, t: f64) -> Result<f64> {
        kernel_eval(self, i, t)
    }
}

pub fn kernel_eval(spec: &KernelSpec, i: usize, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(spec.modes[i]
        .iter()
        .map(|m| m.lambda * m.lambda * (-m.alpha * t).exp())
        .sum())
}

/// Draws the whole auxiliary vector from its stationary law, `N(0, I)`.
pub fn sample_stationary_aux<R: Rng + ?Sized>(spec: &KernelSpec, dim: usize, rng: &mut R) -> Vec<f64> {
    (0..spec.z_len(dim)).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exact transition of the unit-variance OU process `dz = -alpha z dt + sqrt(2 alpha) dW`.
#[inline]
pub fn ou_exact_step(z: f64, alpha: f64, dt: f64, xi: f64) -> f64 {
    let decay = (-alpha * dt).exp();
    decay * z + (1.0 - decay * decay).sqrt() * xi
}

#[derive(Debug, Clone, Serialize)]
pub struct LagRow {
    pub lag: f64,
    pub empirical: f64,
    pub exact: f64,
    pub rel_err: f64,
    /// Smallest eigenvalue of the empirical covariance of `(F(t), F(t + lag))`.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationReport {
    pub particle: usize,
    pub samples: usize,
    pub window: f64,
    pub spacing: f64,
    pub seed: u64,
    pub rows: Vec<LagRow>,
}

impl FluctuationReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lag,empirical,exact,rel_err\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.lag, r.empirical, r.exact, r.rel_err));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FluctuationOptions {
    pub lags: Vec<f64>,
    /// Independent stationary paths.
    pub samples: usize,
    /// Length of each path; every grid time in it serves as a time origin.
    pub window: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for FluctuationOptions {
    fn default() -> Self {
        Self {
            lags: (0..=30).map(|k| k as f64 * 0.1).collect(),
            samples: 100_000,
            window: 200.0,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// Sampling step that puts every lag on the grid, at most 0.25.
fn grid_spacing(lags: &[f64]) -> Result<f64> {
    const CANDIDATES: [f64; 6] = [0.25, 0.125, 0.1, 0.05, 0.025, 0.01];
    let fits = |h: f64| lags.iter().all(|l| ((l / h).round() * h - l).abs() < 1e-9);
    if let Some(h) = CANDIDATES.iter().copied().find(|&h| fits(h)) {
        return Ok(h);
    }
    // a single off-grid lag, such as ln 2, gets its own subdivision
    let smallest = lags.iter().copied().filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min);
    let h = smallest / (smallest / 0.25).ceil();
    if fits(h) {
        Ok(h)
    } else {
        Err(Error::invalid("lags must share a common grid step"))
    }
}

/// Compares the empirical autocovariance of `F_i = sum_l lambda z_l` against `K_i`.
///
/// Each path starts in stationarity and is advanced with exact OU transitions, so
/// the only error is statistical.
pub fn fluctuation_dissipation_check(
    spec: &KernelSpec,
    i: usize,
    opts: &FluctuationOptions,
) -> Result<FluctuationReport> {
    if opts.lags.iter().any(|&l| l < 0.0) {
        return Err(Error::NegativeTime(opts.lags.iter().cloned().fold(0.0, f64::min)));
    }
    let max_lag = opts.lags.iter().cloned().fold(0.0, f64::max);
    if !(opts.window > max_lag) {
        return Err(Error::invalid("lag grid exceeds the simulated window"));
    }
    let h = grid_spacing(&opts.lags)?;
    let steps: Vec<usize> = opts.lags.iter().map(|l| (l / h).round() as usize).collect();
    let depth = steps.iter().copied().max().unwrap_or(0);
    let total = (opts.window / h).round() as usize;
    let origins = total - depth + 1;
    let modes = &spec.modes[i];
    let decay: Vec<(f64, f64)> = modes
        .iter()
        .map(|m| {
            let e = (-m.alpha * h).exp();
            (e, (1.0 - e * e).sqrt())
        })
        .collect();

    // per path: sum F, sum F^2 over origins and, per lag, sums of F(t)F(t+s), F(t+s)^2, F(t+s)
    let per_path = map_indexed(opts.execution, opts.samples, |p| {
        let mut rng = substream(opts.seed, 0x4644, p as u64);
        let mut z: Vec<f64> = modes.iter().map(|_| rng.sample(StandardNormal)).collect();
        let mut ring = vec![0.0; depth + 1];
        let mut acc = PathSums::new(steps.len());
        for n in 0..=total {
            if n > 0 {
                for (zl, &(e, s)) in z.iter_mut().zip(&decay) {
                    let xi: f64 = rng.sample(StandardNormal);
                    *zl = e * *zl + s * xi;
                }
            }
            let f: f64 = modes.iter().zip(&z).map(|(m, zl)| m.lambda * zl).sum();
            ring[n % (depth + 1)] = f;
            if n >= depth {
                let origin = ring[(n - depth) % (depth + 1)];
                acc.lead += origin;
                acc.lead_sq += origin * origin;
                for (k, &s) in steps.iter().enumerate() {
                    let lagged = ring[(n - depth + s) % (depth + 1)];
                    acc.cross[k] += origin * lagged;
                    acc.lag[k] += lagged;
                    acc.lag_sq[k] += lagged * lagged;
                }
            }
        }
        acc
    });

    let mut tot = PathSums::new(steps.len());
    for acc in &per_path {
        tot.add(acc);
    }
    let count = (opts.samples * origins) as f64;
    let mean_lead = tot.lead / count;
    let var_lead = tot.lead_sq / count - mean_lead * mean_lead;
    let rows = opts
        .lags
        .iter()
        .enumerate()
        .map(|(k, &lag)| {
            let mean_lag = tot.lag[k] / count;
            let cov = tot.cross[k] / count - mean_lead * mean_lag;
            let var_lag = tot.lag_sq[k] / count - mean_lag * mean_lag;
            let exact = kernel_eval(spec, i, lag).expect("lag is nonnegative");
            let tr = var_lead + var_lag;
            let det = var_lead * var_lag - cov * cov;
            let min_eigenvalue = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
            LagRow {
                lag,
                empirical: cov,
                exact,
                rel_err: (cov - exact).abs() / exact,
                min_eigenvalue,
            }
        })
        .collect();
    Ok(FluctuationReport {
        particle: i,
        samples: opts.samples,
        window: opts.window,
        spacing: h,
        seed: opts.seed,
        rows,
    })
}

struct PathSums {
    lead: f64,
    lead_sq: f64,
    cross: Vec<f64>,
    lag: Vec<f64>,
    lag_sq: Vec<f64>,
}

impl PathSums {
    fn new(n: usize) -> Self {
        Self {
            lead: 0.0,
            lead_sq: 0.0,
            cross: vec![0.0; n],
            lag: vec![0.0; n],
            lag_sq: vec![0.0; n],
        }
    }

    fn add(&mut self, o: &PathSums) {
        self.lead += o.lead;
        self.lead_sq += o.lead_sq;
        for k in 0..self.cross.len() {
            self.cross[k] += o.cross[k];
            self.lag[k] += o.lag[k];
            self.lag_sq[k] += o.lag_sq[k];
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `samples` against `N(0, 1)` using equiprobable bins.
pub fn chi_square_standard_normal(samples: &[f64], bins: usize) -> ChiSquareResult {
    assert!(bins >= 2 && !samples.is_empty());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let edges: Vec<f64> = (1..bins)
        .map(|k| normal.inverse_cdf(k as f64 / bins as f64))
        .collect();
    let mut counts = vec![0usize; bins];
    for &x in samples {
        counts[edges.partition_point(|&e| e < x)] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    let statistic = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dof = bins - 1;
    let p_value = ChiSquared::new(dof as f64).expect("positive dof").sf(statistic);
    ChiSquareResult { statistic, dof, p_value }
}
