//! Ensemble experiments: Gibbs marginals, Wasserstein decay, the small-mass
//! rate, a short-time generator check and the pair-sum inequalities.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{
    coupled_small_mass_pair, drive, sup_distance, CutoffSpec, GleIntegrator, OverdampedIntegrator, PhaseState,
    SimParams,
};
use crate::error::{Error, Result};
use crate::kernels::sample_stationary_aux;
use crate::lyapunov::{evaluate, generator_apply, Candidate, LyapunovParams};
use crate::model::Model;
use crate::noise::{substream, BrownianPath};
use crate::parallel::{map_indexed, try_map_indexed, Execution};
use crate::vector::dot;

/// Mean, variance and a 95% half-width from independent values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub variance: f64,
    pub ci_half_width: f64,
    pub count: usize,
}

impl SummaryStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                ci_half_width: f64::NAN,
                count: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            ci_half_width: 1.96 * (variance / n as f64).sqrt(),
            count: n,
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

// ---------------------------------------------------------------------------
// Gibbs marginals

/// Integrals of the two-particle, one-dimensional Gibbs density
/// `exp(-U(x1) - U(x2) - G(x1 - x2))` restricted to `x1 < x2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub x1_sq: f64,
    /// `E[min(1/|x1 - x2|, 1000)]`.
    pub inv_dist_clipped: f64,
    pub normalizer: f64,
    pub nodes_per_axis: usize,
}

/// Clip applied to the inverse pair distance on both sides of the comparison.
pub const INV_DIST_CLIP: f64 = 1e3;

fn simpson_weights(n: usize) -> Vec<f64> {
    // n intervals, n even
    (0..=n)
        .map(|k| {
            if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .collect()
}

/// Composite Simpson over centre of mass `c in [-L, L]` and separation
/// `r = x1 - x2 in [-L, 0]`, with `n` intervals per axis.
pub fn gibbs_quadrature(model: &Model, half_width: f64, n: usize) -> Result<QuadratureResult> {
    if model.dim != 1 || model.particles() != 2 {
        return Err(Error::invalid("the quadrature oracle covers N = 2, d = 1"));
    }
    let n = n + n % 2;
    let w = simpson_weights(n);
    let hc = 2.0 * half_width / n as f64;
    let hr = half_width / n as f64;
    let (mut z, mut m2, mut inv) = (0.0, 0.0, 0.0);
    for (a, wa) in w.iter().enumerate() {
        let c = -half_width + a as f64 * hc;
        for (b, wb) in w.iter().enumerate() {
            let r = -half_width + b as f64 * hr;
            if r >= 0.0 {
                // the density vanishes at coincidence for every repulsive kind
                continue;
            }
            let x = [c + 0.5 * r, c - 0.5 * r];
            let e = match model.potential_energy(&x) {
                Ok(e) => e,
                Err(_) => continue,
            };
            let dens = wa * wb * (-e).exp();
            z += dens;
            m2 += dens * x[0] * x[0];
            inv += dens * (1.0 / r.abs()).min(INV_DIST_CLIP);
        }
    }
    Ok(QuadratureResult {
        x1_sq: m2 / z,
        inv_dist_clipped: inv / z,
        normalizer: z * hc * hr / 9.0,
        nodes_per_axis: n + 1,
    })
}

/// Quadrature at `n`, `2n`, `4n` nodes with the observed error reduction factor
/// for `E[x1^2]`.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureOracle {
    pub levels: Vec<QuadratureResult>,
    /// `|I_n - I_2n| / |I_2n - I_4n|`; at least 2 means the error halves or better.
    pub reduction: f64,
    pub value: QuadratureResult,
}

pub fn gibbs_quadrature_oracle(model: &Model, half_width: f64, n: usize) -> Result<QuadratureOracle> {
    let levels = vec![
        gibbs_quadrature(model, half_width, n)?,
        gibbs_quadrature(model, half_width, 2 * n)?,
        gibbs_quadrature(model, half_width, 4 * n)?,
    ];
    let d1 = (levels[0].x1_sq - levels[1].x1_sq).abs();
    let d2 = (levels[1].x1_sq - levels[2].x1_sq).abs();
    let reduction = if d2 > 0.0 { d1 / d2 } else { f64::INFINITY };
    let value = levels[2];
    Ok(QuadratureOracle {
        levels,
        reduction,
        value,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsOptions {
    pub ensemble: usize,
    pub burn_in: f64,
    pub horizon: f64,
    /// Time between recorded samples.
    pub sample_every: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            ensemble: 64,
            burn_in: 50.0,
            horizon: 2_000.0,
            sample_every: 0.5,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalCheck {
    pub observable: String,
    pub estimate: SummaryStats,
    pub target: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl MarginalCheck {
    fn new(observable: &str, estimate: SummaryStats, target: f64, tolerance: f64) -> Self {
        let rel_err = (estimate.mean - target).abs() / target.abs();
        Self {
            observable: observable.to_string(),
            estimate,
            target,
            rel_err,
            tolerance,
            pass: rel_err <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsReport {
    pub mass: f64,
    pub gamma: f64,
    pub seed: u64,
    pub samples_per_trajectory: usize,
    /// Integrated autocorrelation time of `x1` in time units.
    pub autocorrelation_time: f64,
    pub effective_samples: f64,
    pub checks: Vec<MarginalCheck>,
    pub velocity_kurtosis: f64,
    pub oracle: Option<QuadratureOracle>,
}

impl GibbsReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct GibbsPath {
    v2: f64,
    v4: f64,
    z2: f64,
    x1_sq: f64,
    inv: f64,
    x1_series: Vec<f64>,
    count: usize,
}

/// Integrated autocorrelation time (in samples) by Geyer's initial positive sequence.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let acf = |k: usize| -> f64 {
        (0..n - k).map(|t| (series[t] - mean) * (series[t + k] - mean)).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n / 2 {
        let pair = acf(k) + acf(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau.max(1.0)
}

/// Long-run ensemble averages against the Gibbs marginals: `N(0, 1/m)` for each
/// velocity component, `N(0, 1)` for each auxiliary component and, for two
/// particles on a line, `E[x1^2]` and the clipped `E[1/|x1 - x2|]` from quadrature.
pub fn gibbs_marginal_test(
    model: &Model,
    initial_x: &[f64],
    params: &SimParams,
    opts: &GibbsOptions,
) -> Result<GibbsReport> {
    params.validate_gle()?;
    if opts.burn_in >= opts.horizon {
        return Err(Error::BurnInTooShort(format!(
            "burn-in {} must be shorter than the horizon {}",
            opts.burn_in, opts.horizon
        )));
    }
    if opts.ensemble < 2 {
        return Err(Error::EnsembleTooSmall {
            got: opts.ensemble,
            min: 2,
        });
    }
    let d = model.dim;
    let pair_line = model.particles() == 2 && d == 1;
    let stride = (opts.sample_every / params.dt).round().max(1.0) as u64;
    let run_params = SimParams {
        output_dt: Some(params.dt),
        horizon: opts.horizon,
        ..params.clone()
    };
    let burn_steps = (opts.burn_in / params.dt).round() as u64;

    let paths = try_map_indexed(opts.execution, opts.ensemble, |p| -> Result<GibbsPath> {
        let noise = BrownianPath::new(opts.seed, p as u64, model.channels(), params.dt);
        let mut rng = substream(opts.seed, 0x4942_4253, p as u64);
        let z0 = sample_stationary_aux(&model.kernels, d, &mut rng);
        let v0: Vec<f64> = (0..model.x_len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) / params.mass.sqrt())
            .collect();
        let init = PhaseState::new(model, initial_x.to_vec(), v0, z0)?;
        let mut integ = GleIntegrator::new(model, &run_params, &noise, None)?;
        let mut acc = GibbsPath {
            v2: 0.0,
            v4: 0.0,
            z2: 0.0,
            x1_sq: 0.0,
            inv: 0.0,
            x1_series: Vec::new(),
            count: 0,
        };
        let mut step = 0u64;
        drive(&mut integ, init, &run_params, &noise, d, |s, _| {
            let k = step;
            step += 1;
            if k < burn_steps || (k - burn_steps) % stride != 0 {
                return;
            }
            let nv = s.v.len() as f64;
            acc.v2 += s.v.iter().map(|v| v * v).sum::<f64>() / nv;
            acc.v4 += s.v.iter().map(|v| v.powi(4)).sum::<f64>() / nv;
            acc.z2 += s.z.iter().map(|z| z * z).sum::<f64>() / s.z.len() as f64;
            acc.x1_sq += dot(&s.x[..d], &s.x[..d]);
            if pair_line {
                acc.inv += (1.0 / (s.x[0] - s.x[1]).abs()).min(INV_DIST_CLIP);
            }
            acc.x1_series.push(s.x[0]);
            acc.count += 1;
        })?;
        Ok(acc)
    })?;

    let per = |f: &dyn Fn(&GibbsPath) -> f64| -> Vec<f64> { paths.iter().map(|p| f(p) / p.count as f64).collect() };
    let v2 = SummaryStats::from_samples(&per(&|p| p.v2));
    let v4 = SummaryStats::from_samples(&per(&|p| p.v4));
    let z2 = SummaryStats::from_samples(&per(&|p| p.z2));
    let x1 = SummaryStats::from_samples(&per(&|p| p.x1_sq));
    let count = paths[0].count;
    let tau_samples = paths
        .iter()
        .take(8)
        .map(|p| integrated_autocorrelation(&p.x1_series))
        .sum::<f64>()
        / paths.len().min(8) as f64;
    let tau = tau_samples * stride as f64 * params.dt;
    if opts.burn_in < 5.0 * tau {
        return Err(Error::BurnInTooShort(format!(
            "burn-in {} is below five autocorrelation times ({tau:.3})",
            opts.burn_in
        )));
    }
    let ess = (opts.ensemble * count) as f64 / tau_samples;

    let mut checks = vec![
        MarginalCheck::new("var(v)", v2, 1.0 / params.mass, 0.03),
        MarginalCheck::new("var(z)", z2, 1.0, 0.03),
    ];
    let mut oracle = None;
    if pair_line {
        let q = gibbs_quadrature_oracle(model, 8.0, 400)?;
        checks.push(MarginalCheck::new("E[x1^2]", x1, q.value.x1_sq, 0.05));
        let inv = SummaryStats::from_samples(&per(&|p| p.inv));
        checks.push(MarginalCheck::new("E[min(1/|x1-x2|, 1e3)]", inv, q.value.inv_dist_clipped, 0.05));
        oracle = Some(q);
    }
    Ok(GibbsReport {
        mass: params.mass,
        gamma: params.gamma,
        seed: opts.seed,
        samples_per_trajectory: count,
        autocorrelation_time: tau,
        effective_samples: ess,
        velocity_kurtosis: v4.mean / (v2.mean * v2.mean),
        checks,
        oracle,
    })
}

// ---------------------------------------------------------------------------
// Wasserstein decay

/// One-dimensional `W1` between equally sized samples.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
}

/// Sliced `W1` over the given unit directions.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], directions: &[Vec<f64>]) -> f64 {
    directions
        .iter()
        .map(|u| {
            let mut pa: Vec<f64> = a.iter().map(|s| dot(s, u)).collect();
            let mut pb: Vec<f64> = b.iter().map(|s| dot(s, u)).collect();
            wasserstein_1d(&mut pa, &mut pb)
        })
        .sum::<f64>()
        / directions.len() as f64
}

/// Fixed random unit directions in `R^dim`.
pub fn projections(seed: u64, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, 0x534c_4943, 0);
    (0..count)
        .map(|_| loop {
            let u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = dot(&u, &u).sqrt();
            if n > 1e-12 {
                break u.into_iter().map(|c| c / n).collect();
            }
        })
        .collect()
}

fn flat(s: &PhaseState) -> Vec<f64> {
    let mut out = s.x.clone();
    out.extend_from_slice(&s.v);
    out.extend_from_slice(&s.z);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct WassersteinOptions {
    pub ensemble: usize,
    pub times: Vec<f64>,
    pub projections: usize,
    pub seed: u64,
    /// Drive member `k` of both ensembles with the same noise.
    pub coupled: bool,
    /// The fit stops once the distance falls below `plateau_factor * plateau`.
    pub plateau_factor: f64,
    pub execution: Execution,
}

impl Default for WassersteinOptions {
    fn default() -> Self {
        Self {
            ensemble: 1_000,
            times: (0..=40).map(|k| k as f64 * 0.5).collect(),
            projections: 64,
            seed: 0,
            coupled: false,
            plateau_factor: 3.0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub rate: f64,
    pub r_squared: f64,
    pub plateau: f64,
    /// Number of leading grid points used by the fit.
    pub fit_points: usize,
    pub seed: u64,
}

/// Median of the last quarter of `d`.
fn plateau_level(d: &[f64]) -> f64 {
    let mut tail: Vec<f64> = d[d.len() - d.len().div_ceil(4)..].to_vec();
    tail.sort_by(f64::total_cmp);
    tail[tail.len() / 2]
}

/// Exponential fit of `log d` on the leading stretch that stays above the plateau.
pub fn fit_decay(times: &[f64], d: &[f64], plateau_factor: f64) -> (f64, f64, f64, usize) {
    let plateau = plateau_level(d);
    let mut end = d.iter().position(|&x| x <= plateau_factor * plateau).unwrap_or(d.len());
    end = end.max(3).min(d.len());
    let logs: Vec<f64> = d[..end].iter().map(|x| x.max(1e-300).ln()).collect();
    let (_, slope, r2) = linear_fit(&times[..end], &logs);
    (-slope, r2, plateau, end)
}

pub fn wasserstein_decay(
    model: &Model,
    params: &SimParams,
    init_a: &PhaseState,
    init_b: &PhaseState,
    opts: &WassersteinOptions,
) -> Result<DecayReport> {
    const MIN_ENSEMBLE: usize = 16;
    if opts.ensemble < MIN_ENSEMBLE {
        return Err(Error::EnsembleTooSmall {
            got: opts.ensemble,
            min: MIN_ENSEMBLE,
        });
    }
    params.validate_gle()?;
    let horizon = opts.times.iter().cloned().fold(0.0, f64::max);
    let run = SimParams {
        horizon,
        output_dt: Some(params.dt),
        ..params.clone()
    };
    let grid: Vec<u64> = opts.times.iter().map(|t| (t / params.dt).round() as u64).collect();
    let simulate = |init: &PhaseState, stream: u64| -> Result<Vec<Vec<f64>>> {
        let noise = BrownianPath::new(opts.seed, stream, model.channels(), params.dt);
        let mut integ = GleIntegrator::new(model, &run, &noise, None)?;
        let mut out = vec![Vec::new(); grid.len()];
        let mut step = 0u64;
        drive(&mut integ, init.clone(), &run, &noise, model.dim, |s, _| {
            for (slot, &g) in out.iter_mut().zip(&grid) {
                if g == step {
                    *slot = flat(s);
                }
            }
            step += 1;
        })?;
        Ok(out)
    };
    let offset = if opts.coupled { 0 } else { opts.ensemble as u64 };
    let a = try_map_indexed(opts.execution, opts.ensemble, |k| simulate(init_a, k as u64))?;
    let b = try_map_indexed(opts.execution, opts.ensemble, |k| simulate(init_b, offset + k as u64))?;
    let dirs = projections(opts.seed, flat(init_a).len(), opts.projections);
    let distances: Vec<f64> = (0..grid.len())
        .map(|g| {
            let sa: Vec<Vec<f64>> = a.iter().map(|p| p[g].clone()).collect();
            let sb: Vec<Vec<f64>> = b.iter().map(|p| p[g].clone()).collect();
            sliced_wasserstein(&sa, &sb, &dirs)
        })
        .collect();
    let (rate, r_squared, plateau, fit_points) = fit_decay(&opts.times, &distances, opts.plateau_factor);
    Ok(DecayReport {
        times: opts.times.clone(),
        distances,
        rate,
        r_squared,
        plateau,
        fit_points,
        seed: opts.seed,
    })
}

// ---------------------------------------------------------------------------
// Small mass

#[derive(Debug, Clone, Serialize)]
pub struct SmallMassOptions {
    /// Strictly decreasing masses; each must be a power-of-two multiple of the smallest.
    pub masses: Vec<f64>,
    pub gamma: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub xis: Vec<f64>,
    /// Steps per unit mass: the GLE step is `m / steps_per_mass`.
    pub steps_per_mass: f64,
    pub delta_min: f64,
    pub execution: Execution,
}

impl Default for SmallMassOptions {
    fn default() -> Self {
        Self {
            masses: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            gamma: 1.0,
            horizon: 1.0,
            paths: 200,
            seed: 0,
            xis: vec![0.1],
            steps_per_mass: 50.0,
            delta_min: 1e-6,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallMassRow {
    pub m: f64,
    /// `E[sup |x_m - q|^4]`.
    pub sup4: SummaryStats,
    pub mean_sup: f64,
    /// `P(sup > xi)` for each threshold.
    pub exceedance: Vec<f64>,
    pub rejected_steps: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallMassReport {
    pub rows: Vec<SmallMassRow>,
    pub xis: Vec<f64>,
    /// Least-squares slope of `log E[sup^4]` against `log m`.
    pub slope: f64,
    pub truncated: bool,
    pub seed: u64,
}

impl SmallMassReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,E_sup4,ci_half_width,mean_sup");
        for xi in &self.xis {
            s.push_str(&format!(",P_sup_gt_{xi}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}", r.m, r.sup4.mean, r.sup4.ci_half_width, r.mean_sup));
            for p in &r.exceedance {
                s.push_str(&format!(",{p}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Monte Carlo estimate of the fourth moment of the coupled sup-distance per mass.
///
/// Every path uses one Brownian path whose cells have the width of the finest
/// GLE step; the overdamped leg runs on that grid, and the sup is taken over the
/// grid of the coarsest GLE step, which every leg visits.
pub fn small_mass_sweep(
    model: &Model,
    x0: &[f64],
    cutoff: Option<&CutoffSpec>,
    opts: &SmallMassOptions,
) -> Result<SmallMassReport> {
    if opts.masses.is_empty() || opts.masses.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("mass grid must be nonempty and strictly decreasing"));
    }
    if !(opts.gamma > 0.0) {
        return Err(Error::GammaZero);
    }
    let m_min = *opts.masses.last().expect("nonempty");
    let m_max = opts.masses[0];
    let cell = m_min / opts.steps_per_mass;
    for &m in &opts.masses {
        let ratio = m / m_min;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 || (k as u64).count_ones() != 1 {
            return Err(Error::invalid(format!("mass {m} is not a power-of-two multiple of {m_min}")));
        }
    }
    let out_dt = m_max / opts.steps_per_mass;
    let base = SimParams {
        gamma: opts.gamma,
        horizon: opts.horizon,
        seed: opts.seed,
        delta_min: opts.delta_min,
        max_halvings: 20,
        output_dt: Some(out_dt),
        ..SimParams::default()
    };
    let od_params = SimParams {
        mass: m_min,
        dt: cell,
        ..base.clone()
    };

    // per path: sup distance and rejections for every mass
    let per_path = try_map_indexed(opts.execution, opts.paths, |p| -> Result<Vec<(f64, u64)>> {
        let noise = BrownianPath::new(opts.seed, p as u64, model.channels(), cell);
        let mut rng = substream(opts.seed, 0x534d_414c, p as u64);
        let z0 = sample_stationary_aux(&model.kernels, model.dim, &mut rng);
        let init = PhaseState::new(model, x0.to_vec(), vec![0.0; x0.len()], z0)?;
        // the overdamped leg does not depend on m; run it once
        let lifted = crate::dynamics::lift_initial_condition(&init.x, &init.z, &model.kernels, model.dim)?;
        let mut od_states = Vec::new();
        let mut od = OverdampedIntegrator::new(model, &od_params, &noise, cutoff)?;
        let od_rej = drive(&mut od, lifted, &od_params, &noise, model.dim, |s, _| od_states.push(s.q.clone()))?.rejected;
        opts.masses
            .iter()
            .map(|&m| {
                let gp = SimParams {
                    mass: m,
                    dt: m / opts.steps_per_mass,
                    ..base.clone()
                };
                let mut integ = GleIntegrator::new(model, &gp, &noise, cutoff)?;
                let mut xs = Vec::new();
                let stats = drive(&mut integ, init.clone(), &gp, &noise, model.dim, |s, _| xs.push(s.x.clone()))?;
                let sup = sup_distance(xs.iter().map(Vec::as_slice), od_states.iter().map(Vec::as_slice));
                Ok((sup, stats.rejected + od_rej))
            })
            .collect()
    })?;

    let mut rows = Vec::new();
    for (k, &m) in opts.masses.iter().enumerate() {
        let sups: Vec<f64> = per_path.iter().map(|p| p[k].0).collect();
        let fourth: Vec<f64> = sups.iter().map(|s| s.powi(4)).collect();
        let exceedance = opts
            .xis
            .iter()
            .map(|&xi| sups.iter().filter(|&&s| s > xi).count() as f64 / sups.len() as f64)
            .collect();
        rows.push(SmallMassRow {
            m,
            sup4: SummaryStats::from_samples(&fourth),
            mean_sup: sups.iter().sum::<f64>() / sups.len() as f64,
            exceedance,
            rejected_steps: per_path.iter().map(|p| p[k].1).sum(),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.m.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.sup4.mean.ln()).collect();
    let slope = if rows.len() >= 2 { linear_fit(&lx, &ly).1 } else { f64::NAN };
    Ok(SmallMassReport {
        rows,
        xis: opts.xis.clone(),
        slope,
        truncated: cutoff.is_some(),
        seed: opts.seed,
    })
}

/// Convenience wrapper returning the coupled trajectories for one path.
pub fn coupled_pair_for_path(
    model: &Model,
    x0: &[f64],
    mass: f64,
    opts: &SmallMassOptions,
    path: usize,
    cutoff: Option<&CutoffSpec>,
) -> Result<crate::dynamics::CoupledRun> {
    let m_min = *opts.masses.last().expect("nonempty");
    let cell = m_min / opts.steps_per_mass;
    let noise = BrownianPath::new(opts.seed, path as u64, model.channels(), cell);
    let mut rng = substream(opts.seed, 0x534d_414c, path as u64);
    let z0 = sample_stationary_aux(&model.kernels, model.dim, &mut rng);
    let init = PhaseState::new(model, x0.to_vec(), vec![0.0; x0.len()], z0)?;
    let out_dt = opts.masses[0] / opts.steps_per_mass;
    let base = SimParams {
        gamma: opts.gamma,
        horizon: opts.horizon,
        seed: opts.seed,
        delta_min: opts.delta_min,
        output_dt: Some(out_dt),
        ..SimParams::default()
    };
    let gp = SimParams {
        mass,
        dt: mass / opts.steps_per_mass,
        ..base.clone()
    };
    let op = SimParams {
        mass: m_min,
        dt: cell,
        ..base
    };
    coupled_small_mass_pair(model, &init, &gp, &op, &noise, cutoff)
}

// ---------------------------------------------------------------------------
// Generator versus short-time Monte Carlo

#[derive(Debug, Clone, Serialize)]
pub struct DynkinReport {
    pub observable: Candidate,
    pub generator: f64,
    /// Richardson combination `2 D(h) - D(2h)`.
    pub estimate: f64,
    pub std_error: f64,
    /// `|D(h) - D(2h)|`, a proxy for the remaining step-size bias.
    pub bias: f64,
    pub pass: bool,
}

/// Compares `L phi(X_0)` with `(E phi(X_h) - phi(X_0)) / h`.
///
/// The first-order Ito term of each path is subtracted as a control variate;
/// it has mean zero, so only the variance changes.
pub fn dynkin_check(
    model: &Model,
    state: &PhaseState,
    mass: f64,
    gamma: f64,
    observable: Candidate,
    h: f64,
    paths: usize,
    seed: u64,
    execution: Execution,
) -> Result<DynkinReport> {
    let lp = LyapunovParams::new(0.0, 2.0, 0.5)?;
    let (phi0, input) = evaluate(observable, state, mass, model, &lp)?;
    let generator = generator_apply(&input, state, mass, gamma, model)?;
    let params = SimParams {
        mass,
        gamma,
        dt: h,
        horizon: 2.0 * h,
        seed,
        ..SimParams::default()
    };
    let nd = model.x_len();
    let spec = &model.kernels;
    let d = model.dim;
    // noise loadings of the leading Ito term
    let mut load = vec![0.0; model.channels()];
    for k in 0..nd {
        load[k] = input.grad_v[k] * (2.0 * gamma).sqrt() / mass;
    }
    for i in 0..spec.particles() {
        let off = spec.z_offset(i, d);
        for (l, m) in spec.modes[i].iter().enumerate() {
            for k in 0..d {
                let b = off + l * d + k;
                load[nd + b] = input.grad_z[b] * (2.0 * m.alpha).sqrt();
            }
        }
    }
    let per_path = try_map_indexed(execution, paths, |p| -> Result<(f64, f64)> {
        let noise = BrownianPath::new(seed, p as u64, model.channels(), h);
        let mut integ = GleIntegrator::new(model, &params, &noise, None)?;
        let mut s = state.clone();
        let mut dw = vec![0.0; model.channels()];
        let step = noise.ticks(h);
        let mut out = [0.0; 2];
        for (k, slot) in out.iter_mut().enumerate() {
            use crate::dynamics::Integrator;
            integ.advance(&mut s, k as u64 * step, step)?;
            noise.increment(0, (k as u64 + 1) * step, &mut dw);
            let phi = evaluate(observable, &s, mass, model, &lp)?.0;
            let cv: f64 = load.iter().zip(&dw).map(|(a, w)| a * w).sum();
            *slot = (phi - phi0 - cv) / ((k + 1) as f64 * h);
        }
        Ok((out[0], out[1]))
    })?;
    let rich: Vec<f64> = per_path.iter().map(|&(a, b)| 2.0 * a - b).collect();
    let st = SummaryStats::from_samples(&rich);
    let dh = per_path.iter().map(|p| p.0).sum::<f64>() / paths as f64;
    let d2h = per_path.iter().map(|p| p.1).sum::<f64>() / paths as f64;
    let bias = (dh - d2h).abs();
    let pass = (st.mean - generator).abs() <= 4.0 * st.std_error() + bias;
    Ok(DynkinReport {
        observable,
        generator,
        estimate: st.mean,
        std_error: st.std_error(),
        bias,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Pair-sum inequalities

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub s: f64,
    pub samples: usize,
    /// Smallest `(lhs - rhs) / rhs`.
    pub min_rel_slack: f64,
    pub violations: usize,
}

/// `sum_i <sum_j r_ij / |r_ij|^(a+1), sum_l r_il / |r_il|^(b+1)>`.
fn pair_inner(x: &[f64], dim: usize, a: f64, b: f64) -> Result<f64> {
    let n = x.len() / dim;
    let mut total = 0.0;
    let mut sa = vec![0.0; dim];
    let mut sb = vec![0.0; dim];
    for i in 0..n {
        sa.iter_mut().for_each(|c| *c = 0.0);
        sb.iter_mut().for_each(|c| *c = 0.0);
        for j in (0..n).filter(|&j| j != i) {
            let rho = crate::vector::pair_distance(x, dim, i, j);
            if rho == 0.0 {
                return Err(Error::CoincidentParticles(i.min(j), i.max(j)));
            }
            for k in 0..dim {
                let r = x[i * dim + k] - x[j * dim + k];
                sa[k] += r / rho.powf(a + 1.0);
                sb[k] += r / rho.powf(b + 1.0);
            }
        }
        total += dot(&sa, &sb);
    }
    Ok(total)
}

fn pair_power_sum(x: &[f64], dim: usize, p: f64) -> f64 {
    let n = x.len() / dim;
    let mut out = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            out += crate::vector::pair_distance(x, dim, i, j).powf(-p);
        }
    }
    out
}

const INEQ_RTOL: f64 = 1e-12;

fn inequality_report(
    name: &str,
    s: f64,
    configs: &[Vec<f64>],
    dim: usize,
    sides: impl Fn(&[f64]) -> Result<(f64, f64)>,
) -> Result<InequalityReport> {
    let mut min_rel = f64::INFINITY;
    let mut violations = 0;
    for x in configs {
        let (lhs, rhs) = sides(x)?;
        let rel = (lhs - rhs) / rhs;
        min_rel = min_rel.min(rel);
        if rel < -INEQ_RTOL {
            violations += 1;
        }
    }
    let _ = dim;
    Ok(InequalityReport {
        name: name.to_string(),
        s,
        samples: configs.len(),
        min_rel_slack: min_rel,
        violations,
    })
}

/// Checks `sum_i <sum_j r/|r|^(s+1), sum_l r/|r|> >= 2 sum_{i<j} |r|^-s`.
pub fn lemma_a1_check(configs: &[Vec<f64>], dim: usize, s: f64) -> Result<InequalityReport> {
    if s < 0.0 {
        return Err(Error::invalid("s must be nonnegative"));
    }
    inequality_report("A1", s, configs, dim, |x| {
        Ok((pair_inner(x, dim, s, 0.0)?, 2.0 * pair_power_sum(x, dim, s)))
    })
}

/// Part (a): constant `4/(N(N-1)^2)` for any `s >= 0`; part (b): constant 2 for `s <= 1`.
pub fn lemma_a2_check(configs: &[Vec<f64>], dim: usize, s: f64, part_b: bool) -> Result<InequalityReport> {
    if s < 0.0 || (part_b && s > 1.0) {
        return Err(Error::invalid("part (a) needs s >= 0, part (b) needs s in [0, 1]"));
    }
    let name = if part_b { "A2b" } else { "A2a" };
    inequality_report(name, s, configs, dim, |x| {
        let n = (x.len() / dim) as f64;
        let c = if part_b { 2.0 } else { 4.0 / (n * (n - 1.0) * (n - 1.0)) };
        Ok((pair_inner(x, dim, s, s)?, c * pair_power_sum(x, dim, 2.0 * s)))
    })
}

/// Uniform configurations of `n` points in `[-1, 1]^dim`.
pub fn random_configurations(seed: u64, n: usize, dim: usize, count: usize) -> Vec<Vec<f64>> {
    map_indexed(Execution::Sequential, count, |k| {
        let mut rng = substream(seed, 0x4150_5058, k as u64);
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x).collect();
        let (a, b, r2) = linear_fit(&xs, &ys);
        assert_relative_eq!(a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b, -2.0, epsilon = 1e-12);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sliced_wasserstein_properties() {
        let a: Vec<Vec<f64>> = (0..50).map(|k| vec![k as f64 * 0.1, 1.0]).collect();
        let b: Vec<Vec<f64>> = (0..50).map(|k| vec![k as f64 * 0.1 + 2.0, 1.0]).collect();
        let dirs = projections(1, 2, 16);
        assert_eq!(sliced_wasserstein(&a, &a, &dirs), 0.0);
        let ab = sliced_wasserstein(&a, &b, &dirs);
        let ba = sliced_wasserstein(&b, &a, &dirs);
        assert!(ab > 0.0);
        assert_relative_eq!(ab, ba, max_relative = 1e-14);
        // a pure shift by 2 along the first axis: W1 = 2 |u_0| averaged over directions
        let expect = dirs.iter().map(|u| 2.0 * u[0].abs()).sum::<f64>() / dirs.len() as f64;
        assert_relative_eq!(ab, expect, max_relative = 1e-12);
    }

    #[test]
    fn two_particle_equality_cases() {
        let two = vec![vec![0.3, -0.2, 1.1, 0.4]];
        let r = lemma_a1_check(&two, 2, 2.0).unwrap();
        assert!(r.min_rel_slack.abs() < 1e-12);
        let r = lemma_a1_check(&two, 2, 0.0).unwrap();
        assert!(r.min_rel_slack.abs() < 1e-12);
        let r = lemma_a2_check(&two, 2, 1.5, false).unwrap();
        assert!(r.min_rel_slack.abs() < 1e-12);
        let r = lemma_a2_check(&two, 2, 0.5, true).unwrap();
        assert!(r.min_rel_slack.abs() < 1e-12);
    }

    #[test]
    fn equilateral_triangle_slack() {
        let h = 3f64.sqrt() / 2.0;
        let tri = vec![vec![0.0, 0.0, 1.0, 0.0, 0.5, h]];
        let r = lemma_a2_check(&tri, 2, 1.0, true).unwrap();
        assert_eq!(r.violations, 0);
        // each vertex: |e1 + e2| = sqrt(3) for unit sides, so lhs = 3 * 3 = 9 and rhs = 2 * 3
        assert_relative_eq!(r.min_rel_slack, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_gaussian_sanity() {
        use crate::kernels::{KernelSpec, Mode};
        use crate::potentials::{ConfiningPotential, SingularPotential};
        // with a weak log repulsion the density is |r|^a exp(-c^2 - r^2/4)
        let model = Model::new(
            1,
            ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
            Some(SingularPotential::log(1.0).unwrap()),
            KernelSpec::uniform(2, &[Mode::new(1.0, 1.0)]).unwrap(),
        )
        .unwrap();
        // E[x1^2] = E[c^2] + E[r^2]/4 = 1/2 + (1/4) E[r^2]; with weight |r| exp(-r^2/4) on r < 0,
        // E[r^2] = int r^3 e^{-r^2/4} / int r e^{-r^2/4} = 4, so E[x1^2] = 3/2
        let q = gibbs_quadrature_oracle(&model, 12.0, 200).unwrap();
        assert_relative_eq!(q.value.x1_sq, 1.5, max_relative = 1e-6);
        assert!(q.reduction >= 2.0, "{}", q.reduction);
    }

    #[test]
    fn plateau_fit_on_synthetic_decay() {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.5).collect();
        let d: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp() + 0.01).collect();
        let (rate, r2, plateau, n) = fit_decay(&times, &d, 3.0);
        assert!((rate - 0.7).abs() < 0.1, "{rate}");
        assert!(r2 > 0.95);
        assert!((plateau - 0.01).abs() < 1e-3);
        assert!(n < 40);
    }
}
