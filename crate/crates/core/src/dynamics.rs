//! Integrators for the Markovian GLE, its overdamped limit and their truncations.
//!
//! Both integrators read Wiener increments from a [`BrownianPath`], so a rejected
//! step is retried on the two halves of the same increment and two runs with
//! different step sizes see the same path.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::Model;
use crate::noise::BrownianPath;
use crate::vector::{min_pair_distance, min_pair_distance_on_segment};

/// Smooth cutoff `theta_R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffSpec {
    pub radius: f64,
}

impl CutoffSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 2.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("cutoff radius must exceed 2, got {radius}")));
        }
        Ok(Self { radius })
    }

    /// 1 on `|t| <= R`, 0 on `|t| >= R + 1`, quintic smoothstep in between.
    #[inline]
    pub fn theta(&self, t: f64) -> f64 {
        let u = t.abs() - self.radius;
        if u <= 0.0 {
            1.0
        } else if u >= 1.0 {
            0.0
        } else {
            1.0 - u * u * u * (10.0 + u * (6.0 * u - 15.0))
        }
    }
}

pub fn apply_cutoff(spec: &CutoffSpec, t: f64) -> f64 {
    spec.theta(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// `z_{i,l}` stored particle by particle, mode by mode, `dim` entries each.
    pub z: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(model: &Model, x: Vec<f64>, v: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        let s = Self { x, v, z, t: 0.0 };
        s.validate(model)?;
        Ok(s)
    }

    /// Positions `x` with zero velocity and auxiliary variables.
    pub fn at_rest(model: &Model, x: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new(model, x, vec![0.0; n], vec![0.0; model.z_len()])
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        for (want, got) in [
            (model.x_len(), self.x.len()),
            (model.x_len(), self.v.len()),
            (model.z_len(), self.z.len()),
        ] {
            if want != got {
                return Err(Error::DimensionMismatch { expected: want, got });
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite { t: self.t });
        }
        check_distinct(&self.x, model.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).chain(&self.z).all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverdampedState {
    pub q: Vec<f64>,
    pub f: Vec<f64>,
    pub t: f64,
}

impl OverdampedState {
    pub fn new(model: &Model, q: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if q.len() != model.x_len() {
            return Err(Error::DimensionMismatch {
                expected: model.x_len(),
                got: q.len(),
            });
        }
        if f.len() != model.z_len() {
            return Err(Error::DimensionMismatch {
                expected: model.z_len(),
                got: f.len(),
            });
        }
        check_distinct(&q, model.dim)?;
        Ok(Self { q, f, t: 0.0 })
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.f).all(|c| c.is_finite())
    }
}

fn check_distinct(x: &[f64], dim: usize) -> Result<()> {
    let n = x.len() / dim;
    for i in 0..n {
        for j in i + 1..n {
            if crate::vector::pair_distance(x, dim, i, j) == 0.0 {
                return Err(Error::CoincidentParticles(i, j));
            }
        }
    }
    Ok(())
}

/// `q = x`, `f_{i,l} = z_{i,l} + lambda_{i,l} x_i`.
pub fn lift_initial_condition(x0: &[f64], z0: &[f64], spec: &KernelSpec, dim: usize) -> Result<OverdampedState> {
    let n = spec.particles();
    if x0.len() != n * dim {
        return Err(Error::DimensionMismatch {
            expected: n * dim,
            got: x0.len(),
        });
    }
    if z0.len() != spec.z_len(dim) {
        return Err(Error::DimensionMismatch {
            expected: spec.z_len(dim),
            got: z0.len(),
        });
    }
    check_distinct(x0, dim)?;
    let mut f = z0.to_vec();
    for i in 0..n {
        let off = spec.z_offset(i, dim);
        for (l, mode) in spec.modes[i].iter().enumerate() {
            for k in 0..dim {
                f[off + l * dim + k] += mode.lambda * x0[i * dim + k];
            }
        }
    }
    Ok(OverdampedState {
        q: x0.to_vec(),
        f,
        t: 0.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimParams {
    pub mass: f64,
    pub gamma: f64,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub delta_min: f64,
    pub max_halvings: u32,
    /// Spacing of recorded states; defaults to `dt`.
    pub output_dt: Option<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gamma: 1.0,
            dt: 0.01,
            horizon: 1.0,
            seed: 0,
            delta_min: 1e-4,
            max_halvings: 20,
            output_dt: None,
        }
    }
}

impl SimParams {
    fn check_common(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon must be nonnegative"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be nonnegative"));
        }
        if !(self.delta_min >= 0.0) {
            return Err(Error::invalid("delta_min must be nonnegative"));
        }
        if let Some(h) = self.output_dt {
            if !(h > 0.0) {
                return Err(Error::invalid("output spacing must be positive"));
            }
        }
        Ok(())
    }

    /// The GLE step has to resolve the velocity relaxation scale `m / max(gamma, 1)`.
    pub fn validate_gle(&self) -> Result<()> {
        self.check_common()?;
        if !(self.mass > 0.0) {
            return Err(Error::invalid("mass must be positive"));
        }
        let limit = self.mass / (10.0 * self.gamma.max(1.0));
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "dt = {} exceeds m / (10 max(gamma, 1)) = {limit}",
                self.dt
            )));
        }
        Ok(())
    }

    pub fn validate_overdamped(&self) -> Result<()> {
        self.check_common()?;
        if !(self.gamma > 0.0) {
            return Err(Error::GammaZero);
        }
        Ok(())
    }

    pub fn output_spacing(&self) -> f64 {
        self.output_dt.unwrap_or(self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    /// Smallest pair distance along every accepted drift segment.
    pub min_pair_distance: f64,
}

impl Default for StepStats {
    fn default() -> Self {
        Self {
            accepted: 0,
            rejected: 0,
            min_pair_distance: f64::INFINITY,
        }
    }
}

enum Rejection {
    Close(f64),
    NonFinite,
}

/// Common interface of the two integrators for the driver loop.
pub trait Integrator {
    type State: Clone;

    /// Advances `state` over `[start, start + len)` ticks, halving on rejection.
    fn advance(&mut self, state: &mut Self::State, start: u64, len: u64) -> Result<()>;
    fn stats(&self) -> StepStats;
    fn time(state: &Self::State) -> f64;
    fn positions(state: &Self::State) -> &[f64];
    fn lerp(a: &Self::State, b: &Self::State, w: f64, t: f64) -> Self::State;
}

fn lerp_vec(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    if w == 0.0 {
        return a.to_vec();
    }
    if w == 1.0 {
        return b.to_vec();
    }
    a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect()
}

/// Fraction of its starting value the closest pair distance may lose in one step.
const MAX_SHRINK: f64 = 0.5;

/// Rejects a step whose path brings a pair closer than `delta_min`, or that
/// halves the closest distance in one go (the kick would then be unresolved).
/// With a cutoff, a step that starts inside the force-free core is never
/// rejected: the truncated drift is Lipschitz there.
fn drift_guard(
    model: &Model,
    delta_min: f64,
    cutoff: Option<&CutoffSpec>,
    segments: &[(&[f64], &[f64])],
) -> std::result::Result<f64, Rejection> {
    if model.particles() < 2 {
        return Ok(f64::INFINITY);
    }
    let dist = segments
        .iter()
        .map(|(a, b)| min_pair_distance_on_segment(a, b, model.dim))
        .fold(f64::INFINITY, f64::min);
    let start = min_pair_distance(segments[0].0, model.dim);
    if cutoff.is_some_and(|c| start <= 1.0 / (c.radius + 1.0)) {
        return Ok(dist);
    }
    if dist < delta_min || dist < (1.0 - MAX_SHRINK) * start {
        Err(Rejection::Close(dist))
    } else {
        Ok(dist)
    }
}

pub struct GleIntegrator<'a> {
    model: &'a Model,
    params: &'a SimParams,
    noise: &'a BrownianPath,
    cutoff: Option<&'a CutoffSpec>,
    /// Potential gradient at the current positions.
    grad: Vec<f64>,
    grad_at: Vec<f64>,
    dw: Vec<f64>,
    stats: StepStats,
}

impl<'a> GleIntegrator<'a> {
    pub fn new(
        model: &'a Model,
        params: &'a SimParams,
        noise: &'a BrownianPath,
        cutoff: Option<&'a CutoffSpec>,
    ) -> Result<Self> {
        if noise.channels() != model.channels() {
            return Err(Error::DimensionMismatch {
                expected: model.channels(),
                got: noise.channels(),
            });
        }
        Ok(Self {
            model,
            params,
            noise,
            cutoff,
            grad: vec![0.0; model.x_len()],
            grad_at: Vec::new(),
            dw: vec![0.0; model.channels()],
            stats: StepStats::default(),
        })
    }

    fn refresh_grad(&mut self, x: &[f64]) -> Result<()> {
        if self.grad_at.as_slice() != x {
            self.model.potential_gradient(x, self.cutoff, &mut self.grad)?;
            self.grad_at = x.to_vec();
        }
        Ok(())
    }

    /// `sum_l lambda_{i,l} z_{i,l}` for every particle.
    fn coupling(&self, z: &[f64], out: &mut [f64]) {
        let d = self.model.dim;
        let spec = &self.model.kernels;
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..spec.particles() {
            let off = spec.z_offset(i, d);
            for (l, mode) in spec.modes[i].iter().enumerate() {
                for k in 0..d {
                    out[i * d + k] += mode.lambda * z[off + l * d + k];
                }
            }
        }
    }

    fn propose(&self, s: &PhaseState, h: f64) -> std::result::Result<(PhaseState, Vec<f64>, f64), Rejection> {
        let model = self.model;
        let d = model.dim;
        let nd = model.x_len();
        let m = self.params.mass;
        let gamma = self.params.gamma;
        let sqrt_h = h.sqrt();
        let mut coup = vec![0.0; nd];

        self.coupling(&s.z, &mut coup);
        let v1: Vec<f64> = (0..nd)
            .map(|k| s.v[k] + 0.5 * h / m * (coup[k] - self.grad[k]))
            .collect();
        let x1: Vec<f64> = (0..nd).map(|k| s.x[k] + 0.5 * h * v1[k]).collect();

        let v2: Vec<f64> = if gamma > 0.0 {
            let a = (-gamma * h / m).exp();
            let sd = ((1.0 - a * a) / m).sqrt();
            (0..nd).map(|k| a * v1[k] + sd * self.dw[k] / sqrt_h).collect()
        } else {
            v1.clone()
        };

        let spec = &model.kernels;
        let mut z2 = s.z.clone();
        for i in 0..spec.particles() {
            let off = spec.z_offset(i, d);
            for (l, mode) in spec.modes[i].iter().enumerate() {
                let e = (-mode.alpha * h).exp();
                let pull = mode.lambda * (1.0 - e) / mode.alpha;
                let sd = (1.0 - e * e).sqrt();
                for k in 0..d {
                    let idx = off + l * d + k;
                    let vbar = 0.5 * (v1[i * d + k] + v2[i * d + k]);
                    z2[idx] = e * s.z[idx] - pull * vbar + sd * self.dw[nd + idx] / sqrt_h;
                }
            }
        }

        let x2: Vec<f64> = (0..nd).map(|k| x1[k] + 0.5 * h * v2[k]).collect();
        let dist = drift_guard(model, self.params.delta_min, self.cutoff, &[(&s.x, &x1), (&x1, &x2)])?;
        let mut grad2 = vec![0.0; nd];
        model
            .potential_gradient(&x2, self.cutoff, &mut grad2)
            .map_err(|_| Rejection::Close(0.0))?;
        self.coupling(&z2, &mut coup);
        let v3: Vec<f64> = (0..nd)
            .map(|k| v2[k] + 0.5 * h / m * (coup[k] - grad2[k]))
            .collect();
        let next = PhaseState {
            x: x2,
            v: v3,
            z: z2,
            t: s.t + h,
        };
        if !next.is_finite() || grad2.iter().any(|g| !g.is_finite()) {
            return Err(Rejection::NonFinite);
        }
        Ok((next, grad2, dist))
    }

    fn advance_inner(&mut self, state: &mut PhaseState, start: u64, len: u64, depth: u32) -> Result<()> {
        self.refresh_grad(&state.x)?;
        self.noise.increment(start, start + len, &mut self.dw);
        let h = self.noise.time_of(len);
        match self.propose(state, h) {
            Ok((next, grad, dist)) => {
                *state = next;
                state.t = self.noise.time_of(start + len);
                self.grad = grad;
                self.grad_at = state.x.clone();
                self.stats.accepted += 1;
                self.stats.min_pair_distance = self.stats.min_pair_distance.min(dist);
                Ok(())
            }
            Err(why) => {
                let t = self.noise.time_of(start);
                if depth >= self.params.max_halvings || len < 2 {
                    return Err(match why {
                        Rejection::Close(distance) => Error::StepRejected {
                            t,
                            distance,
                            halvings: depth,
                        },
                        Rejection::NonFinite => Error::NonFinite { t },
                    });
                }
                self.stats.rejected += 1;
                let half = len / 2;
                self.advance_inner(state, start, half, depth + 1)?;
                self.advance_inner(state, start + half, len - half, depth + 1)
            }
        }
    }
}

impl Integrator for GleIntegrator<'_> {
    type State = PhaseState;

    fn advance(&mut self, state: &mut PhaseState, start: u64, len: u64) -> Result<()> {
        self.advance_inner(state, start, len, 0)
    }

    fn stats(&self) -> StepStats {
        self.stats
    }

    fn time(state: &PhaseState) -> f64 {
        state.t
    }

    fn positions(state: &PhaseState) -> &[f64] {
        &state.x
    }

    fn lerp(a: &PhaseState, b: &PhaseState, w: f64, t: f64) -> PhaseState {
        PhaseState {
            x: lerp_vec(&a.x, &b.x, w),
            v: lerp_vec(&a.v, &b.v, w),
            z: lerp_vec(&a.z, &b.z, w),
            t,
        }
    }
}

pub struct OverdampedIntegrator<'a> {
    model: &'a Model,
    params: &'a SimParams,
    noise: &'a BrownianPath,
    cutoff: Option<&'a CutoffSpec>,
    dw: Vec<f64>,
    stats: StepStats,
}

impl<'a> OverdampedIntegrator<'a> {
    pub fn new(
        model: &'a Model,
        params: &'a SimParams,
        noise: &'a BrownianPath,
        cutoff: Option<&'a CutoffSpec>,
    ) -> Result<Self> {
        if !(params.gamma > 0.0) {
            return Err(Error::GammaZero);
        }
        if noise.channels() != model.channels() {
            return Err(Error::DimensionMismatch {
                expected: model.channels(),
                got: noise.channels(),
            });
        }
        Ok(Self {
            model,
            params,
            noise,
            cutoff,
            dw: vec![0.0; model.channels()],
            stats: StepStats::default(),
        })
    }

    fn propose(&self, s: &OverdampedState, h: f64) -> std::result::Result<(OverdampedState, f64), Rejection> {
        let model = self.model;
        let d = model.dim;
        let nd = model.x_len();
        let gamma = self.params.gamma;
        let spec = &model.kernels;
        let sqrt_h = h.sqrt();

        let mut drift = vec![0.0; nd];
        model
            .potential_gradient(&s.q, self.cutoff, &mut drift)
            .map_err(|_| Rejection::Close(0.0))?;
        drift.iter_mut().for_each(|g| *g = -*g);
        let mut f2 = s.f.clone();
        for i in 0..spec.particles() {
            let off = spec.z_offset(i, d);
            for (l, mode) in spec.modes[i].iter().enumerate() {
                let e = (-mode.alpha * h).exp();
                let sd = (1.0 - e * e).sqrt();
                for k in 0..d {
                    let idx = off + l * d + k;
                    let qk = s.q[i * d + k];
                    drift[i * d + k] += mode.lambda * (s.f[idx] - mode.lambda * qk);
                    let centre = mode.lambda * qk;
                    f2[idx] = centre + e * (s.f[idx] - centre) + sd * self.dw[nd + idx] / sqrt_h;
                }
            }
        }
        let noise_scale = (2.0 / gamma).sqrt();
        let q2: Vec<f64> = (0..nd)
            .map(|k| s.q[k] + h / gamma * drift[k] + noise_scale * self.dw[k])
            .collect();
        let dist = drift_guard(model, self.params.delta_min, self.cutoff, &[(&s.q, &q2)])?;
        let next = OverdampedState {
            q: q2,
            f: f2,
            t: s.t + h,
        };
        if !next.is_finite() {
            return Err(Rejection::NonFinite);
        }
        Ok((next, dist))
    }

    fn advance_inner(&mut self, state: &mut OverdampedState, start: u64, len: u64, depth: u32) -> Result<()> {
        self.noise.increment(start, start + len, &mut self.dw);
        let h = self.noise.time_of(len);
        match self.propose(state, h) {
            Ok((next, dist)) => {
                *state = next;
                state.t = self.noise.time_of(start + len);
                self.stats.accepted += 1;
                self.stats.min_pair_distance = self.stats.min_pair_distance.min(dist);
                Ok(())
            }
            Err(why) => {
                let t = self.noise.time_of(start);
                if depth >= self.params.max_halvings || len < 2 {
                    return Err(match why {
                        Rejection::Close(distance) => Error::StepRejected {
                            t,
                            distance,
                            halvings: depth,
                        },
                        Rejection::NonFinite => Error::NonFinite { t },
                    });
                }
                self.stats.rejected += 1;
                let half = len / 2;
                self.advance_inner(state, start, half, depth + 1)?;
                self.advance_inner(state, start + half, len - half, depth + 1)
            }
        }
    }
}

impl Integrator for OverdampedIntegrator<'_> {
    type State = OverdampedState;

    fn advance(&mut self, state: &mut OverdampedState, start: u64, len: u64) -> Result<()> {
        self.advance_inner(state, start, len, 0)
    }

    fn stats(&self) -> StepStats {
        self.stats
    }

    fn time(state: &OverdampedState) -> f64 {
        state.t
    }

    fn positions(state: &OverdampedState) -> &[f64] {
        &state.q
    }

    fn lerp(a: &OverdampedState, b: &OverdampedState, w: f64, t: f64) -> OverdampedState {
        OverdampedState {
            q: lerp_vec(&a.q, &b.q, w),
            f: lerp_vec(&a.f, &b.f, w),
            t,
        }
    }
}

fn step_ticks(noise: &BrownianPath, dt: f64) -> Result<u64> {
    let ticks = noise.ticks(dt);
    if ticks == 0 || (noise.time_of(ticks) - dt).abs() > 1e-9 * dt {
        return Err(Error::invalid(format!(
            "dt = {dt} is not a dyadic multiple of the noise cell {}",
            noise.cell_width()
        )));
    }
    Ok(ticks)
}

/// Runs `integ` from `initial` to the horizon, handing each output-grid state and
/// its minimum pair distance to `observe`.
pub fn drive<I, F>(integ: &mut I, initial: I::State, params: &SimParams, noise: &BrownianPath, dim: usize, mut observe: F) -> Result<StepStats>
where
    I: Integrator,
    F: FnMut(&I::State, f64),
{
    let ticks = step_ticks(noise, params.dt)?;
    let spacing = params.output_spacing();
    let t0 = I::time(&initial);
    let start_tick = noise.ticks(t0);
    let n_out = ((params.horizon / spacing) + 1e-9).floor() as u64;
    let n_steps = ((params.horizon / params.dt) - 1e-9).ceil().max(0.0) as u64;
    let eps = 1e-9 * params.dt;

    observe(&initial, min_pair_distance(I::positions(&initial), dim));
    let mut next_out = 1u64;
    let mut prev = initial.clone();
    let mut cur = initial;
    for k in 0..n_steps {
        if next_out > n_out {
            break;
        }
        integ.advance(&mut cur, start_tick + k * ticks, ticks)?;
        let (ta, tb) = (I::time(&prev), I::time(&cur));
        while next_out <= n_out {
            let t_out = t0 + next_out as f64 * spacing;
            if t_out > tb + eps {
                break;
            }
            let w = ((t_out - ta) / (tb - ta)).clamp(0.0, 1.0);
            let w = if (t_out - tb).abs() <= eps { 1.0 } else { w };
            let s = I::lerp(&prev, &cur, w, t_out);
            observe(&s, min_pair_distance(I::positions(&s), dim));
            next_out += 1;
        }
        prev.clone_from(&cur);
    }
    Ok(integ.stats())
}

/// States on the output grid plus integrator statistics.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory<S> {
    pub dim: usize,
    pub states: Vec<S>,
    pub min_pair: Vec<f64>,
    pub stats: StepStats,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Column layout shared by the CSV and binary writers.
pub trait Tabular {
    fn columns(&self) -> Vec<String>;
    fn row(&self) -> Vec<f64>;
}

impl Tabular for PhaseState {
    fn columns(&self) -> Vec<String> {
        let mut c = vec!["t".to_string()];
        c.extend((0..self.x.len()).map(|k| format!("x{k}")));
        c.extend((0..self.v.len()).map(|k| format!("v{k}")));
        c.extend((0..self.z.len()).map(|k| format!("z{k}")));
        c
    }

    fn row(&self) -> Vec<f64> {
        let mut r = vec![self.t];
        r.extend_from_slice(&self.x);
        r.extend_from_slice(&self.v);
        r.extend_from_slice(&self.z);
        r
    }
}

impl Tabular for OverdampedState {
    fn columns(&self) -> Vec<String> {
        let mut c = vec!["t".to_string()];
        c.extend((0..self.q.len()).map(|k| format!("q{k}")));
        c.extend((0..self.f.len()).map(|k| format!("f{k}")));
        c
    }

    fn row(&self) -> Vec<f64> {
        let mut r = vec![self.t];
        r.extend_from_slice(&self.q);
        r.extend_from_slice(&self.f);
        r
    }
}

impl<S: Tabular> Trajectory<S> {
    pub fn columns(&self) -> Vec<String> {
        let mut c = self.states.first().map(Tabular::columns).unwrap_or_default();
        c.push("min_pair_dist".to_string());
        c
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.states.iter().zip(&self.min_pair).map(|(s, &d)| {
            let mut r = s.row();
            r.push(d);
            r
        })
    }

    /// CSV text; `preamble` lines are written first as `#` comments.
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut out = String::new();
        for line in preamble {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&self.columns().join(","));
        out.push('\n');
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn collect<I: Integrator>(mut integ: I, initial: I::State, params: &SimParams, noise: &BrownianPath, dim: usize) -> Result<Trajectory<I::State>> {
    let mut states = Vec::new();
    let mut min_pair = Vec::new();
    let stats = drive(&mut integ, initial, params, noise, dim, |s, d| {
        states.push(s.clone());
        min_pair.push(d);
    })?;
    Ok(Trajectory {
        dim,
        states,
        min_pair,
        stats,
    })
}

/// Brownian path with one cell per step, keyed by the run seed.
pub fn default_noise(model: &Model, params: &SimParams, stream: u64) -> BrownianPath {
    BrownianPath::new(params.seed, stream, model.channels(), params.dt)
}

pub fn simulate_gle(
    model: &Model,
    initial: &PhaseState,
    params: &SimParams,
    noise: &BrownianPath,
    cutoff: Option<&CutoffSpec>,
) -> Result<Trajectory<PhaseState>> {
    params.validate_gle()?;
    initial.validate(model)?;
    let integ = GleIntegrator::new(model, params, noise, cutoff)?;
    collect(integ, initial.clone(), params, noise, model.dim)
}

pub fn simulate_overdamped(
    model: &Model,
    initial: &OverdampedState,
    params: &SimParams,
    noise: &BrownianPath,
    cutoff: Option<&CutoffSpec>,
) -> Result<Trajectory<OverdampedState>> {
    params.validate_overdamped()?;
    let integ = OverdampedIntegrator::new(model, params, noise, cutoff)?;
    collect(integ, initial.clone(), params, noise, model.dim)
}

/// One step of length `params.dt` from `state.t`.
pub fn step_gle(model: &Model, params: &SimParams, noise: &BrownianPath, state: &PhaseState) -> Result<PhaseState> {
    step_gle_with(model, params, noise, None, state)
}

pub fn step_gle_truncated(
    model: &Model,
    params: &SimParams,
    noise: &BrownianPath,
    cutoff: &CutoffSpec,
    state: &PhaseState,
) -> Result<PhaseState> {
    step_gle_with(model, params, noise, Some(cutoff), state)
}

fn step_gle_with(
    model: &Model,
    params: &SimParams,
    noise: &BrownianPath,
    cutoff: Option<&CutoffSpec>,
    state: &PhaseState,
) -> Result<PhaseState> {
    let ticks = step_ticks(noise, params.dt)?;
    let mut integ = GleIntegrator::new(model, params, noise, cutoff)?;
    let mut next = state.clone();
    integ.advance(&mut next, noise.ticks(state.t), ticks)?;
    Ok(next)
}

pub fn step_overdamped(
    model: &Model,
    params: &SimParams,
    noise: &BrownianPath,
    state: &OverdampedState,
) -> Result<OverdampedState> {
    step_overdamped_with(model, params, noise, None, state)
}

pub fn step_overdamped_truncated(
    model: &Model,
    params: &SimParams,
    noise: &BrownianPath,
    cutoff: &CutoffSpec,
    state: &OverdampedState,
) -> Result<OverdampedState> {
    step_overdamped_with(model, params, noise, Some(cutoff), state)
}

fn step_overdamped_with(
    model: &Model,
    params: &SimParams,
    noise: &BrownianPath,
    cutoff: Option<&CutoffSpec>,
    state: &OverdampedState,
) -> Result<OverdampedState> {
    let ticks = step_ticks(noise, params.dt)?;
    let mut integ = OverdampedIntegrator::new(model, params, noise, cutoff)?;
    let mut next = state.clone();
    integ.advance(&mut next, noise.ticks(state.t), ticks)?;
    Ok(next)
}

/// Drift of the GLE written as a flat vector `(dx, dv, dz)`, without noise.
///
/// Used for the sampled Lipschitz certificate of the truncated system.
pub fn gle_drift(model: &Model, mass: f64, gamma: f64, cutoff: Option<&CutoffSpec>, s: &PhaseState) -> Result<Vec<f64>> {
    let d = model.dim;
    let nd = model.x_len();
    let spec = &model.kernels;
    let mut grad = vec![0.0; nd];
    model.potential_gradient(&s.x, cutoff, &mut grad)?;
    let mut out = Vec::with_capacity(2 * nd + s.z.len());
    out.extend_from_slice(&s.v);
    let mut dv: Vec<f64> = (0..nd).map(|k| -gamma * s.v[k] - grad[k]).collect();
    let mut dz = vec![0.0; s.z.len()];
    for i in 0..spec.particles() {
        let off = spec.z_offset(i, d);
        for (l, mode) in spec.modes[i].iter().enumerate() {
            for k in 0..d {
                let idx = off + l * d + k;
                dv[i * d + k] += mode.lambda * s.z[idx];
                dz[idx] = -mode.alpha * s.z[idx] - mode.lambda * s.v[i * d + k];
            }
        }
    }
    out.extend(dv.iter().map(|a| a / mass));
    out.extend(dz);
    Ok(out)
}

/// Evaluates the variation-of-constants formula for `z_{i,l}(t)` along a stored
/// trajectory: trapezoidal quadrature for the position integral and a midpoint
/// exponential weight on each Wiener increment.
///
/// `z(t) = e^{-at}(z(0) + l x(0)) - l x(t) + l a int_0^t e^{-a(t-r)} x(r) dr
///        + sqrt(2a) int_0^t e^{-a(t-r)} dW(r)`.
pub fn duhamel_reconstruct_z(
    traj: &Trajectory<PhaseState>,
    model: &Model,
    noise: &BrownianPath,
    i: usize,
    l: usize,
    t: f64,
) -> Result<Vec<f64>> {
    let first = traj.states.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
    let last = traj.states.last().expect("nonempty");
    if t > last.t + 1e-12 {
        return Err(Error::HorizonExceeded { t, horizon: last.t });
    }
    let k_end = traj
        .states
        .iter()
        .position(|s| (s.t - t).abs() <= 1e-9 * (1.0 + t.abs()))
        .ok_or_else(|| Error::invalid(format!("t = {t} is not on the output grid")))?;
    let d = model.dim;
    let spec = &model.kernels;
    let mode = spec.modes[i][l];
    let (lam, alpha) = (mode.lambda, mode.alpha);
    let zi = spec.z_offset(i, d) + l * d;
    let channel0 = model.x_len() + zi;
    let xi = |s: &PhaseState| s.x[i * d..(i + 1) * d].to_vec();
    let x0 = xi(first);
    let xt = xi(&traj.states[k_end]);
    let mut out: Vec<f64> = (0..d)
        .map(|k| (-alpha * t).exp() * (first.z[zi + k] + lam * x0[k]) - lam * xt[k])
        .collect();
    let mut dw = vec![0.0; noise.channels()];
    let scale = (2.0 * alpha).sqrt();
    for w in traj.states[..=k_end].windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let h = b.t - a.t;
        let (ea, eb) = ((-alpha * (t - a.t)).exp(), (-alpha * (t - b.t)).exp());
        let em = (-alpha * (t - 0.5 * (a.t + b.t))).exp();
        noise.increment(noise.ticks(a.t), noise.ticks(b.t), &mut dw);
        let (xa, xb) = (xi(a), xi(b));
        for k in 0..d {
            out[k] += lam * alpha * 0.5 * h * (ea * xa[k] + eb * xb[k]);
            out[k] += scale * em * dw[channel0 + k];
        }
    }
    Ok(out)
}

/// A GLE run and an overdamped run driven by one Brownian path.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledRun {
    pub gle: Trajectory<PhaseState>,
    pub overdamped: Trajectory<OverdampedState>,
    pub sup_distance: f64,
}

/// `sup_k |a_k - b_k|` over paired position snapshots.
pub fn sup_distance<'a>(a: impl IntoIterator<Item = &'a [f64]>, b: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(p, q)| crate::vector::norm(&crate::vector::sub(p, q)))
        .fold(0.0, f64::max)
}

/// Runs the GLE with `gle_params` and the overdamped system with `od_params` on
/// the same Brownian path, starting from `initial` and its lift.
///
/// Both parameter sets must share the horizon and output spacing, and each step
/// size must be a dyadic multiple of the noise cell.
pub fn coupled_small_mass_pair(
    model: &Model,
    initial: &PhaseState,
    gle_params: &SimParams,
    od_params: &SimParams,
    noise: &BrownianPath,
    cutoff: Option<&CutoffSpec>,
) -> Result<CoupledRun> {
    if !(gle_params.gamma > 0.0) || !(od_params.gamma > 0.0) {
        return Err(Error::GammaZero);
    }
    if (gle_params.output_spacing() - od_params.output_spacing()).abs() > 1e-12
        || (gle_params.horizon - od_params.horizon).abs() > 1e-12
    {
        return Err(Error::invalid("coupled runs need a common output grid"));
    }
    let lifted = lift_initial_condition(&initial.x, &initial.z, &model.kernels, model.dim)?;
    let gle = simulate_gle(model, initial, gle_params, noise, cutoff)?;
    let od = simulate_overdamped(model, &lifted, od_params, noise, cutoff)?;
    let sup = sup_distance(
        gle.states.iter().map(|s| s.x.as_slice()),
        od.states.iter().map(|s| s.q.as_slice()),
    );
    Ok(CoupledRun {
        gle,
        overdamped: od,
        sup_distance: sup,
    })
}
