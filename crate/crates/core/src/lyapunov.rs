//! Hamiltonian, Lyapunov candidates and the generator of the GLE system.
//!
//! Every candidate is returned together with its first derivatives and the
//! Laplacians the generator needs, all computed in closed form.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{OverdampedState, PhaseState};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::noise::substream;
use crate::parallel::{map_indexed, Execution};
use crate::vector::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovParams {
    pub epsilon: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub kappa: f64,
}

impl LyapunovParams {
    pub fn new(epsilon: f64, r: f64, kappa: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::invalid("epsilon must lie in [0, 1)"));
        }
        if !(r > 1.0) {
            return Err(Error::invalid("R must exceed 1"));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::invalid("kappa must lie in (0, 1)"));
        }
        Ok(Self { epsilon, r, kappa })
    }
}

/// First derivatives and Laplacians of an observable at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorInput {
    pub grad_x: Vec<f64>,
    pub grad_v: Vec<f64>,
    pub grad_z: Vec<f64>,
    /// `Delta_{v_i}` per particle.
    pub lap_v: Vec<f64>,
    /// `Delta_{z_{i,l}}` per mode, in storage order.
    pub lap_z: Vec<f64>,
}

impl GeneratorInput {
    pub fn zeros(model: &Model) -> Self {
        Self {
            grad_x: vec![0.0; model.x_len()],
            grad_v: vec![0.0; model.x_len()],
            grad_z: vec![0.0; model.z_len()],
            lap_v: vec![0.0; model.particles()],
            lap_z: vec![0.0; model.kernels.total_modes()],
        }
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.grad_x,
            &mut self.grad_v,
            &mut self.grad_z,
            &mut self.lap_v,
            &mut self.lap_z,
        ]
    }

    fn parts(&self) -> [&Vec<f64>; 5] {
        [&self.grad_x, &self.grad_v, &self.grad_z, &self.lap_v, &self.lap_z]
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, c: f64, other: &GeneratorInput) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            for (p, q) in a.iter_mut().zip(b) {
                *p += c * q;
            }
        }
    }

    fn check(&self, model: &Model) -> Result<()> {
        let want = Self::zeros(model);
        for (a, b) in self.parts().into_iter().zip(want.parts()) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: b.len(),
                    got: a.len(),
                });
            }
        }
        Ok(())
    }
}

/// How the singular potential enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// `G(x_i - x_j)` summed over pairs.
    Pairwise,
    /// A single particle feeling `G(x)` from a fixed centre at the origin.
    Anchored,
}

fn energy_and_gradient(model: &Model, x: &[f64], mode: Interaction) -> Result<(f64, Vec<f64>)> {
    match mode {
        Interaction::Pairwise => {
            let mut g = vec![0.0; x.len()];
            model.potential_gradient(x, None, &mut g)?;
            Ok((model.potential_energy(x)?, g))
        }
        Interaction::Anchored => {
            if model.particles() != 1 {
                return Err(Error::invalid("anchored interaction is for a single particle"));
            }
            let mut g = model.confining.grad(x);
            let mut e = model.confining.value(x);
            if let Some(pot) = &model.singular {
                e += pot.value(x).map_err(|_| Error::CoincidentParticles(0, 0))?;
                pot.add_grad(x, 1.0, &mut g)
                    .map_err(|_| Error::CoincidentParticles(0, 0))?;
            }
            Ok((e, g))
        }
    }
}

fn check_state(model: &Model, s: &PhaseState) -> Result<()> {
    for (want, got) in [
        (model.x_len(), s.x.len()),
        (model.x_len(), s.v.len()),
        (model.z_len(), s.z.len()),
    ] {
        if want != got {
            return Err(Error::DimensionMismatch { expected: want, got });
        }
    }
    Ok(())
}

/// `m|v|^2/2 + sum U + sum_{i<j} G + |z|^2/2`.
pub fn hamiltonian_n(state: &PhaseState, mass: f64, model: &Model) -> Result<f64> {
    check_state(model, state)?;
    Ok(0.5 * mass * dot(&state.v, &state.v) + model.potential_energy(&state.x)? + 0.5 * dot(&state.z, &state.z))
}

/// Applies the generator with singular pair interactions.
pub fn generator_apply(
    input: &GeneratorInput,
    state: &PhaseState,
    mass: f64,
    gamma: f64,
    model: &Model,
) -> Result<f64> {
    generator_apply_with(input, state, mass, gamma, model, Interaction::Pairwise)
}

pub fn generator_apply_with(
    input: &GeneratorInput,
    state: &PhaseState,
    mass: f64,
    gamma: f64,
    model: &Model,
    mode: Interaction,
) -> Result<f64> {
    check_state(model, state)?;
    input.check(model)?;
    let d = model.dim;
    let spec = &model.kernels;
    let (_, grad_pot) = energy_and_gradient(model, &state.x, mode)?;
    let mut total = 0.0;
    let mut mode_idx = 0;
    for i in 0..model.particles() {
        let off = spec.z_offset(i, d);
        for k in 0..d {
            let a = i * d + k;
            let mut force = -gamma * state.v[a] - grad_pot[a];
            for (l, m) in spec.modes[i].iter().enumerate() {
                force += m.lambda * state.z[off + l * d + k];
            }
            total += input.grad_x[a] * state.v[a] + input.grad_v[a] * force / mass;
        }
        total += gamma / (mass * mass) * input.lap_v[i];
        for (l, m) in spec.modes[i].iter().enumerate() {
            for k in 0..d {
                let b = off + l * d + k;
                total += input.grad_z[b] * (-m.alpha * state.z[b] - m.lambda * state.v[i * d + k]);
            }
            total += m.alpha * input.lap_z[mode_idx];
            mode_idx += 1;
        }
    }
    Ok(total)
}

/// Scalar observables with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Candidate {
    Hamiltonian,
    /// `<x, v>`
    PositionVelocity,
    V1,
    V2,
    VN1,
    VN2,
}

impl Candidate {
    pub fn name(&self) -> &'static str {
        match self {
            Candidate::Hamiltonian => "hamiltonian",
            Candidate::PositionVelocity => "x-dot-v",
            Candidate::V1 => "V1",
            Candidate::V2 => "V2",
            Candidate::VN1 => "VN1",
            Candidate::VN2 => "VN2",
        }
    }

    pub fn interaction(&self) -> Interaction {
        match self {
            Candidate::V1 | Candidate::V2 => Interaction::Anchored,
            _ => Interaction::Pairwise,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hamiltonian" | "H" | "HN" => Candidate::Hamiltonian,
            "x-dot-v" => Candidate::PositionVelocity,
            "V1" | "v1" => Candidate::V1,
            "V2" | "v2" => Candidate::V2,
            "VN1" | "vn1" => Candidate::VN1,
            "VN2" | "vn2" => Candidate::VN2,
            _ => return None,
        })
    }
}

fn hamiltonian_parts(s: &PhaseState, mass: f64, model: &Model, mode: Interaction) -> Result<(f64, GeneratorInput)> {
    let (pot, grad) = energy_and_gradient(model, &s.x, mode)?;
    let d = model.dim as f64;
    let value = 0.5 * mass * dot(&s.v, &s.v) + pot + 0.5 * dot(&s.z, &s.z);
    let input = GeneratorInput {
        grad_x: grad,
        grad_v: s.v.iter().map(|v| mass * v).collect(),
        grad_z: s.z.clone(),
        lap_v: vec![mass * d; model.particles()],
        lap_z: vec![d; model.kernels.total_modes()],
    };
    Ok((value, input))
}

fn position_velocity(s: &PhaseState, model: &Model) -> (f64, GeneratorInput) {
    let mut input = GeneratorInput::zeros(model);
    input.grad_x.clone_from(&s.v);
    input.grad_v.clone_from(&s.x);
    (dot(&s.x, &s.v), input)
}

/// `m sum_i <v_i, sum_{j != i} (x_i - x_j)/|x_i - x_j|>`, or `m <v, x/|x|>` anchored.
fn radial_momentum(s: &PhaseState, mass: f64, model: &Model, mode: Interaction) -> Result<(f64, GeneratorInput)> {
    let d = model.dim;
    let n = model.particles();
    let mut input = GeneratorInput::zeros(model);
    let mut value = 0.0;
    // each pair contributes m <dv, e> with e = r/|r|, dv = v_i - v_j (or v_i alone)
    let mut visit = |i: usize, j: Option<usize>, r: &[f64]| -> Result<()> {
        let rho = norm(r);
        if !(rho >= crate::potentials::MIN_SEPARATION) {
            return Err(Error::CoincidentParticles(i, j.unwrap_or(i)));
        }
        let e: Vec<f64> = r.iter().map(|c| c / rho).collect();
        let dv: Vec<f64> = (0..d)
            .map(|k| s.v[i * d + k] - j.map_or(0.0, |j| s.v[j * d + k]))
            .collect();
        let proj = dot(&dv, &e);
        value += mass * proj;
        for k in 0..d {
            // d/dx_i <dv, e> = (dv - e <dv, e>) / |r|
            let gx = mass * (dv[k] - e[k] * proj) / rho;
            input.grad_x[i * d + k] += gx;
            input.grad_v[i * d + k] += mass * e[k];
            if let Some(j) = j {
                input.grad_x[j * d + k] -= gx;
                input.grad_v[j * d + k] -= mass * e[k];
            }
        }
        Ok(())
    };
    match mode {
        Interaction::Pairwise => {
            let mut r = vec![0.0; d];
            for i in 0..n {
                for j in i + 1..n {
                    for k in 0..d {
                        r[k] = s.x[i * d + k] - s.x[j * d + k];
                    }
                    visit(i, Some(j), &r)?;
                }
            }
        }
        Interaction::Anchored => {
            let x = s.x.clone();
            visit(0, None, &x)?;
        }
    }
    Ok((value, input))
}

/// `m sum_i <v_i, z_{i,1}>`.
fn velocity_first_mode(s: &PhaseState, mass: f64, model: &Model) -> (f64, GeneratorInput) {
    let d = model.dim;
    let spec = &model.kernels;
    let mut input = GeneratorInput::zeros(model);
    let mut value = 0.0;
    for i in 0..model.particles() {
        let off = spec.z_offset(i, d);
        for k in 0..d {
            let (v, z) = (s.v[i * d + k], s.z[off + k]);
            value += mass * v * z;
            input.grad_v[i * d + k] += mass * z;
            input.grad_z[off + k] += mass * v;
        }
    }
    (value, input)
}

/// `sqrt(Q)` with `Q = c_z sum_i |z_{i,1}|^2 + m|v|^2 + 2(potential) + c_0`.
fn sqrt_q(
    s: &PhaseState,
    mass: f64,
    model: &Model,
    mode: Interaction,
    c_z: f64,
    c_0: f64,
) -> Result<(f64, GeneratorInput)> {
    let d = model.dim;
    let spec = &model.kernels;
    let (pot, grad) = energy_and_gradient(model, &s.x, mode)?;
    let mut z1_sq = vec![0.0; model.particles()];
    for (i, zs) in z1_sq.iter_mut().enumerate() {
        let off = spec.z_offset(i, d);
        *zs = dot(&s.z[off..off + d], &s.z[off..off + d]);
    }
    let q = c_z * z1_sq.iter().sum::<f64>() + mass * dot(&s.v, &s.v) + 2.0 * pot + c_0;
    if !(q > 0.0) {
        return Err(Error::NonPositiveRadicand(q));
    }
    let root = q.sqrt();
    let mut input = GeneratorInput::zeros(model);
    for (g, p) in input.grad_x.iter_mut().zip(&grad) {
        *g = p / root;
    }
    for (g, v) in input.grad_v.iter_mut().zip(&s.v) {
        *g = mass * v / root;
    }
    let q3 = q * root;
    let mut mode_idx = 0;
    for i in 0..model.particles() {
        let vi = &s.v[i * d..(i + 1) * d];
        input.lap_v[i] = mass * d as f64 / root - mass * mass * dot(vi, vi) / q3;
        let off = spec.z_offset(i, d);
        for k in 0..d {
            input.grad_z[off + k] = c_z * s.z[off + k] / root;
        }
        input.lap_z[mode_idx] = c_z * d as f64 / root - c_z * c_z * z1_sq[i] / q3;
        mode_idx += spec.mode_count(i);
    }
    Ok((root, input))
}

/// Derivatives of the product `a * b` where neither factor has a z-dependent
/// `a` (true for the radial momentum times `sqrt(Q)`).
fn product(a: (f64, &GeneratorInput), b: (f64, &GeneratorInput), model: &Model) -> (f64, GeneratorInput) {
    let (va, da) = a;
    let (vb, db) = b;
    let d = model.dim;
    let mut out = GeneratorInput::zeros(model);
    out.add_scaled(vb, da);
    out.add_scaled(va, db);
    // Laplacians pick up the cross term 2 <grad a, grad b> in each block
    for i in 0..model.particles() {
        let r = i * d..(i + 1) * d;
        out.lap_v[i] += 2.0 * dot(&da.grad_v[r.clone()], &db.grad_v[r]);
    }
    let spec = &model.kernels;
    let mut mode_idx = 0;
    for i in 0..model.particles() {
        let off = spec.z_offset(i, d);
        for l in 0..spec.mode_count(i) {
            let r = off + l * d..off + (l + 1) * d;
            out.lap_z[mode_idx] += 2.0 * dot(&da.grad_z[r.clone()], &db.grad_z[r]);
            mode_idx += 1;
        }
    }
    (va * vb, out)
}

fn require_single(model: &Model, what: &str) -> Result<()> {
    if model.particles() != 1 {
        return Err(Error::invalid(format!("{what} is a single-particle function")));
    }
    Ok(())
}

/// Value and derivatives of `candidate` at `state`.
pub fn evaluate(
    candidate: Candidate,
    state: &PhaseState,
    mass: f64,
    model: &Model,
    params: &LyapunovParams,
) -> Result<(f64, GeneratorInput)> {
    check_state(model, state)?;
    let eps = params.epsilon;
    let rr = params.r;
    let mode = candidate.interaction();
    match candidate {
        Candidate::Hamiltonian => hamiltonian_parts(state, mass, model, mode),
        Candidate::PositionVelocity => Ok(position_velocity(state, model)),
        Candidate::V1 | Candidate::VN1 => {
            if candidate == Candidate::V1 {
                require_single(model, "V1")?;
            }
            let (mut v, mut d) = hamiltonian_parts(state, mass, model, mode)?;
            let (p, dp) = position_velocity(state, model);
            let (b, db) = radial_momentum(state, mass, model, mode)?;
            v += eps * mass * p - eps * b;
            d.add_scaled(eps * mass, &dp);
            d.add_scaled(-eps, &db);
            Ok((v, d))
        }
        Candidate::V2 | Candidate::VN2 => {
            // the single-particle radicand uses R^4 and R, the N-particle one R^6 and R^2
            let (c_z, c_0) = if candidate == Candidate::V2 {
                require_single(model, "V2")?;
                (rr.powi(4), rr)
            } else {
                (rr.powi(6), rr * rr)
            };
            let (mut v, mut d) = hamiltonian_parts(state, mass, model, mode)?;
            let (p, dp) = position_velocity(state, model);
            let (c, dc) = velocity_first_mode(state, mass, model);
            let (b, db) = radial_momentum(state, mass, model, mode)?;
            let (sq, dsq) = sqrt_q(state, mass, model, mode, c_z, c_0)?;
            let (bs, dbs) = product((b, &db), (sq, &dsq), model);
            v += eps * rr * mass * p + eps * rr * rr * c - eps * bs;
            d.add_scaled(eps * rr * mass, &dp);
            d.add_scaled(eps * rr * rr, &dc);
            d.add_scaled(-eps, &dbs);
            Ok((v, d))
        }
    }
}

/// `L V` for `candidate` at `state`.
pub fn apply_to_candidate(
    candidate: Candidate,
    state: &PhaseState,
    mass: f64,
    gamma: f64,
    model: &Model,
    params: &LyapunovParams,
) -> Result<(f64, f64)> {
    let (v, input) = evaluate(candidate, state, mass, model, params)?;
    let lv = generator_apply_with(&input, state, mass, gamma, model, candidate.interaction())?;
    Ok((v, lv))
}

pub fn v1_eval(state: &PhaseState, mass: f64, model: &Model, params: &LyapunovParams) -> Result<f64> {
    Ok(evaluate(Candidate::V1, state, mass, model, params)?.0)
}

pub fn v2_eval(state: &PhaseState, mass: f64, model: &Model, params: &LyapunovParams) -> Result<f64> {
    Ok(evaluate(Candidate::V2, state, mass, model, params)?.0)
}

pub fn vn1_eval(state: &PhaseState, mass: f64, model: &Model, params: &LyapunovParams) -> Result<f64> {
    Ok(evaluate(Candidate::VN1, state, mass, model, params)?.0)
}

pub fn vn2_eval(state: &PhaseState, mass: f64, model: &Model, params: &LyapunovParams) -> Result<f64> {
    Ok(evaluate(Candidate::VN2, state, mass, model, params)?.0)
}

fn gamma_quadratic(state: &OverdampedState, gamma: f64, model: &Model) -> f64 {
    let d = model.dim;
    let spec = &model.kernels;
    let mut out = 0.5 * gamma * dot(&state.q, &state.q);
    for i in 0..spec.particles() {
        let off = spec.z_offset(i, d);
        for (l, m) in spec.modes[i].iter().enumerate() {
            let f = &state.f[off + l * d..off + (l + 1) * d];
            out += dot(f, f) / (2.0 * m.alpha);
        }
    }
    out
}

fn pair_sum(state: &OverdampedState, model: &Model, term: impl Fn(f64) -> f64) -> Result<f64> {
    let d = model.dim;
    let n = model.particles();
    let mut out = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let rho = crate::vector::pair_distance(&state.q, d, i, j);
            if !(rho >= crate::potentials::MIN_SEPARATION) {
                return Err(Error::CoincidentParticles(i, j));
            }
            out += term(rho);
        }
    }
    Ok(out)
}

fn beta1_of(model: &Model) -> Result<f64> {
    model
        .singular
        .as_ref()
        .map(|g| g.constants.beta1)
        .ok_or_else(|| Error::WrongBetaRegime("no singular potential configured".into()))
}

/// `gamma|q|^2/2 + sum |f|^2/(2 alpha) + eps gamma sum_{i<j} |q_i - q_j|^-(beta1 - 1)`, for `beta1 > 1`.
pub fn gamma1_eval(state: &OverdampedState, gamma: f64, model: &Model, params: &LyapunovParams) -> Result<f64> {
    let beta1 = beta1_of(model)?;
    if !(beta1 > 1.0) {
        return Err(Error::WrongBetaRegime(format!("Gamma_1 needs beta1 > 1, got {beta1}")));
    }
    let pairs = pair_sum(state, model, |rho| rho.powf(-(beta1 - 1.0)))?;
    Ok(gamma_quadratic(state, gamma, model) + params.epsilon * gamma * pairs)
}

/// As [`gamma1_eval`] with the pair term `-eps gamma sum log|q_i - q_j|`, for `beta1 = 1`.
pub fn gamma2_eval(state: &OverdampedState, gamma: f64, model: &Model, params: &LyapunovParams) -> Result<f64> {
    let beta1 = beta1_of(model)?;
    if beta1 != 1.0 {
        return Err(Error::WrongBetaRegime(format!("Gamma_2 needs beta1 = 1, got {beta1}")));
    }
    let pairs = pair_sum(state, model, |rho| -rho.ln())?;
    Ok(gamma_quadratic(state, gamma, model) + params.epsilon * gamma * pairs)
}

/// Where the drift scan draws its states.
#[derive(Debug, Clone, Serialize)]
pub struct ScanSpec {
    pub samples: usize,
    pub seed: u64,
    /// Log-uniform range of particle radii.
    pub radius: (f64, f64),
    pub v_max: f64,
    pub z_max: f64,
    /// Log-uniform range of the forced close pair in the near-collision stratum.
    pub collision: (f64, f64),
    /// Fraction of states whose `V` is below this quantile form the compact core.
    pub core_quantile: f64,
    pub epsilons: Vec<f64>,
    pub radii_r: Vec<f64>,
    pub execution: Execution,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            radius: (1e-2, 10.0),
            v_max: 10.0,
            z_max: 10.0,
            collision: (1e-3, 1e-1),
            core_quantile: 0.5,
            epsilons: vec![1e-3, 1e-2, 1e-1],
            radii_r: vec![2.0, 5.0, 10.0],
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanViolation {
    pub state: PhaseState,
    #[serde(rename = "LV")]
    pub lv: f64,
    #[serde(rename = "V")]
    pub v: f64,
    /// `LV + cV - D`, positive when the bound fails.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub candidate: Candidate,
    pub params: LyapunovParams,
    pub n_samples: usize,
    pub c_fit: f64,
    #[serde(rename = "D_fit")]
    pub d_fit: f64,
    pub violations: Vec<ScanViolation>,
    /// Every `(epsilon, R)` tried, with its fitted rate and violation count.
    pub grid: Vec<GridPoint>,
    pub stratification: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridPoint {
    pub epsilon: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub c_fit: f64,
    pub violations: usize,
}

fn random_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&u);
        if n > 1e-12 {
            return u.into_iter().map(|c| c / n).collect();
        }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Draws sample `k` of the stratified scan design.
///
/// Odd samples put one pair of particles at a log-uniform distance inside the
/// near-collision range; every third sample is drawn with small velocities and
/// auxiliary variables so that the large-position region is probed at rest.
pub fn scan_state(model: &Model, spec: &ScanSpec, k: usize) -> PhaseState {
    let d = model.dim;
    let n = model.particles();
    let mut rng = substream(spec.seed, 0x5343_414e, k as u64);
    let mut x = vec![0.0; n * d];
    loop {
        for i in 0..n {
            let rad = log_uniform(&mut rng, spec.radius.0, spec.radius.1);
            let dir = random_direction(&mut rng, d);
            for c in 0..d {
                x[i * d + c] = rad * dir[c];
            }
        }
        if k % 2 == 1 && n >= 2 {
            let gap = log_uniform(&mut rng, spec.collision.0, spec.collision.1);
            let dir = random_direction(&mut rng, d);
            for c in 0..d {
                x[d + c] = x[c] + gap * dir[c];
            }
        }
        if n < 2 || crate::vector::min_pair_distance(&x, d) >= spec.collision.0 * 0.5 {
            break;
        }
    }
    let quiet = k % 3 == 2;
    let (vmax, zmax) = if quiet { (1.0, 1.0) } else { (spec.v_max, spec.z_max) };
    let mut draw_block = |len: usize, max: f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len / d {
            let mag = rng.random::<f64>() * max;
            out.extend(random_direction(&mut rng, d).into_iter().map(|c| c * mag));
        }
        out
    };
    let v = draw_block(n * d, vmax);
    let z = draw_block(model.z_len(), zmax);
    PhaseState { x, v, z, t: 0.0 }
}

fn check_regime(candidate: Candidate, gamma: f64, model: &Model) -> Result<()> {
    let unit_lambda = model.confining.lambda() == 1.0;
    match candidate {
        Candidate::V1 | Candidate::VN1 if !(gamma > 0.0) => Err(Error::RegimeMismatch(format!(
            "{} requires gamma > 0",
            candidate.name()
        ))),
        Candidate::V2 | Candidate::VN2 if gamma != 0.0 || !unit_lambda => Err(Error::RegimeMismatch(format!(
            "{} requires gamma = 0 and a quadratic confining potential",
            candidate.name()
        ))),
        Candidate::PositionVelocity => Err(Error::RegimeMismatch("x-dot-v is not a Lyapunov candidate".into())),
        _ => Ok(()),
    }
}

struct Fit {
    c: f64,
    d: f64,
    bad: Vec<usize>,
}

/// Largest `c` on a log grid for which the drift constant fixed by the compact
/// core also bounds every other sample.
fn fit_drift(values: &[(f64, f64)], core_quantile: f64) -> Fit {
    let mut sorted: Vec<f64> = values.iter().map(|p| p.0).collect();
    sorted.sort_by(f64::total_cmp);
    let cut_idx = ((sorted.len() as f64 * core_quantile).ceil() as usize).clamp(1, sorted.len()) - 1;
    let cut = sorted[cut_idx];
    let grid: Vec<f64> = (0..=140).map(|k| 10f64.powf(1.0 - k as f64 * 0.05)).collect();
    let mut last = None;
    for &c in &grid {
        let d = values
            .iter()
            .filter(|p| p.0 <= cut)
            .map(|&(v, lv)| lv + c * v)
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * (1.0 + d.abs());
        let bad: Vec<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, &(v, lv))| lv + c * v > d + tol)
            .map(|(k, _)| k)
            .collect();
        if bad.is_empty() {
            return Fit { c, d, bad };
        }
        last = Some(Fit { c, d, bad });
    }
    last.expect("grid is nonempty")
}

/// Samples states, applies the generator to `candidate` and fits `LV <= -cV + D`.
///
/// The scan walks the `(epsilon, R)` grid in order and reports the first point
/// without violations, or the point with the fewest when none is clean.
pub fn drift_scan(
    candidate: Candidate,
    model: &Model,
    mass: f64,
    gamma: f64,
    spec: &ScanSpec,
    kappa: f64,
) -> Result<ScanReport> {
    check_regime(candidate, gamma, model)?;
    let states: Vec<PhaseState> = map_indexed(spec.execution, spec.samples, |k| scan_state(model, spec, k));
    let uses_r = matches!(candidate, Candidate::V2 | Candidate::VN2);
    let uses_eps = !matches!(candidate, Candidate::Hamiltonian);
    let eps_grid: Vec<f64> = if uses_eps { spec.epsilons.clone() } else { vec![0.0] };
    let r_grid: Vec<f64> = if uses_r { spec.radii_r.clone() } else { vec![2.0] };

    let mut grid = Vec::new();
    let mut best: Option<(LyapunovParams, Fit, Vec<(f64, f64)>)> = None;
    'outer: for &eps in &eps_grid {
        for &r in &r_grid {
            let params = LyapunovParams::new(eps, r, kappa)?;
            let values: Vec<(f64, f64)> = crate::parallel::try_map_indexed(spec.execution, states.len(), |k| {
                apply_to_candidate(candidate, &states[k], mass, gamma, model, &params)
            })?;
            let fit = fit_drift(&values, spec.core_quantile);
            grid.push(GridPoint {
                epsilon: eps,
                r,
                c_fit: fit.c,
                violations: fit.bad.len(),
            });
            let clean = fit.bad.is_empty();
            let better = best.as_ref().is_none_or(|(_, b, _)| fit.bad.len() < b.bad.len());
            if better {
                best = Some((params, fit, values));
            }
            if clean {
                break 'outer;
            }
        }
    }
    let (params, fit, values) = best.expect("grid is nonempty");
    let violations = fit
        .bad
        .iter()
        .take(100)
        .map(|&k| ScanViolation {
            state: states[k].clone(),
            lv: values[k].1,
            v: values[k].0,
            margin: values[k].1 + fit.c * values[k].0 - fit.d,
        })
        .collect();
    Ok(ScanReport {
        candidate,
        params,
        n_samples: spec.samples,
        c_fit: fit.c,
        d_fit: fit.d,
        violations,
        grid,
        stratification: format!(
            "radii log-uniform in [{}, {}]; |v| uniform in [0, {}], |z| uniform in [0, {}]; \
             odd samples force a pair gap log-uniform in [{}, {}]; every third sample has |v|, |z| <= 1; \
             core = states with V below the {} quantile",
            spec.radius.0, spec.radius.1, spec.v_max, spec.z_max, spec.collision.0, spec.collision.1, spec.core_quantile
        ),
    })
}

/// Fits the drift bound for `candidate` on a caller-supplied set of states.
pub fn drift_fit_on(
    candidate: Candidate,
    states: &[PhaseState],
    model: &Model,
    mass: f64,
    gamma: f64,
    params: &LyapunovParams,
    core_quantile: f64,
) -> Result<(f64, f64, usize)> {
    let values = states
        .iter()
        .map(|s| apply_to_candidate(candidate, s, mass, gamma, model, params))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_drift(&values, core_quantile);
    Ok((fit.c, fit.d, fit.bad.len()))
}
