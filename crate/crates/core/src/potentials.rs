//! Confining and singular pair potentials.
//!
//! Both families are radial, so value, gradient and Hessian are assembled from a
//! one-dimensional profile `g(rho)` and its first two derivatives:
//!
//! ```text
//! grad G(r) = g'(rho) r / rho
//! hess G(r) = g''(rho) e e^T + g'(rho) / rho (I - e e^T),   e = r / rho
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::vector::{dot, norm};

/// Separations shorter than this are treated as coincident.
pub const MIN_SEPARATION: f64 = 1e-300;

/// Growth constants `a1, a2, a3` of the confining potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfiningConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfiningKind {
    Quadratic,
    EvenPolynomial,
}

/// `U(x) = sum_k c_k |x|^(2k) + shift`, `k = 1..K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfiningPotential {
    pub kind: ConfiningKind,
    /// `coeffs[k - 1]` multiplies `|x|^(2k)`.
    pub coeffs: Vec<f64>,
    pub shift: f64,
    pub constants: ConfiningConstants,
}

impl ConfiningPotential {
    /// `U(x) = c |x|^2 + shift`.
    pub fn quadratic(c: f64, shift: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid("quadratic coefficient must be positive"));
        }
        let constants = ConfiningConstants {
            a1: shift.abs().max(2.0 * c).max(1.0),
            a2: 2.0 * c,
            a3: 0.0,
        };
        Ok(Self {
            kind: ConfiningKind::Quadratic,
            coeffs: vec![c],
            shift,
            constants,
        })
    }

    /// Even polynomial with coefficients of `|x|^2, |x|^4, ...`; the leading one must be positive.
    ///
    /// Growth constants are derived numerically with a 5% safety factor.
    pub fn even_polynomial(coeffs: Vec<f64>, shift: f64) -> Result<Self> {
        match coeffs.last() {
            Some(&c) if c > 0.0 => {}
            _ => return Err(Error::invalid("leading polynomial coefficient must be positive")),
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("polynomial coefficients must be finite"));
        }
        let mut pot = Self {
            kind: if coeffs.len() == 1 {
                ConfiningKind::Quadratic
            } else {
                ConfiningKind::EvenPolynomial
            },
            coeffs,
            shift,
            constants: ConfiningConstants {
                a1: 1.0,
                a2: 1.0,
                a3: 0.0,
            },
        };
        pot.constants = pot.derive_constants();
        Ok(pot)
    }

    pub fn with_constants(mut self, constants: ConfiningConstants) -> Self {
        self.constants = constants;
        self
    }

    /// Growth exponent: the polynomial degree minus one.
    pub fn lambda(&self) -> f64 {
        (2 * self.coeffs.len() - 1) as f64
    }

    fn derive_constants(&self) -> ConfiningConstants {
        let top = self.coeffs.len();
        let lam = self.lambda();
        let a2 = top as f64 * self.coeffs[top - 1];
        let mut a1: f64 = 1.0;
        let mut a3: f64 = 0.0;
        for k in 0..=40_000 {
            let rho = 1e3 * (k as f64 / 40_000.0).powi(3);
            let (u, h, hp) = self.radial(rho * rho);
            let grad = h.abs() * rho;
            let hess = h.abs().max((h + 2.0 * hp * rho * rho).abs());
            a1 = a1
                .max(u.abs() / (1.0 + rho.powf(lam + 1.0)))
                .max(grad / (1.0 + rho.powf(lam)))
                .max(hess / (1.0 + rho.powf(lam - 1.0)));
            a3 = a3.max(a2 * rho.powf(lam + 1.0) - h * rho * rho);
        }
        ConfiningConstants {
            a1: 1.05 * a1,
            a2,
            a3: 1.05 * a3,
        }
    }

    /// Returns `(U, h, h')` at squared radius `s` where `grad U = h(s) x`.
    #[inline]
    fn radial(&self, s: f64) -> (f64, f64, f64) {
        let mut u = self.shift;
        let mut h = 0.0;
        let mut hp = 0.0;
        let mut pow = 1.0; // s^(k-1)
        let mut pow_prev = 0.0; // s^(k-2)
        for (idx, &c) in self.coeffs.iter().enumerate() {
            let k = (idx + 1) as f64;
            u += c * pow * s;
            h += 2.0 * k * c * pow;
            if idx >= 1 {
                hp += 2.0 * k * (k - 1.0) * c * pow_prev;
            }
            pow_prev = pow;
            pow *= s;
        }
        (u, h, hp)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(dot(x, x)).0
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.add_grad(x, 1.0, &mut out);
        out
    }

    /// `out += scale * grad U(x)`
    #[inline]
    pub fn add_grad(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let h = self.radial(dot(x, x)).1;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * h * xi;
        }
    }

    /// Row-major `d x d` Hessian.
    pub fn hess(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let (_, h, hp) = self.radial(dot(x, x));
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] = 2.0 * hp * x[a] * x[b] + if a == b { h } else { 0.0 };
            }
        }
        out
    }

    /// Laplacian of `U`, used by the overdamped generator and Ito corrections.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let s = dot(x, x);
        let (_, h, hp) = self.radial(s);
        d * h + 2.0 * hp * s
    }
}

/// Singularity constants of the pair potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureConstants {
    /// Growth constant shared with the bounds on `|G|`, `|grad G|`, `|hess G|`.
    pub a1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SingularKind {
    /// `a |r|^-12 - 2a |r|^-6`.
    LennardJones,
    /// `|r|^(2-d)` for `d >= 3`, `-log |r|` for `d = 2`, `|r|^-1` for `d = 1`.
    Coulomb { dim: usize },
    /// `a |r|^-(beta1 - 1)`, `beta1 > 1`.
    Riesz { beta1: f64 },
    /// `-a log |r|`.
    Log,
}

impl SingularKind {
    pub fn name(&self) -> &'static str {
        match self {
            SingularKind::LennardJones => "lennard-jones",
            SingularKind::Coulomb { .. } => "coulomb",
            SingularKind::Riesz { .. } => "riesz",
            SingularKind::Log => "log",
        }
    }
}

/// Repulsive radial pair potential `G`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularPotential {
    pub kind: SingularKind,
    /// Overall prefactor `a`.
    pub strength: f64,
    pub shift: f64,
    pub constants: StructureConstants,
}

/// Radial profile after resolving the Coulomb kind against the dimension.
#[derive(Debug, Clone, Copy)]
enum Profile {
    Power(f64),
    Log,
    LennardJones,
}

impl SingularPotential {
    pub fn new(kind: SingularKind, strength: f64, shift: f64) -> Result<Self> {
        if !(strength > 0.0) || !strength.is_finite() {
            return Err(Error::invalid("singular potential strength must be positive"));
        }
        if let SingularKind::Riesz { beta1 } = kind {
            if !(beta1 > 1.0) {
                return Err(Error::invalid("riesz kind requires beta1 > 1"));
            }
        }
        if let SingularKind::Coulomb { dim } = kind {
            if dim == 0 {
                return Err(Error::invalid("coulomb kind requires dim >= 1"));
            }
        }
        let a = strength;
        let constants = match Self::profile_of(kind) {
            Profile::Power(s) => StructureConstants {
                a1: (a + shift.abs()).max(a * s).max(a * s * (s + 1.0)),
                beta1: s + 1.0,
                beta2: 0.0,
                a4: a * s,
                a5: 0.0,
                a6: 0.0,
            },
            Profile::Log => StructureConstants {
                a1: a + shift.abs(),
                beta1: 1.0,
                beta2: 0.0,
                a4: a,
                a5: 0.0,
                a6: 0.0,
            },
            Profile::LennardJones => StructureConstants {
                a1: (240.0 * a).max(3.0 * a + shift.abs()),
                beta1: 13.0,
                beta2: 7.0,
                a4: 12.0 * a,
                a5: 12.0 * a,
                a6: 0.0,
            },
        };
        Ok(Self {
            kind,
            strength,
            shift,
            constants,
        })
    }

    /// Lennard-Jones with the shift that makes its minimum zero.
    pub fn lennard_jones(strength: f64) -> Result<Self> {
        Self::new(SingularKind::LennardJones, strength, strength)
    }

    pub fn coulomb(dim: usize) -> Result<Self> {
        Self::new(SingularKind::Coulomb { dim }, 1.0, 0.0)
    }

    pub fn riesz(beta1: f64, strength: f64) -> Result<Self> {
        Self::new(SingularKind::Riesz { beta1 }, strength, 0.0)
    }

    pub fn log(strength: f64) -> Result<Self> {
        Self::new(SingularKind::Log, strength, 0.0)
    }

    pub fn with_constants(mut self, constants: StructureConstants) -> Self {
        self.constants = constants;
        self
    }

    fn profile_of(kind: SingularKind) -> Profile {
        match kind {
            SingularKind::LennardJones => Profile::LennardJones,
            SingularKind::Log => Profile::Log,
            SingularKind::Riesz { beta1 } => Profile::Power(beta1 - 1.0),
            SingularKind::Coulomb { dim } => match dim {
                1 => Profile::Power(1.0),
                2 => Profile::Log,
                d => Profile::Power(d as f64 - 2.0),
            },
        }
    }

    /// `(g, g', g'')` at radius `rho > 0`, including strength and shift.
    #[inline]
    pub fn radial(&self, rho: f64) -> (f64, f64, f64) {
        let a = self.strength;
        let (g, g1, g2) = match Self::profile_of(self.kind) {
            Profile::Power(s) => {
                let p = rho.powf(-s);
                (p, -s * p / rho, s * (s + 1.0) * p / (rho * rho))
            }
            Profile::Log => (-rho.ln(), -1.0 / rho, 1.0 / (rho * rho)),
            Profile::LennardJones => {
                let inv2 = 1.0 / (rho * rho);
                let inv6 = inv2 * inv2 * inv2;
                let inv12 = inv6 * inv6;
                (
                    inv12 - 2.0 * inv6,
                    (-12.0 * inv12 + 12.0 * inv6) / rho,
                    (156.0 * inv12 - 84.0 * inv6) * inv2,
                )
            }
        };
        (a * g + self.shift, a * g1, a * g2)
    }

    #[inline]
    fn checked_radius(r: &[f64]) -> Result<f64> {
        let rho = norm(r);
        if !(rho >= MIN_SEPARATION) {
            return Err(Error::ZeroSeparation);
        }
        Ok(rho)
    }

    pub fn value(&self, r: &[f64]) -> Result<f64> {
        Ok(self.radial(Self::checked_radius(r)?).0)
    }

    pub fn grad(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; r.len()];
        self.add_grad(r, 1.0, &mut out)?;
        Ok(out)
    }

    /// `out += scale * grad G(r)`
    #[inline]
    pub fn add_grad(&self, r: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        let rho = Self::checked_radius(r)?;
        let coef = scale * self.radial(rho).1 / rho;
        for (o, ri) in out.iter_mut().zip(r) {
            *o += coef * ri;
        }
        Ok(())
    }

    /// Row-major `d x d` Hessian.
    pub fn hess(&self, r: &[f64]) -> Result<Vec<f64>> {
        let rho = Self::checked_radius(r)?;
        let (_, g1, g2) = self.radial(rho);
        let d = r.len();
        let tang = g1 / rho;
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let eab = r[a] * r[b] / (rho * rho);
                out[a * d + b] = (g2 - tang) * eab + if a == b { tang } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Laplacian of `G` in dimension `r.len()`.
    pub fn laplacian(&self, r: &[f64]) -> Result<f64> {
        let rho = Self::checked_radius(r)?;
        let (_, g1, g2) = self.radial(rho);
        Ok(g2 + (r.len() as f64 - 1.0) * g1 / rho)
    }

    /// Whether this instance meets the extra repulsion threshold required for the
    /// small-mass limit when `d = 1` and `beta1 = 1`.
    pub fn small_mass_eligible(&self, dim: usize) -> bool {
        !(dim == 1 && self.constants.beta1 == 1.0) || self.constants.a4 > 0.5
    }
}

/// `sum_{j != i} grad G(x_i - x_j)` for flat positions of `N` points in `R^dim`.
pub fn pair_force_sum(pot: &SingularPotential, positions: &[f64], dim: usize, i: usize) -> Result<Vec<f64>> {
    let n = positions.len() / dim;
    if positions.len() != n * dim {
        return Err(Error::DimensionMismatch {
            expected: n * dim,
            got: positions.len(),
        });
    }
    let xi = &positions[i * dim..(i + 1) * dim];
    let mut out = vec![0.0; dim];
    let mut r = vec![0.0; dim];
    for j in (0..n).filter(|&j| j != i) {
        let xj = &positions[j * dim..(j + 1) * dim];
        for k in 0..dim {
            r[k] = xi[k] - xj[k];
        }
        pot.add_grad(&r, 1.0, &mut out)
            .map_err(|_| Error::CoincidentParticles(i.min(j), i.max(j)))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureViolation {
    pub r: Vec<f64>,
    pub residual: f64,
    pub bound: f64,
    pub margin: f64,
}

/// Outcome of checking `|grad G(r) + a4 r/|r|^(beta1+1)| <= a5 |r|^-beta2 + a6`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub kind: String,
    pub grid: GridSummary,
    /// Smallest `bound - residual` over all samples.
    pub worst_margin: f64,
    pub violations: Vec<StructureViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub samples: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl GridSummary {
    fn of(samples: &[Vec<f64>]) -> Self {
        let radii = samples.iter().map(|r| norm(r));
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for rho in radii {
            lo = lo.min(rho);
            hi = hi.max(rho);
        }
        Self {
            samples: samples.len(),
            r_min: lo,
            r_max: hi,
        }
    }
}

/// Relative slack granted to floating-point rounding in the bound checks.
const BOUND_RTOL: f64 = 1e-9;

/// Checks the singular-force structure inequality at every sample separation.
pub fn verify_structure(pot: &SingularPotential, samples: &[Vec<f64>]) -> Result<StructureReport> {
    let c = pot.constants;
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    for r in samples {
        let rho = SingularPotential::checked_radius(r)?;
        let mut resid = pot.grad(r)?;
        let lead = c.a4 / rho.powf(c.beta1 + 1.0);
        for (g, ri) in resid.iter_mut().zip(r) {
            *g += lead * ri;
        }
        let residual = norm(&resid);
        let bound = c.a5 * rho.powf(-c.beta2) + c.a6;
        let margin = bound - residual;
        worst = worst.min(margin);
        let scale = lead * rho + residual + bound;
        if margin < -BOUND_RTOL * scale {
            violations.push(StructureViolation {
                r: r.clone(),
                residual,
                bound,
                margin,
            });
        }
    }
    Ok(StructureReport {
        kind: pot.kind.name().to_string(),
        grid: GridSummary::of(samples),
        worst_margin: worst,
        violations,
    })
}

/// Fits `(a4, a5, a6)` for the given exponents from samples along one direction.
///
/// `a4` is extrapolated from the two smallest radii assuming a remainder of order
/// `|r|^-beta2`; `a5` bounds the residual for radii up to one and `a6` whatever is
/// left beyond. Residuals below the rounding floor of the leading term are
/// ignored, as in [`verify_structure`]. The result is valid on the grid but not
/// claimed to be minimal.
pub fn fit_structure_constants(
    pot: &SingularPotential,
    beta1: f64,
    beta2: f64,
    radii: &[f64],
) -> Result<StructureConstants> {
    let mut sorted: Vec<f64> = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 {
        return Err(Error::invalid("need at least two radii"));
    }
    if !(sorted[0] >= MIN_SEPARATION) {
        return Err(Error::ZeroSeparation);
    }
    let lead = |rho: f64| -pot.radial(rho).1 * rho.powf(beta1);
    let (r1, r2) = (sorted[0], sorted[1]);
    let p = beta1 - beta2;
    let a4 = (lead(r1) * r2.powf(p) - lead(r2) * r1.powf(p)) / (r2.powf(p) - r1.powf(p));
    let residual = |rho: f64| {
        let g1 = pot.radial(rho).1;
        let lead_term = a4 * rho.powf(-beta1);
        let floor = 0.1 * BOUND_RTOL * (g1.abs() + lead_term);
        ((g1 + lead_term).abs() - floor).max(0.0)
    };
    let a5 = sorted
        .iter()
        .filter(|&&rho| rho <= 1.0)
        .map(|&rho| residual(rho) * rho.powf(beta2))
        .fold(0.0, f64::max);
    let a6 = sorted
        .iter()
        .map(|&rho| residual(rho) - a5 * rho.powf(-beta2))
        .fold(0.0, f64::max);
    Ok(StructureConstants {
        a1: pot.constants.a1,
        beta1,
        beta2,
        a4,
        a5,
        a6,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub what: &'static str,
    pub radius: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Pointwise check of the growth bounds on `U` and `G` along `direction`.
pub fn certify_bounds(
    confining: &ConfiningPotential,
    singular: Option<&SingularPotential>,
    direction: &[f64],
    radii: &[f64],
) -> Vec<BoundViolation> {
    let unit: Vec<f64> = {
        let n = norm(direction);
        direction.iter().map(|c| c / n).collect()
    };
    let mut out = Vec::new();
    let mut check = |what, radius, lhs: f64, rhs: f64| {
        if lhs > rhs * (1.0 + BOUND_RTOL) + BOUND_RTOL {
            out.push(BoundViolation { what, radius, lhs, rhs });
        }
    };
    let uc = confining.constants;
    let lam = confining.lambda();
    let op_norm = |h: &[f64], d: usize| -> f64 {
        // power iteration on a symmetric matrix; the iterates approach the
        // spectral norm from below and the radial Hessians here converge fast
        let mut v: Vec<f64> = (0..d).map(|k| 1.0 + 0.37 * k as f64).collect();
        let mut est = 0.0;
        for _ in 0..200 {
            let n = norm(&v);
            if n == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|c| *c /= n);
            let w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| h[a * d + b] * v[b]).sum()).collect();
            est = norm(&w);
            v = w;
        }
        est
    };
    for &rho in radii {
        let x: Vec<f64> = unit.iter().map(|c| c * rho).collect();
        let d = x.len();
        let u = confining.value(&x);
        check("U >= 1", rho, 1.0, u);
        check("|U| growth", rho, u.abs(), uc.a1 * (1.0 + rho.powf(lam + 1.0)));
        let g = confining.grad(&x);
        check("|grad U| growth", rho, norm(&g), uc.a1 * (1.0 + rho.powf(lam)));
        check(
            "|hess U| growth",
            rho,
            op_norm(&confining.hess(&x), d),
            uc.a1 * (1.0 + rho.powf(lam - 1.0)),
        );
        check(
            "<grad U, x> dissipativity",
            rho,
            uc.a2 * rho.powf(lam + 1.0) - uc.a3,
            dot(&g, &x),
        );
        if let Some(pot) = singular {
            let c = pot.constants;
            if let (Ok(gv), Ok(gg), Ok(gh)) = (pot.value(&x), pot.grad(&x), pot.hess(&x)) {
                check("|G| growth", rho, gv.abs(), c.a1 * (1.0 + rho + rho.powf(-c.beta1)));
                check("|grad G| growth", rho, norm(&gg), c.a1 * (1.0 + rho.powf(-c.beta1)));
                check(
                    "|hess G| growth",
                    rho,
                    op_norm(&gh, d),
                    c.a1 * (1.0 + rho.powf(-c.beta1 - 1.0)),
                );
            }
        }
    }
    out
}

/// Log-spaced radii in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}
