use serde::Serialize;

use crate::dynamics::CutoffSpec;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::potentials::{ConfiningPotential, SingularPotential};

/// The potentials and memory kernels of an `N`-particle system in `R^dim`.
#[derive(Debug, Clone, Serialize)]
pub struct Model {
    pub dim: usize,
    pub confining: ConfiningPotential,
    /// `None` means the particles do not interact.
    pub singular: Option<SingularPotential>,
    pub kernels: KernelSpec,
}

impl Model {
    pub fn new(
        dim: usize,
        confining: ConfiningPotential,
        singular: Option<SingularPotential>,
        kernels: KernelSpec,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if kernels.particles() == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        Ok(Self {
            dim,
            confining,
            singular,
            kernels,
        })
    }

    pub fn particles(&self) -> usize {
        self.kernels.particles()
    }

    /// Length of the flat position (and velocity) vector.
    pub fn x_len(&self) -> usize {
        self.particles() * self.dim
    }

    pub fn z_len(&self) -> usize {
        self.kernels.z_len(self.dim)
    }

    /// Wiener channels: one per velocity component, then one per auxiliary component.
    pub fn channels(&self) -> usize {
        self.x_len() + self.z_len()
    }

    pub fn check_positions(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x_len() {
            return Err(Error::DimensionMismatch {
                expected: self.x_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `sum_i U(x_i) + sum_{i<j} G(x_i - x_j)`.
    pub fn potential_energy(&self, x: &[f64]) -> Result<f64> {
        self.check_positions(x)?;
        let d = self.dim;
        let n = self.particles();
        let mut e: f64 = x.chunks_exact(d).map(|xi| self.confining.value(xi)).sum();
        if let Some(g) = &self.singular {
            let mut r = vec![0.0; d];
            for i in 0..n {
                for j in i + 1..n {
                    for k in 0..d {
                        r[k] = x[i * d + k] - x[j * d + k];
                    }
                    e += g.value(&r).map_err(|_| Error::CoincidentParticles(i, j))?;
                }
            }
        }
        Ok(e)
    }

    /// Writes `grad U(x_i) + sum_{j != i} grad G(x_i - x_j)` for every particle.
    ///
    /// With a cutoff the two terms are damped by `theta_R(|x_i|)` and
    /// `theta_R(1/|x_i - x_j|)`; pairs closer than `1/(R+1)` then contribute nothing.
    pub fn potential_gradient(&self, x: &[f64], cutoff: Option<&CutoffSpec>, out: &mut [f64]) -> Result<()> {
        self.check_positions(x)?;
        let d = self.dim;
        let n = self.particles();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (xi, oi) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let w = cutoff.map_or(1.0, |c| c.theta(crate::vector::norm(xi)));
            if w > 0.0 {
                self.confining.add_grad(xi, w, oi);
            }
        }
        let Some(g) = &self.singular else {
            return Ok(());
        };
        let mut r = vec![0.0; d];
        let mut pair = vec![0.0; d];
        for i in 0..n {
            for j in i + 1..n {
                let mut rho2 = 0.0;
                for k in 0..d {
                    r[k] = x[i * d + k] - x[j * d + k];
                    rho2 += r[k] * r[k];
                }
                let w = match cutoff {
                    None => 1.0,
                    Some(c) => {
                        let rho = rho2.sqrt();
                        if rho <= 1.0 / (c.radius + 1.0) {
                            continue;
                        }
                        c.theta(1.0 / rho)
                    }
                };
                pair.iter_mut().for_each(|p| *p = 0.0);
                g.add_grad(&r, w, &mut pair)
                    .map_err(|_| Error::CoincidentParticles(i, j))?;
                for k in 0..d {
                    out[i * d + k] += pair[k];
                    out[j * d + k] -= pair[k];
                }
            }
        }
        Ok(())
    }
}
