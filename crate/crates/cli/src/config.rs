use std::fmt;
use std::path::Path;

use glesim_core::dynamics::{CutoffSpec, PhaseState, SimParams};
use glesim_core::kernels::{sample_stationary_aux, KernelSpec, Mode};
use glesim_core::lyapunov::Candidate;
use glesim_core::model::Model;
use glesim_core::noise::substream;
use glesim_core::potentials::{ConfiningPotential, SingularKind, SingularPotential};
use glesim_core::vector::min_pair_distance;
use serde::{Deserialize, Serialize};

/// Substream component for initial auxiliary variables.
const INIT_STREAM: u64 = 0x494e_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Simulate,
    Overdamped,
    Smallmass,
    Ergodicity,
    Lyapunov,
    Kernelcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub potentials: Potentials,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub sim: Sim,
    pub cutoff: Option<Cutoff>,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Potentials {
    #[serde(default)]
    pub confining: Confining,
    #[serde(default)]
    pub singular: Singular,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum Confining {
    /// `c |x|^2 + shift`
    Quadratic {
        #[serde(default = "half")]
        c: f64,
        #[serde(default = "one")]
        shift: f64,
    },
    /// Coefficients of `|x|^2, |x|^4, ...`
    Polynomial {
        coeffs: Vec<f64>,
        #[serde(default = "one")]
        shift: f64,
    },
}

impl Default for Confining {
    fn default() -> Self {
        Confining::Quadratic { c: 0.5, shift: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Singular {
    /// `coulomb`, `riesz`, `log`, `lennard-jones` or `none`.
    #[serde(default = "coulomb")]
    pub kind: String,
    #[serde(default = "one")]
    pub strength: f64,
    pub beta1: Option<f64>,
    pub shift: Option<f64>,
}

impl Default for Singular {
    fn default() -> Self {
        Self {
            kind: coulomb(),
            strength: 1.0,
            beta1: None,
            shift: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernel {
    /// `[lambda, alpha]` pairs shared by every particle.
    #[serde(default = "default_modes")]
    pub modes: Vec<[f64; 2]>,
    /// Per-particle mode lists; overrides `modes` when present.
    pub per_particle: Option<Vec<Vec<[f64; 2]>>>,
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            per_particle: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim {
    #[serde(default = "two")]
    pub n: usize,
    #[serde(default = "one_usize")]
    pub d: usize,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_halvings")]
    pub max_halvings: u32,
    pub output_dt: Option<f64>,
    pub initial_x: Option<Vec<f64>>,
    pub initial_v: Option<Vec<f64>>,
    /// Defaults to a draw from the stationary law `N(0, I)`.
    pub initial_z: Option<Vec<f64>>,
}

impl Default for Sim {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cutoff {
    pub radius: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub suite: Option<Suite>,
    #[serde(default)]
    pub smallmass: SmallMass,
    #[serde(default)]
    pub ergodicity: Ergodicity,
    #[serde(default)]
    pub lyapunov: Lyapunov,
    #[serde(default)]
    pub kernelcheck: KernelCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallMass {
    #[serde(default = "default_masses")]
    pub masses: Vec<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_xis")]
    pub xis: Vec<f64>,
    #[serde(default = "default_steps_per_mass")]
    pub steps_per_mass: f64,
    #[serde(default = "default_slope_range")]
    pub slope_range: [f64; 2],
}

impl Default for SmallMass {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ergodicity {
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_t_step")]
    pub t_step: f64,
    #[serde(default = "default_projections")]
    pub projections: usize,
    #[serde(default)]
    pub coupled: bool,
    #[serde(default = "default_plateau")]
    pub plateau_factor: f64,
    /// Positions of the second ensemble; defaults to the first shifted by 3.
    pub initial_x_b: Option<Vec<f64>>,
    #[serde(default = "default_min_r2")]
    pub min_r2: f64,
}

impl Default for Ergodicity {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lyapunov {
    #[serde(default = "default_candidate")]
    pub candidate: String,
    #[serde(default = "default_scan_samples")]
    pub samples: usize,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_radii_r")]
    pub radii_r: Vec<f64>,
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default = "default_radius_range")]
    pub radius: [f64; 2],
    #[serde(default = "ten")]
    pub v_max: f64,
    #[serde(default = "ten")]
    pub z_max: f64,
    #[serde(default = "default_collision")]
    pub collision: [f64; 2],
    #[serde(default = "half")]
    pub core_quantile: f64,
}

impl Default for Lyapunov {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheck {
    #[serde(default)]
    pub particle: usize,
    #[serde(default = "default_lags")]
    pub lags: Vec<f64>,
    #[serde(default = "default_fd_samples")]
    pub samples: usize,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for KernelCheck {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: Option<String>,
    #[serde(default)]
    pub format: Format,
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn two() -> usize {
    2
}
fn one_usize() -> usize {
    1
}
fn coulomb() -> String {
    "coulomb".into()
}
fn default_modes() -> Vec<[f64; 2]> {
    vec![[1.0, 1.0]]
}
fn default_dt() -> f64 {
    0.01
}
fn default_delta_min() -> f64 {
    1e-4
}
fn default_halvings() -> u32 {
    20
}
fn default_masses() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025, 0.0125]
}
fn default_paths() -> usize {
    200
}
fn default_xis() -> Vec<f64> {
    vec![0.1]
}
fn default_steps_per_mass() -> f64 {
    50.0
}
fn default_slope_range() -> [f64; 2] {
    [0.7, 1.3]
}
fn default_ensemble() -> usize {
    1000
}
fn default_t_max() -> f64 {
    20.0
}
fn default_t_step() -> f64 {
    0.5
}
fn default_projections() -> usize {
    64
}
fn default_plateau() -> f64 {
    3.0
}
fn default_min_r2() -> f64 {
    0.9
}
fn default_candidate() -> String {
    "VN1".into()
}
fn default_scan_samples() -> usize {
    10_000
}
fn default_epsilons() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1]
}
fn default_radii_r() -> Vec<f64> {
    vec![2.0, 5.0, 10.0]
}
fn default_radius_range() -> [f64; 2] {
    [1e-2, 10.0]
}
fn default_collision() -> [f64; 2] {
    [1e-3, 1e-1]
}
fn default_lags() -> Vec<f64> {
    (0..=12).map(|k| k as f64 * 0.25).collect()
}
fn default_fd_samples() -> usize {
    100_000
}
fn default_window() -> f64 {
    200.0
}
fn default_tolerance() -> f64 {
    0.05
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    /// The TOML parser's message, which carries line and column.
    Parse(String),
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "parse error: {m}"),
            ConfigError::Invalid(v) => {
                writeln!(f, "{} validation error(s):", v.len())?;
                for m in v {
                    writeln!(f, "  - {m}")?;
                }
                Ok(())
            }
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))
}

impl RunConfig {
    pub fn confining(&self) -> Result<ConfiningPotential, String> {
        match &self.potentials.confining {
            Confining::Quadratic { c, shift } => ConfiningPotential::quadratic(*c, *shift),
            Confining::Polynomial { coeffs, shift } => ConfiningPotential::even_polynomial(coeffs.clone(), *shift),
        }
        .map_err(|e| format!("potentials.confining: {e}"))
    }

    pub fn singular(&self) -> Result<Option<SingularPotential>, String> {
        let s = &self.potentials.singular;
        let kind = match s.kind.as_str() {
            "none" => return Ok(None),
            "coulomb" => SingularKind::Coulomb { dim: self.sim.d },
            "log" => SingularKind::Log,
            "lennard-jones" => SingularKind::LennardJones,
            "riesz" => SingularKind::Riesz {
                beta1: s.beta1.ok_or("potentials.singular: riesz needs beta1")?,
            },
            other => return Err(format!("potentials.singular: unknown kind '{other}'")),
        };
        // Lennard-Jones is shifted so that its minimum is zero unless told otherwise
        let default_shift = if matches!(kind, SingularKind::LennardJones) { s.strength } else { 0.0 };
        SingularPotential::new(kind, s.strength, s.shift.unwrap_or(default_shift))
            .map(Some)
            .map_err(|e| format!("potentials.singular: {e}"))
    }

    pub fn kernels(&self) -> Result<KernelSpec, String> {
        let to_modes = |v: &[[f64; 2]]| v.iter().map(|&[l, a]| Mode::new(l, a)).collect::<Vec<_>>();
        match &self.kernel.per_particle {
            Some(lists) => {
                if lists.len() != self.sim.n {
                    return Err(format!(
                        "kernel.per_particle has {} lists for {} particles",
                        lists.len(),
                        self.sim.n
                    ));
                }
                KernelSpec::new(lists.iter().map(|l| to_modes(l)).collect())
            }
            None => KernelSpec::uniform(self.sim.n, &to_modes(&self.kernel.modes)),
        }
        .map_err(|e| format!("kernel: {e}"))
    }

    pub fn model(&self) -> Result<Model, String> {
        Model::new(self.sim.d, self.confining()?, self.singular()?, self.kernels()?).map_err(|e| format!("model: {e}"))
    }

    pub fn sim_params(&self) -> SimParams {
        let s = &self.sim;
        SimParams {
            mass: s.mass,
            gamma: s.gamma,
            dt: s.dt,
            horizon: s.horizon,
            seed: s.seed,
            delta_min: s.delta_min,
            max_halvings: s.max_halvings,
            output_dt: s.output_dt,
        }
    }

    pub fn cutoff(&self) -> Result<Option<CutoffSpec>, String> {
        self.cutoff
            .as_ref()
            .map(|c| CutoffSpec::new(c.radius).map_err(|e| format!("cutoff: {e}")))
            .transpose()
    }

    /// Particles spaced one apart along the first axis, centred at the origin.
    pub fn initial_x(&self) -> Vec<f64> {
        let (n, d) = (self.sim.n, self.sim.d);
        self.sim.initial_x.clone().unwrap_or_else(|| {
            let mut x = vec![0.0; n * d];
            for i in 0..n {
                x[i * d] = i as f64 - 0.5 * (n as f64 - 1.0);
            }
            x
        })
    }

    pub fn initial_z(&self, model: &Model) -> Vec<f64> {
        self.sim.initial_z.clone().unwrap_or_else(|| {
            let mut rng = substream(self.sim.seed, INIT_STREAM, 0);
            sample_stationary_aux(&model.kernels, model.dim, &mut rng)
        })
    }

    pub fn initial_state(&self, model: &Model) -> Result<PhaseState, String> {
        let v = self.sim.initial_v.clone().unwrap_or_else(|| vec![0.0; model.x_len()]);
        PhaseState::new(model, self.initial_x(), v, self.initial_z(model)).map_err(|e| format!("initial state: {e}"))
    }

    /// Every violated rule for running `suite`, not just the first.
    pub fn validate(&self, suite: Option<Suite>) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let s = &self.sim;
        if s.n == 0 {
            errs.push("sim.n must be at least 1".to_string());
        }
        if s.d == 0 {
            errs.push("sim.d must be at least 1".to_string());
        }
        let positive = [("sim.mass", s.mass), ("sim.dt", s.dt)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive (got {v})"));
            }
        }
        let nonneg = [("sim.gamma", s.gamma), ("sim.horizon", s.horizon), ("sim.delta_min", s.delta_min)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be nonnegative (got {v})"));
            }
        }
        if s.output_dt.is_some_and(|h| !(h > 0.0)) {
            errs.push("sim.output_dt must be positive".to_string());
        }

        let confining = self.confining().map_err(|e| errs.push(e)).ok();
        let singular = self.singular().map_err(|e| errs.push(e)).ok();
        let kernels = if s.n > 0 { self.kernels().map_err(|e| errs.push(e)).ok() } else { None };
        if let Err(e) = self.cutoff() {
            errs.push(e);
        }

        if let Some(u) = &confining {
            if s.gamma == 0.0 && u.lambda() != 1.0 {
                errs.push(format!(
                    "Assumption 2.1(iii): γ=0 requires λ=1 (the confining potential has λ={})",
                    u.lambda()
                ));
            }
        }
        let suite = suite.or(self.experiment.suite);
        if matches!(suite, Some(Suite::Overdamped | Suite::Smallmass)) && !(s.gamma > 0.0) {
            errs.push("overdamped and small-mass runs require γ > 0".to_string());
        }
        if suite == Some(Suite::Smallmass) {
            if let Some(Some(g)) = &singular {
                if !g.small_mass_eligible(s.d) {
                    errs.push(format!(
                        "Assumption 2.3: d=1 with a log singular potential requires a₄ > 1/2 in the small-mass suite (got a₄={})",
                        g.constants.a4
                    ));
                }
            }
        }
        if matches!(suite, Some(Suite::Simulate | Suite::Ergodicity)) {
            if let Err(e) = self.sim_params().validate_gle() {
                errs.push(format!("sim: {e}"));
            }
        }
        if suite == Some(Suite::Lyapunov) {
            match Candidate::parse(&self.experiment.lyapunov.candidate) {
                None => errs.push(format!(
                    "experiment.lyapunov.candidate: unknown candidate '{}'",
                    self.experiment.lyapunov.candidate
                )),
                Some(Candidate::V1 | Candidate::VN1) if !(s.gamma > 0.0) => {
                    errs.push("experiment.lyapunov: V1 and VN1 require γ > 0".to_string())
                }
                Some(Candidate::V2 | Candidate::VN2) if s.gamma != 0.0 => {
                    errs.push("experiment.lyapunov: V2 and VN2 require γ = 0".to_string())
                }
                Some(Candidate::PositionVelocity) => {
                    errs.push("experiment.lyapunov: x-dot-v is not a Lyapunov candidate".to_string())
                }
                _ => {}
            }
        }

        if let (Some(u), Some(g), Some(k)) = (confining, singular, kernels) {
            if s.n > 0 && s.d > 0 {
                match Model::new(s.d, u, g, k) {
                    Ok(model) => self.validate_initial(&model, suite, &mut errs),
                    Err(e) => errs.push(format!("model: {e}")),
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    fn validate_initial(&self, model: &Model, suite: Option<Suite>, errs: &mut Vec<String>) {
        let x = self.initial_x();
        let lens = [
            ("sim.initial_x", Some(x.len()), model.x_len()),
            ("sim.initial_v", self.sim.initial_v.as_ref().map(Vec::len), model.x_len()),
            ("sim.initial_z", self.sim.initial_z.as_ref().map(Vec::len), model.z_len()),
        ];
        let mut shapes_ok = true;
        for (name, got, want) in lens {
            if let Some(got) = got {
                if got != want {
                    errs.push(format!("{name} has {got} entries, expected {want}"));
                    shapes_ok = false;
                }
            }
        }
        if shapes_ok && min_pair_distance(&x, model.dim) == 0.0 {
            errs.push("sim.initial_x: two particles coincide".to_string());
        }
        if suite == Some(Suite::Ergodicity) {
            if let Some(b) = &self.experiment.ergodicity.initial_x_b {
                if b.len() != model.x_len() {
                    errs.push(format!(
                        "experiment.ergodicity.initial_x_b has {} entries, expected {}",
                        b.len(),
                        model.x_len()
                    ));
                } else if min_pair_distance(b, model.dim) == 0.0 {
                    errs.push("experiment.ergodicity.initial_x_b: two particles coincide".to_string());
                }
            }
        }
    }
}
