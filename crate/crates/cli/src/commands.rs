use glesim_core::dynamics::{
    default_noise, lift_initial_condition, simulate_gle, simulate_overdamped, PhaseState, Trajectory,
};
use glesim_core::experiments::{small_mass_sweep, wasserstein_decay, SmallMassOptions, SmallMassReport, WassersteinOptions};
use glesim_core::kernels::{fluctuation_dissipation_check, FluctuationOptions};
use glesim_core::lyapunov::{drift_scan, Candidate, ScanSpec};
use glesim_core::{Error, Execution};

use crate::config::{RunConfig, Suite};
use crate::output::{Table, Writer};

/// Why a run did not succeed; maps onto the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Rejected input discovered only once the run starts.
    Config(String),
    /// Integrator abort or I/O trouble.
    Runtime(String),
    /// The suite ran but its pass condition did not hold.
    Suite(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) | Failure::Suite(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::RegimeMismatch(_) | Error::WrongBetaRegime(_) | Error::GammaZero => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o: {e}"))
    }
}

fn config_err(msg: String) -> Failure {
    Failure::Config(msg)
}

fn trajectory_table<S: glesim_core::dynamics::Tabular>(tr: &Trajectory<S>) -> Table {
    Table {
        columns: tr.columns(),
        rows: tr.rows().collect(),
    }
}

pub fn run(suite: Suite, cfg: &RunConfig, out: &Writer, exec: Execution) -> Result<(), Failure> {
    match suite {
        Suite::Simulate => simulate(cfg, out),
        Suite::Overdamped => overdamped(cfg, out),
        Suite::Smallmass => smallmass(cfg, out, exec),
        Suite::Ergodicity => ergodicity(cfg, out, exec),
        Suite::Lyapunov => lyapunov(cfg, out, exec),
        Suite::Kernelcheck => kernelcheck(cfg, out, exec),
    }
}

fn simulate(cfg: &RunConfig, out: &Writer) -> Result<(), Failure> {
    let model = cfg.model().map_err(config_err)?;
    let params = cfg.sim_params();
    let s0 = cfg.initial_state(&model).map_err(config_err)?;
    let noise = default_noise(&model, &params, 0);
    let tr = simulate_gle(&model, &s0, &params, &noise, cfg.cutoff().map_err(config_err)?.as_ref())?;
    let path = out.table("trajectory", &trajectory_table(&tr))?;
    println!("rows: {}", tr.len());
    println!("accepted steps: {}", tr.stats.accepted);
    println!("rejected steps: {}", tr.stats.rejected);
    println!("min pair distance: {:e}", tr.stats.min_pair_distance);
    println!("wrote {}", path.display());
    Ok(())
}

fn overdamped(cfg: &RunConfig, out: &Writer) -> Result<(), Failure> {
    let model = cfg.model().map_err(config_err)?;
    let params = cfg.sim_params();
    let s0 = lift_initial_condition(&cfg.initial_x(), &cfg.initial_z(&model), &model.kernels, model.dim)?;
    let noise = default_noise(&model, &params, 0);
    let tr = simulate_overdamped(&model, &s0, &params, &noise, cfg.cutoff().map_err(config_err)?.as_ref())?;
    let path = out.table("overdamped", &trajectory_table(&tr))?;
    println!("rows: {}", tr.len());
    println!("accepted steps: {}", tr.stats.accepted);
    println!("rejected steps: {}", tr.stats.rejected);
    println!("min pair distance: {:e}", tr.stats.min_pair_distance);
    println!("wrote {}", path.display());
    Ok(())
}

fn smallmass_rows(table: &mut Table, report: &SmallMassReport) {
    for r in &report.rows {
        let mut row = vec![
            f64::from(u8::from(report.truncated)),
            r.m,
            r.sup4.mean,
            r.sup4.ci_half_width,
            r.mean_sup,
        ];
        row.extend_from_slice(&r.exceedance);
        row.push(r.rejected_steps as f64);
        table.rows.push(row);
    }
}

fn smallmass(cfg: &RunConfig, out: &Writer, exec: Execution) -> Result<(), Failure> {
    let model = cfg.model().map_err(config_err)?;
    let sm = &cfg.experiment.smallmass;
    let opts = SmallMassOptions {
        masses: sm.masses.clone(),
        gamma: cfg.sim.gamma,
        horizon: cfg.sim.horizon,
        paths: sm.paths,
        seed: cfg.sim.seed,
        xis: sm.xis.clone(),
        steps_per_mass: sm.steps_per_mass,
        delta_min: cfg.sim.delta_min,
        execution: exec,
    };
    let x0 = cfg.initial_x();
    let plain = small_mass_sweep(&model, &x0, None, &opts)?;
    let cutoff = cfg.cutoff().map_err(config_err)?;
    let truncated = cutoff.as_ref().map(|c| small_mass_sweep(&model, &x0, Some(c), &opts)).transpose()?;

    let mut cols = vec!["truncated".to_string(), "m".into(), "E_sup4".into(), "ci_half_width".into(), "mean_sup".into()];
    cols.extend(sm.xis.iter().map(|xi| format!("P_sup_gt_{xi}")));
    cols.push("rejected_steps".into());
    let mut table = Table { columns: cols, rows: Vec::new() };
    if let Some(t) = &truncated {
        smallmass_rows(&mut table, t);
    }
    smallmass_rows(&mut table, &plain);
    let path = out.table("smallmass", &table)?;

    let rated = truncated.as_ref().unwrap_or(&plain);
    let exceed: Vec<f64> = plain.rows.iter().map(|r| r.exceedance[0]).collect();
    let monotone = exceed.windows(2).all(|w| w[1] <= w[0]);
    let [lo, hi] = sm.slope_range;
    let slope_ok = (lo..=hi).contains(&rated.slope);
    println!("slope ({}): {:.4}", if rated.truncated { "truncated" } else { "untruncated" }, rated.slope);
    println!("P(sup > {}) nonincreasing: {monotone}", sm.xis[0]);
    println!("wrote {}", path.display());
    if slope_ok && monotone {
        Ok(())
    } else {
        Err(Failure::Suite(format!(
            "small-mass check failed: slope {:.4} outside [{lo}, {hi}] or exceedance not monotone",
            rated.slope
        )))
    }
}

fn ergodicity(cfg: &RunConfig, out: &Writer, exec: Execution) -> Result<(), Failure> {
    let model = cfg.model().map_err(config_err)?;
    let params = cfg.sim_params();
    let e = &cfg.experiment.ergodicity;
    let a = cfg.initial_state(&model).map_err(config_err)?;
    let xb = e
        .initial_x_b
        .clone()
        .unwrap_or_else(|| a.x.iter().map(|c| c + 3.0).collect());
    let b = PhaseState {
        x: xb,
        ..a.clone()
    };
    let steps = (e.t_max / e.t_step).round() as usize;
    let opts = WassersteinOptions {
        ensemble: e.ensemble,
        times: (0..=steps).map(|k| k as f64 * e.t_step).collect(),
        projections: e.projections,
        seed: cfg.sim.seed,
        coupled: e.coupled,
        plateau_factor: e.plateau_factor,
        execution: exec,
    };
    let r = wasserstein_decay(&model, &params, &a, &b, &opts)?;
    let mut table = Table::new(&["t", "sliced_w1"]);
    table.rows = r.times.iter().zip(&r.distances).map(|(&t, &d)| vec![t, d]).collect();
    let path = out.table("ergodicity", &table)?;
    println!("rate: {:.6}", r.rate);
    println!("r_squared: {:.6}", r.r_squared);
    println!("plateau: {:e}", r.plateau);
    println!("fit points: {}", r.fit_points);
    println!("wrote {}", path.display());
    if r.rate > 0.0 && r.r_squared >= e.min_r2 {
        Ok(())
    } else {
        Err(Failure::Suite(format!(
            "no exponential contraction: rate {:.4}, R² {:.4} (need > 0 and >= {})",
            r.rate, r.r_squared, e.min_r2
        )))
    }
}

fn lyapunov(cfg: &RunConfig, out: &Writer, exec: Execution) -> Result<(), Failure> {
    let model = cfg.model().map_err(config_err)?;
    let l = &cfg.experiment.lyapunov;
    let candidate =
        Candidate::parse(&l.candidate).ok_or_else(|| Failure::Config(format!("unknown candidate '{}'", l.candidate)))?;
    let spec = ScanSpec {
        samples: l.samples,
        seed: cfg.sim.seed,
        radius: (l.radius[0], l.radius[1]),
        v_max: l.v_max,
        z_max: l.z_max,
        collision: (l.collision[0], l.collision[1]),
        core_quantile: l.core_quantile,
        epsilons: l.epsilons.clone(),
        radii_r: l.radii_r.clone(),
        execution: exec,
    };
    let r = drift_scan(candidate, &model, cfg.sim.mass, cfg.sim.gamma, &spec, l.kappa)?;
    let path = out.json("lyapunov", &r)?;
    println!("candidate: {}", candidate.name());
    println!("epsilon: {}", r.params.epsilon);
    println!("c_fit: {:e}", r.c_fit);
    println!("D_fit: {:e}", r.d_fit);
    println!("violations: {}", r.violations.len());
    println!("wrote {}", path.display());
    if r.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Suite(format!("{} drift violations", r.violations.len())))
    }
}

fn kernelcheck(cfg: &RunConfig, out: &Writer, exec: Execution) -> Result<(), Failure> {
    let spec = cfg.kernels().map_err(config_err)?;
    let k = &cfg.experiment.kernelcheck;
    if k.particle >= spec.particles() {
        return Err(Failure::Config(format!("kernelcheck particle {} out of range", k.particle)));
    }
    let opts = FluctuationOptions {
        lags: k.lags.clone(),
        samples: k.samples,
        window: k.window,
        seed: cfg.sim.seed,
        execution: exec,
    };
    let r = fluctuation_dissipation_check(&spec, k.particle, &opts)?;
    let mut table = Table::new(&["lag", "empirical", "exact", "rel_err"]);
    table.rows = r.rows.iter().map(|row| vec![row.lag, row.empirical, row.exact, row.rel_err]).collect();
    let path = out.table("kernelcheck", &table)?;
    let worst = r.max_rel_err();
    println!("max relative error: {worst:.5}");
    println!("wrote {}", path.display());
    if worst <= k.tolerance {
        Ok(())
    } else {
        Err(Failure::Suite(format!("covariance off by {worst:.4} > {}", k.tolerance)))
    }
}
