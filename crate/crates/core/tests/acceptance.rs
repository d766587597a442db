//! Acceptance suite. Prints one PASS/FAIL line per criterion; pass criterion
//! numbers as arguments to run a subset.

use std::time::Instant;

use glesim_core::dynamics::*;
use glesim_core::experiments::*;
use glesim_core::kernels::*;
use glesim_core::lyapunov::*;
use glesim_core::model::Model;
use glesim_core::noise::BrownianPath;
use glesim_core::potentials::*;
use glesim_core::Execution;

type Outcome = (bool, String);

fn pair_model(g: SingularPotential, modes: &[Mode]) -> Model {
    Model::new(
        1,
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        Some(g),
        KernelSpec::uniform(2, modes).unwrap(),
    )
    .unwrap()
}

fn fluctuation_dissipation() -> Outcome {
    let spec = KernelSpec::uniform(1, &[Mode::new(1.0, 1.0), Mode::new(2.0, 3.0)]).unwrap();
    let opts = FluctuationOptions {
        lags: (0..=12).map(|k| k as f64 * 0.25).collect(),
        samples: 100_000,
        window: 200.0,
        seed: 1,
        execution: Execution::default(),
    };
    let start = Instant::now();
    let rep = fluctuation_dissipation_check(&spec, 0, &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = rep.max_rel_err();
    (
        err <= 0.05 && secs < 30.0,
        format!("max rel err {err:.4} over {} lags, {secs:.1}s", rep.rows.len()),
    )
}

fn gibbs() -> Outcome {
    let kinds = [
        SingularPotential::coulomb(1).unwrap(),
        SingularPotential::riesz(2.0, 1.0).unwrap(),
        SingularPotential::log(1.0).unwrap(),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    for g in kinds {
        for mass in [0.5, 1.0, 2.0] {
            let m = pair_model(g.clone(), &[Mode::new(1.0, 1.0)]);
            let p = SimParams {
                mass,
                // close encounters set a time scale of their own, so dt does not grow with m
                dt: 0.025,
                // the log pair density only vanishes linearly at contact
                delta_min: 1e-9,
                ..SimParams::default()
            };
            let opts = GibbsOptions {
                seed: 11,
                ..GibbsOptions::default()
            };
            let start = Instant::now();
            let line = match gibbs_marginal_test(&m, &[-1.0, 1.0], &p, &opts) {
                Ok(r) => {
                    let secs = start.elapsed().as_secs_f64();
                    let wanted = ["var(v)", "var(z)", "E[x1^2]"];
                    let checks: Vec<_> = r.checks.iter().filter(|c| wanted.contains(&c.observable.as_str())).collect();
                    let pass = checks.len() == 3 && checks.iter().all(|c| c.pass) && secs < 300.0;
                    ok &= pass;
                    let detail: Vec<String> = checks
                        .iter()
                        .map(|c| format!("{} {:.4}/{:.4}", c.observable, c.estimate.mean, c.target))
                        .collect();
                    format!("{} m={mass}: {} {} ({secs:.0}s)", g.kind.name(), if pass { "ok" } else { "FAIL" }, detail.join(", "))
                }
                Err(e) => {
                    ok = false;
                    format!("{} m={mass}: error {e}", g.kind.name())
                }
            };
            println!("    {line}");
            lines.push(line);
        }
    }
    (ok, format!("{} instances", lines.len()))
}

fn generator() -> Outcome {
    let m = Model::new(
        2,
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        Some(SingularPotential::lennard_jones(1.0).unwrap()),
        KernelSpec::uniform(3, &[Mode::new(1.0, 1.0), Mode::new(0.5, 2.0)]).unwrap(),
    )
    .unwrap();
    let spec = ScanSpec {
        samples: 1_000,
        seed: 3,
        ..ScanSpec::default()
    };
    let params = LyapunovParams::new(0.1, 2.0, 0.5).unwrap();
    let (mass, gamma) = (0.7, 1.3);
    let mut worst = 0.0_f64;
    for k in 0..spec.samples {
        let s = scan_state(&m, &spec, k);
        let (_, input) = evaluate(Candidate::Hamiltonian, &s, mass, &m, &params).unwrap();
        let got = generator_apply(&input, &s, mass, gamma, &m).unwrap();
        let (mut az, mut asum) = (0.0, 0.0);
        for i in 0..3 {
            let off = m.kernels.z_offset(i, 2);
            for (l, mode) in m.kernels.modes[i].iter().enumerate() {
                let z = &s.z[off + 2 * l..off + 2 * l + 2];
                az += mode.alpha * (z[0] * z[0] + z[1] * z[1]);
                asum += mode.alpha;
            }
        }
        let v2: f64 = s.v.iter().map(|c| c * c).sum();
        let terms = [-gamma * v2, -az, gamma * 6.0 / mass, 2.0 * asum];
        let want: f64 = terms.iter().sum();
        // the potential-force terms cancel in exact arithmetic but set the rounding scale
        let mut grad = vec![0.0; s.x.len()];
        m.potential_gradient(&s.x, None, &mut grad).unwrap();
        let cancelled: f64 = grad.iter().zip(&s.v).map(|(g, v)| (g * v).abs()).sum();
        let scale: f64 = terms.iter().map(|t| t.abs()).sum::<f64>() + cancelled;
        worst = worst.max((got - want).abs() / scale);
    }
    let pm = pair_model(SingularPotential::coulomb(1).unwrap(), &[Mode::new(1.0, 1.0)]);
    let s = PhaseState::new(&pm, vec![-0.8, 1.1], vec![0.5, -0.3], vec![0.4, 0.2]).unwrap();
    let mut dynkin = Vec::new();
    for obs in [Candidate::Hamiltonian, Candidate::PositionVelocity] {
        dynkin.push(dynkin_check(&pm, &s, 1.0, 1.0, obs, 1.0 / 128.0, 20_000, 3, Execution::default()).unwrap());
    }
    let pass = worst <= 1e-10 && dynkin.iter().all(|r| r.pass);
    let d: Vec<String> = dynkin
        .iter()
        .map(|r| format!("{}: {:.4} vs {:.4} (se {:.4})", r.observable.name(), r.estimate, r.generator, r.std_error))
        .collect();
    (pass, format!("closed form worst rel {worst:.2e}; Dynkin {}", d.join("; ")))
}

fn drift() -> Outcome {
    let spec = ScanSpec {
        samples: 10_000,
        seed: 4,
        ..ScanSpec::default()
    };
    let m = pair_model(SingularPotential::coulomb(1).unwrap(), &[Mode::new(1.0, 1.0)]);
    let v1 = drift_scan(Candidate::VN1, &m, 1.0, 1.0, &spec, 0.5).unwrap();
    let v2 = drift_scan(Candidate::VN2, &m, 1.0, 0.0, &spec, 0.5).unwrap();
    // the control probes large |x| nearly at rest, where H_N has no restoring drift
    let far = ScanSpec {
        radius: (1.0, 1e4),
        v_max: 0.1,
        z_max: 0.1,
        ..spec.clone()
    };
    let h = drift_scan(Candidate::Hamiltonian, &m, 1.0, 1.0, &far, 0.5).unwrap();
    let v1_far = drift_scan(Candidate::VN1, &m, 1.0, 1.0, &far, 0.5).unwrap();
    let pass =
        v1.violations.is_empty() && v2.violations.is_empty() && v1_far.violations.is_empty() && !h.violations.is_empty();
    (
        pass,
        format!(
            "VN1 (gamma=1) eps={} c={:.3e} viol={} (far stratum {}); VN2 (gamma=0) eps={} R={} c={:.3e} viol={}; H_N viol={}",
            v1.params.epsilon,
            v1.c_fit,
            v1.violations.len(),
            v1_far.violations.len(),
            v2.params.epsilon,
            v2.params.r,
            v2.c_fit,
            v2.violations.len(),
            h.violations.len()
        ),
    )
}

fn small_mass() -> Outcome {
    let m = pair_model(SingularPotential::coulomb(1).unwrap(), &[Mode::new(1.0, 1.0)]);
    let opts = SmallMassOptions {
        masses: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
        paths: 200,
        horizon: 1.0,
        seed: 5,
        // only 0.1 is judged; the larger thresholds show the tail shrinking
        xis: vec![0.1, 0.5, 1.0],
        ..SmallMassOptions::default()
    };
    let start = Instant::now();
    let cut = CutoffSpec::new(5.0).unwrap();
    let truncated = small_mass_sweep(&m, &[-1.0, 1.0], Some(&cut), &opts).unwrap();
    let plain = small_mass_sweep(&m, &[-1.0, 1.0], None, &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let exceed: Vec<f64> = plain.rows.iter().map(|r| r.exceedance[0]).collect();
    let monotone = exceed.windows(2).all(|w| w[1] <= w[0]);
    let slope_ok = (0.7..=1.3).contains(&truncated.slope);
    let tails: Vec<String> = plain
        .rows
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.exceedance[1], r.exceedance[2]))
        .collect();
    let sup4: Vec<String> = truncated.rows.iter().map(|r| format!("{:.3e}", r.sup4.mean)).collect();
    (
        slope_ok && monotone && secs < 1200.0,
        format!(
            "slope {:.3} (E sup^4 {}); P(sup>0.1) {:?}; P(sup>0.5)/P(sup>1) {}; {secs:.0}s",
            truncated.slope,
            sup4.join(" "),
            exceed,
            tails.join(" ")
        ),
    )
}

fn wasserstein() -> Outcome {
    let m = pair_model(SingularPotential::coulomb(1).unwrap(), &[Mode::new(1.0, 1.0)]);
    let p = SimParams {
        dt: 0.05,
        ..SimParams::default()
    };
    let a = PhaseState::at_rest(&m, vec![-1.0, 1.0]).unwrap();
    let b = PhaseState::new(&m, vec![3.0, 6.0], vec![2.0, -1.0], vec![1.0, -1.0]).unwrap();
    let opts = WassersteinOptions {
        seed: 6,
        ..WassersteinOptions::default()
    };
    let r = wasserstein_decay(&m, &p, &a, &b, &opts).unwrap();
    let same = wasserstein_decay(
        &m,
        &p,
        &a,
        &a,
        &WassersteinOptions {
            coupled: true,
            ..opts.clone()
        },
    )
    .unwrap();
    let zero = same.distances.iter().all(|&d| d == 0.0);
    (
        r.rate > 0.0 && r.r_squared >= 0.9 && zero,
        format!(
            "rate {:.3} R^2 {:.3} over {} points, plateau {:.3e}; identical ensembles zero: {zero}",
            r.rate, r.r_squared, r.fit_points, r.plateau
        ),
    )
}

fn lemmas() -> Outcome {
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut eq_dev = 0.0_f64;
    for n in [2, 3, 5] {
        for d in [1, 2, 3] {
            let configs = random_configurations(7 + (n * 10 + d) as u64, n, d, 10_000);
            for s in [0.0, 0.5, 1.0, 2.0, 6.0] {
                let mut reps = vec![
                    lemma_a1_check(&configs, d, s).unwrap(),
                    lemma_a2_check(&configs, d, s, false).unwrap(),
                ];
                if s <= 1.0 {
                    reps.push(lemma_a2_check(&configs, d, s, true).unwrap());
                }
                for r in reps {
                    violations += r.violations;
                    if n == 2 {
                        eq_dev = eq_dev.max(r.min_rel_slack.abs());
                    } else {
                        worst = worst.min(r.min_rel_slack);
                    }
                }
            }
        }
    }
    (
        violations == 0 && eq_dev <= 1e-12,
        format!("violations {violations}; min rel slack (N>2) {worst:.3e}; N=2 deviation from equality {eq_dev:.1e}"),
    )
}

fn hygiene() -> Outcome {
    let fd = |f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64| -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let (mut p, mut q) = (x.to_vec(), x.to_vec());
                p[k] += h;
                q[k] -= h;
                (f(&p) - f(&q)) / (2.0 * h)
            })
            .collect()
    };
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
    let mut rng_state = 0x1234_5678_u64;
    let mut unif = move || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
    };
    let singular = [
        SingularPotential::lennard_jones(1.0).unwrap(),
        SingularPotential::coulomb(1).unwrap(),
        SingularPotential::coulomb(2).unwrap(),
        SingularPotential::coulomb(3).unwrap(),
        SingularPotential::riesz(2.0, 1.0).unwrap(),
        SingularPotential::log(1.0).unwrap(),
    ];
    let confining = [
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        ConfiningPotential::even_polynomial(vec![0.3, -0.2, 0.25], 2.0).unwrap(),
    ];
    let mut fd_fail = 0;
    let mut checked = 0;
    for _ in 0..100 {
        let r = [unif(), unif(), unif()];
        if r.iter().map(|c| c * c).sum::<f64>().sqrt() < 0.3 {
            continue;
        }
        for g in &singular {
            let grad = g.grad(&r).unwrap();
            let num = fd(&|y| g.value(y).unwrap(), &r, 1e-6);
            fd_fail += grad.iter().zip(&num).filter(|(a, b)| !close(**a, **b, 1e-5)).count();
            let hess = g.hess(&r).unwrap();
            for k in 0..3 {
                let col = fd(&|y| g.grad(y).unwrap()[k], &r, 1e-5);
                fd_fail += (0..3).filter(|&j| !close(hess[3 * k + j], col[j], 1e-3)).count();
            }
            checked += 1;
        }
        for u in &confining {
            let num = fd(&|y| u.value(y), &r, 1e-6);
            fd_fail += u.grad(&r).iter().zip(&num).filter(|(a, b)| !close(**a, **b, 1e-5)).count();
            let hess = u.hess(&r);
            for k in 0..3 {
                let col = fd(&|y| u.grad(y)[k], &r, 1e-5);
                fd_fail += (0..3).filter(|&j| !close(hess[3 * k + j], col[j], 1e-3)).count();
            }
            checked += 1;
        }
    }

    let single = Model::new(
        1,
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        None,
        KernelSpec::uniform(1, &[Mode::new(1.0, 1.0)]).unwrap(),
    )
    .unwrap();
    let s0 = PhaseState::new(&single, vec![1.0], vec![0.5], vec![0.3]).unwrap();
    let err = |dt: f64, seed: u64| {
        let p = SimParams {
            dt,
            seed,
            ..SimParams::default()
        };
        let noise = BrownianPath::new(seed, 0, single.channels(), 0.04);
        let tr = simulate_gle(&single, &s0, &p, &noise, None).unwrap();
        let rec = duhamel_reconstruct_z(&tr, &single, &noise, 0, 0, 1.0).unwrap()[0];
        (rec - tr.states.last().unwrap().z[0]).abs()
    };
    let coarse: f64 = (0..40).map(|s| err(0.04, s)).sum();
    let fine: f64 = (0..40).map(|s| err(0.02, s)).sum();
    let ratio = coarse / fine;

    // a strong log repulsion with a coarse step forces the guard to act
    let m = pair_model(SingularPotential::log(1.0).unwrap(), &[Mode::new(1.0, 1.0)]);
    let delta_min = 0.05;
    let mut min_accepted = f64::INFINITY;
    let mut rejected = 0;
    for seed in 0..20 {
        let p = SimParams {
            dt: 0.05,
            horizon: 20.0,
            seed,
            delta_min,
            ..SimParams::default()
        };
        let noise = default_noise(&m, &p, 0);
        let s = PhaseState::at_rest(&m, vec![-0.2, 0.2]).unwrap();
        match simulate_gle(&m, &s, &p, &noise, None) {
            Ok(tr) => {
                min_accepted = min_accepted.min(tr.stats.min_pair_distance);
                rejected += tr.stats.rejected;
            }
            // a path that cannot stay above delta_min is refused, never accepted
            Err(_) => rejected += 1,
        }
    }
    (
        fd_fail == 0 && ratio >= 2.0 && min_accepted >= delta_min,
        format!(
            "FD mismatches {fd_fail} over {checked} functions; Duhamel error ratio {ratio:.2}; \
             min accepted pair distance {min_accepted:.3e} >= {delta_min} with {rejected} rejections"
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("fluctuation-dissipation", fluctuation_dissipation),
        ("gibbs marginals", gibbs),
        ("generator identity", generator),
        ("drift certification", drift),
        ("small-mass rate", small_mass),
        ("wasserstein contraction", wasserstein),
        ("pair inequalities", lemmas),
        ("numerics hygiene", hygiene),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(k + 1)) {
            continue;
        }
        let (pass, detail) = run();
        failed += usize::from(!pass);
        println!("{} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, k + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
