use glesim_core::dynamics::PhaseState;
use glesim_core::kernels::{KernelSpec, Mode};
use glesim_core::lyapunov::*;
use glesim_core::model::Model;
use glesim_core::noise::substream;
use glesim_core::potentials::{ConfiningPotential, SingularPotential};
use glesim_core::vector::dot;
use rand::Rng;

fn model(n: usize, d: usize, g: Option<SingularPotential>, modes: &[Mode]) -> Model {
    Model::new(
        d,
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        g,
        KernelSpec::uniform(n, modes).unwrap(),
    )
    .unwrap()
}

fn two_modes() -> Vec<Mode> {
    vec![Mode::new(1.0, 1.0), Mode::new(0.5, 2.5)]
}

/// Random state whose pairs stay at least `gap` apart.
fn random_state(m: &Model, seed: u64, k: u64, gap: f64) -> PhaseState {
    let mut rng = substream(seed, 77, k);
    loop {
        let x: Vec<f64> = (0..m.x_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        if m.particles() > 1 && glesim_core::vector::min_pair_distance(&x, m.dim) < gap {
            continue;
        }
        let v = (0..m.x_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = (0..m.z_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        return PhaseState::new(m, x, v, z).unwrap();
    }
}

fn value(c: Candidate, s: &PhaseState, mass: f64, m: &Model, p: &LyapunovParams) -> f64 {
    evaluate(c, s, mass, m, p).unwrap().0
}

/// Central differences of the value against the supplied gradient and Laplacians.
fn check_derivatives(c: Candidate, s: &PhaseState, mass: f64, m: &Model, p: &LyapunovParams) {
    let (v0, input) = evaluate(c, s, mass, m, p).unwrap();
    let scale = 1.0 + v0.abs();
    let h = 1e-6;
    let shifted = |block: usize, idx: usize, dh: f64| {
        let mut t = s.clone();
        match block {
            0 => t.x[idx] += dh,
            1 => t.v[idx] += dh,
            _ => t.z[idx] += dh,
        }
        value(c, &t, mass, m, p)
    };
    for (block, grad) in [(0, &input.grad_x), (1, &input.grad_v), (2, &input.grad_z)] {
        for (idx, g) in grad.iter().enumerate() {
            let fd = (shifted(block, idx, h) - shifted(block, idx, -h)) / (2.0 * h);
            let tol = 1e-5 * g.abs().max(1e-3 * scale);
            assert!((fd - g).abs() <= tol, "{c:?} block {block} idx {idx}: fd {fd} vs {g}");
        }
    }
    // Laplacians per particle (v) and per mode (z)
    let h2 = 1e-4;
    let d = m.dim;
    let second = |block: usize, idx: usize| {
        (shifted(block, idx, h2) - 2.0 * v0 + shifted(block, idx, -h2)) / (h2 * h2)
    };
    for i in 0..m.particles() {
        let fd: f64 = (0..d).map(|k| second(1, i * d + k)).sum();
        let want = input.lap_v[i];
        assert!((fd - want).abs() <= 1e-3 * want.abs().max(1e-2 * scale), "{c:?} lap_v[{i}]: {fd} vs {want}");
    }
    let mut mode = 0;
    for i in 0..m.particles() {
        let off = m.kernels.z_offset(i, d);
        for l in 0..m.kernels.mode_count(i) {
            let fd: f64 = (0..d).map(|k| second(2, off + l * d + k)).sum();
            let want = input.lap_z[mode];
            assert!((fd - want).abs() <= 1e-3 * want.abs().max(1e-2 * scale), "{c:?} lap_z[{mode}]: {fd} vs {want}");
            mode += 1;
        }
    }
}

#[test]
fn candidate_derivatives_match_finite_differences() {
    let p = LyapunovParams::new(0.1, 2.0, 0.5).unwrap();
    let multi = model(3, 2, Some(SingularPotential::coulomb(2).unwrap()), &two_modes());
    for k in 0..20 {
        let s = random_state(&multi, 1, k, 0.3);
        for c in [
            Candidate::Hamiltonian,
            Candidate::PositionVelocity,
            Candidate::VN1,
            Candidate::VN2,
        ] {
            check_derivatives(c, &s, 1.5, &multi, &p);
        }
    }
    let single = model(1, 3, Some(SingularPotential::riesz(2.5, 1.0).unwrap()), &two_modes());
    for k in 0..20 {
        let s = random_state(&single, 2, k, 0.0);
        if glesim_core::vector::norm(&s.x) < 0.3 {
            continue;
        }
        for c in [Candidate::V1, Candidate::V2] {
            check_derivatives(c, &s, 0.7, &single, &p);
        }
    }
}

#[test]
fn generator_is_linear() {
    let m = model(3, 2, Some(SingularPotential::log(1.0).unwrap()), &two_modes());
    let p = LyapunovParams::new(0.05, 3.0, 0.5).unwrap();
    for k in 0..50 {
        let s = random_state(&m, 3, k, 0.2);
        let (_, a) = evaluate(Candidate::VN1, &s, 1.0, &m, &p).unwrap();
        let (_, b) = evaluate(Candidate::VN2, &s, 1.0, &m, &p).unwrap();
        let (ca, cb) = (2.5, -0.75);
        let mut combo = GeneratorInput::zeros(&m);
        combo.add_scaled(ca, &a);
        combo.add_scaled(cb, &b);
        let la = generator_apply(&a, &s, 1.0, 0.8, &m).unwrap();
        let lb = generator_apply(&b, &s, 1.0, 0.8, &m).unwrap();
        let lc = generator_apply(&combo, &s, 1.0, 0.8, &m).unwrap();
        let scale = (ca * la).abs() + (cb * lb).abs();
        assert!((lc - ca * la - cb * lb).abs() <= 1e-12 * scale.max(1.0));
    }
}

#[test]
fn hamiltonian_generator_matches_closed_form() {
    let p = LyapunovParams::new(0.1, 2.0, 0.5).unwrap();
    for (n, d) in [(2, 1), (3, 2), (4, 3)] {
        let m = model(n, d, Some(SingularPotential::lennard_jones(1.0).unwrap()), &two_modes());
        for k in 0..1000 / 3 + 1 {
            let s = random_state(&m, 4, k as u64, 0.5);
            let (mass, gamma) = (0.3 + k as f64 % 3.0, (k % 4) as f64 * 0.5);
            let (_, input) = evaluate(Candidate::Hamiltonian, &s, mass, &m, &p).unwrap();
            let got = generator_apply(&input, &s, mass, gamma, &m).unwrap();
            let mut alpha_z = 0.0;
            let mut alpha_sum = 0.0;
            for i in 0..n {
                let off = m.kernels.z_offset(i, d);
                for (l, mode) in m.kernels.modes[i].iter().enumerate() {
                    let z = &s.z[off + l * d..off + (l + 1) * d];
                    alpha_z += mode.alpha * dot(z, z);
                    alpha_sum += mode.alpha;
                }
            }
            let terms = [
                -gamma * dot(&s.v, &s.v),
                -alpha_z,
                gamma * (n * d) as f64 / mass,
                d as f64 * alpha_sum,
            ];
            let want: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            assert!((got - want).abs() <= 1e-10 * scale, "{got} vs {want}");
        }
    }
}

#[test]
fn position_velocity_generator_by_hand() {
    let m = model(3, 2, Some(SingularPotential::coulomb(2).unwrap()), &two_modes());
    let p = LyapunovParams::new(0.1, 2.0, 0.5).unwrap();
    let (mass, gamma) = (1.7, 0.6);
    for k in 0..100 {
        let s = random_state(&m, 5, k, 0.2);
        let (_, input) = evaluate(Candidate::PositionVelocity, &s, mass, &m, &p).unwrap();
        let got = generator_apply(&input, &s, mass, gamma, &m).unwrap();
        // |v|^2 + (1/m) <x, -gamma v - grad U - sum grad G + sum lambda z>
        let mut grad = vec![0.0; m.x_len()];
        m.potential_gradient(&s.x, None, &mut grad).unwrap();
        let mut coupling = vec![0.0; m.x_len()];
        for i in 0..m.particles() {
            let off = m.kernels.z_offset(i, 2);
            for (l, mode) in m.kernels.modes[i].iter().enumerate() {
                for c in 0..2 {
                    coupling[i * 2 + c] += mode.lambda * s.z[off + l * 2 + c];
                }
            }
        }
        let want = dot(&s.v, &s.v)
            + (-gamma * dot(&s.x, &s.v) - dot(&s.x, &grad) + dot(&s.x, &coupling)) / mass;
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

#[test]
fn vn1_dominates_half_hamiltonian() {
    // |eps m <x,v>| + |eps m sum <v_i, sum rhat>| <= m|v|^2/4 + 2 eps^2 m |x|^2 + 2 eps^2 m N (N-1)^2
    let (n, d, mass, eps) = (4, 2, 1.0, 0.1);
    let m = model(n, d, Some(SingularPotential::riesz(2.0, 1.0).unwrap()), &two_modes());
    let p = LyapunovParams::new(eps, 2.0, 0.5).unwrap();
    let c = 2.0 * eps * eps * mass * (n * (n - 1) * (n - 1)) as f64;
    let spec = ScanSpec::default();
    for k in 0..1000 {
        let s = scan_state(&m, &spec, k);
        let h = hamiltonian_n(&s, mass, &m).unwrap();
        let v = vn1_eval(&s, mass, &m, &p).unwrap();
        assert!(v >= 0.5 * h - c, "sample {k}: V = {v}, H = {h}");
    }
}

#[test]
fn vn1_drift_negative_far_out_at_rest() {
    let m = model(2, 1, Some(SingularPotential::coulomb(1).unwrap()), &[Mode::new(1.0, 1.0)]);
    let eps = 0.1;
    let p = LyapunovParams::new(eps, 2.0, 0.5).unwrap();
    // at v = z = 0: LV = (gamma N d / m + d sum alpha) - eps |x|^2 + O(|x|)
    let constant = 2.0 + 2.0;
    let radius = (constant / eps).sqrt();
    for r in [2.0 * radius, 5.0 * radius, 20.0 * radius] {
        let s = PhaseState::at_rest(&m, vec![-r, r]).unwrap();
        let (_, lv) = apply_to_candidate(Candidate::VN1, &s, 1.0, 1.0, &m, &p).unwrap();
        assert!(lv < 0.0, "r = {r}: LV = {lv}");
    }
}

#[test]
fn hamiltonian_alone_is_not_a_lyapunov_function() {
    let m = model(2, 1, Some(SingularPotential::coulomb(1).unwrap()), &[Mode::new(1.0, 1.0)]);
    let p = LyapunovParams::new(0.0, 2.0, 0.5).unwrap();
    let at = |r: f64| {
        let s = PhaseState::at_rest(&m, vec![-r, r]).unwrap();
        apply_to_candidate(Candidate::Hamiltonian, &s, 1.0, 1.0, &m, &p).unwrap()
    };
    for c in [1e-3, 1e-1] {
        let d = (1..=10).map(|k| at(0.1 * k as f64)).map(|(h, lh)| lh + c * h).fold(f64::MIN, f64::max);
        let (h, lh) = at(1e3);
        assert!(lh > 0.0 && lh + c * h > d);
    }
}

#[test]
fn radicand_must_be_positive() {
    // a negative confining shift can push Q below zero
    let m = Model::new(
        1,
        ConfiningPotential::quadratic(0.5, -10.0).unwrap(),
        None,
        KernelSpec::uniform(2, &[Mode::new(1.0, 1.0)]).unwrap(),
    )
    .unwrap();
    let p = LyapunovParams::new(0.1, 1.5, 0.5).unwrap();
    let s = PhaseState::at_rest(&m, vec![-0.1, 0.1]).unwrap();
    assert!(matches!(
        vn2_eval(&s, 1.0, &m, &p),
        Err(glesim_core::Error::NonPositiveRadicand(_))
    ));
}

#[test]
fn drift_scan_is_deterministic_and_serializes() {
    let m = model(2, 1, Some(SingularPotential::coulomb(1).unwrap()), &[Mode::new(1.0, 1.0)]);
    let spec = ScanSpec {
        samples: 600,
        ..ScanSpec::default()
    };
    let a = drift_scan(Candidate::VN1, &m, 1.0, 1.0, &spec, 0.5).unwrap();
    let b = drift_scan(
        Candidate::VN1,
        &m,
        1.0,
        1.0,
        &ScanSpec {
            execution: glesim_core::Execution::Sequential,
            ..spec.clone()
        },
        0.5,
    )
    .unwrap();
    assert_eq!(a.c_fit, b.c_fit);
    assert_eq!(a.d_fit, b.d_fit);
    let json = serde_json::to_value(&a).unwrap();
    for key in ["candidate", "params", "n_samples", "c_fit", "D_fit", "violations"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
