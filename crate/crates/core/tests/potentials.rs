use glesim_core::potentials::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn singular_kinds() -> Vec<SingularPotential> {
    vec![
        SingularPotential::lennard_jones(1.0).unwrap(),
        SingularPotential::coulomb(1).unwrap(),
        SingularPotential::coulomb(2).unwrap(),
        SingularPotential::coulomb(3).unwrap(),
        SingularPotential::riesz(2.5, 0.7).unwrap(),
        SingularPotential::log(1.0).unwrap(),
    ]
}

fn confining_kinds() -> Vec<ConfiningPotential> {
    vec![
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        ConfiningPotential::even_polynomial(vec![0.3, -0.2, 0.25], 2.0).unwrap(),
    ]
}

fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let (mut p, mut m) = (x.to_vec(), x.to_vec());
            p[k] += h;
            m[k] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

// Gaussian-like random rotation from the QR factor of a random matrix.
fn rotation(d: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(d, d, &entries[..d * d]);
    a.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn singular_derivatives_match_finite_differences(r in point(3)) {
        prop_assume!(r.iter().map(|c| c * c).sum::<f64>().sqrt() > 0.3);
        for g in singular_kinds() {
            let f = |y: &[f64]| g.value(y).unwrap();
            let grad = g.grad(&r).unwrap();
            for (a, b) in grad.iter().zip(fd_grad(&f, &r, 1e-6)) {
                prop_assert!(rel_close(*a, b, 1e-5), "{:?} grad {a} vs {b}", g.kind);
            }
            let hess = g.hess(&r).unwrap();
            for k in 0..3 {
                let col = fd_grad(&|y: &[f64]| g.grad(y).unwrap()[k], &r, 1e-5);
                for j in 0..3 {
                    prop_assert!(rel_close(hess[k * 3 + j], col[j], 1e-3));
                }
            }
            let lap = g.laplacian(&r).unwrap();
            prop_assert!(rel_close(lap, hess[0] + hess[4] + hess[8], 1e-10));
        }
    }

    #[test]
    fn confining_derivatives_match_finite_differences(x in point(2)) {
        for u in confining_kinds() {
            let f = |y: &[f64]| u.value(y);
            for (a, b) in u.grad(&x).iter().zip(fd_grad(&f, &x, 1e-6)) {
                prop_assert!(rel_close(*a, b, 1e-5));
            }
            let hess = u.hess(&x);
            for k in 0..2 {
                let col = fd_grad(&|y: &[f64]| u.grad(y)[k], &x, 1e-5);
                for j in 0..2 {
                    prop_assert!(rel_close(hess[k * 2 + j], col[j], 1e-3));
                }
            }
        }
    }

    #[test]
    fn values_are_rotation_invariant(r in point(3), q in prop::collection::vec(-1.0..1.0f64, 9)) {
        prop_assume!(r.iter().map(|c| c * c).sum::<f64>().sqrt() > 0.1);
        let rot = rotation(3, &q);
        let rr: Vec<f64> = (rot * DVector::from_column_slice(&r)).iter().copied().collect();
        for g in singular_kinds() {
            let (a, b) = (g.value(&r).unwrap(), g.value(&rr).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        for u in confining_kinds() {
            let (a, b) = (u.value(&r), u.value(&rr));
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn total_potential_is_nonnegative(xs in prop::collection::vec(-3.0..3.0f64, 8)) {
        // four particles in d = 2
        let lj = SingularPotential::lennard_jones(1.0).unwrap();
        let coul = SingularPotential::coulomb(3).unwrap();
        for u in confining_kinds() {
            for g in [&lj, &coul] {
                let mut total = 0.0;
                let mut ok = true;
                for i in 0..4 {
                    total += u.value(&xs[2 * i..2 * i + 2]);
                    for j in i + 1..4 {
                        let r = [xs[2 * i] - xs[2 * j], xs[2 * i + 1] - xs[2 * j + 1]];
                        match g.value(&r) {
                            Ok(v) => total += v,
                            Err(_) => ok = false,
                        }
                    }
                }
                prop_assume!(ok);
                prop_assert!(total >= 0.0);
            }
        }
    }

    #[test]
    fn pair_forces_balance(xs in prop::collection::vec(-2.0..2.0f64, 9)) {
        let g = SingularPotential::riesz(3.0, 1.0).unwrap();
        let (n, d) = (3, 3);
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let r: f64 = (0..d).map(|k| (xs[i * d + k] - xs[j * d + k]).powi(2)).sum();
                min = min.min(r.sqrt());
            }
        }
        prop_assume!(min > 0.05);
        let mut net = vec![0.0; d];
        for i in 0..n {
            let f = pair_force_sum(&g, &xs, d, i).unwrap();
            let mut brute = vec![0.0; d];
            for j in (0..n).filter(|&j| j != i) {
                let r: Vec<f64> = (0..d).map(|k| xs[i * d + k] - xs[j * d + k]).collect();
                for (b, c) in brute.iter_mut().zip(g.grad(&r).unwrap()) {
                    *b += c;
                }
            }
            for k in 0..d {
                prop_assert!((f[k] - brute[k]).abs() <= 1e-9 * (1.0 + brute[k].abs()));
                net[k] += f[k];
            }
        }
        let scale: f64 = (0..n).map(|i| pair_force_sum(&g, &xs, d, i).unwrap().iter().map(|c| c.abs()).sum::<f64>()).sum();
        for c in net {
            prop_assert!(c.abs() <= 1e-12 * (1.0 + scale));
        }
    }
}

#[test]
fn singular_potentials_blow_up_at_contact() {
    for g in singular_kinds() {
        let near = g.value(&[1e-6, 0.0, 0.0]).unwrap();
        let far = g.value(&[1.0, 0.0, 0.0]).unwrap();
        assert!(near > far + 10.0, "{:?}: {near} vs {far}", g.kind);
    }
}

#[test]
fn default_constants_certify_on_a_log_grid() {
    let radii = log_grid(1e-3, 1e3, 400);
    let dirs: [&[f64]; 3] = [&[1.0], &[0.6, -0.8], &[1.0, 2.0, -2.0]];
    for u in confining_kinds() {
        for g in singular_kinds() {
            for dir in dirs {
                let v = certify_bounds(&u, Some(&g), dir, &radii);
                assert!(v.is_empty(), "{:?} along {dir:?}: {:?}", g.kind, v.first());
            }
        }
    }
    for g in singular_kinds() {
        let samples: Vec<Vec<f64>> = radii.iter().map(|&r| vec![0.0, r, 0.0]).collect();
        let report = verify_structure(&g, &samples).unwrap();
        assert!(report.violations.is_empty(), "{:?}: {}", g.kind, report.worst_margin);
    }
}

#[test]
fn violated_bound_is_reported() {
    let u = ConfiningPotential::quadratic(0.5, 1.0).unwrap();
    let g = SingularPotential::coulomb(3).unwrap();
    let mut c = g.constants;
    c.a1 = 1e-3;
    let weak = g.clone().with_constants(c);
    let v = certify_bounds(&u, Some(&weak), &[1.0, 0.0, 0.0], &log_grid(1e-2, 1e2, 50));
    assert!(v.iter().any(|b| b.what.contains("G")));
}
