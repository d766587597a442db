use glesim_core::kernels::*;
use glesim_core::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn modes() -> impl Strategy<Value = Vec<Mode>> {
    prop::collection::vec((0.1..3.0f64, 0.1..5.0f64), 1..4)
        .prop_map(|v| v.into_iter().map(|(l, a)| Mode::new(l, a)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // forward differences of a completely monotone function alternate in sign
    #[test]
    fn kernel_differences_alternate(m in modes(), h in 0.01..0.5f64) {
        let spec = KernelSpec::uniform(1, &m).unwrap();
        let vals: Vec<f64> = (0..40).map(|n| kernel_eval(&spec, 0, n as f64 * h).unwrap()).collect();
        let mut diff = vals;
        for order in 1..=4 {
            diff = diff.windows(2).map(|w| w[1] - w[0]).collect();
            let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert!(diff.iter().all(|&d| sign * d >= -1e-12), "order {order}");
        }
    }

    #[test]
    fn kernel_at_zero_is_the_sum_of_squared_couplings(m in modes()) {
        let spec = KernelSpec::uniform(2, &m).unwrap();
        let want: f64 = m.iter().map(|x| x.lambda * x.lambda).sum();
        prop_assert!((spec.eval(1, 0.0).unwrap() - want).abs() <= 1e-14 * want);
    }
}

#[test]
fn long_exact_ou_chain_stays_standard() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let mut z: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
    for _ in 0..50 {
        for zi in z.iter_mut() {
            *zi = ou_exact_step(*zi, 0.8, 0.3, rng.sample(StandardNormal));
        }
    }
    assert!(chi_square_standard_normal(&z, 25).p_value > 0.01);
}

#[test]
fn fluctuation_check_is_independent_of_scheduling() {
    let spec = KernelSpec::uniform(1, &[Mode::new(1.0, 1.0), Mode::new(2.0, 3.0)]).unwrap();
    let opts = FluctuationOptions {
        lags: vec![0.0, 0.25, 0.75],
        samples: 300,
        window: 20.0,
        seed: 4,
        execution: Execution::Parallel,
    };
    let a = fluctuation_dissipation_check(&spec, 0, &opts).unwrap();
    let b = fluctuation_dissipation_check(
        &spec,
        0,
        &FluctuationOptions {
            execution: Execution::Sequential,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(fluctuation_dissipation_check(
        &spec,
        0,
        &FluctuationOptions {
            window: 0.5,
            ..opts
        }
    )
    .is_err());
}
