mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcmdp::model::{evaluate_policy, policy_matrices, StationaryPolicy};
use rcmdp::occupation::{occupation_of_policy, recover_policy};
use rcmdp::oracle::sample_member;
use rcmdp::robust::{worst_case_costs, Form, RobustInstance};
use rcmdp::synthetic::{random_instance, random_policy, SyntheticSpec};

fn spec(n: usize, actions: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_states: n,
        max_actions: actions,
        ..SyntheticSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn policy_kernel_rows_sum_to_one(seed in 0u64..10_000, n in 2usize..6, a in 1usize..4) {
        let (m, u, f) = random_instance(&spec(n, a), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = m.kernel_with(&sample_member(&m, &u, 20, &mut rng)).unwrap();
        let pm = policy_matrices(&m, &f, &kernel).unwrap();
        for s in 0..n {
            prop_assert!((pm.p_f.row(s).sum() - 1.0).abs() < 1e-9);
            prop_assert!(pm.p_f.row(s).iter().all(|&v| v >= -1e-9));
        }
    }

    #[test]
    fn occupation_satisfies_the_flow_equations(seed in 0u64..10_000, n in 2usize..6, a in 1usize..4) {
        let (m, u, f) = random_instance(&spec(n, a), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let kernel = m.kernel_with(&sample_member(&m, &u, 20, &mut rng)).unwrap();
        let rho = occupation_of_policy(&m, &f, &kernel).unwrap();
        prop_assert!(rho.flow_residual(&m, &kernel) < 1e-10);
        prop_assert!((rho.rho.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let eval = evaluate_policy(&m, &f, &kernel).unwrap();
        prop_assert!((rho.value(&m.c) - eval.objective).abs() <= 1e-9 * (1.0 + eval.objective.abs()));
    }

    #[test]
    fn policy_survives_an_occupation_round_trip(seed in 0u64..10_000, n in 2usize..6, a in 1usize..4) {
        let (m, _, _) = random_instance(&spec(n, a), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_policy(&m, &mut rng).unwrap();
        let rho = occupation_of_policy(&m, &f, &m.p_bar).unwrap();
        let back = recover_policy(&m, &rho).unwrap();
        for s in 0..n {
            for a in 0..m.n_actions(s) {
                prop_assert!((back.prob(s, a) - f.prob(s, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn worst_case_grows_with_the_box(seed in 0u64..10_000, r1 in 0.0f64..0.3, extra in 0.0f64..0.3) {
        let (m, _, f) = random_instance(&spec(3, 2), seed).unwrap();
        let small = RobustInstance::new(m.clone(), common::scaled_boxes(&m, r1, None), Some(Form::Standard)).unwrap();
        let large = RobustInstance::new(m.clone(), common::scaled_boxes(&m, r1 + extra, None), Some(Form::Standard)).unwrap();
        let a = worst_case_costs(&small, &f).unwrap();
        let b = worst_case_costs(&large, &f).unwrap();
        prop_assert!(b.objective >= a.objective - 1e-7 * (1.0 + a.objective.abs()));
        let nominal = evaluate_policy(&m, &f, &m.p_bar).unwrap().objective;
        prop_assert!(a.objective >= nominal - 1e-7 * (1.0 + nominal.abs()));
    }

    #[test]
    fn uniform_policy_rows_are_uniform(n in 1usize..6, a in 1usize..5, seed in 0u64..100) {
        let (m, _, _) = random_instance(&spec(n, a), seed).unwrap();
        let f = StationaryPolicy::uniform(&m);
        for s in 0..n {
            let k = m.n_actions(s) as f64;
            prop_assert!(f.rows()[s].iter().all(|&p| (p - 1.0 / k).abs() < 1e-15));
        }
    }
}
