mod common;

use rcmdp::bench::{machine_replacement_instance, machine_replacement_uncertainty, MachineReplacementConfig, SetBlock};
use rcmdp::model::StationaryPolicy;
use rcmdp::occupation::solve_nominal;
use rcmdp::robust::{
    certify_solution, local_search_incumbent, solve_robust_global, worst_case_costs, Budget, Form, RobustInstance,
    SolveStatus,
};
use rcmdp::synthetic::random_instance;
use rcmdp::uncertainty::UncertaintySet;

fn budget() -> Budget {
    Budget {
        time_limit: Some(120.0),
        ..Budget::default()
    }
}

/// Two states with two actions each, so policies form a square.
fn square(xi: Option<f64>) -> RobustInstance {
    let mut m = common::model(
        &[2, 2],
        0.8,
        &[0.6, 0.4],
        &[&[0.8, 0.2], &[0.3, 0.7], &[0.4, 0.6], &[0.9, 0.1]],
        &[1.0, 4.0, 6.0, 2.0],
        &[&[5.0, 1.0, 4.0, 1.5]],
        &[100.0],
    );
    let u = common::scaled_boxes(&m, 0.25, Some(0.15));
    let probe = RobustInstance::new(m.clone(), u.clone(), Some(Form::Standard)).unwrap();
    m.xi = vec![match xi {
        Some(v) => v,
        None => {
            // Halfway between the best and worst deterministic policies.
            let ds: Vec<f64> = [[0, 0], [0, 1], [1, 0], [1, 1]]
                .iter()
                .map(|c| {
                    let f = StationaryPolicy::deterministic(&probe.model, c).unwrap();
                    worst_case_costs(&probe, &f).unwrap().constraints[0]
                })
                .collect();
            let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    }];
    RobustInstance::new(m, u, Some(Form::Standard)).unwrap()
}

fn grid(p: f64, q: f64, inst: &RobustInstance) -> Option<f64> {
    let f = StationaryPolicy::new(&inst.model, vec![vec![1.0 - p, p], vec![1.0 - q, q]]).unwrap();
    let wc = worst_case_costs(inst, &f).unwrap();
    wc.is_feasible(&inst.model.xi, 1e-9).then_some(wc.objective)
}

#[test]
fn global_bounds_bracket_a_policy_grid() {
    let inst = square(None);
    let report = solve_robust_global(&inst, &budget()).unwrap();
    assert_eq!(report.status, SolveStatus::Optimal);
    let steps = 30;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            if let Some(v) = grid(i as f64 / steps as f64, j as f64 / steps as f64, &inst) {
                best = best.min(v);
            }
        }
    }
    assert!(best.is_finite());
    assert!(
        report.lower_bound <= best + 1e-6,
        "lb {} above grid {best}",
        report.lower_bound
    );
    assert!(
        report.upper_bound <= best + 1e-6,
        "ub {} above grid {best}",
        report.upper_bound
    );
    assert!(report.upper_bound - report.lower_bound <= 1e-4 * report.upper_bound.abs() + 1e-9);
}

#[test]
fn random_instances_solve_and_certify() {
    for seed in 0..5 {
        let (m, u, _) = random_instance(&common::suite_spec(seed), seed).unwrap();
        let inst = RobustInstance::new(m, u, None).unwrap();
        let report = solve_robust_global(&inst, &budget()).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal, "seed {seed}");
        let scale = 1e-6 * (1.0 + report.upper_bound.abs());
        assert!(report.lower_bound <= report.upper_bound + scale);
        let log = certify_solution(&inst, &report).unwrap();
        assert!((log.objective.unwrap() - report.upper_bound).abs() <= 1e-8 * (1.0 + report.upper_bound.abs()));
        assert!(log.constraints.iter().zip(&log.xi).all(|(d, x)| *d <= x + 1e-6));
        assert!(log.max_residual <= 1e-6, "seed {seed}: residual {}", log.max_residual);
        assert_eq!(log.certificates.len(), 1 + inst.model.n_constraints());

        let start = solve_nominal(&inst.model).unwrap().policy.unwrap();
        let local = local_search_incumbent(&inst, &start, 20).unwrap();
        if local.feasible {
            assert!(local.upper_bound >= report.lower_bound - 1e-6);
        }
        assert!(local.history.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn infeasible_bound_is_proved_by_phase_one() {
    let inst = square(Some(0.5));
    let report = solve_robust_global(&inst, &budget()).unwrap();
    assert_eq!(report.status, SolveStatus::Infeasible);
    let p1 = report.phase1.as_ref().expect("phase one ran");
    assert!(p1.exhausted);
    assert!(p1.lower_bound > 1e-6);
    assert!(report.policy.is_none());
    let log = certify_solution(&inst, &report).unwrap();
    assert!(log.certificates.is_empty());
    assert!(!log.notes.is_empty());
}

#[test]
fn degenerate_set_matches_the_nominal_lp_on_both_routes() {
    for seed in 0..4 {
        let (m, _, _) = random_instance(&common::suite_spec(seed), seed).unwrap();
        let inst = RobustInstance::new(m.clone(), UncertaintySet::zero(&m), Some(Form::Standard)).unwrap();
        let nominal = solve_nominal(&m).unwrap();
        let short = solve_robust_global(&inst, &budget()).unwrap();
        assert_eq!(short.nodes, 1);
        assert!((short.upper_bound - nominal.value).abs() <= 1e-5 * (1.0 + nominal.value.abs()));
        let tree = solve_robust_global(
            &inst,
            &Budget {
                nominal_shortcut: false,
                ..budget()
            },
        )
        .unwrap();
        assert_eq!(tree.status, SolveStatus::Optimal);
        assert!((tree.upper_bound - nominal.value).abs() <= 1e-5 * (1.0 + nominal.value.abs()));
    }
}

#[test]
fn traced_global_bound_never_decreases() {
    let inst = square(None);
    let report = solve_robust_global(
        &inst,
        &Budget {
            trace: true,
            gap_target: 1e-7,
            ..budget()
        },
    )
    .unwrap();
    assert!(!report.trace.is_empty());
    for w in report.trace.windows(2) {
        assert!(w[1].global_lb >= w[0].global_lb - 1e-12);
        assert!(w[1].ub <= w[0].ub + 1e-12);
    }
    let csv = report.trace_csv();
    assert_eq!(csv.lines().count(), report.trace.len() + 1);
}

#[test]
fn local_search_on_a_point_set_lands_on_the_nominal_optimum() {
    let (m, _, _) = random_instance(&common::suite_spec(1), 1).unwrap();
    let inst = RobustInstance::new(m.clone(), UncertaintySet::zero(&m), Some(Form::Standard)).unwrap();
    let nominal = solve_nominal(&m).unwrap();
    let res = local_search_incumbent(&inst, &StationaryPolicy::uniform(&m), 20).unwrap();
    assert!(res.feasible);
    assert!((res.history[0] - nominal.value).abs() <= 1e-6 * (1.0 + nominal.value.abs()));
}

#[test]
fn local_search_from_the_nominal_optimum_on_sigma_001() {
    let cfg = MachineReplacementConfig::new(7, 0.01, None).with_blocks(&[
        SetBlock::MinorRepair,
        SetBlock::Ageing,
        SetBlock::Scaled,
        SetBlock::SumZero,
    ]);
    let m = machine_replacement_instance(&cfg).unwrap();
    let u = machine_replacement_uncertainty(&cfg, &m).unwrap();
    let inst = RobustInstance::new(m.clone(), u, None).unwrap();
    let start = solve_nominal(&m).unwrap().policy.unwrap();
    let res = local_search_incumbent(&inst, &start, 20).unwrap();
    assert!(res.feasible);
    assert!(res.rounds <= 20);
    assert!(res.upper_bound <= 92.72, "{}", res.upper_bound);
}
