mod common;

use rcmdp::bench::{machine_replacement_instance, machine_replacement_uncertainty, table1_protocol};
use rcmdp::conic::solve_conic;
use rcmdp::model::{evaluate_policy, CostRef, StationaryPolicy};
use rcmdp::oracle::inner_max_bruteforce;
use rcmdp::robust::dual::dualize_inner;
use rcmdp::robust::inner::{build_inner_socp, dual_residuals, solve_inner, worst_case_costs, INNER_TOL};
use rcmdp::robust::{Form, RobustInstance};
use rcmdp::synthetic::random_instance;
use rcmdp::uncertainty::{check_membership, UncertaintySet};

fn random(seed: u64) -> (RobustInstance, StationaryPolicy) {
    let (m, u, f) = random_instance(&common::suite_spec(seed), seed).unwrap();
    (RobustInstance::new(m, u, Some(Form::Standard)).unwrap(), f)
}

#[test]
fn socp_value_matches_bruteforce_oracle() {
    for seed in 0..6 {
        let (inst, f) = random(seed);
        for cost in inst.model.cost_refs() {
            let socp = solve_inner(&inst, &f, cost, Form::Standard).unwrap();
            let oracle = inner_max_bruteforce(&inst.model, &inst.uset, &f, cost, 12, seed).unwrap();
            assert!(
                oracle.value <= socp.value + 1e-6,
                "seed {seed}: oracle {} above socp {}",
                oracle.value,
                socp.value
            );
            assert!(
                (socp.value - oracle.value).abs() <= 1e-4 * (1.0 + socp.value.abs()),
                "seed {seed} {cost:?}: socp {} oracle {}",
                socp.value,
                oracle.value
            );
        }
    }
}

#[test]
fn degenerate_set_reproduces_nominal_evaluation() {
    let (inst, f) = random(4);
    let zero = RobustInstance::new(inst.model.clone(), UncertaintySet::zero(&inst.model), None).unwrap();
    let nominal = evaluate_policy(&zero.model, &f, &zero.model.p_bar).unwrap();
    let wc = worst_case_costs(&zero, &f).unwrap();
    assert!((wc.objective - nominal.value(CostRef::Objective)).abs() < 1e-7);
    for (k, d) in wc.constraints.iter().enumerate() {
        assert!((d - nominal.value(CostRef::Constraint(k))).abs() < 1e-7);
    }
    for u in &wc.maximizers {
        assert!(u.amax() < 1e-7);
    }
}

#[test]
fn recovered_deviation_reproduces_the_value() {
    for seed in 10..16 {
        let (inst, f) = random(seed);
        let wc = worst_case_costs(&inst, &f).unwrap();
        for (i, cost) in inst.model.cost_refs().into_iter().enumerate() {
            let u = &wc.maximizers[i];
            assert!(check_membership(&inst.model, &inst.uset, u, 1e-6).unwrap().member);
            let kernel = inst.model.kernel_with(u).unwrap();
            let direct = evaluate_policy(&inst.model, &f, &kernel).unwrap().value(cost);
            assert!(
                (direct - wc.value(cost)).abs() <= 1e-6 * (1.0 + direct.abs()),
                "seed {seed}: {direct} vs {}",
                wc.value(cost)
            );
        }
    }
}

#[test]
fn hand_built_dual_closes_the_gap() {
    for seed in 20..26 {
        let (inst, f) = random(seed);
        let slack = inst.assumptions.min_slack().unwrap_or(f64::INFINITY);
        for cost in inst.model.cost_refs() {
            let socp = build_inner_socp(&inst, &f, cost, Form::Standard).unwrap();
            let primal = solve_conic(&socp.program, INNER_TOL).unwrap();
            let dual = dualize_inner(&inst, &socp).unwrap();
            let dsol = solve_conic(&dual.program, INNER_TOL).unwrap();
            assert!(dsol.is_optimal());
            // Weak duality always; equality under strict feasibility.
            assert!(dsol.primal_objective >= primal.primal_objective - 1e-6);
            if slack >= 1e-6 {
                assert!(
                    (dsol.primal_objective - primal.primal_objective).abs()
                        <= 1e-6 * (1.0 + primal.primal_objective.abs()),
                    "seed {seed}: dual {} primal {}",
                    dsol.primal_objective,
                    primal.primal_objective
                );
            }
            let cert = dual.certificate(&dsol).unwrap();
            let (r_state, r_coord, r_cone) = dual_residuals(&inst, &f, &cert).unwrap();
            assert!(
                r_state <= 1e-6 && r_coord <= 1e-6 && r_cone <= 1e-6,
                "{r_state} {r_coord} {r_cone}"
            );
        }
    }
}

#[test]
fn extracted_multipliers_satisfy_stationarity_and_cone_membership() {
    for seed in 30..36 {
        let (inst, f) = random(seed);
        let wc = worst_case_costs(&inst, &f).unwrap();
        for cert in &wc.certificates {
            let (r_state, r_coord, _) = dual_residuals(&inst, &f, cert).unwrap();
            assert!(r_state <= 1e-6 && r_coord <= 1e-6, "seed {seed}: {r_state} {r_coord}");
            for s in 0..inst.model.n_states() {
                assert!(cert.beta[s].iter().all(|&b| b >= -1e-8));
                assert!(cert.eta[s] >= -1e-8);
                match (&inst.uset.blocks[s].soc, cert.theta[s], &cert.mu[s]) {
                    (Some(_), Some(theta), Some(mu)) => {
                        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
                        assert!(norm <= theta + 1e-8, "state {s}: |mu| {norm} > theta {theta}");
                    }
                    (None, None, None) => {}
                    _ => panic!("cone multipliers do not match the block at state {s}"),
                }
            }
        }
    }
}

#[test]
fn pmin_form_agrees_with_standard_form_on_positive_gamma() {
    for seed in 40..44 {
        let (inst, f) = random(seed);
        if !inst.assumptions.a3 {
            continue;
        }
        let a = solve_inner(&inst, &f, CostRef::Objective, Form::Standard).unwrap();
        let b = solve_inner(&inst, &f, CostRef::Objective, Form::Pmin).unwrap();
        assert!(
            (a.value - b.value).abs() <= 1e-6 * (1.0 + a.value.abs()),
            "{} vs {}",
            a.value,
            b.value
        );
    }
}

fn table_instance(row: usize) -> (RobustInstance, StationaryPolicy) {
    let r = &table1_protocol()[row - 1];
    let m = machine_replacement_instance(&r.config).unwrap();
    let u = machine_replacement_uncertainty(&r.config, &m).unwrap();
    let repair = r.repair.unwrap();
    let f = StationaryPolicy::new(&m, repair.iter().map(|&p| vec![1.0 - p, p]).collect()).unwrap();
    (RobustInstance::new(m, u, None).unwrap(), f)
}

#[test]
fn reference_row_one_policy_has_the_reference_worst_case() {
    let (inst, f) = table_instance(1);
    assert_eq!(inst.form, Form::Pmin);
    let wc = worst_case_costs(&inst, &f).unwrap();
    assert!((wc.objective - 84.9511).abs() <= 1e-2, "{}", wc.objective);
    // The rounded probabilities sit on the constraint boundary.
    assert!((wc.constraints[0] - 170.0).abs() <= 1e-3, "{}", wc.constraints[0]);
}

#[test]
fn reference_sigma_001_policy_worst_case() {
    let (inst, f) = table_instance(2);
    let wc = worst_case_costs(&inst, &f).unwrap();
    // The reference optimum is 92.7133; its own rounded policy evaluates
    // slightly lower, which no valid optimum can exceed by more than rounding.
    assert!((wc.objective - 92.7133).abs() <= 92.7133 * 5e-4, "{}", wc.objective);
    assert!(wc.objective <= 92.7133 + 1e-2);
}
