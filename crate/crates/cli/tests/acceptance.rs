//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line, even when an earlier one fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use clap::Parser;
use rcmdp::bench::{
    machine_replacement_instance, machine_replacement_uncertainty, table1_protocol, GammaMode, MachineReplacementConfig,
};
use rcmdp::conic::solve_conic;
use rcmdp::model::StationaryPolicy;
use rcmdp::occupation::solve_nominal;
use rcmdp::oracle::{inner_max_bruteforce, nominal_lp_oracle};
use rcmdp::robust::dual::dualize_inner;
use rcmdp::robust::inner::{build_inner_socp, solve_inner, INNER_TOL};
use rcmdp::robust::{solve_robust_global, worst_case_costs, Budget, Form, RobustInstance, SolveStatus};
use rcmdp::synthetic::{random_instance, SyntheticSpec};
use rcmdp::UncertaintySet;
use rcmdp_cli::{run_sweep, run_table1_row, Cli, Command};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn suite_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_states: 2 + (seed % 3) as usize,
        max_actions: 2,
        ..SyntheticSpec::default()
    }
}

fn suite(count: u64) -> Vec<(RobustInstance, StationaryPolicy)> {
    (0..count)
        .map(|seed| {
            let (m, u, f) = random_instance(&suite_spec(seed), 1000 + seed).unwrap();
            (RobustInstance::new(m, u, Some(Form::Standard)).unwrap(), f)
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Row 1 of the seven-state table, default gap target.
fn a1() -> Outcome {
    let budget = Budget {
        time_limit: Some(600.0),
        ..Budget::default()
    };
    let o = run_table1_row(1, &budget).map_err(|e| e.to_string())?;
    let r = &o.report;
    let want = [0.7649, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let got: Vec<f64> = r
        .policy
        .as_ref()
        .map(|p| p.rows().iter().map(|row| row[1]).collect())
        .unwrap_or_default();
    let repair_err = if got.len() == 7 {
        got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    check(
        r.status == SolveStatus::Optimal
            && (r.upper_bound - 84.9511).abs() <= 1e-2
            && r.gap_percent <= 0.1
            && repair_err <= 2e-2,
        format!(
            "z {:.4} (want 84.9511 ± 1e-2), gap {:.4}% (≤ 0.1), repair max err {repair_err:.4} (≤ 2e-2), {:.1}s",
            r.upper_bound, r.gap_percent, r.wall_time
        ),
    )
}

/// Polyhedral rows compared to the reference value within 0.5%.
fn table_value(row: usize, want: f64) -> Outcome {
    let budget = Budget {
        time_limit: Some(1800.0),
        gap_target: 1e-3,
        ..Budget::default()
    };
    let o = run_table1_row(row, &budget).map_err(|e| e.to_string())?;
    let r = &o.report;
    let err = rel(r.upper_bound, want);
    check(
        r.policy.is_some() && err <= 5e-3 && r.gap_percent <= 1.0 && r.wall_time <= 1800.0,
        format!(
            "z {:.4} vs {want} rel err {:.4}% (≤ 0.5%), gap {:.4}% (≤ 1%), status {}, {:.1}s",
            r.upper_bound,
            err * 100.0,
            r.gap_percent,
            r.status,
            r.wall_time
        ),
    )
}

fn a4() -> Outcome {
    let budget = Budget {
        time_limit: Some(1800.0),
        ..Budget::default()
    };
    let o = run_table1_row(22, &budget).map_err(|e| e.to_string())?;
    let r = &o.report;
    let proof = r.phase1.as_ref().is_some_and(|p| p.exhausted && p.lower_bound > 0.0);
    check(
        r.status == SolveStatus::Infeasible && proof && r.policy.is_none(),
        format!(
            "status {}, phase-1 bound {:?}, {:.1}s",
            r.status,
            r.phase1.as_ref().map(|p| p.lower_bound),
            r.wall_time
        ),
    )
}

fn a5() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (seed, (inst, f)) in suite(20).into_iter().enumerate() {
        for cost in inst.model.cost_refs() {
            let socp = solve_inner(&inst, &f, cost, Form::Standard).map_err(|e| e.to_string())?;
            let oracle =
                inner_max_bruteforce(&inst.model, &inst.uset, &f, cost, 12, seed as u64).map_err(|e| e.to_string())?;
            worst = worst.max((socp.value - oracle.value).abs() / (1.0 + socp.value.abs()));
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs <= 120.0,
        format!("{cases} cases, max scaled diff {worst:.2e} (≤ 1e-4), {secs:.1}s (≤ 120)"),
    )
}

fn a6() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for (inst, f) in suite(20) {
        // Purely polyhedral blocks have no slack requirement.
        if inst.assumptions.min_slack().is_some_and(|s| s < 1e-6) {
            skipped += 1;
            continue;
        }
        for cost in inst.model.cost_refs() {
            let socp = build_inner_socp(&inst, &f, cost, Form::Standard).map_err(|e| e.to_string())?;
            let primal = solve_conic(&socp.program, INNER_TOL).map_err(|e| e.to_string())?;
            let dual = dualize_inner(&inst, &socp).map_err(|e| e.to_string())?;
            let dsol = solve_conic(&dual.program, INNER_TOL).map_err(|e| e.to_string())?;
            worst = worst.max((primal.primal_objective - dsol.primal_objective).abs());
            checked += 1;
        }
    }
    check(
        checked > 0 && worst <= 1e-6,
        format!(
            "{checked} cases checked, {skipped} instances below the slack threshold, max diff {worst:.2e} (≤ 1e-6)"
        ),
    )
}

fn a7() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (m, _, _) = random_instance(&suite_spec(seed), 2000 + seed).unwrap();
        let inst = RobustInstance::new(m.clone(), UncertaintySet::zero(&m), Some(Form::Standard)).unwrap();
        let lp = solve_nominal(&m).map_err(|e| e.to_string())?.value;
        let vertex = nominal_lp_oracle(&m).map_err(|e| e.to_string())?.value;
        let short = solve_robust_global(&inst, &Budget::default()).map_err(|e| e.to_string())?;
        let tree = solve_robust_global(
            &inst,
            &Budget {
                nominal_shortcut: false,
                ..Budget::default()
            },
        )
        .map_err(|e| e.to_string())?;
        for v in [short.upper_bound, tree.upper_bound, vertex] {
            worst = worst.max((v - lp).abs());
        }
    }
    check(
        worst <= 1e-5,
        format!("10 instances, shortcut and tree routes, max diff {worst:.2e} (≤ 1e-5)"),
    )
}

fn a8() -> Outcome {
    let sigmas = [0.01, 0.03, 0.05, 0.07, 0.1];
    let model = machine_replacement_instance(&MachineReplacementConfig::new(7, 0.0, None)).unwrap();
    let reference = table1_protocol()[0].repair.unwrap();
    let policies = vec![
        StationaryPolicy::uniform(&model),
        StationaryPolicy::new(&model, reference.iter().map(|&p| vec![1.0 - p, p]).collect()).unwrap(),
        StationaryPolicy::deterministic(&model, &[1; 7]).unwrap(),
    ];
    let mut worst_drop: f64 = 0.0;
    let mut evaluated = 0;
    for y in [None, Some(0.1)] {
        for f in &policies {
            let mut prev: Option<Vec<f64>> = None;
            for &sigma in &sigmas {
                let cfg = MachineReplacementConfig::new(7, sigma, y);
                let m = machine_replacement_instance(&cfg).unwrap();
                let u = machine_replacement_uncertainty(&cfg, &m).unwrap();
                let inst = RobustInstance::new(m, u, None).map_err(|e| e.to_string())?;
                let wc = worst_case_costs(&inst, f).map_err(|e| e.to_string())?;
                let cur: Vec<f64> = std::iter::once(wc.objective)
                    .chain(wc.constraints.iter().copied())
                    .collect();
                if let Some(p) = &prev {
                    for (a, b) in p.iter().zip(&cur) {
                        worst_drop = worst_drop.max(a - b);
                    }
                }
                prev = Some(cur);
                evaluated += 1;
            }
        }
    }
    check(
        worst_drop <= 1e-7,
        format!("{evaluated} evaluations over sigma {sigmas:?}, largest decrease {worst_drop:.2e} (≤ 1e-7)"),
    )
}

fn uniform_instance(xi: f64, form: Form) -> RobustInstance {
    let mut cfg = MachineReplacementConfig::new(7, 0.01, None);
    cfg.gamma = GammaMode::Uniform;
    cfg.xi1 = xi;
    let m = machine_replacement_instance(&cfg).unwrap();
    let u = machine_replacement_uncertainty(&cfg, &m).unwrap();
    RobustInstance::new(m, u, Some(form)).unwrap()
}

fn a9() -> Outcome {
    let budget = Budget {
        time_limit: Some(900.0),
        gap_target: 1e-5,
        ..Budget::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    // At the reference bound the uniform start cannot meet the constraint; a
    // looser bound where it binds gives a value to compare.
    for xi in [170.0, 220.0] {
        let std = solve_robust_global(&uniform_instance(xi, Form::Standard), &budget).map_err(|e| e.to_string())?;
        let pmin = solve_robust_global(&uniform_instance(xi, Form::Pmin), &budget).map_err(|e| e.to_string())?;
        let agree = match (std.status, pmin.status) {
            (SolveStatus::Infeasible, SolveStatus::Infeasible) => true,
            (SolveStatus::Optimal, SolveStatus::Optimal) => rel(std.upper_bound, pmin.upper_bound) <= 1e-4,
            _ => false,
        };
        ok &= agree;
        notes.push(format!(
            "xi {xi}: standard {} {:.4}, pmin {} {:.4}",
            std.status, std.upper_bound, pmin.status, pmin.upper_bound
        ));
    }
    check(ok, notes.join("; "))
}

fn a10() -> Outcome {
    let argv = [
        "rcmdp",
        "bounds-sweep",
        "--n",
        "10",
        "--sigmas",
        "0.01,0.05",
        "--ynorms",
        "none,0.1",
        "--time-limit",
        "60",
    ];
    let Command::BoundsSweep(args) = Cli::try_parse_from(argv).map_err(|e| e.to_string())?.command else {
        return Err("argument parsing picked the wrong command".into());
    };
    let cells = run_sweep(&args).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    for c in &cells {
        let r = &c.report;
        let ordered = r.lower_bound <= r.upper_bound + 1e-6 * (1.0 + r.upper_bound.abs());
        let mut certified = r.status == SolveStatus::Infeasible || c.certified;
        // Re-check the incumbent independently of the solver's own certificate.
        if let Some(f) = &r.policy {
            let mut cfg = MachineReplacementConfig::new(10, c.ctx.sigma.unwrap(), c.ctx.ynorm);
            cfg.alpha = c.ctx.alpha.unwrap();
            cfg.gamma = GammaMode::Uniform;
            cfg.cost_seed = args.seed;
            let m = machine_replacement_instance(&cfg).unwrap();
            let u = machine_replacement_uncertainty(&cfg, &m).unwrap();
            let inst = RobustInstance::new(m, u, None).map_err(|e| e.to_string())?;
            let wc = worst_case_costs(&inst, f).map_err(|e| e.to_string())?;
            certified &= wc.is_feasible(&inst.model.xi, 1e-6);
            certified &= (wc.objective - r.upper_bound).abs() <= 1e-6 * (1.0 + r.upper_bound.abs());
        } else if r.status != SolveStatus::Infeasible {
            certified = false;
        }
        if !(ordered && certified) {
            bad.push(format!("{:?}", c.ctx));
        }
    }
    check(
        bad.is_empty() && !cells.is_empty(),
        format!(
            "{} cells, statuses {:?}, failing {:?}",
            cells.len(),
            cells.iter().map(|c| c.report.status.to_string()).collect::<Vec<_>>(),
            bad
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, &str, Box<dyn Fn() -> Outcome>)> = vec![
        ("A1", "seven-state row 1", Box::new(a1)),
        ("A2", "sigma 0.01 polyhedral", Box::new(|| table_value(2, 92.7133))),
        ("A3", "sigma 0.03 polyhedral", Box::new(|| table_value(6, 107.9344))),
        ("A4", "sigma 0.3 infeasible", Box::new(a4)),
        ("A5", "inner SOCP vs brute force", Box::new(a5)),
        ("A6", "inner strong duality", Box::new(a6)),
        ("A7", "point set equals nominal LP", Box::new(a7)),
        ("A8", "monotone in sigma", Box::new(a8)),
        ("A9", "standard and pmin forms agree", Box::new(a9)),
        ("A10", "ten-state bound sweep", Box::new(a10)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut failed = 0;
    for (id, name, f) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
