//! Alternating heuristic for certified incumbents.
//!
//! Each round fixes the kernel at the current policy's worst case, solves
//! the nominal LP under that kernel with constraint bounds tightened by the
//! gap between nominal and worst-case constraint values, and keeps the new
//! policy only if its own worst case is feasible and better.

use log::debug;
use nalgebra::DVector;

use super::inner::{worst_case_costs, WorstCase};
use super::values::{descending, extreme_mix, IntervalKernel, ValueBracket};
use super::RobustInstance;
use crate::conic::ConicStatus;
use crate::error::Result;
use crate::model::{evaluate_policy, CostRef, StationaryPolicy};
use crate::occupation::solve_occupation_lp;

/// Slack allowed on worst-case constraint values of accepted policies.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LocalSearchResult {
    pub policy: StationaryPolicy,
    /// Certified worst-case objective, `+inf` when no feasible policy was found.
    pub upper_bound: f64,
    pub worst_case: WorstCase,
    pub feasible: bool,
    pub rounds: usize,
    /// Certified bound after every round.
    pub history: Vec<f64>,
}

fn certified(inst: &RobustInstance, f: &StationaryPolicy) -> Result<(WorstCase, bool)> {
    let wc = worst_case_costs(inst, f)?;
    let ok = wc.is_feasible(&inst.model.xi, FEAS_TOL);
    Ok((wc, ok))
}

/// One LP step from `f` with the kernel fixed at `kernel_u` and the
/// constraint bounds shifted down by `margins`.
fn lp_step(inst: &RobustInstance, kernel_u: &DVector<f64>, margins: &[f64]) -> Result<Option<StationaryPolicy>> {
    let mut shifted = inst.model.clone();
    for (xi, m) in shifted.xi.iter_mut().zip(margins) {
        *xi -= m;
    }
    let kernel = inst.model.kernel_with(kernel_u)?;
    let sol = solve_occupation_lp(&shifted, &kernel, 1e-9)?;
    Ok(if sol.status == ConicStatus::Optimal {
        sol.policy
    } else {
        None
    })
}

/// Steps of the bisection between a feasible policy and an infeasible one.
const BOUNDARY_STEPS: usize = 30;

/// Furthest feasible point on the segment from the feasible `from` to the
/// infeasible `to`, with its worst case; `None` if no step beyond `from` is feasible.
pub fn boundary_mix(
    inst: &RobustInstance,
    from: &StationaryPolicy,
    to: &StationaryPolicy,
) -> Result<Option<(StationaryPolicy, WorstCase)>> {
    let model = &inst.model;
    let (a, b) = (from.flat(), to.flat());
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = None;
    for _ in 0..BOUNDARY_STEPS {
        let lam = 0.5 * (lo + hi);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + lam * (y - x)).collect();
        let g = StationaryPolicy::normalized(model, &mix)?;
        let (gwc, ok) = certified(inst, &g)?;
        if ok {
            lo = lam;
            best = Some((g, gwc));
        } else {
            hi = lam;
        }
    }
    Ok(best)
}

/// Deterministic policy minimising an interval-hull bound on the worst-case
/// value of one cost; a cheap way to find robustly feasible starts.
pub fn pessimistic_greedy_policy(inst: &RobustInstance, cost: CostRef) -> Result<StationaryPolicy> {
    let model = &inst.model;
    let kernel = IntervalKernel::new(inst);
    let c = model.cost(cost);
    let mut v = ValueBracket::trivial(model, cost).upper;
    let mut choice = vec![0usize; model.n_states()];
    for _ in 0..5000 {
        let order = descending(v.as_slice());
        let mut next = v.clone();
        for s in 0..model.n_states() {
            let mut best = (f64::INFINITY, 0);
            for (a, k) in model.pairs_of(s).enumerate() {
                let q = c[k] + model.alpha * extreme_mix(&kernel.lo[k], &kernel.hi[k], v.as_slice(), &order);
                if q < best.0 - 1e-12 {
                    best = (q, a);
                }
            }
            next[s] = best.0;
            choice[s] = best.1;
        }
        let change = (&next - &v).amax();
        v = next;
        if change < 1e-10 {
            break;
        }
    }
    StationaryPolicy::deterministic(model, &choice)
}

/// Starting from `f0`, alternates worst-case evaluation and kernel-fixed
/// LP solves for at most `iters` rounds. The certified bound never
/// increases; when `f0` is infeasible the first feasible policy found
/// replaces it.
pub fn local_search_incumbent(inst: &RobustInstance, f0: &StationaryPolicy, iters: usize) -> Result<LocalSearchResult> {
    let model = &inst.model;
    let (mut wc, mut feasible) = certified(inst, f0)?;
    let mut policy = f0.clone();
    let mut history = Vec::new();

    if !feasible {
        let mut starts = Vec::new();
        for k in 0..model.n_constraints() {
            starts.push(pessimistic_greedy_policy(inst, CostRef::Constraint(k))?);
        }
        for cand in starts {
            let (cwc, ok) = certified(inst, &cand)?;
            if ok && (!feasible || cwc.objective < wc.objective) {
                policy = cand;
                wc = cwc;
                feasible = true;
            }
        }
    }

    let mut rounds = 0;
    let mut stall = 0;
    let mut margin_scale = 1.0;
    while rounds < iters {
        rounds += 1;
        let nominal_under_wc = evaluate_policy(model, &policy, &model.kernel_with(&wc.maximizers[0])?)?;
        let margins: Vec<f64> = (0..model.n_constraints())
            .map(|k| margin_scale * (wc.constraints[k] - nominal_under_wc.constraints[k]).max(0.0))
            .collect();
        let mut improved = false;
        if let Some(cand) = lp_step(inst, &wc.maximizers[0], &margins)? {
            let (cwc, ok) = certified(inst, &cand)?;
            let better = if feasible {
                ok && cwc.objective < wc.objective - 1e-9
            } else {
                ok || cwc.max_excess(&model.xi) < wc.max_excess(&model.xi) - 1e-9
            };
            if better {
                policy = cand;
                wc = cwc;
                feasible = ok;
                improved = true;
            } else if feasible && !ok && cwc.objective < wc.objective - 1e-9 {
                // The step overshoots the constraints; walk back to their boundary.
                if let Some((mix, mwc)) = boundary_mix(inst, &policy, &cand)? {
                    if mwc.objective < wc.objective - 1e-9 {
                        policy = mix;
                        wc = mwc;
                        improved = true;
                    }
                }
                margin_scale = 2.0 * margin_scale + 0.1;
            } else if !ok {
                margin_scale = 2.0 * margin_scale + 0.1;
            }
        } else {
            margin_scale *= 0.5;
        }
        history.push(if feasible { wc.objective } else { f64::INFINITY });
        debug!(
            "local search round {rounds}: improved={improved} bound={}",
            history.last().unwrap()
        );
        if improved {
            stall = 0;
            margin_scale = 1.0;
        } else {
            stall += 1;
            if stall >= 3 {
                break;
            }
        }
    }
    Ok(LocalSearchResult {
        upper_bound: if feasible { wc.objective } else { f64::INFINITY },
        policy,
        worst_case: wc,
        feasible,
        rounds,
        history,
    })
}
