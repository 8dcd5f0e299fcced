//! Spatial branch-and-bound over the policy simplex.
//!
//! Nodes are boxes on the policy entries and on each slot's `ς`. A node's
//! lower bound is the optimum of the McCormick relaxation over its box,
//! tightened by interval value iteration and by occupation LPs under fixed
//! member kernels; upper bounds come from
//! certified worst-case evaluations of normalised relaxation policies.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inner::{worst_case_costs, WorstCase};
use super::local::{local_search_incumbent, FEAS_TOL};
use super::reform::{assemble_reformulation, NodeBox, ReformMode, RobustReformulation};
use super::values::{bracket_values, IntervalKernel, ValueBracket};
use super::{Form, RobustInstance};
use crate::conic::{solve_conic, ConicStatus};
use crate::error::{Error, Result};
use crate::model::{CmdpModel, CostRef, StationaryPolicy};
use crate::occupation::{occupation_lp, recover_policy, solve_nominal, OccupationMeasure};
use crate::uncertainty::check_membership;
use nalgebra::{DMatrix, DVector};

const RELAX_TOL: f64 = 1e-8;
/// Policy widths below this are treated as fixed and evaluated exactly.
const LEAF_WIDTH: f64 = 1e-6;
/// Below this policy width branching moves to `ς`.
const SIGMA_SWITCH: f64 = 1e-4;
/// Interval iteration budget per node.
const SWEEPS: usize = 400;
/// Bisection steps from an infeasible candidate towards the incumbent.
const REPAIR_STEPS: usize = 8;
/// Local-search rounds spent polishing each new incumbent.
const POLISH_ITERS: usize = 5;
/// Kernels kept for scenario bounds, the origin included.
const MAX_SCENARIOS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub time_limit: Option<f64>,
    pub node_limit: usize,
    /// Relative gap at which the search stops.
    pub gap_target: f64,
    /// Nodes evaluated together; fixed so runs are reproducible.
    pub batch: usize,
    pub local_iters: usize,
    pub trace: bool,
    /// Answer single-point sets with the nominal LP instead of the tree.
    pub nominal_shortcut: bool,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: 200_000,
            gap_target: 1e-4,
            batch: 8,
            local_iters: 20,
            trace: false,
            nominal_shortcut: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Gap target reached or tree exhausted with an incumbent.
    Optimal,
    /// The feasibility tree proved every policy violates a constraint.
    Infeasible,
    /// Budget ran out with an incumbent; bounds bracket the optimum.
    BudgetExhausted,
    /// Budget ran out before any feasible policy was found or infeasibility proved.
    NoIncumbent,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::BudgetExhausted => "budget_exhausted",
            SolveStatus::NoIncumbent => "no_incumbent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub node: usize,
    pub depth: usize,
    pub mode: String,
    pub node_lb: f64,
    pub global_lb: f64,
    pub ub: f64,
    pub branched: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Summary {
    /// Lower bound on the smallest achievable `max_k (D_k − ξ_k)`.
    pub lower_bound: f64,
    pub best_excess: f64,
    pub nodes: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSolveReport {
    pub status: SolveStatus,
    pub form: Form,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gap_percent: f64,
    pub policy: Option<StationaryPolicy>,
    pub worst_objective: Option<f64>,
    pub worst_constraints: Vec<f64>,
    pub nodes: usize,
    pub wall_time: f64,
    pub phase1: Option<Phase1Summary>,
    /// Set when `ς` boxes came from the fixed-radius fallback.
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<NodeTrace>,
}

/// `|LB − UB| / |UB| · 100`; zero when both are equal, infinite without an incumbent.
pub fn gap_percent(lb: f64, ub: f64) -> f64 {
    if !ub.is_finite() || !lb.is_finite() {
        return f64::INFINITY;
    }
    let diff = (lb - ub).abs();
    if diff == 0.0 {
        0.0
    } else if ub == 0.0 {
        f64::INFINITY
    } else {
        diff / ub.abs() * 100.0
    }
}

impl RobustSolveReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("node,depth,mode,node_lb,global_lb,ub,branched\n");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.node,
                t.depth,
                t.mode,
                t.node_lb,
                t.global_lb,
                t.ub,
                t.branched.as_deref().unwrap_or("")
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Incumbent {
    policy: StationaryPolicy,
    wc: WorstCase,
    /// Objective in the tree's own terms: `C` or `max_k (D_k − ξ_k)`.
    score: f64,
}

#[derive(Debug, Clone)]
struct Node {
    id: usize,
    depth: usize,
    lb: f64,
    bx: NodeBox,
    brackets: Vec<ValueBracket>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: smallest bound first, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.lb.total_cmp(&self.lb).then(other.id.cmp(&self.id))
    }
}

enum Outcome {
    Pruned {
        lb: f64,
    },
    Branch {
        lb: f64,
        children: Vec<(NodeBox, String)>,
        brackets: Vec<ValueBracket>,
    },
}

struct Processed {
    outcome: Outcome,
    candidates: Vec<(Vec<i64>, StationaryPolicy, Option<WorstCase>)>,
}

/// Box-derivation strategy for `ς`.
#[derive(Clone)]
enum SigmaBoxes {
    Interval(IntervalKernel),
    Radius(f64),
}

struct Tree<'a> {
    reform: RobustReformulation<'a>,
    boxes: SigmaBoxes,
    /// Kernels `p̄ + u` for members `u` of the set.
    scenarios: Vec<DMatrix<f64>>,
    budget: &'a Budget,
    deadline: Option<Instant>,
}

/// Bound from one member kernel: a policy in `bx` that is robustly feasible
/// is feasible for the occupation LP under that kernel, and its worst-case
/// objective is at least its objective there. Box limits on `f(s,a)` are
/// linear in the occupation measure. Returns the bound and the LP's policy,
/// or `None` when the LP is infeasible.
fn scenario_bound(
    model: &CmdpModel,
    kernel: &DMatrix<f64>,
    bx: &NodeBox,
    mode: ReformMode,
) -> Option<(f64, Option<Vec<f64>>)> {
    let Ok(mut prog) = occupation_lp(model, kernel) else {
        return Some((f64::NEG_INFINITY, None));
    };
    if mode == ReformMode::Phase1 {
        let rows = std::mem::take(&mut prog.inequalities);
        prog.objective.iter_mut().for_each(|c| *c = 0.0);
        let e = prog.add_var(None, None);
        prog.set_cost(e, 1.0);
        for mut r in rows {
            r.terms.push((e, -1.0));
            prog.add_le(r.terms, r.rhs);
        }
    }
    for s in 0..model.n_states() {
        let r = model.pairs_of(s);
        if r.len() < 2 {
            continue;
        }
        for k in r.clone() {
            // f(s,a) ≥ l  ⇔  (1 − l)ρ(s,a) − l Σ_{b≠a} ρ(s,b) ≥ 0, and likewise for the upper limit.
            let row =
                |w: f64| -> Vec<(usize, f64)> { r.clone().map(|j| (j, if j == k { 1.0 - w } else { -w })).collect() };
            if bx.f_lo[k] > 0.0 {
                prog.add_ge(row(bx.f_lo[k]), 0.0);
            }
            if bx.f_hi[k] < 1.0 {
                prog.add_le(row(bx.f_hi[k]), 0.0);
            }
        }
    }
    let Ok(sol) = solve_conic(&prog, RELAX_TOL) else {
        return Some((f64::NEG_INFINITY, None));
    };
    match sol.status {
        ConicStatus::Infeasible => None,
        ConicStatus::Optimal => {
            let v = sol.dual_objective.min(sol.primal_objective);
            let mut v = v - 1e-7 * (1.0 + v.abs());
            if sol.reduced_accuracy {
                v -= 1e-5 * (1.0 + v.abs());
            }
            let occ = OccupationMeasure {
                rho: sol.x[..model.n_pairs()].iter().map(|r| r.max(0.0)).collect(),
            };
            Some((v, recover_policy(model, &occ).ok().map(|f| f.flat())))
        }
        _ => Some((f64::NEG_INFINITY, None)),
    }
}

/// Adds the kernels of `wc`'s maximisers that are not already present.
fn add_scenarios(model: &CmdpModel, scenarios: &mut Vec<DMatrix<f64>>, wc: &WorstCase) {
    for u in &wc.maximizers {
        let Ok(k) = model.kernel_with(u) else { continue };
        if scenarios.iter().any(|s| (s - &k).amax() <= 1e-9) {
            continue;
        }
        if scenarios.len() >= MAX_SCENARIOS {
            // The first entry is the origin when it is a member; keep it.
            scenarios.remove(1.min(scenarios.len() - 1));
        }
        scenarios.push(k);
    }
}

fn base_scenarios(inst: &RobustInstance, incumbent: Option<&Incumbent>) -> Vec<DMatrix<f64>> {
    let model = &inst.model;
    let mut out = Vec::new();
    let zero = DVector::zeros(model.transition_len());
    if check_membership(model, &inst.uset, &zero, 1e-9).is_ok_and(|m| m.member) {
        out.push(model.p_bar.clone());
    }
    if let Some(inc) = incumbent {
        add_scenarios(model, &mut out, &inc.wc);
    }
    out
}

fn quantize(flat: &[f64]) -> Vec<i64> {
    flat.iter().map(|v| (v * 1e9).round() as i64).collect()
}

impl Tree<'_> {
    fn inst(&self) -> &RobustInstance {
        self.reform.inst
    }

    fn mode(&self) -> ReformMode {
        self.reform.mode
    }

    fn score(&self, wc: &WorstCase) -> Option<f64> {
        let xi = &self.inst().model.xi;
        match self.mode() {
            ReformMode::Primary => wc.is_feasible(xi, FEAS_TOL).then_some(wc.objective),
            ReformMode::Phase1 => Some(wc.max_excess(xi)),
        }
    }

    /// Threshold below which a node may still hold an improving policy.
    fn cutoff(&self, ub: f64) -> f64 {
        match self.mode() {
            ReformMode::Primary => ub - self.budget.gap_target * ub.abs().max(1e-9),
            ReformMode::Phase1 => FEAS_TOL,
        }
    }

    fn slot_costs(&self) -> Vec<CostRef> {
        self.reform.slots.iter().map(|s| s.cost).collect()
    }

    fn root(&self) -> Node {
        let model = &self.inst().model;
        let brackets = self
            .slot_costs()
            .iter()
            .map(|&c| ValueBracket::trivial(model, c))
            .collect();
        Node {
            id: 0,
            depth: 0,
            lb: f64::NEG_INFINITY,
            bx: self.reform.full_box(),
            brackets,
        }
    }

    /// Interval brackets and a quick bound; `None` when the node is infeasible.
    fn tighten(&self, node: &Node, bx: &mut NodeBox) -> Option<(Vec<ValueBracket>, f64)> {
        let model = &self.inst().model;
        let costs = self.slot_costs();
        match &self.boxes {
            SigmaBoxes::Radius(r) => {
                for si in 0..costs.len() {
                    bx.sig_lo[si] = vec![-r; model.n_states()];
                    bx.sig_hi[si] = vec![*r; model.n_states()];
                }
                Some((node.brackets.clone(), f64::NEG_INFINITY))
            }
            SigmaBoxes::Interval(kernel) => {
                let scale = 1.0 - model.alpha;
                let mut quick = f64::NEG_INFINITY;
                let mut out = Vec::with_capacity(costs.len());
                for (si, &c) in costs.iter().enumerate() {
                    let br = bracket_values(model, kernel, c, &bx.f_lo, &bx.f_hi, &node.brackets[si], SWEEPS, 1e-10);
                    let low = scale * model.gamma.dot(&br.lower);
                    match (self.mode(), c) {
                        (ReformMode::Primary, CostRef::Objective) => quick = quick.max(low),
                        (ReformMode::Primary, CostRef::Constraint(k)) => {
                            if low > model.xi[k] + FEAS_TOL {
                                return None;
                            }
                        }
                        (ReformMode::Phase1, CostRef::Constraint(k)) => quick = quick.max(low - model.xi[k]),
                        (ReformMode::Phase1, CostRef::Objective) => unreachable!(),
                    }
                    for j in 0..model.n_states() {
                        let pad = 1e-7 * (1.0 + br.lower[j].abs().max(br.upper[j].abs()));
                        bx.sig_lo[si][j] = br.lower[j] - pad;
                        bx.sig_hi[si][j] = br.upper[j] + pad;
                    }
                    out.push(br);
                }
                Some((out, quick))
            }
        }
    }

    fn evaluate(&self, f: &StationaryPolicy) -> Option<WorstCase> {
        match worst_case_costs(self.inst(), f) {
            Ok(wc) => Some(wc),
            Err(e) => {
                warn!("worst-case evaluation failed: {e}");
                None
            }
        }
    }

    /// Candidate policies from `f_raw`: the policy itself and, when it is
    /// infeasible, points on the segment towards the incumbent.
    fn candidates(
        &self,
        f_raw: &[f64],
        incumbent: Option<&Incumbent>,
        cache: &HashMap<Vec<i64>, Option<f64>>,
    ) -> Vec<(Vec<i64>, StationaryPolicy, Option<WorstCase>)> {
        let model = &self.inst().model;
        let mut out = Vec::new();
        let Ok(f) = StationaryPolicy::normalized(model, f_raw) else {
            return out;
        };
        let key = quantize(&f.flat());
        if cache.contains_key(&key) {
            return out;
        }
        let wc = self.evaluate(&f);
        let ok = wc.as_ref().and_then(|w| self.score(w)).is_some();
        out.push((key, f.clone(), wc));
        if ok || self.mode() == ReformMode::Phase1 {
            return out;
        }
        let Some(inc) = incumbent else { return out };
        // Mixing with the incumbent rarely helps when `f` is no better than it.
        if out[0].2.as_ref().is_none_or(|w| w.objective >= inc.score) {
            return out;
        }
        let (a, b) = (inc.policy.flat(), f.flat());
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..REPAIR_STEPS {
            let lam = 0.5 * (lo + hi);
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + lam * (y - x)).collect();
            let Ok(g) = StationaryPolicy::normalized(model, &mix) else {
                break;
            };
            let key = quantize(&g.flat());
            if cache.contains_key(&key) {
                break;
            }
            let wc = self.evaluate(&g);
            let feasible = wc.as_ref().and_then(|w| self.score(w)).is_some();
            out.push((key, g, wc));
            if feasible {
                lo = lam;
            } else {
                hi = lam;
            }
        }
        out
    }

    fn process(
        &self,
        node: &Node,
        incumbent: Option<&Incumbent>,
        cache: &HashMap<Vec<i64>, Option<f64>>,
        scenarios: &[DMatrix<f64>],
    ) -> Processed {
        let model = &self.inst().model;
        let ub = incumbent.map_or(f64::INFINITY, |i| i.score);
        let cutoff = self.cutoff(ub);
        let mut bx = node.bx.clone();
        if !bx.propagate_simplex(self.inst()) {
            return Processed {
                outcome: Outcome::Pruned { lb: f64::INFINITY },
                candidates: Vec::new(),
            };
        }
        let Some((brackets, quick)) = self.tighten(node, &mut bx) else {
            return Processed {
                outcome: Outcome::Pruned { lb: f64::INFINITY },
                candidates: Vec::new(),
            };
        };
        let mut lb = node.lb.max(quick);
        if lb > cutoff {
            return Processed {
                outcome: Outcome::Pruned { lb },
                candidates: Vec::new(),
            };
        }
        // Policy of the tightest scenario; usually close to the robust optimum over the box.
        let mut scenario_policy: Option<(f64, Vec<f64>)> = None;
        for kernel in scenarios {
            match scenario_bound(model, kernel, &bx, self.mode()) {
                Some((v, f)) => {
                    lb = lb.max(v);
                    if let Some(f) = f.filter(|_| scenario_policy.as_ref().is_none_or(|p| v > p.0)) {
                        scenario_policy = Some((v, f));
                    }
                }
                None => {
                    return Processed {
                        outcome: Outcome::Pruned { lb: f64::INFINITY },
                        candidates: Vec::new(),
                    }
                }
            }
            if lb > cutoff {
                return Processed {
                    outcome: Outcome::Pruned { lb },
                    candidates: Vec::new(),
                };
            }
        }

        let max_f_width = (0..model.n_pairs()).map(|k| bx.f_width(k)).fold(0.0, f64::max);
        if max_f_width <= LEAF_WIDTH {
            let mid: Vec<f64> = bx.f_lo.iter().zip(&bx.f_hi).map(|(l, h)| 0.5 * (l + h)).collect();
            let candidates = self.candidates(&mid, None, cache);
            let exact = candidates
                .first()
                .and_then(|c| c.2.as_ref())
                .map(|wc| match self.mode() {
                    ReformMode::Primary if wc.is_feasible(&model.xi, FEAS_TOL) => wc.objective,
                    ReformMode::Primary => f64::INFINITY,
                    ReformMode::Phase1 => wc.max_excess(&model.xi),
                })
                .unwrap_or(lb);
            return Processed {
                outcome: Outcome::Pruned { lb: lb.max(exact) },
                candidates,
            };
        }

        let prog = self.reform.relaxation(&bx);
        let sol = match solve_conic(&prog, RELAX_TOL) {
            Ok(s) => s,
            Err(e) => {
                warn!("relaxation failed at node {}: {e}", node.id);
                return self.split_widest(lb, bx, brackets);
            }
        };
        match sol.status {
            ConicStatus::Infeasible => {
                return Processed {
                    outcome: Outcome::Pruned { lb: f64::INFINITY },
                    candidates: Vec::new(),
                }
            }
            ConicStatus::Optimal => {}
            other => {
                debug!("relaxation at node {} ended with {other:?}", node.id);
                return self.split_widest(lb, bx, brackets);
            }
        }
        let mut relax_lb = sol.dual_objective.min(sol.primal_objective);
        relax_lb -= 1e-7 * (1.0 + relax_lb.abs());
        if sol.reduced_accuracy {
            relax_lb -= 1e-5 * (1.0 + relax_lb.abs());
        }
        lb = lb.max(relax_lb);

        let f_hat = self.reform.policy_from(&sol.x);
        let mut candidates = self.candidates(&f_hat, incumbent, cache);
        if let Some((_, f)) = &scenario_policy {
            let seen: Vec<Vec<i64>> = candidates.iter().map(|c| c.0.clone()).collect();
            let extra = self.candidates(f, incumbent, cache);
            candidates.extend(extra.into_iter().filter(|c| !seen.contains(&c.0)));
        }
        // Incumbents found here may prune the node itself.
        let mut local_ub = ub;
        for (_, _, wc) in &candidates {
            if let Some(s) = wc.as_ref().and_then(|w| self.score(w)) {
                local_ub = local_ub.min(s);
            }
        }
        if lb > self.cutoff(local_ub) {
            return Processed {
                outcome: Outcome::Pruned { lb },
                candidates,
            };
        }

        // Branching on the largest McCormick violation.
        let mut f_viol = vec![0.0; model.n_pairs()];
        let mut sig_viol: HashMap<(usize, usize), f64> = HashMap::new();
        for m in &self.reform.monomials {
            let v = (sol.x[m.t] - sol.x[m.f] * sol.x[m.varsigma]).abs();
            f_viol[m.pair] += v;
            *sig_viol.entry((m.slot, m.next)).or_default() += v;
        }
        let pick_f = (0..model.n_pairs())
            .filter(|&k| bx.f_width(k) > LEAF_WIDTH)
            .max_by(|&a, &b| f_viol[a].total_cmp(&f_viol[b]).then(b.cmp(&a)));
        let scale = 1.0 + lb.abs();
        let max_viol = f_viol.iter().copied().fold(0.0, f64::max);
        if max_viol <= 1e-9 * scale {
            // The relaxation is exact at f̂, so its bound is attained there.
            return Processed {
                outcome: Outcome::Branch {
                    lb,
                    children: self.widest_children(&bx),
                    brackets,
                },
                candidates,
            };
        }
        let k = pick_f.expect("some policy width exceeds the leaf width");
        let children = if bx.f_width(k) > SIGMA_SWITCH || sig_viol.is_empty() {
            let (l, h) = (bx.f_lo[k], bx.f_hi[k]);
            let w = h - l;
            let at = sol.x[self.reform.f[k]].clamp(l + 0.1 * w, h - 0.1 * w);
            let mut left = bx.clone();
            left.f_hi[k] = at;
            let mut right = bx.clone();
            right.f_lo[k] = at;
            vec![(left, format!("f{k}<={at:.6}")), (right, format!("f{k}>={at:.6}"))]
        } else {
            let (&(si, j), _) = sig_viol
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
                .expect("non-empty");
            let (l, h) = (bx.sig_lo[si][j], bx.sig_hi[si][j]);
            let v = self.reform.varsigma_from(&sol.x, si)[j];
            let w = h - l;
            let at = v.clamp(l + 0.1 * w, h - 0.1 * w);
            let mut left = bx.clone();
            left.sig_hi[si][j] = at;
            let mut right = bx.clone();
            right.sig_lo[si][j] = at;
            vec![
                (left, format!("sigma{si}_{j}<={at:.6}")),
                (right, format!("sigma{si}_{j}>={at:.6}")),
            ]
        };
        Processed {
            outcome: Outcome::Branch { lb, children, brackets },
            candidates,
        }
    }

    fn widest_children(&self, bx: &NodeBox) -> Vec<(NodeBox, String)> {
        let k = (0..bx.f_lo.len())
            .max_by(|&a, &b| bx.f_width(a).total_cmp(&bx.f_width(b)).then(b.cmp(&a)))
            .unwrap_or(0);
        let at = 0.5 * (bx.f_lo[k] + bx.f_hi[k]);
        let mut left = bx.clone();
        left.f_hi[k] = at;
        let mut right = bx.clone();
        right.f_lo[k] = at;
        vec![(left, format!("f{k}<={at:.6}")), (right, format!("f{k}>={at:.6}"))]
    }

    fn split_widest(&self, lb: f64, bx: NodeBox, brackets: Vec<ValueBracket>) -> Processed {
        Processed {
            outcome: Outcome::Branch {
                lb,
                children: self.widest_children(&bx),
                brackets,
            },
            candidates: Vec::new(),
        }
    }

    /// A few local-search rounds from `inc`; the result if it is better.
    fn polish(&self, inc: &Incumbent) -> Option<Incumbent> {
        match local_search_incumbent(self.inst(), &inc.policy, POLISH_ITERS) {
            Ok(r) if r.feasible && r.upper_bound < inc.score - 1e-9 => Some(Incumbent {
                score: r.upper_bound,
                policy: r.policy,
                wc: r.worst_case,
            }),
            Ok(_) => None,
            Err(e) => {
                warn!("incumbent polish failed: {e}");
                None
            }
        }
    }

    fn out_of_time(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn run(&self, mut incumbent: Option<Incumbent>, trace: &mut Vec<NodeTrace>) -> TreeResult {
        let mode_name = match self.mode() {
            ReformMode::Primary => "primary",
            ReformMode::Phase1 => "phase1",
        };
        let mut heap = BinaryHeap::new();
        heap.push(self.root());
        let mut next_id = 1;
        let mut processed = 0usize;
        let mut closed_lb = f64::INFINITY;
        let mut cache: HashMap<Vec<i64>, Option<f64>> = HashMap::new();
        let mut global_lb = f64::NEG_INFINITY;
        let mut stopped = false;
        let mut scenarios = self.scenarios.clone();

        loop {
            let ub = incumbent.as_ref().map_or(f64::INFINITY, |i| i.score);
            if self.mode() == ReformMode::Phase1 && ub <= FEAS_TOL {
                stopped = true;
                break;
            }
            let cutoff = self.cutoff(ub);
            while heap.peek().is_some_and(|n: &Node| n.lb > cutoff) {
                let n = heap.pop().expect("peeked");
                closed_lb = closed_lb.min(n.lb);
            }
            let open_lb = heap.peek().map_or(f64::INFINITY, |n| n.lb);
            global_lb = global_lb.max(open_lb.min(closed_lb));
            if heap.is_empty() {
                break;
            }
            if processed >= self.budget.node_limit || self.out_of_time() {
                stopped = true;
                break;
            }
            let take = self.budget.batch.max(1).min(self.budget.node_limit - processed);
            let batch: Vec<Node> = (0..take).filter_map(|_| heap.pop()).collect();
            let results: Vec<Processed> = batch
                .par_iter()
                .map(|n| self.process(n, incumbent.as_ref(), &cache, &scenarios))
                .collect();
            let mut improved = false;
            for (node, res) in batch.into_iter().zip(results) {
                processed += 1;
                for (key, policy, wc) in res.candidates {
                    let score = wc.as_ref().and_then(|w| self.score(w));
                    cache.insert(key, score);
                    if let (Some(s), Some(wc)) = (score, wc) {
                        if incumbent.as_ref().is_none_or(|i| s < i.score) {
                            debug!("{mode_name}: new incumbent {s:.6} at node {}", node.id);
                            add_scenarios(&self.inst().model, &mut scenarios, &wc);
                            incumbent = Some(Incumbent { policy, wc, score: s });
                            improved = true;
                        }
                    }
                }
                let ub = incumbent.as_ref().map_or(f64::INFINITY, |i| i.score);
                let (node_lb, branched) = match res.outcome {
                    Outcome::Pruned { lb } => {
                        closed_lb = closed_lb.min(lb);
                        (lb, None)
                    }
                    Outcome::Branch { lb, children, brackets } => {
                        if lb > self.cutoff(ub) {
                            closed_lb = closed_lb.min(lb);
                            (lb, None)
                        } else {
                            let label = children.first().map(|c| c.1.clone());
                            for (bx, _) in children {
                                heap.push(Node {
                                    id: next_id,
                                    depth: node.depth + 1,
                                    lb,
                                    bx,
                                    brackets: brackets.clone(),
                                });
                                next_id += 1;
                            }
                            (lb, label)
                        }
                    }
                };
                if self.budget.trace {
                    trace.push(NodeTrace {
                        node: node.id,
                        depth: node.depth,
                        mode: mode_name.into(),
                        node_lb: node_lb,
                        global_lb,
                        ub,
                        branched,
                    });
                }
            }
            if improved && self.mode() == ReformMode::Primary {
                if let Some(better) = self.polish(incumbent.as_ref().expect("just improved")) {
                    debug!("{mode_name}: polished incumbent to {:.6}", better.score);
                    add_scenarios(&self.inst().model, &mut scenarios, &better.wc);
                    incumbent = Some(better);
                }
            }
            if processed % 200 < self.budget.batch.max(1) {
                let ub = incumbent.as_ref().map_or(f64::INFINITY, |i| i.score);
                info!(
                    "{mode_name}: {processed} nodes, {} open, lb {global_lb:.6}, ub {ub:.6}",
                    heap.len()
                );
            }
        }
        let ub = incumbent.as_ref().map_or(f64::INFINITY, |i| i.score);
        let open_lb = heap.peek().map_or(f64::INFINITY, |n| n.lb);
        let lb = global_lb.max(open_lb.min(closed_lb)).min(ub);
        TreeResult {
            incumbent,
            lower_bound: lb,
            nodes: processed,
            exhausted: !stopped && heap.is_empty(),
        }
    }
}

struct TreeResult {
    incumbent: Option<Incumbent>,
    lower_bound: f64,
    nodes: usize,
    exhausted: bool,
}

fn report_from(
    inst: &RobustInstance,
    status: SolveStatus,
    lb: f64,
    incumbent: Option<&Incumbent>,
    nodes: usize,
    started: Instant,
) -> RobustSolveReport {
    let ub = incumbent.map_or(f64::INFINITY, |i| i.wc.objective);
    RobustSolveReport {
        status,
        form: inst.form,
        lower_bound: lb,
        upper_bound: ub,
        gap_percent: gap_percent(lb, ub),
        policy: incumbent.map(|i| i.policy.clone()),
        worst_objective: incumbent.map(|i| i.wc.objective),
        worst_constraints: incumbent.map(|i| i.wc.constraints.clone()).unwrap_or_default(),
        nodes,
        wall_time: started.elapsed().as_secs_f64(),
        phase1: None,
        kappa: None,
        trace: Vec::new(),
    }
}

fn solve_degenerate(inst: &RobustInstance, started: Instant) -> Result<RobustSolveReport> {
    let nominal = solve_nominal(&inst.model)?;
    match (nominal.status, nominal.policy) {
        (ConicStatus::Optimal, Some(policy)) => {
            let wc = worst_case_costs(inst, &policy)?;
            let inc = Incumbent {
                score: wc.objective,
                policy,
                wc,
            };
            let mut r = report_from(inst, SolveStatus::Optimal, nominal.value, Some(&inc), 1, started);
            r.lower_bound = nominal.value.min(inc.score);
            r.gap_percent = gap_percent(r.lower_bound, r.upper_bound);
            Ok(r)
        }
        (ConicStatus::Infeasible, _) => {
            let mut r = report_from(inst, SolveStatus::Infeasible, f64::INFINITY, None, 1, started);
            r.gap_percent = f64::INFINITY;
            Ok(r)
        }
        (other, _) => Err(Error::Solver(format!("nominal LP ended with status {other:?}"))),
    }
}

/// Initial incumbent: local search from the nominal optimum (or the uniform
/// policy when the nominal problem is infeasible).
fn initial_incumbent(inst: &RobustInstance, budget: &Budget) -> Result<Option<Incumbent>> {
    let nominal = solve_nominal(&inst.model)?;
    let start = nominal.policy.unwrap_or_else(|| StationaryPolicy::uniform(&inst.model));
    let res = local_search_incumbent(inst, &start, budget.local_iters)?;
    Ok(res.feasible.then(|| Incumbent {
        score: res.worst_case.objective,
        policy: res.policy,
        wc: res.worst_case,
    }))
}

fn sigma_boxes(inst: &RobustInstance, kappa: f64) -> SigmaBoxes {
    if inst.kernels_valid {
        SigmaBoxes::Interval(IntervalKernel::new(inst))
    } else {
        let m = &inst.model;
        let v = m.cost_refs().iter().map(|&c| m.cost(c).amax()).fold(0.0, f64::max) / (1.0 - m.alpha);
        SigmaBoxes::Radius(kappa * v)
    }
}

/// True when some certificate of `inc` reaches the fixed-radius box.
fn touches_radius(inc: &Incumbent, radius: f64) -> bool {
    inc.wc
        .certificates
        .iter()
        .any(|c| c.varsigma.iter().any(|v| v.abs() >= radius * (1.0 - 1e-6)))
}

/// Global solve of the robust problem in the instance's form.
pub fn solve_robust_global(inst: &RobustInstance, budget: &Budget) -> Result<RobustSolveReport> {
    let started = Instant::now();
    if budget.nominal_shortcut && inst.is_degenerate() {
        info!("uncertainty set is a single point; solving the nominal LP");
        return solve_degenerate(inst, started);
    }
    let deadline = budget.time_limit.map(|t| started + Duration::from_secs_f64(t.max(0.0)));
    let mut trace = Vec::new();
    let mut kappa = 10.0;
    let mut incumbent = initial_incumbent(inst, budget)?;
    let mut phase1 = None;
    let mut total_nodes = 0;

    loop {
        let boxes = sigma_boxes(inst, kappa);
        let radius = match boxes {
            SigmaBoxes::Radius(r) => Some(r),
            SigmaBoxes::Interval(_) => None,
        };
        if incumbent.is_none() && inst.model.n_constraints() > 0 {
            let reform = assemble_reformulation(inst, inst.form, ReformMode::Phase1)?;
            let scenarios = base_scenarios(inst, None);
            let tree = Tree {
                reform,
                boxes: boxes.clone(),
                scenarios,
                budget,
                deadline,
            };
            let res = tree.run(None, &mut trace);
            total_nodes += res.nodes;
            let best = res.incumbent.as_ref().map_or(f64::INFINITY, |i| i.score);
            info!(
                "phase 1: lb {:.6}, best excess {best:.6}, {} nodes",
                res.lower_bound, res.nodes
            );
            phase1 = Some(Phase1Summary {
                lower_bound: res.lower_bound,
                best_excess: best,
                nodes: res.nodes,
                exhausted: res.exhausted,
            });
            match res.incumbent {
                Some(inc) if inc.score <= FEAS_TOL => {
                    incumbent = Some(Incumbent {
                        score: inc.wc.objective,
                        ..inc
                    });
                }
                _ if res.exhausted && radius.is_none() => {
                    let mut r = report_from(inst, SolveStatus::Infeasible, f64::INFINITY, None, total_nodes, started);
                    r.phase1 = phase1;
                    r.trace = trace;
                    return Ok(r);
                }
                _ if res.exhausted => {
                    // A fixed radius can cut off certificates; widen before concluding.
                    if kappa >= 1e4 {
                        let mut r =
                            report_from(inst, SolveStatus::Infeasible, f64::INFINITY, None, total_nodes, started);
                        r.phase1 = phase1;
                        r.kappa = Some(kappa);
                        r.trace = trace;
                        return Ok(r);
                    }
                    kappa *= 10.0;
                    continue;
                }
                _ => {
                    let mut r = report_from(
                        inst,
                        SolveStatus::NoIncumbent,
                        f64::NEG_INFINITY,
                        None,
                        total_nodes,
                        started,
                    );
                    r.lower_bound = f64::NEG_INFINITY;
                    r.phase1 = phase1;
                    r.kappa = radius.map(|_| kappa);
                    r.trace = trace;
                    return Ok(r);
                }
            }
        }

        let reform = assemble_reformulation(inst, inst.form, ReformMode::Primary)?;
        let scenarios = base_scenarios(inst, incumbent.as_ref());
        let tree = Tree {
            reform,
            boxes,
            scenarios,
            budget,
            deadline,
        };
        let res = tree.run(incumbent.clone(), &mut trace);
        total_nodes += res.nodes;
        incumbent = res.incumbent;
        if let (Some(r), Some(inc)) = (radius, incumbent.as_ref()) {
            if touches_radius(inc, r) && kappa < 1e4 {
                warn!("a certificate reached the ς box of radius {r}; enlarging");
                kappa *= 10.0;
                continue;
            }
        }
        let Some(inc) = incumbent.as_ref() else {
            let status = if res.exhausted {
                SolveStatus::Infeasible
            } else {
                SolveStatus::NoIncumbent
            };
            let mut r = report_from(inst, status, res.lower_bound, None, total_nodes, started);
            r.phase1 = phase1;
            r.kappa = radius.map(|_| kappa);
            r.trace = trace;
            return Ok(r);
        };
        let lb = res.lower_bound.min(inc.score);
        let gap_met = inc.score - lb <= budget.gap_target * inc.score.abs().max(1e-9);
        let status = if res.exhausted || gap_met {
            SolveStatus::Optimal
        } else {
            SolveStatus::BudgetExhausted
        };
        let mut r = report_from(inst, status, lb, Some(inc), total_nodes, started);
        r.phase1 = phase1;
        r.kappa = radius.map(|_| kappa);
        r.trace = trace;
        info!(
            "robust solve: {status}, lb {lb:.6}, ub {:.6}, {} nodes",
            inc.score, total_nodes
        );
        return Ok(r);
    }
}
