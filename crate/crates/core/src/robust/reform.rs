//! The robust problem as one program over policies and dual certificates.
//!
//! For every cost slot (the objective and each constraint) the program holds
//! a dual certificate `(β, θ, μ, η, ς)` of that cost's inner SOCP. The only
//! non-convexity is the product `f(s,a)·ς(s')`, which is carried by an
//! auxiliary variable `t` per slot and transition; [`RobustReformulation::relaxation`]
//! replaces `t = f·ς` by its McCormick envelope over a box.

use log::debug;
use nalgebra::DVector;

use super::{Form, RobustInstance};
use crate::conic::{ConicProgram, Sense, SocConstraint};
use crate::error::{Error, Result};
use crate::model::{policy_matrices, CostRef, StationaryPolicy};

/// How the policy enters the stationarity rows.
pub(crate) enum PolicyTerms<'a> {
    Fixed(&'a StationaryPolicy),
    /// Policy variables, one per pair; products go through fresh `t` variables.
    Variable(&'a [usize]),
}

/// Variable indices of one cost slot's certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLayout {
    pub cost: CostRef,
    pub beta: Vec<Vec<usize>>,
    pub theta: Vec<Option<usize>>,
    pub mu: Vec<Vec<usize>>,
    pub eta: Vec<usize>,
    pub varsigma: Vec<usize>,
    /// `t` of transition `pair * n + next`; empty for a fixed policy.
    pub t: Vec<usize>,
}

impl SlotLayout {
    /// Terms of `(1−α)γᵀς − w_floorᵀη`.
    pub fn value_terms(&self, inst: &RobustInstance, w_floor: &DVector<f64>) -> Vec<(usize, f64)> {
        let scale = 1.0 - inst.model.alpha;
        let mut terms: Vec<(usize, f64)> = self
            .varsigma
            .iter()
            .zip(inst.model.gamma.iter())
            .filter(|(_, g)| **g != 0.0)
            .map(|(&v, g)| (v, scale * g))
            .collect();
        terms.extend(
            self.eta
                .iter()
                .zip(w_floor.iter())
                .filter(|(_, w)| **w != 0.0)
                .map(|(&v, w)| (v, -w)),
        );
        terms
    }
}

/// Adds the certificate variables of one cost slot together with its
/// stationarity rows and cone memberships.
pub(crate) fn add_dual_slot(
    prog: &mut ConicProgram,
    inst: &RobustInstance,
    cost: CostRef,
    policy: PolicyTerms,
) -> SlotLayout {
    let model = &inst.model;
    let n = model.n_states();
    let alpha = model.alpha;
    let costs = model.cost(cost);

    let beta: Vec<Vec<usize>> = inst
        .uset
        .blocks
        .iter()
        .map(|b| prog.add_vars(b.n_rows(), Some(0.0), None))
        .collect();
    let theta: Vec<Option<usize>> = inst
        .uset
        .blocks
        .iter()
        .map(|b| b.soc.as_ref().map(|_| prog.add_var(Some(0.0), None)))
        .collect();
    let mu: Vec<Vec<usize>> = inst
        .uset
        .blocks
        .iter()
        .map(|b| prog.add_vars(b.cone_dim(), None, None))
        .collect();
    let eta = prog.add_vars(n, Some(0.0), None);
    let varsigma = prog.add_vars(n, None, None);
    let t = match policy {
        PolicyTerms::Fixed(_) => Vec::new(),
        PolicyTerms::Variable(_) => prog.add_vars(model.transition_len(), None, None),
    };
    let fixed_pf = match policy {
        PolicyTerms::Fixed(f) => Some(policy_matrices(model, f, &model.p_bar).expect("policy checked by caller")),
        PolicyTerms::Variable(_) => None,
    };

    for (s, block) in inst.uset.blocks.iter().enumerate() {
        // c_f(s) + bᵀβ + mᵀμ + yθ + η(s) − ς(s) + α Σ_a Σ_s' f(s,a) p̄(s'|s,a) ς(s') = 0
        let mut terms: Vec<(usize, f64)> = beta[s]
            .iter()
            .zip(block.b_vec.iter())
            .filter(|(_, b)| **b != 0.0)
            .map(|(&v, &b)| (v, b))
            .collect();
        if let (Some(soc), Some(th)) = (&block.soc, theta[s]) {
            terms.extend(
                mu[s]
                    .iter()
                    .zip(soc.m_vec.iter())
                    .filter(|(_, m)| **m != 0.0)
                    .map(|(&v, &m)| (v, m)),
            );
            if soc.y != 0.0 {
                terms.push((th, soc.y));
            }
        }
        terms.push((eta[s], 1.0));
        terms.push((varsigma[s], -1.0));
        let rhs = match (&policy, &fixed_pf) {
            (PolicyTerms::Fixed(_), Some(pm)) => {
                for j in 0..n {
                    let p = pm.p_f[(s, j)];
                    if p != 0.0 {
                        terms.push((varsigma[j], alpha * p));
                    }
                }
                -pm.cost_f(cost)[s]
            }
            (PolicyTerms::Variable(fv), _) => {
                for k in model.pairs_of(s) {
                    if costs[k] != 0.0 {
                        terms.push((fv[k], costs[k]));
                    }
                    for j in 0..n {
                        let p = model.p_bar[(k, j)];
                        if p != 0.0 {
                            terms.push((t[model.transition_index(k, j)], alpha * p));
                        }
                    }
                }
                0.0
            }
            _ => unreachable!(),
        };
        prog.add_eq(merge_terms(terms), rhs);

        // B(s)ᵀβ − M(s)μ − x(s)θ − α F_f(s) ς = 0, one row per coordinate (a, s').
        for (a, k) in model.pairs_of(s).enumerate() {
            for j in 0..n {
                let coord = a * n + j;
                let mut terms: Vec<(usize, f64)> = beta[s]
                    .iter()
                    .enumerate()
                    .filter_map(|(r, &v)| {
                        let b = block.b_mat[(r, coord)];
                        (b != 0.0).then_some((v, b))
                    })
                    .collect();
                if let (Some(soc), Some(th)) = (&block.soc, theta[s]) {
                    for (l, &v) in mu[s].iter().enumerate() {
                        let m = soc.m_mat[(coord, l)];
                        if m != 0.0 {
                            terms.push((v, -m));
                        }
                    }
                    if soc.x[coord] != 0.0 {
                        terms.push((th, -soc.x[coord]));
                    }
                }
                match &policy {
                    PolicyTerms::Fixed(f) => {
                        let fa = f.prob(s, a);
                        if fa != 0.0 {
                            terms.push((varsigma[j], -alpha * fa));
                        }
                    }
                    PolicyTerms::Variable(_) => terms.push((t[model.transition_index(k, j)], -alpha)),
                }
                prog.add_eq(merge_terms(terms), 0.0);
            }
        }

        if let Some(th) = theta[s] {
            prog.add_soc(SocConstraint {
                g_rows: mu[s].iter().map(|&v| vec![(v, 1.0)]).collect(),
                g: vec![0.0; mu[s].len()],
                h: vec![(th, 1.0)],
                k: 0.0,
            });
        }
    }

    SlotLayout {
        cost,
        beta,
        theta,
        mu,
        eta,
        varsigma,
        t,
    }
}

fn merge_terms(mut terms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (j, v) in terms {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReformMode {
    /// Minimise the worst-case objective subject to the worst-case constraints.
    Primary,
    /// Minimise `max_k (D_k − ξ_k)`; a positive optimum proves infeasibility.
    Phase1,
}

/// One product `t = f(pair)·ς(next)` of a cost slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Monomial {
    pub slot: usize,
    pub pair: usize,
    pub next: usize,
    pub t: usize,
    pub f: usize,
    pub varsigma: usize,
}

/// Box over the branching variables: policy entries and, per slot, `ς`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBox {
    pub f_lo: Vec<f64>,
    pub f_hi: Vec<f64>,
    pub sig_lo: Vec<Vec<f64>>,
    pub sig_hi: Vec<Vec<f64>>,
}

impl NodeBox {
    pub fn f_width(&self, k: usize) -> f64 {
        self.f_hi[k] - self.f_lo[k]
    }

    /// Tightens policy bounds through `Σ_a f(s,a) = 1`; false when empty.
    pub fn propagate_simplex(&mut self, inst: &RobustInstance) -> bool {
        let model = &inst.model;
        for _ in 0..3 {
            for s in 0..model.n_states() {
                let r = model.pairs_of(s);
                let sum_lo: f64 = self.f_lo[r.clone()].iter().sum();
                let sum_hi: f64 = self.f_hi[r.clone()].iter().sum();
                if sum_lo > 1.0 + 1e-9 || sum_hi < 1.0 - 1e-9 {
                    return false;
                }
                for k in r.clone() {
                    let lo = (1.0 - (sum_hi - self.f_hi[k])).max(self.f_lo[k]);
                    let hi = (1.0 - (sum_lo - self.f_lo[k])).min(self.f_hi[k]);
                    self.f_lo[k] = lo.clamp(0.0, 1.0);
                    self.f_hi[k] = hi.clamp(0.0, 1.0).max(self.f_lo[k]);
                }
            }
        }
        true
    }
}

pub struct RobustReformulation<'a> {
    pub inst: &'a RobustInstance,
    pub form: Form,
    pub mode: ReformMode,
    pub base: ConicProgram,
    pub epigraph: usize,
    pub f: Vec<usize>,
    pub slots: Vec<SlotLayout>,
    pub monomials: Vec<Monomial>,
    pub w_floor: DVector<f64>,
}

/// Builds the convex part of the reformulation; the products `t = f·ς` are
/// listed in [`RobustReformulation::monomials`] and are only imposed by
/// [`RobustReformulation::relaxation`].
pub fn assemble_reformulation(inst: &RobustInstance, form: Form, mode: ReformMode) -> Result<RobustReformulation<'_>> {
    let model = &inst.model;
    let w_floor = inst.w_floor(form)?;
    if mode == ReformMode::Phase1 && model.n_constraints() == 0 {
        return Err(Error::InvalidInput(
            "feasibility search needs at least one constraint".into(),
        ));
    }
    let mut prog = ConicProgram::new(Sense::Minimize);
    let epigraph = prog.add_var(None, None);
    prog.set_cost(epigraph, 1.0);
    let f = prog.add_vars(model.n_pairs(), Some(0.0), Some(1.0));
    for s in 0..model.n_states() {
        prog.add_eq(model.pairs_of(s).map(|k| (f[k], 1.0)).collect(), 1.0);
    }
    let costs: Vec<CostRef> = match mode {
        ReformMode::Primary => model.cost_refs(),
        ReformMode::Phase1 => (0..model.n_constraints()).map(CostRef::Constraint).collect(),
    };
    let mut slots = Vec::with_capacity(costs.len());
    for &c in &costs {
        let slot = add_dual_slot(&mut prog, inst, c, PolicyTerms::Variable(&f));
        let mut terms = slot.value_terms(inst, &w_floor);
        match (mode, c) {
            (ReformMode::Primary, CostRef::Objective) => {
                terms.push((epigraph, -1.0));
                prog.add_le(terms, 0.0);
            }
            (ReformMode::Primary, CostRef::Constraint(k)) => {
                prog.add_le(terms, model.xi[k]);
            }
            (ReformMode::Phase1, CostRef::Constraint(k)) => {
                terms.push((epigraph, -1.0));
                prog.add_le(terms, model.xi[k]);
            }
            (ReformMode::Phase1, CostRef::Objective) => unreachable!(),
        }
        slots.push(slot);
    }
    let n = model.n_states();
    let mut monomials = Vec::new();
    for (si, slot) in slots.iter().enumerate() {
        for k in 0..model.n_pairs() {
            for j in 0..n {
                monomials.push(Monomial {
                    slot: si,
                    pair: k,
                    next: j,
                    t: slot.t[model.transition_index(k, j)],
                    f: f[k],
                    varsigma: slot.varsigma[j],
                });
            }
        }
    }
    let reform = RobustReformulation {
        inst,
        form,
        mode,
        base: prog,
        epigraph,
        f,
        slots,
        monomials,
        w_floor,
    };
    debug!(
        "reformulation: {} variables before products, {} products",
        reform.variable_count(),
        reform.monomials.len()
    );
    Ok(reform)
}

impl RobustReformulation<'_> {
    /// Decision variables excluding the auxiliary product variables:
    /// `1 + Σ|A(s)| + slots · (Σℓ_p + Σℓ_sc + #cones + 2|S|)`.
    pub fn variable_count(&self) -> usize {
        self.base.n_vars() - self.monomials.len()
    }

    /// The box that leaves every policy free and `ς` unbounded.
    pub fn full_box(&self) -> NodeBox {
        let pairs = self.inst.model.n_pairs();
        let n = self.inst.model.n_states();
        NodeBox {
            f_lo: vec![0.0; pairs],
            f_hi: vec![1.0; pairs],
            sig_lo: vec![vec![f64::NEG_INFINITY; n]; self.slots.len()],
            sig_hi: vec![vec![f64::INFINITY; n]; self.slots.len()],
        }
    }

    /// Convex relaxation over `node`: McCormick envelopes for every product,
    /// plus `Σ_a t(s,a,s') = ς(s')`, which holds because `Σ_a f(s,a) = 1`.
    pub fn relaxation(&self, node: &NodeBox) -> ConicProgram {
        const FIXED: f64 = 1e-12;
        let model = &self.inst.model;
        let n = model.n_states();
        let mut prog = self.base.clone();
        for (k, &fv) in self.f.iter().enumerate() {
            prog.lower[fv] = Some(node.f_lo[k]);
            prog.upper[fv] = Some(node.f_hi[k].max(node.f_lo[k]));
        }
        for (si, slot) in self.slots.iter().enumerate() {
            for (j, &v) in slot.varsigma.iter().enumerate() {
                let (lo, hi) = (node.sig_lo[si][j], node.sig_hi[si][j]);
                prog.lower[v] = lo.is_finite().then_some(lo);
                prog.upper[v] = hi.is_finite().then_some(hi.max(lo));
            }
        }
        for m in &self.monomials {
            let (fl, fh) = (node.f_lo[m.pair], node.f_hi[m.pair]);
            let (gl, gh) = (node.sig_lo[m.slot][m.next], node.sig_hi[m.slot][m.next]);
            if fh - fl <= FIXED {
                prog.add_eq(vec![(m.t, 1.0), (m.varsigma, -fl)], 0.0);
            } else if gl.is_finite() && gh.is_finite() && gh - gl <= FIXED * (1.0 + gl.abs()) {
                prog.add_eq(vec![(m.t, 1.0), (m.f, -gl)], 0.0);
            } else if gl.is_finite() && gh.is_finite() {
                prog.add_le(vec![(m.varsigma, fl), (m.f, gl), (m.t, -1.0)], fl * gl);
                prog.add_le(vec![(m.varsigma, fh), (m.f, gh), (m.t, -1.0)], fh * gh);
                prog.add_le(vec![(m.t, 1.0), (m.varsigma, -fh), (m.f, -gl)], -fh * gl);
                prog.add_le(vec![(m.t, 1.0), (m.varsigma, -fl), (m.f, -gh)], -fl * gh);
            }
        }
        for slot in &self.slots {
            for s in 0..n {
                for j in 0..n {
                    let mut terms: Vec<(usize, f64)> = model
                        .pairs_of(s)
                        .map(|k| (slot.t[model.transition_index(k, j)], 1.0))
                        .collect();
                    terms.push((slot.varsigma[j], -1.0));
                    prog.add_eq(terms, 0.0);
                }
            }
        }
        prog
    }

    /// The reformulation with the policy pinned to `f`; its optimum is the
    /// worst-case objective (or excess) of `f`.
    pub fn fix_policy(&self, f: &StationaryPolicy) -> ConicProgram {
        let flat = f.flat();
        let mut node = self.full_box();
        node.f_lo = flat.clone();
        node.f_hi = flat;
        self.relaxation(&node)
    }

    pub fn policy_from(&self, x: &[f64]) -> Vec<f64> {
        self.f.iter().map(|&j| x[j]).collect()
    }

    pub fn varsigma_from(&self, x: &[f64], slot: usize) -> Vec<f64> {
        self.slots[slot].varsigma.iter().map(|&j| x[j]).collect()
    }
}
