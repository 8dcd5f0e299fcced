//! Worst-case evaluation of a fixed policy.
//!
//! For a policy `f` and cost `c`, the maximum of the discounted cost over the
//! uncertainty set equals the SOCP
//!
//! ```text
//! max  wᵀc_f
//! s.t. B(s) z_s − b(s) w(s) ≤ 0
//!      ‖M(s)ᵀz_s + m(s) w(s)‖ ≤ x(s)ᵀz_s + y(s) w(s)
//!      w ≥ w_floor
//!      wᵀ(I − αP̄_f) − α Σ_s z_sᵀF_f(s) = (1−α)γᵀ
//! ```
//!
//! where `w` are discounted visitation weights and `z_s = w(s) u(·|s,·)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Form, RobustInstance};
use crate::conic::{solve_conic, ConicProgram, ConicSolution, ConicStatus, Sense, SocConstraint};
use crate::error::{Error, Result};
use crate::model::{policy_matrices, CostRef, PolicyMatrices, StationaryPolicy};
use crate::uncertainty::{check_membership, project_onto_block};

/// Tolerance for inner solves; tight enough for 1e-7 comparisons.
pub const INNER_TOL: f64 = 1e-10;

/// Variable and row positions of an inner SOCP.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLayout {
    pub w: Vec<usize>,
    pub z: Vec<Vec<usize>>,
    /// Inequality rows of each state's polyhedral block.
    pub block_rows: Vec<Range<usize>>,
    pub cone_of_state: Vec<Option<usize>>,
    /// Equality row of each flow constraint, indexed by next state.
    pub flow_rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct InnerSocp {
    pub program: ConicProgram,
    pub layout: InnerLayout,
    pub cost: CostRef,
    pub form: Form,
    pub policy: StationaryPolicy,
    pub matrices: PolicyMatrices,
    pub w_floor: DVector<f64>,
}

pub fn build_inner_socp(inst: &RobustInstance, f: &StationaryPolicy, cost: CostRef, form: Form) -> Result<InnerSocp> {
    let model = &inst.model;
    if let CostRef::Constraint(k) = cost {
        if k >= model.n_constraints() {
            return Err(Error::InvalidInput(format!("constraint {k} does not exist")));
        }
    }
    let w_floor = inst.w_floor(form)?;
    let pm = policy_matrices(model, f, &model.p_bar)?;
    let n = model.n_states();
    let alpha = model.alpha;

    let mut prog = ConicProgram::new(Sense::Maximize);
    let w: Vec<usize> = (0..n).map(|s| prog.add_var(Some(w_floor[s]), None)).collect();
    let z: Vec<Vec<usize>> = (0..n).map(|s| prog.add_vars(model.block_dim(s), None, None)).collect();
    let c_f = pm.cost_f(cost);
    for s in 0..n {
        prog.set_cost(w[s], c_f[s]);
    }

    let mut block_rows = Vec::with_capacity(n);
    let mut cone_of_state = Vec::with_capacity(n);
    for (s, block) in inst.uset.blocks.iter().enumerate() {
        let start = prog.inequalities.len();
        for r in 0..block.n_rows() {
            let mut terms: Vec<(usize, f64)> = block
                .b_mat
                .row(r)
                .iter()
                .zip(&z[s])
                .filter(|(v, _)| **v != 0.0)
                .map(|(v, &j)| (j, *v))
                .collect();
            if block.b_vec[r] != 0.0 {
                terms.push((w[s], -block.b_vec[r]));
            }
            prog.add_le(terms, 0.0);
        }
        block_rows.push(start..prog.inequalities.len());
        cone_of_state.push(block.soc.as_ref().map(|soc| {
            let g_rows = (0..soc.m_mat.ncols())
                .map(|l| {
                    let mut row: Vec<(usize, f64)> = soc
                        .m_mat
                        .column(l)
                        .iter()
                        .zip(&z[s])
                        .filter(|(v, _)| **v != 0.0)
                        .map(|(v, &j)| (j, *v))
                        .collect();
                    if soc.m_vec[l] != 0.0 {
                        row.push((w[s], soc.m_vec[l]));
                    }
                    row
                })
                .collect();
            let mut h: Vec<(usize, f64)> = soc
                .x
                .iter()
                .zip(&z[s])
                .filter(|(v, _)| **v != 0.0)
                .map(|(v, &j)| (j, *v))
                .collect();
            if soc.y != 0.0 {
                h.push((w[s], soc.y));
            }
            prog.add_soc(SocConstraint {
                g_rows,
                g: vec![0.0; soc.m_vec.len()],
                h,
                k: 0.0,
            })
        }));
    }

    let mut flow_rows = Vec::with_capacity(n);
    for target in 0..n {
        let mut terms = Vec::new();
        for s in 0..n {
            let coef = if s == target { 1.0 } else { 0.0 } - alpha * pm.p_f[(s, target)];
            if coef != 0.0 {
                terms.push((w[s], coef));
            }
            for (a, _) in model.pairs_of(s).enumerate() {
                let fa = f.prob(s, a);
                if fa != 0.0 {
                    terms.push((z[s][a * n + target], -alpha * fa));
                }
            }
        }
        flow_rows.push(prog.add_eq(terms, (1.0 - alpha) * model.gamma[target]));
    }

    Ok(InnerSocp {
        program: prog,
        layout: InnerLayout {
            w,
            z,
            block_rows,
            cone_of_state,
            flow_rows,
        },
        cost,
        form,
        policy: f.clone(),
        matrices: pm,
        w_floor,
    })
}

/// Multipliers of an inner SOCP, named after their role in the dual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub cost: CostRef,
    /// Per state, one entry per polyhedral row.
    pub beta: Vec<Vec<f64>>,
    pub theta: Vec<Option<f64>>,
    pub mu: Vec<Option<Vec<f64>>>,
    pub eta: Vec<f64>,
    pub varsigma: Vec<f64>,
}

impl DualCertificate {
    /// Dual objective `(1−α)γᵀς − w_floorᵀη`.
    pub fn objective(&self, alpha: f64, gamma: &DVector<f64>, w_floor: &DVector<f64>) -> f64 {
        (1.0 - alpha) * gamma.iter().zip(&self.varsigma).map(|(g, v)| g * v).sum::<f64>()
            - w_floor.iter().zip(&self.eta).map(|(w, e)| w * e).sum::<f64>()
    }
}

pub fn extract_duals(sol: &ConicSolution, socp: &InnerSocp) -> Result<DualCertificate> {
    if sol.status != ConicStatus::Optimal {
        return Err(Error::Solver("duals requested from a non-optimal solve".into()));
    }
    let l = &socp.layout;
    if sol.le_duals.len() != socp.program.inequalities.len()
        || sol.cone_duals.len() != socp.program.cones.len()
        || sol.eq_duals.len() != socp.program.equalities.len()
    {
        return Err(Error::Layout("solution does not belong to this program".into()));
    }
    Ok(DualCertificate {
        cost: socp.cost,
        beta: l.block_rows.iter().map(|r| sol.le_duals[r.clone()].to_vec()).collect(),
        theta: l
            .cone_of_state
            .iter()
            .map(|c| c.map(|i| sol.cone_duals[i].theta))
            .collect(),
        mu: l
            .cone_of_state
            .iter()
            .map(|c| c.map(|i| sol.cone_duals[i].mu.clone()))
            .collect(),
        eta: l.w.iter().map(|&j| sol.lower_duals[j]).collect(),
        varsigma: l.flow_rows.iter().map(|&r| sol.eq_duals[r]).collect(),
    })
}

/// Residuals of the stationarity rows and the cone condition of a
/// certificate at policy `f`: `(state rows, coordinate rows, cone violation)`.
pub fn dual_residuals(inst: &RobustInstance, f: &StationaryPolicy, cert: &DualCertificate) -> Result<(f64, f64, f64)> {
    let model = &inst.model;
    let pm = policy_matrices(model, f, &model.p_bar)?;
    let alpha = model.alpha;
    let c_f = pm.cost_f(cert.cost);
    let sig = DVector::from_column_slice(&cert.varsigma);
    let mut r_state = 0.0f64;
    let mut r_coord = 0.0f64;
    let mut r_cone = 0.0f64;
    for (s, block) in inst.uset.blocks.iter().enumerate() {
        let beta = DVector::from_column_slice(&cert.beta[s]);
        let mut row =
            c_f[s] + block.b_vec.dot(&beta) + cert.eta[s] - cert.varsigma[s] + alpha * (pm.p_f.row(s) * &sig)[0];
        let mut coord = block.b_mat.transpose() * &beta - &pm.selectors[s] * &sig * alpha;
        if let (Some(soc), Some(theta), Some(mu)) = (&block.soc, cert.theta[s], &cert.mu[s]) {
            let mu = DVector::from_column_slice(mu);
            row += soc.m_vec.dot(&mu) + soc.y * theta;
            coord -= &soc.m_mat * &mu + &soc.x * theta;
            r_cone = r_cone.max(mu.norm() - theta);
        }
        r_state = r_state.max(row.abs());
        r_coord = r_coord.max(coord.amax());
        r_cone = r_cone.max(-beta.min()).max(-cert.eta[s]);
    }
    Ok((r_state, r_coord, r_cone))
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub value: f64,
    pub dual_value: f64,
    pub w: DVector<f64>,
    /// Maximising deviation `u = z / w`, one entry per transition.
    pub u: DVector<f64>,
    pub certificate: DualCertificate,
    pub reduced_accuracy: bool,
}

pub fn solve_inner(inst: &RobustInstance, f: &StationaryPolicy, cost: CostRef, form: Form) -> Result<InnerSolution> {
    let socp = build_inner_socp(inst, f, cost, form)?;
    let sol = solve_conic(&socp.program, INNER_TOL)?;
    match sol.status {
        ConicStatus::Optimal => {}
        ConicStatus::Infeasible => {
            return Err(Error::Infeasible(
                "inner problem is infeasible; the uncertainty set is malformed".into(),
            ))
        }
        other => return Err(Error::Solver(format!("inner problem ended with status {other:?}"))),
    }
    let certificate = extract_duals(&sol, &socp)?;
    let model = &inst.model;
    let w = DVector::from_iterator(model.n_states(), socp.layout.w.iter().map(|&j| sol.x[j]));
    let mut u = DVector::zeros(model.transition_len());
    for s in 0..model.n_states() {
        let range = model.block_range(s);
        let block = &inst.uset.blocks[s];
        let mut us: Vec<f64> = if w[s] > 1e-12 {
            socp.layout.z[s].iter().map(|&j| sol.x[j] / w[s]).collect()
        } else {
            vec![0.0; block.dim()]
        };
        if block.violation(&us) > 1e-9 {
            us = project_onto_block(block, &us)?;
        }
        u.as_mut_slice()[range].copy_from_slice(&us);
    }
    Ok(InnerSolution {
        value: sol.primal_objective,
        dual_value: sol.dual_objective,
        w,
        u,
        certificate,
        reduced_accuracy: sol.reduced_accuracy,
    })
}

/// Worst-case objective and constraint costs of a policy.
#[derive(Debug, Clone)]
pub struct WorstCase {
    pub objective: f64,
    pub constraints: Vec<f64>,
    /// Maximising deviation per cost, objective first.
    pub maximizers: Vec<DVector<f64>>,
    pub certificates: Vec<DualCertificate>,
}

impl WorstCase {
    pub fn value(&self, which: CostRef) -> f64 {
        match which {
            CostRef::Objective => self.objective,
            CostRef::Constraint(k) => self.constraints[k],
        }
    }

    /// `max_k (D_k − ξ_k)`, or `-inf` without constraints.
    pub fn max_excess(&self, xi: &[f64]) -> f64 {
        self.constraints
            .iter()
            .zip(xi)
            .map(|(d, x)| d - x)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, xi: &[f64], tol: f64) -> bool {
        self.max_excess(xi) <= tol
    }
}

/// Solves one inner SOCP per cost, in parallel, with the instance's form.
pub fn worst_case_costs(inst: &RobustInstance, f: &StationaryPolicy) -> Result<WorstCase> {
    worst_case_costs_with(inst, f, inst.form)
}

pub fn worst_case_costs_with(inst: &RobustInstance, f: &StationaryPolicy, form: Form) -> Result<WorstCase> {
    let refs = inst.model.cost_refs();
    let sols: Vec<InnerSolution> = refs
        .par_iter()
        .map(|&c| solve_inner(inst, f, c, form))
        .collect::<Result<Vec<_>>>()?;
    for s in &sols {
        let m = check_membership(&inst.model, &inst.uset, &s.u, 1e-6)?;
        if !m.member {
            return Err(Error::Solver(format!(
                "recovered deviation violates the set by {}",
                m.worst_violation
            )));
        }
    }
    let mut it = sols.into_iter();
    let first = it.next().expect("objective is always present");
    let mut out = WorstCase {
        objective: first.value,
        constraints: Vec::new(),
        maximizers: vec![first.u],
        certificates: vec![first.certificate],
    };
    for s in it {
        out.constraints.push(s.value);
        out.maximizers.push(s.u);
        out.certificates.push(s.certificate);
    }
    Ok(out)
}

/// Kernel `p̄ + u` as a dense matrix.
pub fn shifted_kernel(inst: &RobustInstance, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    inst.model.kernel_with(u)
}
