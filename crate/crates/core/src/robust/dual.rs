//! Explicit dual of an inner SOCP, written out from the model data rather
//! than read off a solver, so the two can be compared.

use super::inner::{DualCertificate, InnerSocp};
use super::reform::{add_dual_slot, PolicyTerms, SlotLayout};
use super::RobustInstance;
use crate::conic::{ConicProgram, ConicSolution, ConicStatus, Sense};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DualProgram {
    pub program: ConicProgram,
    pub layout: SlotLayout,
}

/// Minimises `(1−α)γᵀς − w_floorᵀη` over certificates satisfying the
/// stationarity rows of `socp` at its fixed policy.
pub fn dualize_inner(inst: &RobustInstance, socp: &InnerSocp) -> Result<DualProgram> {
    let model = &inst.model;
    let l = &socp.layout;
    let consistent = l.w.len() == model.n_states()
        && l.z.iter().enumerate().all(|(s, z)| z.len() == model.block_dim(s))
        && l.block_rows
            .iter()
            .zip(&inst.uset.blocks)
            .all(|(r, b)| r.len() == b.n_rows())
        && l.cone_of_state
            .iter()
            .zip(&inst.uset.blocks)
            .all(|(c, b)| c.is_some() == b.soc.is_some());
    if !consistent {
        return Err(Error::Layout("inner program does not match the instance".into()));
    }
    let mut prog = ConicProgram::new(Sense::Minimize);
    let layout = add_dual_slot(&mut prog, inst, socp.cost, PolicyTerms::Fixed(&socp.policy));
    for (j, v) in layout.value_terms(inst, &socp.w_floor) {
        prog.add_cost(j, v);
    }
    Ok(DualProgram { program: prog, layout })
}

impl DualProgram {
    pub fn certificate(&self, sol: &ConicSolution) -> Result<DualCertificate> {
        if sol.status != ConicStatus::Optimal {
            return Err(Error::Solver("certificate requested from a non-optimal solve".into()));
        }
        let l = &self.layout;
        let pick = |v: &[usize]| v.iter().map(|&j| sol.x[j]).collect::<Vec<f64>>();
        Ok(DualCertificate {
            cost: l.cost,
            beta: l.beta.iter().map(|b| pick(b)).collect(),
            theta: l.theta.iter().map(|t| t.map(|j| sol.x[j])).collect(),
            mu: l.theta.iter().zip(&l.mu).map(|(t, m)| t.map(|_| pick(m))).collect(),
            eta: pick(&l.eta),
            varsigma: pick(&l.varsigma),
        })
    }
}
