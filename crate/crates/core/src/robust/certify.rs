//! Independent re-check of a solve report at its incumbent.

use serde::{Deserialize, Serialize};

use super::bnb::{RobustSolveReport, SolveStatus};
use super::inner::{dual_residuals, worst_case_costs, DualCertificate};
use super::local::FEAS_TOL;
use super::RobustInstance;
use crate::error::{Error, Result};

/// Relative tolerance on the recomputed upper bound.
pub const UB_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateLog {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub constraints: Vec<f64>,
    pub xi: Vec<f64>,
    /// One certificate per cost, objective first; empty without an incumbent.
    pub certificates: Vec<DualCertificate>,
    /// Largest stationarity or cone residual over all certificates.
    pub max_residual: f64,
    pub notes: Vec<String>,
}

/// Re-solves the inner problems at the report's incumbent and checks the
/// reported upper bound and the constraint bounds.
pub fn certify_solution(inst: &RobustInstance, report: &RobustSolveReport) -> Result<CertificateLog> {
    let xi = inst.model.xi.clone();
    let Some(policy) = report.policy.as_ref() else {
        let note = match report.status {
            SolveStatus::Infeasible => "no incumbent: the problem was proved infeasible",
            _ => "no incumbent to certify",
        };
        return Ok(CertificateLog {
            status: report.status,
            objective: None,
            constraints: Vec::new(),
            xi,
            certificates: Vec::new(),
            max_residual: 0.0,
            notes: vec![note.into()],
        });
    };
    let wc = worst_case_costs(inst, policy)?;
    let mut notes = Vec::new();
    let diff = (wc.objective - report.upper_bound).abs();
    if diff > UB_TOL * (1.0 + report.upper_bound.abs()) {
        return Err(Error::Certification(format!(
            "recomputed worst-case objective {} differs from the reported bound {}",
            wc.objective, report.upper_bound
        )));
    }
    for (k, (d, x)) in wc.constraints.iter().zip(&xi).enumerate() {
        if *d > x + FEAS_TOL {
            return Err(Error::Certification(format!(
                "constraint {} has worst case {d} above {x}",
                k + 1
            )));
        }
        notes.push(format!("d{}: {d:.6} <= {x}", k + 1));
    }
    let mut max_residual = 0.0f64;
    for cert in &wc.certificates {
        let (a, b, c) = dual_residuals(inst, policy, cert)?;
        max_residual = max_residual.max(a).max(b).max(c);
    }
    if max_residual > 1e-6 {
        notes.push(format!("certificate residual {max_residual:.3e} exceeds 1e-6"));
    }
    Ok(CertificateLog {
        status: report.status,
        objective: Some(wc.objective),
        constraints: wc.constraints,
        xi,
        certificates: wc.certificates,
        max_residual,
        notes,
    })
}
