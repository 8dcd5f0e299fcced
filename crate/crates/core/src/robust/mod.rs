//! Robust CMDP machinery: worst-case evaluation of a fixed policy through
//! its SOCP reformulation, the hand-built dual of that SOCP, the bilinear
//! reformulation over policies, and global and local solvers for it.

pub mod bnb;
pub mod certify;
pub mod dual;
pub mod inner;
pub mod local;
pub mod reform;
pub mod values;

use log::{info, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model, CmdpModel};
use crate::uncertainty::{check_assumptions, validity_violations, AssumptionReport, CoordinateBounds, UncertaintySet};

pub use bnb::{solve_robust_global, Budget, RobustSolveReport, SolveStatus};
pub use certify::{certify_solution, CertificateLog};
pub use dual::{dualize_inner, DualProgram};
pub use inner::{build_inner_socp, worst_case_costs, DualCertificate, InnerSocp, WorstCase};
pub use local::{local_search_incumbent, LocalSearchResult};
pub use reform::{assemble_reformulation, ReformMode, RobustReformulation};

/// Which lower bound on the visitation weights `w` the inner problems use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// `w ≥ (1-α)γ`; needs a strictly positive initial distribution.
    Standard,
    /// `w ≥ (1-α)(I - αP_min)^{-T}γ`; needs those weights to be positive.
    Pmin,
}

impl std::str::FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Form::Standard),
            "pmin" => Ok(Form::Pmin),
            other => Err(Error::InvalidInput(format!("unknown form {other:?}"))),
        }
    }
}

impl std::fmt::Display for Form {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Form::Standard => "standard",
            Form::Pmin => "pmin",
        })
    }
}

/// A validated model and uncertainty set together with everything derived
/// from them once: interval hulls, `P_min` and the assumption report.
#[derive(Debug, Clone)]
pub struct RobustInstance {
    pub model: CmdpModel,
    pub uset: UncertaintySet,
    pub form: Form,
    pub assumptions: AssumptionReport,
    /// True when every kernel `p̄ + u` with `u` in the set is stochastic.
    pub kernels_valid: bool,
}

impl RobustInstance {
    /// Checks the model and the assumptions; picks the standard form when the
    /// initial distribution is positive and the `P_min` form otherwise.
    pub fn new(model: CmdpModel, uset: UncertaintySet, form: Option<Form>) -> Result<Self> {
        let violations = validate_model(&model);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidInput(format!("invalid model: {}", text.join("; "))));
        }
        if uset.blocks.len() != model.n_states() {
            return Err(Error::Dimension("uncertainty set does not match the model".into()));
        }
        let assumptions = check_assumptions(&model, &uset)?;
        if !assumptions.a2 {
            warn!("a cone block has no strictly feasible point; duality gaps are possible");
        }
        let form = match form {
            Some(f) => f,
            None if assumptions.a1 => Form::Standard,
            None if assumptions.a3 => Form::Pmin,
            None => {
                return Err(Error::Assumption(
                    "neither a positive initial distribution nor positive P_min weights".into(),
                ))
            }
        };
        let bad = validity_violations(&model, &assumptions.bounds);
        if !bad.is_empty() {
            warn!("{} transitions can leave [0, 1] under the uncertainty set", bad.len());
        }
        let inst = Self {
            model,
            uset,
            form,
            assumptions,
            kernels_valid: bad.is_empty(),
        };
        inst.w_floor(form)?;
        info!(
            "robust instance ready: {} states, {} pairs, form {form}",
            inst.model.n_states(),
            inst.model.n_pairs()
        );
        Ok(inst)
    }

    pub fn with_form(&self, form: Form) -> Result<Self> {
        self.w_floor(form)?;
        let mut out = self.clone();
        out.form = form;
        Ok(out)
    }

    pub fn bounds(&self) -> &CoordinateBounds {
        &self.assumptions.bounds
    }

    /// Lower bound on `w` used by `form`; also the weight on `η` in the dual
    /// objective.
    pub fn w_floor(&self, form: Form) -> Result<DVector<f64>> {
        let scale = 1.0 - self.model.alpha;
        match form {
            Form::Standard if self.assumptions.a1 => Ok(&self.model.gamma * scale),
            Form::Standard => Err(Error::Assumption("standard form needs gamma > 0 in every state".into())),
            Form::Pmin if self.assumptions.a3 => Ok(&self.assumptions.p_min.weights * scale),
            Form::Pmin => Err(Error::Assumption("P_min form needs positive P_min weights".into())),
        }
    }

    /// True when the set is `{0}` up to solver accuracy.
    pub fn is_degenerate(&self) -> bool {
        let b = self.bounds();
        b.lower.iter().chain(b.upper.iter()).all(|v| v.abs() <= 1e-9)
    }
}
