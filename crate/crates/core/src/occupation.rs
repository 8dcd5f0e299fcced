//! Occupation measures and the nominal linear program over them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, ConicProgram, ConicStatus, Sense, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::model::{policy_matrices, state_weights, CmdpModel, StationaryPolicy};

/// Marginals at or below this are treated as unvisited.
pub const ZERO_MARGINAL: f64 = 1e-12;

/// Discounted state-action frequencies, stored per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    pub rho: Vec<f64>,
}

impl OccupationMeasure {
    /// Largest absolute residual of the flow equations under `kernel`.
    pub fn flow_residual(&self, model: &CmdpModel, kernel: &DMatrix<f64>) -> f64 {
        let n = model.n_states();
        let mut lhs = vec![0.0; n];
        for (k, &r) in self.rho.iter().enumerate() {
            lhs[model.state_of_pair(k)] += r;
            for (j, l) in lhs.iter_mut().enumerate() {
                *l -= model.alpha * r * kernel[(k, j)];
            }
        }
        lhs.iter()
            .enumerate()
            .map(|(j, l)| (l - (1.0 - model.alpha) * model.gamma[j]).abs())
            .fold(0.0, f64::max)
    }

    pub fn value(&self, costs: &nalgebra::DVector<f64>) -> f64 {
        self.rho.iter().zip(costs.iter()).map(|(r, c)| r * c).sum()
    }
}

/// `f(s,a) = ρ(s,a) / Σ_a ρ(s,a)`, uniform on states with no mass.
pub fn recover_policy(model: &CmdpModel, rho: &OccupationMeasure) -> Result<StationaryPolicy> {
    if rho.rho.len() != model.n_pairs() {
        return Err(Error::Dimension("occupation measure has wrong length".into()));
    }
    let rows = (0..model.n_states())
        .map(|s| {
            let block: Vec<f64> = rho.rho[model.pairs_of(s)].iter().map(|&r| r.max(0.0)).collect();
            let total: f64 = block.iter().sum();
            if total <= ZERO_MARGINAL {
                vec![1.0 / block.len() as f64; block.len()]
            } else {
                block.iter().map(|r| r / total).collect()
            }
        })
        .collect();
    StationaryPolicy::new(model, rows)
}

/// Occupation measure induced by `f` under `kernel`.
pub fn occupation_of_policy(
    model: &CmdpModel,
    f: &StationaryPolicy,
    kernel: &DMatrix<f64>,
) -> Result<OccupationMeasure> {
    let pm = policy_matrices(model, f, kernel)?;
    let w = state_weights(model, &pm.p_f)?;
    let mut rho = vec![0.0; model.n_pairs()];
    for s in 0..model.n_states() {
        for (a, k) in model.pairs_of(s).enumerate() {
            rho[k] = w[s] * f.prob(s, a);
        }
    }
    Ok(OccupationMeasure { rho })
}

/// The nominal LP: minimise `Σ ρ c` over flow-feasible `ρ ≥ 0` with
/// `Σ ρ d^k ≤ ξ_k`. Variable `k` of the program is `ρ` of pair `k`.
pub fn occupation_lp(model: &CmdpModel, kernel: &DMatrix<f64>) -> Result<ConicProgram> {
    if kernel.nrows() != model.n_pairs() || kernel.ncols() != model.n_states() {
        return Err(Error::Dimension("kernel does not match model".into()));
    }
    let n = model.n_states();
    let mut prog = ConicProgram::new(Sense::Minimize);
    let rho = prog.add_vars(model.n_pairs(), Some(0.0), None);
    for (k, &v) in rho.iter().enumerate() {
        prog.set_cost(v, model.c[k]);
    }
    for target in 0..n {
        let terms = rho
            .iter()
            .enumerate()
            .filter_map(|(k, &v)| {
                let delta = if model.state_of_pair(k) == target { 1.0 } else { 0.0 };
                let coef = delta - model.alpha * kernel[(k, target)];
                (coef != 0.0).then_some((v, coef))
            })
            .collect();
        prog.add_eq(terms, (1.0 - model.alpha) * model.gamma[target]);
    }
    for (dk, &xi) in model.d.iter().zip(&model.xi) {
        prog.add_le(rho.iter().enumerate().map(|(k, &v)| (v, dk[k])).collect(), xi);
    }
    Ok(prog)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalSolution {
    pub status: ConicStatus,
    pub value: f64,
    pub occupation: Option<OccupationMeasure>,
    pub policy: Option<StationaryPolicy>,
}

pub fn solve_occupation_lp(model: &CmdpModel, kernel: &DMatrix<f64>, tol: f64) -> Result<NominalSolution> {
    let prog = occupation_lp(model, kernel)?;
    let sol = solve_conic(&prog, tol)?;
    if !sol.is_optimal() {
        return Ok(NominalSolution {
            status: sol.status,
            value: f64::NAN,
            occupation: None,
            policy: None,
        });
    }
    let occ = OccupationMeasure {
        rho: sol.x.iter().map(|r| r.max(0.0)).collect(),
    };
    let policy = recover_policy(model, &occ)?;
    Ok(NominalSolution {
        status: sol.status,
        value: sol.primal_objective,
        occupation: Some(occ),
        policy: Some(policy),
    })
}

/// Nominal LP with the model's own kernel.
pub fn solve_nominal(model: &CmdpModel) -> Result<NominalSolution> {
    solve_occupation_lp(model, &model.p_bar, DEFAULT_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::names;
    use crate::model::{evaluate_policy, ModelParts};
    use nalgebra::DVector;

    fn two_action_model() -> CmdpModel {
        CmdpModel::new(ModelParts {
            states: names("s", 2),
            actions: vec![vec!["a1".into(), "a2".into()], vec!["a1".into(), "a2".into()]],
            alpha: 0.7,
            gamma: DVector::from_vec(vec![0.4, 0.6]),
            p_bar: DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7]),
            c: DVector::from_vec(vec![1.0, 3.0, 2.0, 0.5]),
            d: vec![DVector::from_vec(vec![4.0, 1.0, 2.0, 3.0])],
            xi: vec![2.5],
        })
        .unwrap()
    }

    #[test]
    fn recover_normalizes_and_defaults_to_uniform() {
        let m = two_action_model();
        let occ = OccupationMeasure {
            rho: vec![0.3, 0.1, 0.0, 0.0],
        };
        let f = recover_policy(&m, &occ).unwrap();
        assert!((f.prob(0, 0) - 0.75).abs() < 1e-15);
        assert!((f.prob(0, 1) - 0.25).abs() < 1e-15);
        assert_eq!(f.rows()[1], vec![0.5, 0.5]);
    }

    #[test]
    fn policy_occupation_round_trip() {
        let m = two_action_model();
        let f = StationaryPolicy::new(&m, vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let occ = occupation_of_policy(&m, &f, &m.p_bar).unwrap();
        assert!(occ.flow_residual(&m, &m.p_bar) < 1e-12);
        let back = recover_policy(&m, &occ).unwrap();
        for (r1, r2) in back.rows().iter().zip(f.rows()) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let e = evaluate_policy(&m, &f, &m.p_bar).unwrap();
        assert!((occ.value(&m.c) - e.objective).abs() < 1e-10);
    }

    #[test]
    fn lp_solution_is_flow_feasible_and_respects_budget() {
        let m = two_action_model();
        let sol = solve_nominal(&m).unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        let occ = sol.occupation.unwrap();
        assert!(occ.flow_residual(&m, &m.p_bar) < 1e-7);
        assert!(occ.value(&m.d[0]) <= 2.5 + 1e-7);
        let e = evaluate_policy(&m, &sol.policy.unwrap(), &m.p_bar).unwrap();
        assert!((e.objective - sol.value).abs() < 1e-6);
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let mut m = two_action_model();
        m.xi[0] = 0.1;
        let sol = solve_nominal(&m).unwrap();
        assert_eq!(sol.status, ConicStatus::Infeasible);
        assert!(sol.policy.is_none());
    }
}
