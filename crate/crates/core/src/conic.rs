//! Linear and second-order cone programs in a single standard form.
//!
//! A [`ConicProgram`] collects sparse linear equalities, `≤` inequalities,
//! cone constraints `‖G x + g‖₂ ≤ hᵀx + k` and variable bounds. Solves are
//! delegated to the Clarabel interior-point method.
//!
//! Dual multipliers follow one convention for both senses. With `σ = +1`
//! for maximisation and `σ = -1` for minimisation, an optimal solution
//! satisfies
//!
//! ```text
//! σ c = A_eqᵀ y + A_leᵀ λ − Σ_i (h_i θ_i + G_iᵀ μ_i) + ν_upper − ν_lower
//! ```
//!
//! with `λ, ν ≥ 0` and `‖μ_i‖₂ ≤ θ_i`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_ITER: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Minimize => -1.0,
            Sense::Maximize => 1.0,
        }
    }
}

/// Sparse row `Σ coef·x[idx]` compared against `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `‖G x + g‖₂ ≤ hᵀx + k`, with `G` stored as sparse rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocConstraint {
    pub g_rows: Vec<Vec<(usize, f64)>>,
    pub g: Vec<f64>,
    pub h: Vec<(usize, f64)>,
    pub k: f64,
}

impl SocConstraint {
    /// `hᵀx + k − ‖Gx + g‖₂`; nonnegative exactly when the constraint holds.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let norm = self
            .g_rows
            .iter()
            .zip(&self.g)
            .map(|(row, g0)| {
                let v = dot_sparse(row, x) + g0;
                v * v
            })
            .sum::<f64>()
            .sqrt();
        dot_sparse(&self.h, x) + self.k - norm
    }
}

fn dot_sparse(terms: &[(usize, f64)], x: &[f64]) -> f64 {
    terms.iter().map(|&(j, v)| v * x[j]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub equalities: Vec<LinearConstraint>,
    pub inequalities: Vec<LinearConstraint>,
    pub cones: Vec<SocConstraint>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl ConicProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            objective_offset: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            cones: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, lower: Option<f64>, upper: Option<f64>) -> usize {
        self.objective.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, lower: Option<f64>, upper: Option<f64>) -> Vec<usize> {
        (0..count).map(|_| self.add_var(lower, upper)).collect()
    }

    pub fn set_cost(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub fn add_cost(&mut self, var: usize, coef: f64) {
        self.objective[var] += coef;
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.equalities.push(LinearConstraint { terms, rhs });
        self.equalities.len() - 1
    }

    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.inequalities.push(LinearConstraint { terms, rhs });
        self.inequalities.len() - 1
    }

    /// Stored as the negated `≤` row.
    pub fn add_ge(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        let terms = terms.into_iter().map(|(j, v)| (j, -v)).collect();
        self.add_le(terms, -rhs)
    }

    pub fn add_soc(&mut self, cone: SocConstraint) -> usize {
        self.cones.push(cone);
        self.cones.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension("bound vectors do not match variable count".into()));
        }
        let check = |terms: &[(usize, f64)], what: &str| -> Result<()> {
            match terms.iter().find(|(j, v)| *j >= n || !v.is_finite()) {
                Some((j, v)) => Err(Error::Dimension(format!(
                    "{what} references variable {j} with coefficient {v}"
                ))),
                None => Ok(()),
            }
        };
        for row in self.equalities.iter().chain(&self.inequalities) {
            check(&row.terms, "linear row")?;
            if !row.rhs.is_finite() {
                return Err(Error::InvalidInput("non-finite right-hand side".into()));
            }
        }
        for cone in &self.cones {
            if cone.g_rows.len() != cone.g.len() {
                return Err(Error::Dimension("cone G and g disagree".into()));
            }
            check(&cone.h, "cone h")?;
            for row in &cone.g_rows {
                check(row, "cone G")?;
            }
        }
        for j in 0..n {
            if let (Some(l), Some(u)) = (self.lower[j], self.upper[j]) {
                if l > u {
                    return Err(Error::InvalidInput(format!("variable {j} has empty bounds [{l}, {u}]")));
                }
            }
        }
        Ok(())
    }

    /// Objective value including the constant offset.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.objective_offset
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.equalities {
            worst = worst.max((dot_sparse(&row.terms, x) - row.rhs).abs());
        }
        for row in &self.inequalities {
            worst = worst.max(dot_sparse(&row.terms, x) - row.rhs);
        }
        for cone in &self.cones {
            worst = worst.max(-cone.slack(x));
        }
        for (j, &v) in x.iter().enumerate() {
            if let Some(l) = self.lower[j] {
                worst = worst.max(l - v);
            }
            if let Some(u) = self.upper[j] {
                worst = worst.max(v - u);
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Multipliers of one cone constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeDual {
    pub theta: f64,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    /// Set when the solver stopped at its relaxed tolerances.
    pub reduced_accuracy: bool,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub le_duals: Vec<f64>,
    pub cone_duals: Vec<ConeDual>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: u32,
}

impl ConicSolution {
    fn failed(status: ConicStatus, prog: &ConicProgram) -> Self {
        let n = prog.n_vars();
        Self {
            status,
            reduced_accuracy: false,
            x: vec![f64::NAN; n],
            eq_duals: vec![],
            le_duals: vec![],
            cone_duals: vec![],
            lower_duals: vec![],
            upper_duals: vec![],
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }
}

#[derive(Clone, Copy)]
enum BoundRow {
    Fixed(usize),
    Upper(usize),
    Lower(usize),
}

struct Assembled {
    rows: usize,
    ti: Vec<usize>,
    tj: Vec<usize>,
    tv: Vec<f64>,
    b: Vec<f64>,
}

impl Assembled {
    fn push_row(&mut self, terms: &[(usize, f64)], scale: f64, rhs: f64) {
        for &(j, v) in terms {
            if v != 0.0 {
                self.ti.push(self.rows);
                self.tj.push(j);
                self.tv.push(scale * v);
            }
        }
        self.b.push(rhs);
        self.rows += 1;
    }
}

/// Solves `prog` to relative and absolute tolerance `tol`.
///
/// Infeasible and unbounded programs are reported through
/// [`ConicSolution::status`]; only malformed programs return `Err`.
pub fn solve_conic(prog: &ConicProgram, tol: f64) -> Result<ConicSolution> {
    prog.validate()?;
    let n = prog.n_vars();
    let sign = prog.sense.sign();

    let mut bound_rows_zero = Vec::new();
    let mut bound_rows_nn = Vec::new();
    for j in 0..n {
        match (prog.lower[j], prog.upper[j]) {
            (Some(l), Some(u)) if l == u => bound_rows_zero.push((BoundRow::Fixed(j), l)),
            (l, u) => {
                if let Some(u) = u {
                    bound_rows_nn.push((BoundRow::Upper(j), u));
                }
                if let Some(l) = l {
                    bound_rows_nn.push((BoundRow::Lower(j), l));
                }
            }
        }
    }

    let mut asm = Assembled {
        rows: 0,
        ti: vec![],
        tj: vec![],
        tv: vec![],
        b: vec![],
    };
    for row in &prog.equalities {
        asm.push_row(&row.terms, 1.0, row.rhs);
    }
    for &(kind, val) in &bound_rows_zero {
        if let BoundRow::Fixed(j) = kind {
            asm.push_row(&[(j, 1.0)], 1.0, val);
        }
    }
    let n_zero = asm.rows;
    for row in &prog.inequalities {
        asm.push_row(&row.terms, 1.0, row.rhs);
    }
    for &(kind, val) in &bound_rows_nn {
        match kind {
            BoundRow::Upper(j) => asm.push_row(&[(j, 1.0)], 1.0, val),
            BoundRow::Lower(j) => asm.push_row(&[(j, 1.0)], -1.0, -val),
            BoundRow::Fixed(_) => unreachable!(),
        }
    }
    let n_nonneg = asm.rows - n_zero;
    let mut cone_dims = Vec::with_capacity(prog.cones.len());
    for cone in &prog.cones {
        asm.push_row(&cone.h, -1.0, cone.k);
        for (row, g0) in cone.g_rows.iter().zip(&cone.g) {
            asm.push_row(row, -1.0, *g0);
        }
        cone_dims.push(1 + cone.g_rows.len());
    }

    let mut cones = Vec::new();
    if n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_zero));
    }
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }
    for &d in &cone_dims {
        cones.push(SupportedConeT::SecondOrderConeT(d));
    }

    let q: Vec<f64> = prog.objective.iter().map(|c| -sign * c).collect();
    let p = CscMatrix::<f64>::zeros((n, n));
    let a = CscMatrix::new_from_triplets(asm.rows, n, asm.ti, asm.tj, asm.tv);

    let settings = DefaultSettings::<f64> {
        max_iter: MAX_ITER,
        verbose: false,
        tol_gap_abs: tol,
        tol_gap_rel: tol,
        tol_feas: tol,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &asm.b, &cones, settings)
        .map_err(|e| Error::Solver(format!("solver setup failed: {e}")))?;
    solver.solve();
    let sol = &solver.solution;

    let (status, reduced) = match sol.status {
        SolverStatus::Solved => (ConicStatus::Optimal, false),
        SolverStatus::AlmostSolved => (ConicStatus::Optimal, true),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => (ConicStatus::Infeasible, false),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => (ConicStatus::Unbounded, false),
        _ => (ConicStatus::NumericalFailure, false),
    };
    if status != ConicStatus::Optimal {
        let mut out = ConicSolution::failed(status, prog);
        out.iterations = sol.iterations;
        return Ok(out);
    }

    let z = &sol.z;
    let n_eq = prog.equalities.len();
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for (i, &(kind, _)) in bound_rows_zero.iter().enumerate() {
        if let BoundRow::Fixed(j) = kind {
            let y = z[n_eq + i];
            upper_duals[j] = y.max(0.0);
            lower_duals[j] = (-y).max(0.0);
        }
    }
    let n_le = prog.inequalities.len();
    for (i, &(kind, _)) in bound_rows_nn.iter().enumerate() {
        let v = z[n_zero + n_le + i];
        match kind {
            BoundRow::Upper(j) => upper_duals[j] = v,
            BoundRow::Lower(j) => lower_duals[j] = v,
            BoundRow::Fixed(_) => unreachable!(),
        }
    }
    let mut offset = n_zero + n_nonneg;
    let mut cone_duals = Vec::with_capacity(cone_dims.len());
    for &d in &cone_dims {
        cone_duals.push(ConeDual {
            theta: z[offset],
            mu: z[offset + 1..offset + d].to_vec(),
        });
        offset += d;
    }
    let bz: f64 = asm.b.iter().zip(z).map(|(b, z)| b * z).sum();

    Ok(ConicSolution {
        status,
        reduced_accuracy: reduced,
        x: sol.x.clone(),
        eq_duals: z[..n_eq].to_vec(),
        le_duals: z[n_zero..n_zero + n_le].to_vec(),
        cone_duals,
        lower_duals,
        upper_duals,
        primal_objective: prog.objective_value(&sol.x),
        dual_objective: sign * bz + prog.objective_offset,
        iterations: sol.iterations,
    })
}

/// Infinity norm of `σc − (A_eqᵀy + A_leᵀλ − Σ(hθ + Gᵀμ) + ν_u − ν_l)`.
pub fn stationarity_residual(prog: &ConicProgram, sol: &ConicSolution) -> f64 {
    let sign = prog.sense.sign();
    let mut r: Vec<f64> = prog.objective.iter().map(|c| sign * c).collect();
    for (row, y) in prog.equalities.iter().zip(&sol.eq_duals) {
        for &(j, v) in &row.terms {
            r[j] -= v * y;
        }
    }
    for (row, l) in prog.inequalities.iter().zip(&sol.le_duals) {
        for &(j, v) in &row.terms {
            r[j] -= v * l;
        }
    }
    for (cone, d) in prog.cones.iter().zip(&sol.cone_duals) {
        for &(j, v) in &cone.h {
            r[j] += v * d.theta;
        }
        for (row, mu) in cone.g_rows.iter().zip(&d.mu) {
            for &(j, v) in row {
                r[j] += v * mu;
            }
        }
    }
    for j in 0..r.len() {
        r[j] -= sol.upper_duals[j] - sol.lower_duals[j];
    }
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}
