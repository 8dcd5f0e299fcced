//! Nominal CMDP data, stationary policies and exact discounted-cost evaluation.
//!
//! State-action pairs are stored state-major: the pairs of state `s` occupy
//! the contiguous range [`CmdpModel::pairs_of`]. Every per-transition vector
//! (deviations `u`, inner variables `z`) uses the matching layout
//! `pair * n_states + next_state`, so the coordinates of one state form a
//! contiguous block ordered by `(action, next_state)`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of transition kernels and on the initial distribution.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance on policy row sums.
pub const POLICY_TOL: f64 = 1e-10;

/// Selects one of the running cost vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CostRef {
    Objective,
    Constraint(usize),
}

impl fmt::Display for CostRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostRef::Objective => write!(f, "c"),
            CostRef::Constraint(k) => write!(f, "d{}", k + 1),
        }
    }
}

/// Raw ingredients of a [`CmdpModel`].
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub alpha: f64,
    pub gamma: DVector<f64>,
    /// One row per state-action pair, one column per next state.
    pub p_bar: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: Vec<DVector<f64>>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmdpModel {
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    offsets: Vec<usize>,
    pair_state: Vec<usize>,
    pub alpha: f64,
    pub gamma: DVector<f64>,
    pub p_bar: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: Vec<DVector<f64>>,
    pub xi: Vec<f64>,
}

impl CmdpModel {
    /// Builds a model after checking that all dimensions agree. Stochasticity
    /// is not enforced here; see [`validate_model`].
    pub fn new(parts: ModelParts) -> Result<Self> {
        let n = parts.states.len();
        if n == 0 {
            return Err(Error::Dimension("model needs at least one state".into()));
        }
        if parts.actions.len() != n {
            return Err(Error::Dimension(format!(
                "{} action lists for {} states",
                parts.actions.len(),
                n
            )));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut pair_state = Vec::new();
        offsets.push(0);
        for (s, acts) in parts.actions.iter().enumerate() {
            pair_state.extend(std::iter::repeat(s).take(acts.len()));
            offsets.push(offsets[s] + acts.len());
        }
        let pairs = offsets[n];
        if parts.gamma.len() != n {
            return Err(Error::Dimension(format!(
                "gamma has length {}, expected {n}",
                parts.gamma.len()
            )));
        }
        if parts.p_bar.nrows() != pairs || parts.p_bar.ncols() != n {
            return Err(Error::Dimension(format!(
                "p_bar is {}x{}, expected {pairs}x{n}",
                parts.p_bar.nrows(),
                parts.p_bar.ncols()
            )));
        }
        if parts.c.len() != pairs {
            return Err(Error::Dimension(format!(
                "c has length {}, expected {pairs}",
                parts.c.len()
            )));
        }
        if parts.d.len() != parts.xi.len() {
            return Err(Error::Dimension(format!(
                "{} constraint costs but {} bounds",
                parts.d.len(),
                parts.xi.len()
            )));
        }
        if let Some(bad) = parts.d.iter().position(|dk| dk.len() != pairs) {
            return Err(Error::Dimension(format!("d[{bad}] has wrong length")));
        }
        Ok(Self {
            states: parts.states,
            actions: parts.actions,
            offsets,
            pair_state,
            alpha: parts.alpha,
            gamma: parts.gamma,
            p_bar: parts.p_bar,
            c: parts.c,
            d: parts.d,
            xi: parts.xi,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_state.len()
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.actions[s].len()
    }

    pub fn n_constraints(&self) -> usize {
        self.d.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    pub fn action_names(&self, s: usize) -> &[String] {
        &self.actions[s]
    }

    pub fn pairs_of(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        debug_assert!(a < self.n_actions(s));
        self.offsets[s] + a
    }

    pub fn state_of_pair(&self, k: usize) -> usize {
        self.pair_state[k]
    }

    /// Length of a full per-transition vector (one entry per `(s, a, s')`).
    pub fn transition_len(&self) -> usize {
        self.n_pairs() * self.n_states()
    }

    pub fn transition_index(&self, pair: usize, next: usize) -> usize {
        pair * self.n_states() + next
    }

    /// Range of the per-transition coordinates belonging to state `s`.
    pub fn block_range(&self, s: usize) -> Range<usize> {
        let n = self.n_states();
        self.offsets[s] * n..self.offsets[s + 1] * n
    }

    pub fn block_dim(&self, s: usize) -> usize {
        self.n_actions(s) * self.n_states()
    }

    pub fn cost(&self, which: CostRef) -> &DVector<f64> {
        match which {
            CostRef::Objective => &self.c,
            CostRef::Constraint(k) => &self.d[k],
        }
    }

    /// All cost selectors: the objective followed by every constraint.
    pub fn cost_refs(&self) -> Vec<CostRef> {
        std::iter::once(CostRef::Objective)
            .chain((0..self.n_constraints()).map(CostRef::Constraint))
            .collect()
    }

    /// Nominal kernel shifted by a per-transition deviation vector.
    pub fn kernel_with(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.len() != self.transition_len() {
            return Err(Error::Dimension(format!(
                "deviation has length {}, expected {}",
                u.len(),
                self.transition_len()
            )));
        }
        let n = self.n_states();
        Ok(DMatrix::from_fn(self.n_pairs(), n, |k, j| {
            self.p_bar[(k, j)] + u[k * n + j]
        }))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from_model(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelViolation {
    EmptyActions {
        state: usize,
    },
    NegativeTransition {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeGamma {
        state: usize,
        value: f64,
    },
    GammaSum {
        sum: f64,
    },
    AlphaRange {
        alpha: f64,
    },
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyActions { state } => write!(f, "state {state} has no actions"),
            Self::NegativeTransition {
                state,
                action,
                next,
                value,
            } => {
                write!(f, "p_bar({next}|{state},{action}) = {value} is negative")
            }
            Self::RowSum { state, action, sum } => {
                write!(f, "row sum ≠ 1 for ({state},{action}): {sum}")
            }
            Self::NegativeGamma { state, value } => write!(f, "gamma({state}) = {value} is negative"),
            Self::GammaSum { sum } => write!(f, "gamma sums to {sum}, not 1"),
            Self::AlphaRange { alpha } => write!(f, "alpha out of (0,1): {alpha}"),
        }
    }
}

/// Lists every violated model invariant; an empty list means the model is valid.
pub fn validate_model(model: &CmdpModel) -> Vec<ModelViolation> {
    let mut out = Vec::new();
    let n = model.n_states();
    for s in 0..n {
        if model.n_actions(s) == 0 {
            out.push(ModelViolation::EmptyActions { state: s });
        }
        for (a, k) in model.pairs_of(s).enumerate() {
            let row = model.p_bar.row(k);
            for (j, &p) in row.iter().enumerate() {
                if p < 0.0 {
                    out.push(ModelViolation::NegativeTransition {
                        state: s,
                        action: a,
                        next: j,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(ModelViolation::RowSum {
                    state: s,
                    action: a,
                    sum,
                });
            }
        }
    }
    for (s, &g) in model.gamma.iter().enumerate() {
        if g < 0.0 {
            out.push(ModelViolation::NegativeGamma { state: s, value: g });
        }
    }
    let gsum = model.gamma.sum();
    if (gsum - 1.0).abs() > STOCHASTIC_TOL {
        out.push(ModelViolation::GammaSum { sum: gsum });
    }
    if !(model.alpha > 0.0 && model.alpha < 1.0) {
        out.push(ModelViolation::AlphaRange { alpha: model.alpha });
    }
    out
}

/// Randomised stationary decision rule `f(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    rows: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn new(model: &CmdpModel, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != model.n_states() {
            return Err(Error::Dimension(format!(
                "policy has {} rows, model has {} states",
                rows.len(),
                model.n_states()
            )));
        }
        for (s, row) in rows.iter().enumerate() {
            if row.len() != model.n_actions(s) {
                return Err(Error::Dimension(format!(
                    "policy row {s} has {} entries, expected {}",
                    row.len(),
                    model.n_actions(s)
                )));
            }
            if row.iter().any(|&p| !(-POLICY_TOL..=1.0 + POLICY_TOL).contains(&p)) {
                return Err(Error::InvalidInput(format!("policy row {s} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_TOL {
                return Err(Error::InvalidInput(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_flat(model: &CmdpModel, flat: &[f64]) -> Result<Self> {
        if flat.len() != model.n_pairs() {
            return Err(Error::Dimension(format!(
                "flat policy has {} entries, expected {}",
                flat.len(),
                model.n_pairs()
            )));
        }
        let rows = (0..model.n_states())
            .map(|s| flat[model.pairs_of(s)].to_vec())
            .collect();
        Self::new(model, rows)
    }

    /// Clips negatives, renormalises each state and falls back to uniform on
    /// rows with no mass.
    pub fn normalized(model: &CmdpModel, raw: &[f64]) -> Result<Self> {
        if raw.len() != model.n_pairs() {
            return Err(Error::Dimension("raw policy vector has wrong length".into()));
        }
        let rows = (0..model.n_states())
            .map(|s| {
                let mut row: Vec<f64> = raw[model.pairs_of(s)].iter().map(|&v| v.max(0.0)).collect();
                let total: f64 = row.iter().sum();
                if total <= 1e-12 {
                    let m = row.len() as f64;
                    row.iter_mut().for_each(|v| *v = 1.0 / m);
                } else {
                    row.iter_mut().for_each(|v| *v /= total);
                }
                row
            })
            .collect();
        Self::new(model, rows)
    }

    pub fn uniform(model: &CmdpModel) -> Self {
        let rows = (0..model.n_states())
            .map(|s| vec![1.0 / model.n_actions(s) as f64; model.n_actions(s)])
            .collect();
        Self { rows }
    }

    pub fn deterministic(model: &CmdpModel, choice: &[usize]) -> Result<Self> {
        if choice.len() != model.n_states() {
            return Err(Error::Dimension("one action per state required".into()));
        }
        let mut rows = Vec::with_capacity(choice.len());
        for (s, &a) in choice.iter().enumerate() {
            if a >= model.n_actions(s) {
                return Err(Error::InvalidInput(format!("action {a} not available in state {s}")));
            }
            let mut row = vec![0.0; model.n_actions(s)];
            row[a] = 1.0;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.rows[s][a]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn conforms_to(&self, model: &CmdpModel) -> bool {
        self.rows.len() == model.n_states() && self.rows.iter().enumerate().all(|(s, r)| r.len() == model.n_actions(s))
    }
}

/// Policy-induced quantities used by evaluation and by the inner SOCPs.
#[derive(Debug, Clone)]
pub struct PolicyMatrices {
    /// `P_f(s, s') = Σ_a f(s,a) kernel(s,a)(s')`.
    pub p_f: DMatrix<f64>,
    pub c_f: DVector<f64>,
    pub d_f: Vec<DVector<f64>>,
    /// Per state, a `(|A(s)|·|S|) × |S|` selector with `f(s,a)` at row
    /// `(a, s')`, column `s'`.
    pub selectors: Vec<DMatrix<f64>>,
}

impl PolicyMatrices {
    pub fn cost_f(&self, which: CostRef) -> &DVector<f64> {
        match which {
            CostRef::Objective => &self.c_f,
            CostRef::Constraint(k) => &self.d_f[k],
        }
    }
}

fn check_kernel(model: &CmdpModel, kernel: &DMatrix<f64>) -> Result<()> {
    if kernel.nrows() != model.n_pairs() || kernel.ncols() != model.n_states() {
        return Err(Error::Dimension(format!(
            "kernel is {}x{}, expected {}x{}",
            kernel.nrows(),
            kernel.ncols(),
            model.n_pairs(),
            model.n_states()
        )));
    }
    Ok(())
}

/// `Σ_a f(s,a) v(s,a)` for a per-pair vector `v`.
pub fn policy_weighted(model: &CmdpModel, f: &StationaryPolicy, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(model.n_states(), |s, _| {
        model.pairs_of(s).enumerate().map(|(a, k)| f.prob(s, a) * v[k]).sum()
    })
}

pub fn policy_matrices(model: &CmdpModel, f: &StationaryPolicy, kernel: &DMatrix<f64>) -> Result<PolicyMatrices> {
    if !f.conforms_to(model) {
        return Err(Error::Dimension("policy does not match model action sets".into()));
    }
    check_kernel(model, kernel)?;
    let n = model.n_states();
    let mut p_f = DMatrix::zeros(n, n);
    let mut selectors = Vec::with_capacity(n);
    for s in 0..n {
        let mut sel = DMatrix::zeros(model.block_dim(s), n);
        for (a, k) in model.pairs_of(s).enumerate() {
            let w = f.prob(s, a);
            for j in 0..n {
                p_f[(s, j)] += w * kernel[(k, j)];
                sel[(a * n + j, j)] = w;
            }
        }
        selectors.push(sel);
    }
    Ok(PolicyMatrices {
        p_f,
        c_f: policy_weighted(model, f, &model.c),
        d_f: model.d.iter().map(|dk| policy_weighted(model, f, dk)).collect(),
        selectors,
    })
}

/// `(1-α) (I - α P)^{-T} γ`: the discounted state-visitation weights of a
/// chain with transition matrix `p`.
pub fn state_weights(model: &CmdpModel, p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = model.n_states();
    let system = (DMatrix::identity(n, n) - p * model.alpha).transpose();
    let lu = system.lu();
    let x = lu
        .solve(&model.gamma)
        .ok_or_else(|| Error::Singular("I - alpha P is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("I - alpha P is numerically singular".into()));
    }
    Ok(x * (1.0 - model.alpha))
}

/// Discounted costs of a stationary policy under a fixed kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl Evaluation {
    pub fn value(&self, which: CostRef) -> f64 {
        match which {
            CostRef::Objective => self.objective,
            CostRef::Constraint(k) => self.constraints[k],
        }
    }
}

/// `C = (1-α) γᵀ (I - α P_f)^{-1} c_f` and likewise for every `d^k`.
pub fn evaluate_policy(model: &CmdpModel, f: &StationaryPolicy, kernel: &DMatrix<f64>) -> Result<Evaluation> {
    let pm = policy_matrices(model, f, kernel)?;
    let w = state_weights(model, &pm.p_f)?;
    Ok(Evaluation {
        objective: w.dot(&pm.c_f),
        constraints: pm.d_f.iter().map(|d| w.dot(d)).collect(),
    })
}

/// On-disk instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub alpha: f64,
    pub gamma: Vec<f64>,
    /// Keyed by `"state/action"`.
    pub p_bar: BTreeMap<String, Vec<f64>>,
    pub c: BTreeMap<String, f64>,
    pub d: Vec<BTreeMap<String, f64>>,
    pub xi: Vec<f64>,
}

fn pair_key(state: &str, action: &str) -> String {
    format!("{state}/{action}")
}

impl InstanceFile {
    pub fn from_model(model: &CmdpModel) -> Self {
        let mut p_bar = BTreeMap::new();
        let mut c = BTreeMap::new();
        let mut d = vec![BTreeMap::new(); model.n_constraints()];
        for s in 0..model.n_states() {
            for (a, k) in model.pairs_of(s).enumerate() {
                let key = pair_key(&model.states[s], &model.actions[s][a]);
                p_bar.insert(key.clone(), model.p_bar.row(k).iter().copied().collect());
                c.insert(key.clone(), model.c[k]);
                for (dk, map) in model.d.iter().zip(d.iter_mut()) {
                    map.insert(key.clone(), dk[k]);
                }
            }
        }
        Self {
            states: model.states.clone(),
            actions: model.actions.clone(),
            alpha: model.alpha,
            gamma: model.gamma.iter().copied().collect(),
            p_bar,
            c,
            d,
            xi: model.xi.clone(),
        }
    }

    pub fn into_model(self) -> Result<CmdpModel> {
        let n = self.states.len();
        let pairs: Vec<String> = self
            .states
            .iter()
            .zip(&self.actions)
            .flat_map(|(s, acts)| acts.iter().map(move |a| pair_key(s, a)))
            .collect();
        let lookup = |map: &BTreeMap<String, f64>, key: &str, what: &str| {
            map.get(key)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("{what} missing entry {key}")))
        };
        let mut p_bar = DMatrix::zeros(pairs.len(), n);
        let mut c = DVector::zeros(pairs.len());
        let mut d = vec![DVector::zeros(pairs.len()); self.d.len()];
        for (k, key) in pairs.iter().enumerate() {
            let row = self
                .p_bar
                .get(key)
                .ok_or_else(|| Error::InvalidInput(format!("p_bar missing row {key}")))?;
            if row.len() != n {
                return Err(Error::Dimension(format!("p_bar row {key} has length {}", row.len())));
            }
            for (j, &p) in row.iter().enumerate() {
                p_bar[(k, j)] = p;
            }
            c[k] = lookup(&self.c, key, "c")?;
            for (map, dk) in self.d.iter().zip(d.iter_mut()) {
                dk[k] = lookup(map, key, "d")?;
            }
        }
        CmdpModel::new(ModelParts {
            states: self.states,
            actions: self.actions,
            alpha: self.alpha,
            gamma: DVector::from_vec(self.gamma),
            p_bar,
            c,
            d,
            xi: self.xi,
        })
    }
}
