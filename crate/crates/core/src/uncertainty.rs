//! Per-state deviation sets `u(·|s,·)` combining linear inequalities with an
//! optional second-order cone, plus the assumption checks and helpers that
//! the reformulations rely on.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, ConicProgram, ConicStatus, Sense, SocConstraint, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::model::CmdpModel;

const TIGHT_TOL: f64 = 1e-10;
/// The strict-feasibility search caps the cone slack at this value.
const SLACK_CAP: f64 = 1.0;
/// Minimum cone slack for a block to count as strictly feasible.
pub const STRICT_SLACK: f64 = 1e-9;

/// `‖Mᵀu + m‖₂ ≤ xᵀu + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocBlockData {
    /// `dim × ℓ_sc`.
    pub m_mat: DMatrix<f64>,
    pub m_vec: DVector<f64>,
    pub x: DVector<f64>,
    pub y: f64,
}

impl SocBlockData {
    /// The ball `‖u‖₂ ≤ radius`.
    pub fn ball(dim: usize, radius: f64) -> Self {
        Self {
            m_mat: DMatrix::identity(dim, dim),
            m_vec: DVector::zeros(dim),
            x: DVector::zeros(dim),
            y: radius,
        }
    }

    pub fn slack(&self, u: &[f64]) -> f64 {
        let uv = DVector::from_column_slice(u);
        self.x.dot(&uv) + self.y - (self.m_mat.transpose() * &uv + &self.m_vec).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBlock {
    pub state: usize,
    pub n_actions: usize,
    pub n_states: usize,
    /// `ℓ_p × dim`, rows read as `B u ≤ b`.
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub soc: Option<SocBlockData>,
}

impl UncertaintyBlock {
    pub fn new(
        state: usize,
        n_actions: usize,
        n_states: usize,
        b_mat: DMatrix<f64>,
        b_vec: DVector<f64>,
        soc: Option<SocBlockData>,
    ) -> Result<Self> {
        let dim = n_actions * n_states;
        if b_mat.ncols() != dim || b_mat.nrows() != b_vec.len() {
            return Err(Error::Dimension(format!(
                "block for state {state}: B is {}x{}, b has {}, expected {dim} columns",
                b_mat.nrows(),
                b_mat.ncols(),
                b_vec.len()
            )));
        }
        if let Some(soc) = &soc {
            if soc.m_mat.nrows() != dim || soc.m_mat.ncols() != soc.m_vec.len() || soc.x.len() != dim {
                return Err(Error::Dimension(format!(
                    "cone data for state {state} has inconsistent sizes"
                )));
            }
        }
        let block = Self {
            state,
            n_actions,
            n_states,
            b_mat,
            b_vec,
            soc,
        };
        for a in 0..n_actions {
            if !block.has_sum_zero_rows(a) {
                return Err(Error::InvalidInput(format!(
                    "block for state {state} lacks the paired sum-zero rows of action {a}"
                )));
            }
        }
        Ok(block)
    }

    pub fn dim(&self) -> usize {
        self.n_actions * self.n_states
    }

    pub fn n_rows(&self) -> usize {
        self.b_mat.nrows()
    }

    pub fn cone_dim(&self) -> usize {
        self.soc.as_ref().map_or(0, |s| s.m_vec.len())
    }

    fn has_sum_zero_rows(&self, a: usize) -> bool {
        let n = self.n_states;
        let matches = |sign: f64| {
            (0..self.n_rows()).any(|r| {
                let row = self.b_mat.row(r);
                let scale = sign * row[a * n];
                scale > 0.0
                    && self.b_vec[r].abs() <= 1e-12 * scale
                    && (0..self.dim()).all(|j| {
                        let target = if j / n == a { sign * scale } else { 0.0 };
                        (row[j] - target).abs() <= 1e-12 * scale
                    })
            })
        };
        matches(1.0) && matches(-1.0)
    }

    /// Largest constraint violation of `u` (nonpositive for members).
    pub fn violation(&self, u: &[f64]) -> f64 {
        let uv = DVector::from_column_slice(u);
        let lin = &self.b_mat * &uv - &self.b_vec;
        let mut worst = lin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if let Some(soc) = &self.soc {
            worst = worst.max(-soc.slack(u));
        }
        worst
    }

    /// Adds the block's constraints on `vars` (one per coordinate) to `prog`.
    pub fn add_to_program(&self, prog: &mut ConicProgram, vars: &[usize]) {
        for r in 0..self.n_rows() {
            let terms = sparse_row(self.b_mat.row(r).iter().copied(), vars);
            prog.add_le(terms, self.b_vec[r]);
        }
        if let Some(soc) = &self.soc {
            prog.add_soc(SocConstraint {
                g_rows: (0..soc.m_mat.ncols())
                    .map(|l| sparse_row(soc.m_mat.column(l).iter().copied(), vars))
                    .collect(),
                g: soc.m_vec.iter().copied().collect(),
                h: sparse_row(soc.x.iter().copied(), vars),
                k: soc.y,
            });
        }
    }
}

fn sparse_row(values: impl Iterator<Item = f64>, vars: &[usize]) -> Vec<(usize, f64)> {
    values
        .zip(vars)
        .filter(|(v, _)| *v != 0.0)
        .map(|(v, &j)| (j, v))
        .collect()
}

/// Incremental construction of a block; coordinates are addressed by
/// `(action, next_state)`.
#[derive(Debug, Clone)]
pub struct BlockBuilder {
    state: usize,
    n_actions: usize,
    n_states: usize,
    rows: Vec<(Vec<f64>, f64)>,
    soc: Option<SocBlockData>,
}

impl BlockBuilder {
    pub fn new(model: &CmdpModel, state: usize) -> Self {
        Self {
            state,
            n_actions: model.n_actions(state),
            n_states: model.n_states(),
            rows: vec![],
            soc: None,
        }
    }

    fn coord(&self, a: usize, next: usize) -> usize {
        a * self.n_states + next
    }

    pub fn le(&mut self, terms: &[(usize, usize, f64)], rhs: f64) -> &mut Self {
        let mut row = vec![0.0; self.n_actions * self.n_states];
        for &(a, next, v) in terms {
            row[self.coord(a, next)] += v;
        }
        self.rows.push((row, rhs));
        self
    }

    pub fn eq(&mut self, terms: &[(usize, usize, f64)], rhs: f64) -> &mut Self {
        self.le(terms, rhs);
        let neg: Vec<_> = terms.iter().map(|&(a, s, v)| (a, s, -v)).collect();
        self.le(&neg, -rhs)
    }

    pub fn bound(&mut self, a: usize, next: usize, lo: f64, hi: f64) -> &mut Self {
        self.le(&[(a, next, 1.0)], hi);
        self.le(&[(a, next, -1.0)], -lo)
    }

    pub fn pin(&mut self, a: usize, next: usize) -> &mut Self {
        self.bound(a, next, 0.0, 0.0)
    }

    pub fn sum_zero(&mut self) -> &mut Self {
        for a in 0..self.n_actions {
            let terms: Vec<_> = (0..self.n_states).map(|s| (a, s, 1.0)).collect();
            self.eq(&terms, 0.0);
        }
        self
    }

    pub fn soc(&mut self, soc: SocBlockData) -> &mut Self {
        self.soc = Some(soc);
        self
    }

    pub fn build(&self) -> Result<UncertaintyBlock> {
        let dim = self.n_actions * self.n_states;
        let b_mat = DMatrix::from_fn(self.rows.len(), dim, |r, j| self.rows[r].0[j]);
        let b_vec = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.1));
        UncertaintyBlock::new(
            self.state,
            self.n_actions,
            self.n_states,
            b_mat,
            b_vec,
            self.soc.clone(),
        )
    }
}

/// One block per state; blocks are independent of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    pub blocks: Vec<UncertaintyBlock>,
}

impl UncertaintySet {
    pub fn new(model: &CmdpModel, blocks: Vec<UncertaintyBlock>) -> Result<Self> {
        if blocks.len() != model.n_states() {
            return Err(Error::Dimension(format!(
                "{} blocks for {} states",
                blocks.len(),
                model.n_states()
            )));
        }
        for (s, b) in blocks.iter().enumerate() {
            if b.state != s || b.n_actions != model.n_actions(s) || b.n_states != model.n_states() {
                return Err(Error::Dimension(format!("block {s} does not match the model")));
            }
        }
        Ok(Self { blocks })
    }

    /// The degenerate set `{0}`.
    pub fn zero(model: &CmdpModel) -> Self {
        let blocks = (0..model.n_states())
            .map(|s| {
                let mut b = BlockBuilder::new(model, s);
                for a in 0..model.n_actions(s) {
                    for j in 0..model.n_states() {
                        b.pin(a, j);
                    }
                }
                b.sum_zero().build().expect("pinned block is well formed")
            })
            .collect();
        Self { blocks }
    }

    pub fn has_cones(&self) -> bool {
        self.blocks.iter().any(|b| b.soc.is_some())
    }

    pub fn from_json_str(model: &CmdpModel, text: &str) -> Result<Self> {
        let file: UncertaintyFile = serde_json::from_str(text)?;
        file.into_set(model)
    }

    pub fn to_json_string(&self, model: &CmdpModel) -> Result<String> {
        Ok(serde_json::to_string_pretty(&UncertaintyFile::from_set(model, self))?)
    }

    pub fn load(model: &CmdpModel, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(model, &std::fs::read_to_string(path)?)
    }

    pub fn save(&self, model: &CmdpModel, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string(model)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub worst_violation: f64,
    pub worst_state: Option<usize>,
}

pub fn check_membership(model: &CmdpModel, uset: &UncertaintySet, u: &DVector<f64>, tol: f64) -> Result<Membership> {
    if u.len() != model.transition_len() {
        return Err(Error::Dimension("deviation vector has wrong length".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_state = None;
    for (s, block) in uset.blocks.iter().enumerate() {
        let v = block.violation(&u.as_slice()[model.block_range(s)]);
        if v > worst {
            worst = v;
            worst_state = Some(s);
        }
    }
    Ok(Membership {
        member: worst <= tol,
        worst_violation: worst,
        worst_state,
    })
}

/// Componentwise interval hull of the set, one entry per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

fn block_extreme(block: &UncertaintyBlock, coord: usize, sense: Sense) -> Result<f64> {
    let mut prog = ConicProgram::new(sense);
    let vars = prog.add_vars(block.dim(), None, None);
    prog.set_cost(vars[coord], 1.0);
    block.add_to_program(&mut prog, &vars);
    let sol = solve_conic(&prog, TIGHT_TOL)?;
    match sol.status {
        ConicStatus::Optimal => Ok(sol.primal_objective),
        ConicStatus::Unbounded => Err(Error::InvalidInput(format!(
            "block for state {} is unbounded along coordinate {coord}",
            block.state
        ))),
        ConicStatus::Infeasible => Err(Error::Infeasible(format!("block for state {} is empty", block.state))),
        ConicStatus::NumericalFailure => Err(Error::Solver(format!(
            "bound computation failed for state {} coordinate {coord}",
            block.state
        ))),
    }
}

/// `ubar`/`uhat` by minimising and maximising every coordinate over its block.
pub fn coordinate_bounds(model: &CmdpModel, uset: &UncertaintySet) -> Result<CoordinateBounds> {
    let per_block: Vec<Result<Vec<(f64, f64)>>> = uset
        .blocks
        .par_iter()
        .map(|block| {
            (0..block.dim())
                .map(|j| {
                    Ok((
                        block_extreme(block, j, Sense::Minimize)?,
                        block_extreme(block, j, Sense::Maximize)?,
                    ))
                })
                .collect()
        })
        .collect();
    let mut lower = DVector::zeros(model.transition_len());
    let mut upper = DVector::zeros(model.transition_len());
    for (s, res) in per_block.into_iter().enumerate() {
        for (j, (lo, hi)) in res?.into_iter().enumerate() {
            let idx = model.block_range(s).start + j;
            lower[idx] = lo;
            upper[idx] = hi;
        }
    }
    Ok(CoordinateBounds { lower, upper })
}

/// Slack on `[0, 1]` that absorbs the accuracy of the coordinate LPs.
pub const VALIDITY_TOL: f64 = 1e-8;

/// Transitions whose interval hull leaves `[0, 1]`, as
/// `(pair, next_state, p̄ + ubar, p̄ + uhat)`.
pub fn validity_violations(model: &CmdpModel, bounds: &CoordinateBounds) -> Vec<(usize, usize, f64, f64)> {
    let n = model.n_states();
    let mut out = Vec::new();
    for k in 0..model.n_pairs() {
        for j in 0..n {
            let idx = model.transition_index(k, j);
            let lo = model.p_bar[(k, j)] + bounds.lower[idx];
            let hi = model.p_bar[(k, j)] + bounds.upper[idx];
            if lo < -VALIDITY_TOL || hi > 1.0 + VALIDITY_TOL {
                out.push((k, j, lo, hi));
            }
        }
    }
    out
}

/// Logs a warning for every transition the set can push outside `[0, 1]`.
pub fn warn_on_invalid_kernels(model: &CmdpModel, bounds: &CoordinateBounds) -> bool {
    let bad = validity_violations(model, bounds);
    for &(k, j, lo, hi) in &bad {
        let s = model.state_of_pair(k);
        warn!(
            "transition {} -> {} under action {} ranges over [{lo:.6}, {hi:.6}]",
            model.state_names()[s],
            model.state_names()[j],
            model.action_names(s)[k - model.pairs_of(s).start]
        );
    }
    bad.is_empty()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PMin {
    pub matrix: DMatrix<f64>,
    /// `γᵀ(I − αP_min)^{-1}`.
    pub weights: DVector<f64>,
    pub a3: bool,
}

/// `p_min(s'|s) = min_a (p̄(s'|s,a) + ubar(s'|s,a))`.
///
/// Negative entries, which only arise when the set can leave the probability
/// simplex, are clamped to zero so the weights stay a valid lower bound on
/// every admissible occupation.
pub fn compute_p_min(model: &CmdpModel, ubar: &DVector<f64>) -> Result<PMin> {
    if ubar.len() != model.transition_len() {
        return Err(Error::Dimension("ubar has wrong length".into()));
    }
    let n = model.n_states();
    let mut matrix = DMatrix::zeros(n, n);
    for s in 0..n {
        for j in 0..n {
            let m = model
                .pairs_of(s)
                .map(|k| model.p_bar[(k, j)] + ubar[model.transition_index(k, j)])
                .fold(f64::INFINITY, f64::min);
            if m < -VALIDITY_TOL {
                warn!("p_min({j}|{s}) = {m} clamped to 0");
            }
            matrix[(s, j)] = m.max(0.0);
        }
    }
    let system = (DMatrix::identity(n, n) - &matrix * model.alpha).transpose();
    let weights = system
        .lu()
        .solve(&model.gamma)
        .ok_or_else(|| Error::Singular("I - alpha P_min is singular".into()))?;
    let a3 = weights.iter().all(|&w| w > 1e-12);
    Ok(PMin { matrix, weights, a3 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub a1: bool,
    pub a2: bool,
    /// Best cone slack per state (capped at 1); `None` for cone-free blocks.
    pub a2_slack: Vec<Option<f64>>,
    pub a3: bool,
    pub p_min: PMin,
    pub bounds: CoordinateBounds,
}

impl AssumptionReport {
    pub fn min_slack(&self) -> Option<f64> {
        self.a2_slack.iter().flatten().copied().reduce(f64::min)
    }
}

/// Largest `t ≤ 1` with `‖Mᵀu + m‖ + t ≤ xᵀu + y` over the block.
pub fn max_cone_slack(block: &UncertaintyBlock) -> Result<Option<f64>> {
    let Some(soc) = &block.soc else { return Ok(None) };
    let mut prog = ConicProgram::new(Sense::Maximize);
    let vars = prog.add_vars(block.dim(), None, None);
    let t = prog.add_var(None, Some(SLACK_CAP));
    prog.set_cost(t, 1.0);
    for r in 0..block.n_rows() {
        prog.add_le(sparse_row(block.b_mat.row(r).iter().copied(), &vars), block.b_vec[r]);
    }
    let mut h = sparse_row(soc.x.iter().copied(), &vars);
    h.push((t, -1.0));
    prog.add_soc(SocConstraint {
        g_rows: (0..soc.m_mat.ncols())
            .map(|l| sparse_row(soc.m_mat.column(l).iter().copied(), &vars))
            .collect(),
        g: soc.m_vec.iter().copied().collect(),
        h,
        k: soc.y,
    });
    let sol = solve_conic(&prog, TIGHT_TOL)?;
    match sol.status {
        ConicStatus::Optimal => Ok(Some(sol.primal_objective)),
        ConicStatus::Infeasible => Ok(Some(f64::NEG_INFINITY)),
        _ => Err(Error::Solver(format!(
            "cone slack search failed for state {}",
            block.state
        ))),
    }
}

pub fn check_assumptions(model: &CmdpModel, uset: &UncertaintySet) -> Result<AssumptionReport> {
    let a1 = model.gamma.iter().all(|&g| g > 0.0);
    let a2_slack = uset.blocks.par_iter().map(max_cone_slack).collect::<Result<Vec<_>>>()?;
    let a2 = a2_slack.iter().flatten().all(|&t| t > STRICT_SLACK);
    let bounds = coordinate_bounds(model, uset)?;
    let p_min = compute_p_min(model, &bounds.lower)?;
    Ok(AssumptionReport {
        a1,
        a2,
        a2_slack,
        a3: p_min.a3,
        p_min,
        bounds,
    })
}

/// Euclidean projection of `v` onto the block.
pub fn project_onto_block(block: &UncertaintyBlock, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != block.dim() {
        return Err(Error::Dimension("projection point has wrong length".into()));
    }
    let mut prog = ConicProgram::new(Sense::Minimize);
    let vars = prog.add_vars(block.dim(), None, None);
    let t = prog.add_var(Some(0.0), None);
    prog.set_cost(t, 1.0);
    block.add_to_program(&mut prog, &vars);
    prog.add_soc(SocConstraint {
        g_rows: vars.iter().map(|&j| vec![(j, 1.0)]).collect(),
        g: v.iter().map(|x| -x).collect(),
        h: vec![(t, 1.0)],
        k: 0.0,
    });
    // Far-away points occasionally stall the tight solve; the polish step
    // below recovers the accuracy a looser solve gives up.
    let mut sol = solve_conic(&prog, TIGHT_TOL)?;
    if sol.status == ConicStatus::NumericalFailure {
        sol = solve_conic(&prog, DEFAULT_TOL)?;
    }
    match sol.status {
        ConicStatus::Optimal => {
            let rough: Vec<f64> = vars.iter().map(|&j| sol.x[j]).collect();
            Ok(polish_projection(block, v, rough))
        }
        ConicStatus::Infeasible => Err(Error::Infeasible(format!("block for state {} is empty", block.state))),
        _ => Err(Error::Solver(format!("projection failed for state {}", block.state))),
    }
}

/// Re-solves the projection exactly on the face of linear rows that are
/// active at `rough`, keeping the result only if it is feasible and no
/// farther from `v`.
fn polish_projection(block: &UncertaintyBlock, v: &[f64], rough: Vec<f64>) -> Vec<f64> {
    const ACTIVE: f64 = 1e-6;
    if block.soc.as_ref().is_some_and(|soc| soc.slack(&rough) < ACTIVE) {
        return rough;
    }
    let uv = DVector::from_column_slice(&rough);
    let slack = &block.b_vec - &block.b_mat * &uv;
    let active: Vec<usize> = (0..block.n_rows()).filter(|&r| slack[r] <= ACTIVE).collect();
    let vv = DVector::from_column_slice(v);
    let candidate = if active.is_empty() {
        vv.clone()
    } else {
        let ba = DMatrix::from_fn(active.len(), block.dim(), |i, j| block.b_mat[(active[i], j)]);
        let rhs = &ba * &vv - DVector::from_iterator(active.len(), active.iter().map(|&r| block.b_vec[r]));
        let gram = &ba * ba.transpose();
        let Ok(lambda) = gram.svd(true, true).solve(&rhs, 1e-12) else {
            return rough;
        };
        &vv - ba.transpose() * lambda
    };
    let cand: Vec<f64> = candidate.iter().copied().collect();
    let dist = |u: &[f64]| u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if block.violation(&cand) <= 1e-12 && dist(&cand) <= dist(&rough) + 1e-9 {
        cand
    } else {
        rough
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocFile {
    #[serde(rename = "M")]
    pub m_mat: Vec<Vec<f64>>,
    pub m: Vec<f64>,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFile {
    pub state: String,
    #[serde(rename = "B")]
    pub b_mat: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soc: Option<SocFile>,
}

/// On-disk uncertainty document: `{"blocks": [...]}` in state order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyFile {
    pub blocks: Vec<BlockFile>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("matrix rows must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl UncertaintyFile {
    pub fn from_set(model: &CmdpModel, uset: &UncertaintySet) -> Self {
        let blocks = uset
            .blocks
            .iter()
            .map(|b| BlockFile {
                state: model.state_names()[b.state].clone(),
                b_mat: matrix_rows(&b.b_mat),
                b: b.b_vec.iter().copied().collect(),
                soc: b.soc.as_ref().map(|s| SocFile {
                    m_mat: matrix_rows(&s.m_mat),
                    m: s.m_vec.iter().copied().collect(),
                    x: s.x.iter().copied().collect(),
                    y: s.y,
                }),
            })
            .collect();
        Self { blocks }
    }

    pub fn into_set(self, model: &CmdpModel) -> Result<UncertaintySet> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (s, bf) in self.blocks.into_iter().enumerate() {
            if model.state_names().get(s) != Some(&bf.state) {
                return Err(Error::InvalidInput(format!("block {s} is labelled {}", bf.state)));
            }
            let dim = model.block_dim(s);
            let soc = match bf.soc {
                Some(sf) => {
                    let m_mat = rows_matrix(&sf.m_mat, sf.m.len())?;
                    Some(SocBlockData {
                        m_mat,
                        m_vec: DVector::from_vec(sf.m),
                        x: DVector::from_vec(sf.x),
                        y: sf.y,
                    })
                }
                None => None,
            };
            blocks.push(UncertaintyBlock::new(
                s,
                model.n_actions(s),
                model.n_states(),
                rows_matrix(&bf.b_mat, dim)?,
                DVector::from_vec(bf.b),
                soc,
            )?);
        }
        UncertaintySet::new(model, blocks)
    }
}
