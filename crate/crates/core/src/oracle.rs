//! Brute-force references used by the test suites: multi-start projected
//! gradient ascent for inner maximisation and vertex enumeration for the
//! nominal LP. Neither touches the conic reformulations they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{policy_matrices, CmdpModel, CostRef, StationaryPolicy};
use crate::uncertainty::{project_onto_block, UncertaintyBlock, UncertaintySet};

pub const MAX_ITERS: usize = 5000;
pub const PG_TOL: f64 = 1e-9;
pub const WARMUP: usize = 100;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub u: DVector<f64>,
    pub starts: usize,
    /// Per start: whether the projected-gradient test was met.
    pub converged: Vec<bool>,
    /// Per start: the value it reached, in start order.
    pub start_values: Vec<f64>,
}

/// `(1−α)γᵀ(I−αP_f)⁻¹c_f` under kernel `p̄ + u` and its gradient in `u`.
fn value_and_gradient(
    model: &CmdpModel,
    f: &StationaryPolicy,
    cost: CostRef,
    u: &DVector<f64>,
) -> Option<(f64, DVector<f64>)> {
    let kernel = model.kernel_with(u).ok()?;
    let pm = policy_matrices(model, f, &kernel).ok()?;
    let n = model.n_states();
    let alpha = model.alpha;
    let a = DMatrix::identity(n, n) - &pm.p_f * alpha;
    let lu = a.clone().lu();
    let v = lu.solve(&pm.cost_f(cost))?;
    let y = a.transpose().lu().solve(&(&model.gamma * (1.0 - alpha)))?;
    let value = model.gamma.dot(&v) * (1.0 - alpha);
    let mut g = DVector::zeros(model.transition_len());
    for s in 0..n {
        for (ai, k) in model.pairs_of(s).enumerate() {
            let w = alpha * y[s] * f.prob(s, ai);
            for j in 0..n {
                g[model.transition_index(k, j)] = w * v[j];
            }
        }
    }
    Some((value, g))
}

fn project(model: &CmdpModel, uset: &UncertaintySet, v: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(v.len());
    for (s, block) in uset.blocks.iter().enumerate() {
        let r = model.block_range(s);
        let p = project_onto_block(block, &v.as_slice()[r.clone()])?;
        out.as_mut_slice()[r].copy_from_slice(&p);
    }
    Ok(out)
}

/// Basis of the directions that keep every paired equality row of `block`.
fn free_directions(block: &UncertaintyBlock) -> DMatrix<f64> {
    let dim = block.dim();
    let rows = block.n_rows();
    let mut eq_rows: Vec<usize> = Vec::new();
    for r in 0..rows {
        for q in r + 1..rows {
            let opposite = (0..dim).all(|j| (block.b_mat[(r, j)] + block.b_mat[(q, j)]).abs() <= 1e-14)
                && (block.b_vec[r] + block.b_vec[q]).abs() <= 1e-14;
            if opposite {
                eq_rows.push(r);
            }
        }
    }
    if eq_rows.is_empty() {
        return DMatrix::identity(dim, dim);
    }
    let e = DMatrix::from_fn(eq_rows.len(), dim, |i, j| block.b_mat[(eq_rows[i], j)]);
    // Null space from the full SVD of eᵀe.
    let svd = (e.transpose() * &e).svd(true, false);
    let u = svd.u.expect("requested");
    let scale = svd.singular_values.max().max(1.0);
    let cols: Vec<usize> = (0..dim).filter(|&i| svd.singular_values[i] <= 1e-10 * scale).collect();
    DMatrix::from_fn(dim, cols.len(), |i, c| u[(i, cols[c])])
}

/// Feasible step range `[lo, hi]` along `d` from a member `x`.
fn chord(block: &UncertaintyBlock, x: &[f64], d: &[f64]) -> (f64, f64) {
    let xv = DVector::from_column_slice(x);
    let dv = DVector::from_column_slice(d);
    let bx = &block.b_mat * &xv;
    let bd = &block.b_mat * &dv;
    let (mut lo, mut hi) = (-1e3, 1e3);
    for r in 0..block.n_rows() {
        let slack = (block.b_vec[r] - bx[r]).max(0.0);
        if bd[r] > 1e-13 {
            hi = f64::min(hi, slack / bd[r]);
        } else if bd[r] < -1e-13 {
            lo = f64::max(lo, slack / bd[r]);
        }
    }
    if let Some(soc) = &block.soc {
        let ok = |t: f64| {
            let p: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
            soc.slack(&p) >= 0.0
        };
        // The cone slack is concave along a line, so its feasible set is an interval.
        let shrink = |bound: f64| {
            if ok(bound) {
                return bound;
            }
            let (mut a, mut b) = (0.0, bound);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if ok(m) {
                    a = m;
                } else {
                    b = m;
                }
            }
            a
        };
        hi = shrink(hi);
        lo = shrink(lo);
    }
    (lo.min(0.0), hi.max(0.0))
}

/// Hit-and-run walk inside one block from the origin.
fn sample_block(block: &UncertaintyBlock, basis: &DMatrix<f64>, steps: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = block.dim();
    let mut x = vec![0.0; dim];
    if basis.ncols() == 0 || block.violation(&x) > 0.0 {
        return x;
    }
    for _ in 0..steps {
        let coef = DVector::from_fn(basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = basis * coef;
        let norm = d.norm();
        if norm <= 1e-14 {
            continue;
        }
        let d: Vec<f64> = d.iter().map(|v| v / norm).collect();
        let (lo, hi) = chord(block, &x, &d);
        let t = lo + (hi - lo) * rng.gen::<f64>();
        // Pull slightly towards the current point to stay inside after rounding.
        let t = t * (1.0 - 1e-9);
        let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
        if block.violation(&cand) <= 1e-12 {
            x = cand;
        }
    }
    x
}

/// Draws a member of `uset` by independent hit-and-run walks per block.
pub fn sample_member(model: &CmdpModel, uset: &UncertaintySet, steps: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut u = DVector::zeros(model.transition_len());
    for (s, block) in uset.blocks.iter().enumerate() {
        let basis = free_directions(block);
        let x = sample_block(block, &basis, steps, rng);
        u.as_mut_slice()[model.block_range(s)].copy_from_slice(&x);
    }
    u
}

/// Projected gradient ascent from `u0`; returns the final point, its value
/// and whether the stationarity test passed.
fn ascend(
    model: &CmdpModel,
    uset: &UncertaintySet,
    f: &StationaryPolicy,
    cost: CostRef,
    u0: DVector<f64>,
) -> Result<(DVector<f64>, f64, bool)> {
    let mut u = u0;
    let Some((mut val, mut g)) = value_and_gradient(model, f, cost, &u) else {
        return Ok((u, f64::NEG_INFINITY, false));
    };
    let mut stagnant = 0;
    for _ in 0..MAX_ITERS {
        let full = project(model, uset, &(&u + &g))?;
        if (&full - &u).norm() <= PG_TOL {
            return Ok((u, val, true));
        }
        let mut step = 1.0;
        let mut moved = false;
        for trial in 0..60 {
            let cand = if trial == 0 {
                full.clone()
            } else {
                project(model, uset, &(&u + &g * step))?
            };
            if let Some((cv, cg)) = value_and_gradient(model, f, cost, &cand) {
                if cv >= val + ARMIJO * g.dot(&(&cand - &u)) {
                    let gain = cv - val;
                    u = cand;
                    val = cv;
                    g = cg;
                    moved = true;
                    stagnant = if gain <= 1e-14 * (1.0 + val.abs()) {
                        stagnant + 1
                    } else {
                        0
                    };
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved || stagnant >= 5 {
            return Ok((u, val, false));
        }
    }
    Ok((u, val, false))
}

/// Best worst-case value of `cost` under policy `f` found by `starts`
/// ascents: the first from the origin, the rest from hit-and-run samples.
/// The result is a lower bound on the true maximum.
pub fn inner_max_bruteforce(
    model: &CmdpModel,
    uset: &UncertaintySet,
    f: &StationaryPolicy,
    cost: CostRef,
    starts: usize,
    seed: u64,
) -> Result<OracleResult> {
    let starts = starts.max(1);
    let zero = DVector::zeros(model.transition_len());
    let origin = crate::uncertainty::check_membership(model, uset, &zero, 1e-9)?;
    if !origin.member {
        // Every generated set contains the origin; anything else is unsupported here.
        return Err(Error::InvalidInput(
            "the oracle starts from u = 0, which is not a member".into(),
        ));
    }
    // Starting points come from one seeded stream, so a longer run extends a shorter one.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![zero];
    for _ in 1..starts {
        points.push(sample_member(model, uset, WARMUP, &mut rng));
    }
    let runs: Vec<(DVector<f64>, f64, bool)> = points
        .into_par_iter()
        .map(|p| ascend(model, uset, f, cost, p))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.1 > runs[best].1 {
            best = i;
        }
    }
    Ok(OracleResult {
        value: runs[best].1,
        u: runs[best].0.clone(),
        starts,
        converged: runs.iter().map(|r| r.2).collect(),
        start_values: runs.iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct LpOracleResult {
    pub value: f64,
    pub rho: Vec<f64>,
    pub vertices: usize,
}

fn next_combination(idx: &mut [usize], m: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < m - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Enumerates basic feasible solutions of the occupation-measure LP under
/// the nominal kernel, with one slack per constraint row.
pub fn nominal_lp_oracle(model: &CmdpModel) -> Result<LpOracleResult> {
    let pairs = model.n_pairs();
    let n = model.n_states();
    let kc = model.n_constraints();
    if pairs > 20 {
        return Err(Error::InvalidInput(
            "vertex enumeration is limited to 20 state-action pairs".into(),
        ));
    }
    let m = pairs + kc;
    let rows = n + kc;
    let alpha = model.alpha;
    let mut a = DMatrix::zeros(rows, m);
    let mut b = DVector::zeros(rows);
    for k in 0..pairs {
        let s = model.state_of_pair(k);
        for t in 0..n {
            a[(t, k)] = if s == t { 1.0 } else { 0.0 } - alpha * model.p_bar[(k, t)];
        }
        for c in 0..kc {
            a[(n + c, k)] = model.cost(CostRef::Constraint(c))[k];
        }
    }
    for t in 0..n {
        b[t] = (1.0 - alpha) * model.gamma[t];
    }
    for c in 0..kc {
        a[(n + c, pairs + c)] = 1.0;
        b[n + c] = model.xi[c];
    }
    let obj = model.cost(CostRef::Objective);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut vertices = 0;
    let mut idx: Vec<usize> = (0..rows).collect();
    loop {
        let basis = DMatrix::from_fn(rows, rows, |r, c| a[(r, idx[c])]);
        let lu = basis.clone().lu();
        if lu.determinant().abs() > 1e-12 {
            if let Some(x) = lu.solve(&b) {
                let check = &basis * &x - &b;
                if x.iter().all(|v| *v >= -1e-10) && check.amax() <= 1e-9 {
                    vertices += 1;
                    let mut rho = vec![0.0; pairs];
                    for (c, &j) in idx.iter().enumerate() {
                        if j < pairs {
                            rho[j] = x[c].max(0.0);
                        }
                    }
                    let value: f64 = rho.iter().zip(obj.iter()).map(|(r, c)| r * c).sum();
                    if best.as_ref().is_none_or(|b| value < b.0) {
                        best = Some((value, rho));
                    }
                }
            }
        }
        if !next_combination(&mut idx, m) {
            break;
        }
    }
    match best {
        Some((value, rho)) => Ok(LpOracleResult { value, rho, vertices }),
        None => Err(Error::Infeasible("no basic feasible solution".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::names;
    use crate::model::ModelParts;
    use crate::uncertainty::{check_membership, BlockBuilder};

    fn one_state(c: [f64; 2], d: Option<(f64, f64, f64)>) -> CmdpModel {
        CmdpModel::new(ModelParts {
            states: names("s", 1),
            actions: vec![names("a", 2)],
            alpha: 0.5,
            gamma: DVector::from_element(1, 1.0),
            p_bar: DMatrix::from_element(2, 1, 1.0),
            c: DVector::from_column_slice(&c),
            d: d.map(|(a, b, _)| vec![DVector::from_column_slice(&[a, b])])
                .unwrap_or_default(),
            xi: d.map(|(_, _, x)| vec![x]).unwrap_or_default(),
        })
        .unwrap()
    }

    #[test]
    fn vertex_enumeration_on_one_state() {
        let m = one_state([1.0, 2.0], Some((0.0, 0.0, 1.0)));
        let r = nominal_lp_oracle(&m).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert!((r.rho[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hit_and_run_stays_inside() {
        let m = crate::model::tests::swap_chain(0.5);
        let blocks = (0..2)
            .map(|s| {
                let mut b = BlockBuilder::new(&m, s);
                b.bound(0, 0, -0.3, 0.3).bound(0, 1, -0.3, 0.3).sum_zero();
                b.soc(crate::uncertainty::SocBlockData::ball(2, 0.2));
                b.build().unwrap()
            })
            .collect();
        let u = UncertaintySet::new(&m, blocks).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut moved = false;
        for _ in 0..20 {
            let x = sample_member(&m, &u, WARMUP, &mut rng);
            assert!(check_membership(&m, &u, &x, 1e-9).unwrap().member);
            moved |= x.amax() > 1e-3;
        }
        assert!(moved);
    }
}
