//! Interval bounds on robust value vectors.
//!
//! Every kernel the uncertainty set allows lies inside the per-transition
//! interval hull `[max(0, p̄+ubar), min(1, p̄+uhat)]` intersected with the
//! simplex, provided the set keeps kernels stochastic. Iterating the
//! optimistic and pessimistic Bellman operators over that hull and over a
//! box of policies therefore brackets the robust value of every policy in
//! the box. Both operators are monotone, so iterating from a valid bracket
//! keeps every iterate valid and early stopping is safe.

use nalgebra::DVector;

use super::RobustInstance;
use crate::model::{CmdpModel, CostRef};

#[derive(Debug, Clone)]
pub struct IntervalKernel {
    /// One row per pair.
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
}

impl IntervalKernel {
    pub fn new(inst: &RobustInstance) -> Self {
        let model = &inst.model;
        let b = inst.bounds();
        let n = model.n_states();
        let row = |k: usize, shift: &DVector<f64>| -> Vec<f64> {
            (0..n)
                .map(|j| model.p_bar[(k, j)] + shift[model.transition_index(k, j)])
                .collect()
        };
        let lo = (0..model.n_pairs())
            .map(|k| row(k, &b.lower).into_iter().map(|p| p.max(0.0)).collect())
            .collect();
        let hi = (0..model.n_pairs())
            .map(|k| row(k, &b.upper).into_iter().map(|p| p.min(1.0)).collect())
            .collect();
        Self { lo, hi }
    }
}

/// Order of `v` used by the greedy allocations, largest first.
pub(crate) fn descending(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Extreme of `Σ x_i v_i` over `lo ≤ x ≤ hi`, `Σ x = 1`.
pub(crate) fn extreme_mix(lo: &[f64], hi: &[f64], v: &[f64], order: &[usize]) -> f64 {
    let mut left = 1.0 - lo.iter().sum::<f64>();
    let mut total: f64 = lo.iter().zip(v).map(|(l, x)| l * x).sum();
    for &i in order {
        if left <= 0.0 {
            break;
        }
        let take = (hi[i] - lo[i]).min(left).max(0.0);
        total += take * v[i];
        left -= take;
    }
    total
}

/// Lower and upper robust values, per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBracket {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ValueBracket {
    /// The trivial bracket `[min cost, max cost] / (1−α)`.
    pub fn trivial(model: &CmdpModel, cost: CostRef) -> Self {
        let c = model.cost(cost);
        let scale = 1.0 / (1.0 - model.alpha);
        Self {
            lower: DVector::from_element(model.n_states(), c.min() * scale),
            upper: DVector::from_element(model.n_states(), c.max() * scale),
        }
    }
}

/// Tightens `start` towards the robust values of all policies in
/// `[f_lo, f_hi]` under `kernel`. The result is valid after any number of
/// sweeps as long as `start` was.
#[allow(clippy::too_many_arguments)]
pub fn bracket_values(
    model: &CmdpModel,
    kernel: &IntervalKernel,
    cost: CostRef,
    f_lo: &[f64],
    f_hi: &[f64],
    start: &ValueBracket,
    max_sweeps: usize,
    tol: f64,
) -> ValueBracket {
    let n = model.n_states();
    let c = model.cost(cost);
    let alpha = model.alpha;
    let mut lower = start.lower.clone();
    let mut upper = start.upper.clone();
    let mut q = Vec::new();
    for _ in 0..max_sweeps {
        let up_order = descending(upper.as_slice());
        let neg_lower: Vec<f64> = lower.iter().map(|v| -v).collect();
        let low_order = descending(&neg_lower);
        let mut change = 0.0f64;
        let mut next_up = upper.clone();
        let mut next_lo = lower.clone();
        for s in 0..n {
            let pairs = model.pairs_of(s);
            let lo_f = &f_lo[pairs.clone()];
            let hi_f = &f_hi[pairs.clone()];

            q.clear();
            for k in pairs.clone() {
                q.push(c[k] + alpha * extreme_mix(&kernel.lo[k], &kernel.hi[k], upper.as_slice(), &up_order));
            }
            let up = extreme_mix(lo_f, hi_f, &q, &descending(&q));

            q.clear();
            for k in pairs.clone() {
                q.push(-(c[k] - alpha * extreme_mix(&kernel.lo[k], &kernel.hi[k], &neg_lower, &low_order)));
            }
            let lo = -extreme_mix(lo_f, hi_f, &q, &descending(&q));

            // Monotone iterates from a valid start only move inwards.
            let up = up.min(upper[s]);
            let lo = lo.max(lower[s]);
            change = change.max((upper[s] - up).abs()).max((lo - lower[s]).abs());
            next_up[s] = up;
            next_lo[s] = lo;
        }
        upper = next_up;
        lower = next_lo;
        if change <= tol {
            break;
        }
    }
    ValueBracket { lower, upper }
}
