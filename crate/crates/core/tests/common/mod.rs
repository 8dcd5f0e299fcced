#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rcmdp::model::{CmdpModel, ModelParts};
use rcmdp::synthetic::SyntheticSpec;
use rcmdp::uncertainty::{BlockBuilder, SocBlockData, UncertaintySet};

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Builds a model from per-pair kernel rows, state-major.
pub fn model(
    actions: &[usize],
    alpha: f64,
    gamma: &[f64],
    rows: &[&[f64]],
    c: &[f64],
    d: &[&[f64]],
    xi: &[f64],
) -> CmdpModel {
    let n = actions.len();
    let pairs: usize = actions.iter().sum();
    assert_eq!(rows.len(), pairs);
    let p_bar = DMatrix::from_fn(pairs, n, |k, j| rows[k][j]);
    CmdpModel::new(ModelParts {
        states: names("s", n),
        actions: actions.iter().map(|&a| names("a", a)).collect(),
        alpha,
        gamma: DVector::from_column_slice(gamma),
        p_bar,
        c: DVector::from_column_slice(c),
        d: d.iter().map(|v| DVector::from_column_slice(v)).collect(),
        xi: xi.to_vec(),
    })
    .unwrap()
}

/// Relative boxes `[−r p̄, r(1 − p̄)]` with sum-zero rows and an optional ball on every state.
pub fn scaled_boxes(model: &CmdpModel, r: f64, ball: Option<f64>) -> UncertaintySet {
    let n = model.n_states();
    let blocks = (0..n)
        .map(|s| {
            let mut b = BlockBuilder::new(model, s);
            for (a, k) in model.pairs_of(s).enumerate() {
                for j in 0..n {
                    let p = model.p_bar[(k, j)];
                    b.bound(a, j, -r * p, r * (1.0 - p));
                }
            }
            b.sum_zero();
            if let Some(y) = ball {
                b.soc(SocBlockData::ball(model.block_dim(s), y));
            }
            b.build().unwrap()
        })
        .collect();
    UncertaintySet::new(model, blocks).unwrap()
}

/// Sizes drawn for the seeded suites: `|S| ∈ {2, 3, 4}`, `|A(s)| ∈ {1, 2}`.
pub fn suite_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_states: 2 + (seed % 3) as usize,
        max_actions: 2,
        ..SyntheticSpec::default()
    }
}
