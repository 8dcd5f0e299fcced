//! Seeded random small instances for property tests and cross-checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{CmdpModel, ModelParts, StationaryPolicy};
use crate::uncertainty::{BlockBuilder, SocBlockData, UncertaintySet};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_states: usize,
    pub max_actions: usize,
    pub n_constraints: usize,
    /// Chance that a state's block carries a norm ball.
    pub soc_probability: f64,
    /// Largest relative box radius.
    pub max_scale: f64,
    pub alpha: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_states: 3,
            max_actions: 2,
            n_constraints: 1,
            soc_probability: 0.5,
            max_scale: 0.3,
            alpha: 0.7,
        }
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-3f64..1.0).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A random model with a positive initial distribution and loose bounds
/// `ξ_k` set to the largest constraint cost over `1 − α`.
pub fn random_model(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<CmdpModel> {
    let n = spec.n_states;
    let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=spec.max_actions)).collect();
    let pairs: usize = actions.iter().sum();
    let mut p_bar = DMatrix::zeros(pairs, n);
    for k in 0..pairs {
        for (j, v) in simplex_point(rng, n).into_iter().enumerate() {
            p_bar[(k, j)] = v;
        }
    }
    // Exact row sums after rounding.
    for k in 0..pairs {
        let s: f64 = p_bar.row(k).iter().take(n - 1).sum();
        p_bar[(k, n - 1)] = 1.0 - s;
    }
    let c = DVector::from_fn(pairs, |_, _| rng.gen_range(0.0..10.0));
    let d: Vec<DVector<f64>> = (0..spec.n_constraints)
        .map(|_| DVector::from_fn(pairs, |_, _| rng.gen_range(0.0..10.0)))
        .collect();
    let xi = d.iter().map(|dk| dk.max() / (1.0 - spec.alpha) + 1.0).collect();
    CmdpModel::new(ModelParts {
        states: names("s", n),
        actions: actions.iter().map(|&a| names("a", a)).collect(),
        alpha: spec.alpha,
        gamma: DVector::from_vec(simplex_point(rng, n)),
        p_bar,
        c,
        d,
        xi,
    })
}

/// Boxes `[−r p̄, r(1 − p̄)]` with a random `r` per state, sum-zero rows and,
/// with the configured probability, a norm ball. Every kernel in the set
/// is stochastic and the origin is strictly inside each ball.
pub fn random_uncertainty(model: &CmdpModel, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<UncertaintySet> {
    let n = model.n_states();
    let mut blocks = Vec::with_capacity(n);
    for s in 0..n {
        let r = rng.gen_range(0.02..spec.max_scale.max(0.03));
        let mut b = BlockBuilder::new(model, s);
        for (a, k) in model.pairs_of(s).enumerate() {
            for j in 0..n {
                let p = model.p_bar[(k, j)];
                b.bound(a, j, -r * p, r * (1.0 - p));
            }
        }
        b.sum_zero();
        if rng.gen_bool(spec.soc_probability.clamp(0.0, 1.0)) {
            b.soc(SocBlockData::ball(model.block_dim(s), rng.gen_range(0.02..0.2)));
        }
        blocks.push(b.build()?);
    }
    UncertaintySet::new(model, blocks)
}

pub fn random_policy(model: &CmdpModel, rng: &mut ChaCha8Rng) -> Result<StationaryPolicy> {
    let rows = (0..model.n_states())
        .map(|s| simplex_point(rng, model.n_actions(s)))
        .collect();
    StationaryPolicy::new(model, rows)
}

/// Model, set and policy from one seed.
pub fn random_instance(spec: &SyntheticSpec, seed: u64) -> Result<(CmdpModel, UncertaintySet, StationaryPolicy)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(spec, &mut rng)?;
    let uset = random_uncertainty(&model, spec, &mut rng)?;
    let policy = random_policy(&model, &mut rng)?;
    Ok((model, uset, policy))
}
