//! Machine-replacement benchmark family.
//!
//! States `s¹ … sⁿ⁻²` are ages of a machine, `sⁿ⁻¹` and `sⁿ` the minor and
//! major repair states; action `a¹` keeps the machine running and `a²`
//! repairs it.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CmdpModel, ModelParts};
use crate::uncertainty::{BlockBuilder, SocBlockData, UncertaintySet};

pub const BASE_STATES: usize = 7;
pub const C7: [f64; 7] = [61.08, 62.17, 144.44, 174.36, 800.0, 300.0, 600.0];
pub const D7_KEEP: [f64; 7] = [113.64, 154.73, 173.2, 191.32, 600.0, 800.0, 900.0];
pub const D7_REPAIR: [f64; 7] = [179.33, 269.52, 189.51, 258.9, 200.0, 250.0, 350.0];

/// Parts of the uncertainty set that can be switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SetBlock {
    /// Intervals and the coupling row at the minor-repair state.
    #[serde(rename = "11a")]
    MinorRepair,
    /// Repair-action intervals at ageing states `s³ … sⁿ⁻²`.
    #[serde(rename = "11b")]
    Ageing,
    /// `σ`-scaled boxes on every other coordinate.
    #[serde(rename = "11c")]
    Scaled,
    /// Rows of every perturbed kernel sum to one.
    #[serde(rename = "11d")]
    SumZero,
    /// `‖u(·|s,·)‖₂ ≤ y(s)`; active only when `y` is set.
    #[serde(rename = "norm")]
    Norm,
}

impl std::str::FromStr for SetBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "11a" => Ok(SetBlock::MinorRepair),
            "11b" => Ok(SetBlock::Ageing),
            "11c" => Ok(SetBlock::Scaled),
            "11d" => Ok(SetBlock::SumZero),
            "norm" => Ok(SetBlock::Norm),
            other => Err(Error::InvalidInput(format!("unknown block {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// All mass on `s¹`.
    Start,
    Uniform,
}

impl std::str::FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" | "start-at-s1" => Ok(GammaMode::Start),
            "uniform" => Ok(GammaMode::Uniform),
            other => Err(Error::InvalidInput(format!("unknown gamma mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineReplacementConfig {
    pub n: usize,
    pub sigma: f64,
    /// Common radius of every state's norm ball.
    pub y: Option<f64>,
    pub alpha: f64,
    pub gamma: GammaMode,
    pub xi1: f64,
    pub blocks: BTreeSet<SetBlock>,
    /// Include the coupling row of the minor-repair state.
    pub coupling: bool,
    /// Seed for the random costs of instances with more than seven states.
    pub cost_seed: u64,
}

impl MachineReplacementConfig {
    /// Seven states, starting in `s¹`, every block present.
    pub fn new(n: usize, sigma: f64, y: Option<f64>) -> Self {
        Self {
            n,
            sigma,
            y,
            alpha: 0.6,
            gamma: GammaMode::Start,
            xi1: if n == BASE_STATES { 170.0 } else { 300.0 },
            blocks: [
                SetBlock::MinorRepair,
                SetBlock::Ageing,
                SetBlock::Scaled,
                SetBlock::SumZero,
                SetBlock::Norm,
            ]
            .into_iter()
            .collect(),
            coupling: true,
            cost_seed: 0,
        }
    }

    pub fn with_blocks(mut self, blocks: &[SetBlock]) -> Self {
        self.blocks = blocks.iter().copied().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < BASE_STATES {
            return Err(Error::InvalidInput(format!(
                "machine replacement needs n >= 7, got {}",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidInput(format!("sigma {} outside [0, 1]", self.sigma)));
        }
        if self.y.is_some_and(|y| !(y >= 0.0)) {
            return Err(Error::InvalidInput("norm radius must be nonnegative".into()));
        }
        if !self.blocks.is_empty() && !self.blocks.contains(&SetBlock::SumZero) {
            return Err(Error::InvalidInput(
                "block 11d is required whenever any block is present".into(),
            ));
        }
        if self.coupling && !self.blocks.contains(&SetBlock::MinorRepair) {
            return Err(Error::InvalidInput("the coupling row needs block 11a".into()));
        }
        Ok(())
    }
}

/// One kernel row as `(next state, probability)` pairs, zero-based.
fn row(n: usize, state: usize, action: usize) -> Vec<(usize, f64)> {
    let minor = n - 2;
    let major = n - 1;
    let i = state;
    match (i, action) {
        (0, 0) => vec![(0, 0.3), (1, 0.6), (minor, 0.1)],
        (0, _) => vec![(0, 0.7), (1, 0.3)],
        _ if i == major => match action {
            0 => vec![(n - 3, 0.1), (minor, 0.1), (major, 0.8)],
            _ => vec![(0, 0.05), (minor, 0.6), (major, 0.35)],
        },
        _ if i == minor => match action {
            0 => vec![(0, 0.8), (minor, 0.2)],
            _ => vec![(0, 0.1), (minor, 0.9)],
        },
        _ if i == n - 3 => match action {
            0 => vec![(i - 1, 0.1), (i, 0.8), (major, 0.1)],
            _ => vec![(i - 1, 0.7), (i, 0.25), (major, 0.05)],
        },
        _ if i == n - 4 => match action {
            0 => vec![(i - 1, 0.1), (i, 0.2), (i + 1, 0.6), (minor, 0.1)],
            _ => vec![(i - 1, 0.7), (i, 0.2), (i + 1, 0.05), (minor, 0.05)],
        },
        _ => match action {
            0 => vec![(i - 1, 0.05), (i, 0.2), (i + 1, 0.6), (i + 2, 0.05), (minor, 0.1)],
            _ => vec![(i - 1, 0.7), (i, 0.15), (i + 1, 0.05), (i + 2, 0.05), (minor, 0.05)],
        },
    }
}

fn nominal_kernel(n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(2 * n, n);
    for s in 0..n {
        for a in 0..2 {
            for (j, v) in row(n, s, a) {
                p[(2 * s + a, j)] += v;
            }
        }
    }
    p
}

/// Increasing draws from `(lo, hi)` for the first `count` states.
fn increasing(rng: &mut ChaCha8Rng, count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..count).map(|_| rng.gen_range(lo..hi)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Per-state costs `(c, d(·,a¹), d(·,a²))`.
fn state_costs(cfg: &MachineReplacementConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = cfg.n;
    if n == BASE_STATES {
        return (C7.to_vec(), D7_KEEP.to_vec(), D7_REPAIR.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.cost_seed);
    let head = n - 3;
    let mut c = increasing(&mut rng, head, 60.0, 180.0);
    let mut d1 = increasing(&mut rng, head, 110.0, 200.0);
    let mut d2 = increasing(&mut rng, head, 175.0, 260.0);
    c.extend_from_slice(&C7[4..]);
    d1.extend_from_slice(&D7_KEEP[4..]);
    d2.extend_from_slice(&D7_REPAIR[4..]);
    (c, d1, d2)
}

pub fn machine_replacement_instance(cfg: &MachineReplacementConfig) -> Result<CmdpModel> {
    cfg.validate()?;
    let n = cfg.n;
    let (c, d1, d2) = state_costs(cfg);
    let gamma = match cfg.gamma {
        GammaMode::Start => {
            let mut g = DVector::zeros(n);
            g[0] = 1.0;
            g
        }
        GammaMode::Uniform => DVector::from_element(n, 1.0 / n as f64),
    };
    CmdpModel::new(ModelParts {
        states: (1..=n).map(|i| format!("s{i}")).collect(),
        actions: vec![vec!["keep".to_string(), "repair".to_string()]; n],
        alpha: cfg.alpha,
        gamma,
        p_bar: nominal_kernel(n),
        c: DVector::from_iterator(2 * n, (0..2 * n).map(|k| c[k / 2])),
        d: vec![DVector::from_iterator(
            2 * n,
            (0..2 * n).map(|k| if k % 2 == 0 { d1[k / 2] } else { d2[k / 2] }),
        )],
        xi: vec![cfg.xi1],
    })
}

pub fn machine_replacement_uncertainty(cfg: &MachineReplacementConfig, model: &CmdpModel) -> Result<UncertaintySet> {
    cfg.validate()?;
    let n = cfg.n;
    if model.n_states() != n {
        return Err(Error::Dimension("model does not match the configuration".into()));
    }
    let has = |b: SetBlock| cfg.blocks.contains(&b);
    let minor = n - 2;
    let mut blocks = Vec::with_capacity(n);
    for s in 0..n {
        let mut b = BlockBuilder::new(model, s);
        let mut named: Vec<(usize, usize, f64, f64)> = Vec::new();
        if s == minor && has(SetBlock::MinorRepair) {
            named.extend([
                (0, 0, -0.5, 0.0),
                (0, minor, -0.1, 0.1),
                (0, n - 1, 0.0, 0.6),
                (1, 0, 0.0, 0.7),
                (1, minor, -0.8, 0.0),
            ]);
        }
        // Ageing states s³ … sⁿ⁻², zero-based 2 ..= n − 3.
        if (2..=n - 3).contains(&s) && has(SetBlock::Ageing) {
            named.extend([(1, 0, 0.0, 0.7), (1, s - 1, -0.4, 0.1)]);
        }
        for &(a, j, lo, hi) in &named {
            b.bound(a, j, lo, hi);
        }
        if s == minor && cfg.coupling {
            b.le(&[(0, 0, 1.0), (0, minor, 2.0), (1, 0, 5.0)], 1.0);
        }
        for a in 0..2 {
            for j in 0..n {
                if named.iter().any(|&(na, nj, _, _)| na == a && nj == j) {
                    continue;
                }
                if has(SetBlock::Scaled) {
                    let p = model.p_bar[(model.pair(s, a), j)];
                    b.bound(a, j, -cfg.sigma * p, cfg.sigma * (1.0 - p));
                } else {
                    b.pin(a, j);
                }
            }
        }
        b.sum_zero();
        if let (true, Some(y)) = (has(SetBlock::Norm), cfg.y) {
            b.soc(SocBlockData::ball(2 * n, y));
        }
        blocks.push(b.build()?);
    }
    UncertaintySet::new(model, blocks)
}

/// Expected outcome of a table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Value(f64),
    /// Reported bounds under a time limit; only their ordering is checked.
    Bracket(f64, f64),
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    /// One-based position in the table.
    pub index: usize,
    pub config: MachineReplacementConfig,
    pub expected: Expected,
    /// Reference probabilities of choosing `a²`, per state.
    pub repair: Option<[f64; 7]>,
}

/// The reference `(σ, y)` grid on the seven-state instance.
pub fn table1_protocol() -> Vec<Table1Row> {
    use Expected::*;
    let r = |p1: f64, p2: f64| Some([p1, p2, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let rows: Vec<(f64, Option<f64>, Expected, Option<[f64; 7]>)> = vec![
        (0.0, None, Value(84.9511), r(0.7649, 0.0)),
        (0.01, None, Value(92.7133), r(0.7082, 0.0)),
        (0.01, Some(0.01), Value(90.0318), r(0.6448, 0.1445)),
        (0.01, Some(0.1), Value(92.7133), r(0.7082, 0.0)),
        (0.01, Some(0.5), Bracket(86.8082, 92.7144), r(0.7081, 0.0)),
        (0.03, None, Value(107.9344), r(0.0, 0.8307)),
        (0.03, Some(0.01), Value(90.2866), r(0.6123, 0.1952)),
        (0.03, Some(0.1), Bracket(107.5718, 107.7116), r(0.5591, 0.062)),
        (0.03, Some(0.5), Bracket(96.7416, 107.9377), r(0.0004, 0.83)),
        (0.05, None, Value(122.5219), r(0.0, 0.6745)),
        (0.05, Some(0.01), Bracket(73.7853, 90.3796), r(0.6088, 0.1994)),
        (0.05, Some(0.1), Bracket(105.0759, 120.2469), r(0.2865, 0.3111)),
        (0.05, Some(0.5), Bracket(102.6804, 122.5263), r(0.0, 0.6743)),
        (0.07, None, Value(137.5278), r(0.0, 0.5075)),
        (0.07, Some(0.01), Bracket(78.3563, 90.4313), r(0.607, 0.2016)),
        (0.07, Some(0.1), Bracket(110.0556, 128.3822), r(0.3201, 0.159)),
        (
            0.07,
            Some(0.5),
            Bracket(113.6387, 137.531),
            Some([0.0, 0.5073, 0.9999, 1.0, 1.0, 1.0, 1.0]),
        ),
        (
            0.1,
            None,
            Bracket(157.8017, 160.0454),
            Some([0.0, 0.2223, 0.1196, 1.0, 1.0, 1.0, 1.0]),
        ),
        (0.1, Some(0.01), Bracket(77.0855, 90.4388), r(0.6059, 0.2031)),
        (0.1, Some(0.1), Bracket(114.9212, 132.5782), r(0.3365, 0.0889)),
        (
            0.1,
            Some(0.5),
            Bracket(158.9444, 160.0507),
            Some([0.0, 0.2225, 0.162, 1.0, 1.0, 1.0, 1.0]),
        ),
        (0.3, None, Infeasible, None),
        (0.3, Some(0.01), Bracket(84.669, 90.4405), r(0.6058, 0.2032)),
        (0.3, Some(0.1), Bracket(123.9431, 136.9922), r(0.3249, 0.0355)),
        (0.3, Some(0.5), Infeasible, None),
    ];
    rows.into_iter()
        .enumerate()
        .map(|(i, (sigma, y, expected, repair))| {
            let mut config = MachineReplacementConfig::new(BASE_STATES, sigma, y);
            if i == 0 {
                config = config.with_blocks(&[SetBlock::MinorRepair, SetBlock::SumZero]);
            }
            Table1Row {
                index: i + 1,
                config,
                expected,
                repair,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;
    use crate::uncertainty::check_membership;

    #[rustfmt::skip]
    const KEEP7: [[f64; 7]; 7] = [
        [0.3, 0.6, 0.0, 0.0, 0.0, 0.1, 0.0],
        [0.05, 0.2, 0.6, 0.05, 0.0, 0.1, 0.0],
        [0.0, 0.05, 0.2, 0.6, 0.05, 0.1, 0.0],
        [0.0, 0.0, 0.1, 0.2, 0.6, 0.1, 0.0],
        [0.0, 0.0, 0.0, 0.1, 0.8, 0.0, 0.1],
        [0.8, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.8],
    ];
    #[rustfmt::skip]
    const REPAIR7: [[f64; 7]; 7] = [
        [0.7, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.7, 0.15, 0.05, 0.05, 0.0, 0.05, 0.0],
        [0.0, 0.7, 0.15, 0.05, 0.05, 0.05, 0.0],
        [0.0, 0.0, 0.7, 0.2, 0.05, 0.05, 0.0],
        [0.0, 0.0, 0.0, 0.7, 0.25, 0.0, 0.05],
        [0.1, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0],
        [0.05, 0.0, 0.0, 0.0, 0.0, 0.6, 0.35],
    ];

    #[test]
    fn seven_state_kernel_is_the_reference_literal() {
        let p = nominal_kernel(7);
        for s in 0..7 {
            for j in 0..7 {
                assert_eq!(p[(2 * s, j)], KEEP7[s][j], "keep row {s} col {j}");
                assert_eq!(p[(2 * s + 1, j)], REPAIR7[s][j], "repair row {s} col {j}");
            }
        }
        let m = machine_replacement_instance(&MachineReplacementConfig::new(7, 0.0, None)).unwrap();
        assert_eq!(m.p_bar[(0, 1)], 0.6);
        assert_eq!(m.p_bar[(2 * 5 + 1, 0)], 0.1);
        assert_eq!(m.p_bar[(2 * 6 + 1, 5)], 0.6);
        assert!(validate_model(&m).is_empty());
    }

    #[test]
    fn rows_are_stochastic_for_larger_instances() {
        for n in [7, 10, 25] {
            let mut cfg = MachineReplacementConfig::new(n, 0.05, None);
            cfg.cost_seed = 3;
            let m = machine_replacement_instance(&cfg).unwrap();
            for k in 0..m.n_pairs() {
                assert!((m.p_bar.row(k).sum() - 1.0).abs() < 1e-12);
            }
            let c = m.cost(crate::model::CostRef::Objective);
            for s in 1..n - 3 {
                assert!(c[2 * s] >= c[2 * (s - 1)]);
            }
        }
    }

    #[test]
    fn sigma_box_and_pins() {
        let cfg = MachineReplacementConfig::new(7, 0.01, None);
        let m = machine_replacement_instance(&cfg).unwrap();
        let u = machine_replacement_uncertainty(&cfg, &m).unwrap();
        let bounds = crate::uncertainty::coordinate_bounds(&m, &u).unwrap();
        let idx = m.transition_index(m.pair(1, 0), 2);
        assert!((bounds.lower[idx] + 0.006).abs() < 1e-7);
        assert!((bounds.upper[idx] - 0.004).abs() < 1e-7);

        let row1 = &table1_protocol()[0];
        let u1 = machine_replacement_uncertainty(&row1.config, &m).unwrap();
        let b1 = crate::uncertainty::coordinate_bounds(&m, &u1).unwrap();
        let idx = m.transition_index(m.pair(2, 0), 3);
        assert!(b1.lower[idx].abs() < 1e-9 && b1.upper[idx].abs() < 1e-9);
        assert!(
            check_membership(&m, &u1, &DVector::zeros(m.transition_len()), 1e-12)
                .unwrap()
                .member
        );
    }

    #[test]
    fn coupling_without_minor_repair_block_is_rejected() {
        let cfg = MachineReplacementConfig::new(7, 0.01, None).with_blocks(&[SetBlock::Scaled, SetBlock::SumZero]);
        assert!(cfg.validate().is_err());
        let mut ok = cfg.clone();
        ok.coupling = false;
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn protocol_lists_the_reference_grid() {
        let rows = table1_protocol();
        assert_eq!(rows.len(), 25);
        assert_eq!(rows[0].expected, Expected::Value(84.9511));
        assert_eq!(rows[5].expected, Expected::Value(107.9344));
        assert_eq!(rows[21].expected, Expected::Infeasible);
        assert!(rows.iter().all(|r| r.config.gamma == GammaMode::Start));
    }
}
