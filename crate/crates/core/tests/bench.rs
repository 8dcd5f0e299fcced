use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcmdp::bench::{
    machine_replacement_instance, machine_replacement_uncertainty, table1_protocol, Expected, MachineReplacementConfig,
    SetBlock,
};
use rcmdp::model::CmdpModel;
use rcmdp::oracle::sample_member;
use rcmdp::uncertainty::{check_membership, coordinate_bounds, UncertaintySet};

fn build(cfg: &MachineReplacementConfig) -> (CmdpModel, UncertaintySet) {
    let m = machine_replacement_instance(cfg).unwrap();
    let u = machine_replacement_uncertainty(cfg, &m).unwrap();
    (m, u)
}

/// Nominal kernel written out by hand from the ageing pattern: keep drifts
/// towards the next state, repair pulls back, `sⁿ⁻¹` is minor and `sⁿ` major repair.
fn pattern_row(n: usize, s: usize, a: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    let (minor, major) = (n - 2, n - 1);
    let put = |p: &mut Vec<f64>, entries: &[(usize, f64)]| {
        for &(j, v) in entries {
            p[j] += v;
        }
    };
    if s == 0 {
        if a == 0 {
            put(&mut p, &[(0, 0.3), (1, 0.6), (minor, 0.1)]);
        } else {
            put(&mut p, &[(0, 0.7), (1, 0.3)]);
        }
    } else if s == major {
        if a == 0 {
            put(&mut p, &[(n - 3, 0.1), (minor, 0.1), (major, 0.8)]);
        } else {
            put(&mut p, &[(0, 0.05), (minor, 0.6), (major, 0.35)]);
        }
    } else if s == minor {
        if a == 0 {
            put(&mut p, &[(0, 0.8), (minor, 0.2)]);
        } else {
            put(&mut p, &[(0, 0.1), (minor, 0.9)]);
        }
    } else if s == n - 3 {
        if a == 0 {
            put(&mut p, &[(s - 1, 0.1), (s, 0.8), (major, 0.1)]);
        } else {
            put(&mut p, &[(s - 1, 0.7), (s, 0.25), (major, 0.05)]);
        }
    } else if s == n - 4 {
        if a == 0 {
            put(&mut p, &[(s - 1, 0.1), (s, 0.2), (s + 1, 0.6), (minor, 0.1)]);
        } else {
            put(&mut p, &[(s - 1, 0.7), (s, 0.2), (s + 1, 0.05), (minor, 0.05)]);
        }
    } else if a == 0 {
        put(
            &mut p,
            &[(s - 1, 0.05), (s, 0.2), (s + 1, 0.6), (s + 2, 0.05), (minor, 0.1)],
        );
    } else {
        put(
            &mut p,
            &[(s - 1, 0.7), (s, 0.15), (s + 1, 0.05), (s + 2, 0.05), (minor, 0.05)],
        );
    }
    p
}

#[test]
fn ten_state_kernel_follows_the_pattern() {
    let cfg = MachineReplacementConfig::new(10, 0.0, None);
    let m = machine_replacement_instance(&cfg).unwrap();
    for s in 0..10 {
        for a in 0..2 {
            let k = m.pair(s, a);
            let want = pattern_row(10, s, a);
            for j in 0..10 {
                assert_eq!(m.p_bar[(k, j)], want[j], "s{} a{} -> s{}", s + 1, a + 1, j + 1);
            }
        }
    }
    // a¹ at s³: back to s², stay, forward to s⁴ and s⁵, or fail to s⁹.
    let k = m.pair(2, 0);
    let nz: Vec<(usize, f64)> = (0..10)
        .filter(|&j| m.p_bar[(k, j)] > 0.0)
        .map(|j| (j + 1, m.p_bar[(k, j)]))
        .collect();
    assert_eq!(nz, vec![(2, 0.05), (3, 0.2), (4, 0.6), (5, 0.05), (9, 0.1)]);
}

#[test]
fn kernel_rows_are_distributions() {
    for n in [7, 10, 25] {
        let m = machine_replacement_instance(&MachineReplacementConfig::new(n, 0.0, None)).unwrap();
        for k in 0..m.n_pairs() {
            let row = m.p_bar.row(k);
            assert!((row.sum() - 1.0).abs() < 1e-12, "n {n} pair {k}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        // Costs increase with wear on the first n − 3 states.
        for s in 1..n - 3 {
            assert!(m.c[m.pair(s, 0)] >= m.c[m.pair(s - 1, 0)]);
        }
    }
}

#[test]
fn scaled_box_matches_sigma() {
    let (m, u) = build(&MachineReplacementConfig::new(7, 0.01, None));
    let bounds = coordinate_bounds(&m, &u).unwrap();
    let idx = m.transition_index(m.pair(1, 0), 2);
    assert!((bounds.lower[idx] + 0.006).abs() < 1e-9, "{}", bounds.lower[idx]);
    assert!((bounds.upper[idx] - 0.004).abs() < 1e-9, "{}", bounds.upper[idx]);
    // Named intervals at the minor-repair state keep their own limits.
    let idx = m.transition_index(m.pair(5, 0), 6);
    assert!(bounds.upper[idx] <= 0.6 + 1e-9);
}

#[test]
fn first_row_perturbs_only_the_minor_repair_state() {
    let row = &table1_protocol()[0];
    let (m, u) = build(&row.config);
    let bounds = coordinate_bounds(&m, &u).unwrap();
    for s in 0..7 {
        for j in m.block_range(s) {
            let width = bounds.upper[j] - bounds.lower[j];
            if s == 5 {
                continue;
            }
            assert!(width.abs() < 1e-9, "state {s} coordinate {j} has width {width}");
        }
    }
    let free = m
        .block_range(5)
        .filter(|&j| bounds.upper[j] - bounds.lower[j] > 1e-6)
        .count();
    assert_eq!(free, 5);
}

#[test]
fn larger_sigma_contains_smaller() {
    let (m, small) = build(&MachineReplacementConfig::new(7, 0.01, None));
    let (_, large) = build(&MachineReplacementConfig::new(7, 0.03, None));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let u = sample_member(&m, &small, 50, &mut rng);
        assert!(check_membership(&m, &small, &u, 1e-8).unwrap().member);
        assert!(check_membership(&m, &large, &u, 1e-8).unwrap().member);
    }
}

#[test]
fn larger_radius_contains_smaller() {
    let (m, small) = build(&MachineReplacementConfig::new(7, 0.05, Some(0.01)));
    let (_, large) = build(&MachineReplacementConfig::new(7, 0.05, Some(0.1)));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let u = sample_member(&m, &small, 50, &mut rng);
        assert!(check_membership(&m, &large, &u, 1e-8).unwrap().member);
    }
}

#[test]
fn origin_belongs_to_every_grid_set() {
    for row in table1_protocol() {
        let (m, u) = build(&row.config);
        let zero = nalgebra::DVector::zeros(m.transition_len());
        assert!(
            check_membership(&m, &u, &zero, 1e-12).unwrap().member,
            "row {}",
            row.index
        );
    }
}

#[test]
fn protocol_matches_the_reference_grid() {
    let rows = table1_protocol();
    assert_eq!(rows.len(), 25);
    assert_eq!(rows[0].expected, Expected::Value(84.9511));
    assert_eq!(rows[1].expected, Expected::Value(92.7133));
    assert_eq!(rows[4].expected, Expected::Bracket(86.8082, 92.7144));
    assert_eq!(rows[21].expected, Expected::Infeasible);
    assert_eq!(rows[24].expected, Expected::Infeasible);
    assert!(!rows[0].config.blocks.contains(&SetBlock::Ageing));
    for r in &rows {
        assert_eq!(r.config.alpha, 0.6);
        assert_eq!(r.config.xi1, 170.0);
        if let Expected::Bracket(lo, hi) = r.expected {
            assert!(lo <= hi);
        }
        assert_eq!(r.repair.is_none(), r.expected == Expected::Infeasible);
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let cfg = MachineReplacementConfig::new(7, 0.01, None).with_blocks(&[SetBlock::Scaled]);
    assert!(machine_replacement_instance(&cfg).is_err());
    let mut cfg = MachineReplacementConfig::new(7, 1.5, None);
    assert!(machine_replacement_instance(&cfg).is_err());
    cfg.sigma = 0.1;
    cfg.y = Some(-1.0);
    assert!(machine_replacement_instance(&cfg).is_err());
}
