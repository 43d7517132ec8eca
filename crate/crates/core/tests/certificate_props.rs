mod common;

use common::*;
use droopcert::certificate::{
    alpha_theory_all, assemble_edge_matrices, build_edge_matrix, certify, decompose_alpha, network_jacobian,
    CertifyOptions, DecompositionStrategy, RotationO,
};
use droopcert::models::{GeneralizedDroop, NodeModel};
use droopcert::oracle::{oracle_verdict, Stability, DEFAULT_TOL};
use droopcert::Error;
use nalgebra::Matrix2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts() -> CertifyOptions {
    CertifyOptions {
        phase_diagnostics: false,
        ..CertifyOptions::default()
    }
}

fn droop_times(m: &GeneralizedDroop, o: &Matrix2<f64>) -> GeneralizedDroop {
    let t = Matrix2::new(m.c_vq, m.c_vp, m.c_wq, m.c_wp) * o;
    GeneralizedDroop {
        c_vq: t[(0, 0)],
        c_vp: t[(0, 1)],
        c_wq: t[(1, 0)],
        c_wp: t[(1, 1)],
        alpha: m.alpha,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certified_implies_spectrally_stable(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=10);
        let grid = random_grid(&mut rng, n, 0.3, 0.0);
        let op = random_operating_point(&mut rng, &grid);
        let theory = alpha_theory_all(&grid.laplacian(), &op).unwrap();
        let models: Vec<NodeModel> = theory
            .iter()
            .map(|&t| {
                let xi: f64 = rng.random_range(0.0..1.0);
                random_accretive_droop(&mut rng, t + xi).into()
            })
            .collect();
        let report = certify(&grid, &op, &models, &opts()).unwrap();
        if report.is_certified() {
            let v = oracle_verdict(&grid, &op, &models, DEFAULT_TOL).unwrap();
            prop_assert_eq!(v.verdict, Stability::Stable, "max Re {}", v.max_re_excluding_zero_mode);
        }
    }

    #[test]
    fn edge_blocks_reassemble_network_jacobian(seed in any::<u64>(), uniform in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let grid = random_grid(&mut rng, n, 0.4, 0.0);
        let op = random_operating_point(&mut rng, &grid);
        let l = grid.laplacian();
        let alpha: Vec<f64> = alpha_theory_all(&l, &op).unwrap().iter().map(|t| t + rng.random_range(0.0..2.0)).collect();
        let strategy = if uniform { DecompositionStrategy::UniformExcess } else { DecompositionStrategy::ProportionalToBound };
        let shares = decompose_alpha(&grid, &op, &alpha, strategy).unwrap();
        let ems: Vec<_> = shares
            .iter()
            .map(|s| build_edge_matrix(&l, &op, (s.from, s.to), s.alpha_nm, s.alpha_mn).unwrap())
            .collect();
        let jn = network_jacobian(&grid, &op, &alpha).unwrap();
        let rel = (&jn.j_net - assemble_edge_matrices(n, &ems)).norm() / jn.j_net.norm();
        prop_assert!(rel <= 1e-12, "relative residual {rel:e}");
    }

    #[test]
    fn certification_is_monotone_in_alpha(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=8);
        let grid = random_grid(&mut rng, n, 0.3, 0.0);
        let op = random_operating_point(&mut rng, &grid);
        let theory = alpha_theory_all(&grid.laplacian(), &op).unwrap();
        let base: Vec<GeneralizedDroop> = theory
            .iter()
            .map(|&t| {
                let off = rng.random_range(-0.2..0.5);
                random_accretive_droop(&mut rng, t + off)
            })
            .collect();
        let before = certify(&grid, &op, &base.iter().map(|&m| m.into()).collect::<Vec<NodeModel>>(), &opts()).unwrap();
        let raised: Vec<NodeModel> = base
            .iter()
            .map(|m| GeneralizedDroop { alpha: m.alpha + rng.random_range(0.0..1.0), ..*m }.into())
            .collect();
        let after = certify(&grid, &op, &raised, &opts()).unwrap();
        prop_assert!(!before.is_certified() || after.is_certified());
    }

    #[test]
    fn lossy_verdict_equals_lossless_on_rotated_gains(seed in any::<u64>(), rx in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=8);
        let grid = random_grid(&mut rng, n, 0.3, 0.0);
        let op = random_operating_point(&mut rng, &grid);
        let theory = alpha_theory_all(&grid.laplacian(), &op).unwrap();
        let droops: Vec<GeneralizedDroop> = theory
            .iter()
            .map(|&t| {
                let off = rng.random_range(-0.1..0.5);
                random_accretive_droop(&mut rng, t + off)
            })
            .collect();
        let o = RotationO::from_rx_ratio(rx).o;
        let lossy = certify(&grid.with_rx_ratio(rx).unwrap(), &op, &droops.iter().map(|&m| m.into()).collect::<Vec<NodeModel>>(), &opts()).unwrap();
        let rotated: Vec<GeneralizedDroop> = droops.iter().map(|m| droop_times(m, &o)).collect();
        let lossless = certify(&grid, &op, &rotated.iter().map(|&m| m.into()).collect::<Vec<NodeModel>>(), &opts()).unwrap();
        prop_assert_eq!(lossy.verdict, lossless.verdict);

        let back: Vec<GeneralizedDroop> = rotated.iter().map(|m| droop_times(m, &o.try_inverse().unwrap())).collect();
        for (a, b) in droops.iter().zip(&back) {
            for (x, y) in [(a.c_vq, b.c_vq), (a.c_vp, b.c_vp), (a.c_wq, b.c_wq), (a.c_wp, b.c_wp)] {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
        let restored = certify(&grid.with_rx_ratio(rx).unwrap(), &op, &back.iter().map(|&m| m.into()).collect::<Vec<NodeModel>>(), &opts()).unwrap();
        prop_assert_eq!(restored.verdict, lossy.verdict);
    }

    #[test]
    fn node_bound_is_minimal_edge_feasible_alpha(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let grid = random_grid(&mut rng, n, 0.3, 0.0);
        let op = random_operating_point(&mut rng, &grid);
        let theory = alpha_theory_all(&grid.laplacian(), &op).unwrap();
        prop_assert!(decompose_alpha(&grid, &op, &theory, DecompositionStrategy::ProportionalToBound).is_ok());
        let node = rng.random_range(0..n);
        let mut below = theory.clone();
        below[node] -= 1e-6;
        let infeasible = matches!(
            decompose_alpha(&grid, &op, &below, DecompositionStrategy::ProportionalToBound),
            Err(Error::AlphaInfeasible { node: k, .. }) if k == node
        );
        prop_assert!(infeasible);
    }
}

#[test]
fn ieee14_dip_scenario_names_node_one() {
    let (case, op) = stressed_ieee14();
    let theory = alpha_theory_all(&case.grid.laplacian(), &op).unwrap();
    let mut alphas: Vec<f64> = theory.iter().map(|t| t + 1e-3).collect();
    let ok = certify(&case.grid, &op, &droop_everywhere(&alphas, resolved_gains), &CertifyOptions::default()).unwrap();
    assert!(ok.is_certified());
    let verdict = oracle_verdict(&case.grid, &op, &droop_everywhere(&alphas, resolved_gains), DEFAULT_TOL).unwrap();
    assert_eq!(verdict.verdict, Stability::Stable);
    alphas[0] = theory[0] - 0.1;
    let bad = certify(&case.grid, &op, &droop_everywhere(&alphas, resolved_gains), &CertifyOptions::default()).unwrap();
    assert!(!bad.is_certified());
    assert_eq!(bad.failing_nodes(), vec![0]);
}

#[test]
fn exact_bound_is_tight_on_four_bus() {
    // At alpha = alpha_theory a second eigenvalue sits at the origin up to
    // roundoff and moves left in proportion to the surplus.
    let case = droopcert::case::bundled_case("four_bus").unwrap();
    let spec = droopcert::powerflow::PowerFlowSpec::new(case.p_set.clone(), case.q_set.clone(), case.slack)
        .with_v_init(case.v_set_or_unity());
    let op = droopcert::powerflow::solve(&case.grid, &spec, Default::default()).unwrap().op;
    let theory = alpha_theory_all(&case.grid.laplacian(), &op).unwrap();
    let at = |off: f64| {
        let a: Vec<f64> = theory.iter().map(|t| t + off).collect();
        let models = droop_everywhere(&a, resolved_gains);
        (
            certify(&case.grid, &op, &models, &opts()).unwrap().is_certified(),
            oracle_verdict(&case.grid, &op, &models, DEFAULT_TOL).unwrap(),
        )
    };
    let (cert0, v0) = at(0.0);
    assert!(cert0);
    assert_ne!(v0.verdict, Stability::Unstable);
    assert!(v0.max_re_excluding_zero_mode.abs() < 1e-8);
    let (cert1, v1) = at(1e-4);
    let (_, v2) = at(2e-4);
    assert!(cert1);
    assert_eq!(v1.verdict, Stability::Stable);
    let ratio = v2.max_re_excluding_zero_mode / v1.max_re_excluding_zero_mode;
    assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");
}
