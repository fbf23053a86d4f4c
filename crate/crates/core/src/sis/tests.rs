use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::design::check_surrogates;
use crate::linalg::perron_value;

fn params_for(adj: &DMatrix<f64>, r: NonPrevention) -> SisParams {
    SisParams::calibrated(adj, 0.3, 7, r).unwrap()
}

/// Connected 6-node graph: bidirectional ring plus a chord 0 → 3.
fn small_graph() -> DMatrix<f64> {
    let mut a = DMatrix::zeros(6, 6);
    for i in 0..6 {
        a[(i, (i + 1) % 6)] = 1.0;
        a[((i + 1) % 6, i)] = 1.0;
    }
    a[(0, 3)] = 1.0;
    a
}

#[test]
fn extreme_edge_probabilities() {
    assert_eq!(erdos_renyi(7, 0.0, 3), DMatrix::zeros(7, 7));
    let full = erdos_renyi(7, 1.0, 3);
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(full[(i, j)], if i == j { 0.0 } else { 1.0 });
        }
    }
}

#[test]
fn edge_count_matches_binomial_statistics() {
    let (n, p) = (200usize, 0.05);
    let pairs = (n * (n - 1)) as f64;
    let sd = (pairs * p * (1.0 - p)).sqrt();
    for seed in 0..5 {
        let edges = erdos_renyi(n, p, seed).sum();
        assert!((edges - pairs * p).abs() < 4.0 * sd, "seed {seed}: {edges}");
    }
}

#[test]
fn graph_is_determined_by_seed() {
    assert_eq!(erdos_renyi(50, 0.1, 11), erdos_renyi(50, 0.1, 11));
    assert_ne!(erdos_renyi(50, 0.1, 11), erdos_renyi(50, 0.1, 12));
}

#[test]
fn in_degree_counts_row_entries() {
    let a = small_graph();
    assert_eq!(in_degrees(&a), vec![3, 2, 2, 2, 2, 2]);
}

#[test]
fn calibration_puts_unprotected_perron_value_at_a_tenth() {
    for seed in [1, 2] {
        let a = erdos_renyi(200, 0.05, seed);
        let p = SisParams::calibrated(&a, 0.05, seed, NonPrevention::Uniform(0.5)).unwrap();
        let m = &a * p.beta_hi - DMatrix::identity(200, 200);
        assert!((perron_value(&m).unwrap() - 0.1).abs() < 1e-6);
        assert!((p.beta_lo * 11.0 - p.beta_hi).abs() < 1e-15);
    }
}

#[test]
fn calibration_rejects_acyclic_graphs() {
    let mut a = DMatrix::zeros(3, 3);
    a[(1, 0)] = 1.0;
    assert!(SisParams::calibrated(&a, 0.1, 0, NonPrevention::Uniform(0.5)).is_err());
}

#[test]
fn model_moments() {
    let a = small_graph();
    let r = 0.3;
    let p = params_for(&a, NonPrevention::Uniform(r));
    let model = build_sis_model(&a, &p).unwrap();
    assert!(model.check_positivity());
    let spread = p.beta_hi - p.beta_lo;
    for (&(i, j), dist) in model.blocks() {
        let w = dist.w(crate::model::Side::Normal)[(0, 0)];
        if i == j {
            assert_eq!(w, 0.0);
            assert_eq!(dist.mean()[(0, 0)], -1.0);
        } else {
            assert_eq!(a[(i, j)], 1.0);
            assert!((w - r * (1.0 - r) * spread * spread).abs() < 1e-15);
        }
    }
    assert_eq!(model.blocks().len(), 6 + a.sum() as usize);
}

#[test]
fn full_infection_matches_calibrated_eigenvalue() {
    // r → 1 makes β̄ almost sure; an equal-rate model is deterministic.
    let a = small_graph();
    let mut p = params_for(&a, NonPrevention::Uniform(0.5));
    p.beta_lo = p.beta_hi;
    let model = build_sis_model(&a, &p).unwrap();
    let top = perron_value(&a).unwrap();
    let got = perron_value(&model.mean_matrix()).unwrap();
    assert!((got - (p.beta_hi * top - 1.0)).abs() < 1e-9);
    assert!((got - 0.1).abs() < 1e-9);
}

#[test]
fn invalid_parameters_are_rejected() {
    let a = small_graph();
    let good = params_for(&a, NonPrevention::Uniform(0.5));
    for bad in [
        SisParams { r: NonPrevention::Uniform(1.0), ..good.clone() },
        SisParams { r: NonPrevention::PerNode(vec![0.5; 5]), ..good.clone() },
        SisParams { delta: 0.0, ..good.clone() },
        SisParams { beta_lo: good.beta_hi * 2.0, ..good.clone() },
        SisParams { edge_prob: 1.5, ..good.clone() },
    ] {
        assert!(matches!(build_sis_model(&a, &bad), Err(SisError::Invalid(_))), "{bad:?}");
    }
    assert!(build_sis_model(&DMatrix::zeros(5, 5), &good).is_err());
}

#[test]
fn per_edge_probabilities_are_used() {
    let a = small_graph();
    let mut r = vec![vec![0.5; 6]; 6];
    r[0][1] = 0.9;
    let p = params_for(&a, NonPrevention::PerEdge(r));
    let model = build_sis_model(&a, &p).unwrap();
    let d = &model.blocks()[&(0, 1)];
    let expect = 0.9 * p.beta_hi + 0.1 * p.beta_lo;
    assert!((d.mean()[(0, 0)] - expect).abs() < 1e-15);
}

#[test]
fn design_family_surrogates_hold() {
    let a = erdos_renyi(12, 0.25, 5);
    let p = params_for(&a, NonPrevention::Uniform(0.5));
    let family = sis_design_family(&a, &p, 100.0).unwrap();
    check_surrogates(&family, 100, 1).unwrap();
    assert_eq!(family.params.len(), 12);
    let gp = crate::design::build_design_gp(&family, crate::design::DesignMode::FreeEps).unwrap();
    assert!(crate::gpsolve::gp_validate(&gp).is_empty());
}

#[test]
fn fig1_trends_on_a_small_graph() {
    let a = erdos_renyi(30, 0.15, 2);
    let p = SisParams::calibrated(&a, 0.15, 2, NonPrevention::Uniform(0.1)).unwrap();
    let lambdas = [0.0, 0.05, 0.1, 0.2, 0.4];
    let rs = [0.1, 0.2, 0.3, 0.4];
    let rows = fig1_sweep(&a, &p, &lambdas, &rs).unwrap();
    assert_eq!(rows.len(), 20);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!((row.r, row.lambda), (rs[k / 5], lambdas[k % 5]));
    }
    let eps = |ri: usize, li: usize| rows[ri * 5 + li].eps_star;
    for ri in 0..4 {
        for li in 0..5 {
            if li > 0 {
                assert!(eps(ri, li - 1) <= eps(ri, li), "λ trend at r {}", rs[ri]);
            }
            if ri > 0 {
                assert!(eps(ri - 1, li) <= eps(ri, li), "r trend at λ {}", lambdas[li]);
            }
        }
    }
    let csv = fig1_csv(&rows);
    assert!(csv.starts_with("r,lambda,eps_star\n"));
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(fig1_sweep(&a, &p, &lambdas, &rs).unwrap(), rows);
}

#[test]
fn equal_rates_give_deterministic_floor() {
    let a = small_graph();
    let mut p = params_for(&a, NonPrevention::Uniform(0.5));
    p.beta_hi = p.beta_lo;
    // perron(β̲A_G − I) = 0.1/1.1 − 1, so every λ < 1.8 has a deterministic margin.
    let rows = fig1_sweep(&a, &p, &[0.0, 1.0, 1.7], &[0.5]).unwrap();
    let floor = crate::policy::NumericPolicy::DEFAULT.eps_floor;
    for row in &rows {
        assert!(row.eps_star <= floor * 6.0 * 1.0001, "{row:?}");
    }
}

/// Complete graph on `n` nodes.
fn complete(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

#[test]
fn fig2_on_a_dense_graph() {
    let mut a = erdos_renyi(20, 0.6, 4);
    a[(0, 1)] = 1.0;
    let p = SisParams::calibrated(&a, 0.6, 4, NonPrevention::Uniform(0.5)).unwrap();
    let out = fig2_run(&a, &p, 150.0).unwrap();
    assert_eq!(out.rows.len(), 20);
    assert_eq!(out.rows[0].node, 1);
    let degrees = in_degrees(&a);
    assert!(out.rows.iter().zip(&degrees).all(|(r, &d)| r.in_degree == d));
    assert!(out.design.cost <= 150.0 * (1.0 + 1e-6));
    assert!(out.design.eps_star <= DESIGN_EPS * (1.0 + 1e-9));
    let d: Vec<f64> = degrees.iter().map(|&d| d as f64).collect();
    assert!(spearman(&d, &out.design.r_star) < 0.0);
    let csv = fig2_csv(&out.rows);
    assert!(csv.starts_with(&format!("node,in_degree,r_star\n1,{},", degrees[0])));
}

#[test]
fn symmetric_nodes_get_equal_rates() {
    let a = complete(6);
    let p = SisParams::calibrated(&a, 1.0, 0, NonPrevention::Uniform(0.5)).unwrap();
    let out = fig2_run(&a, &p, 40.0).unwrap();
    let r = &out.design.r_star;
    for x in r {
        assert!((x - r[0]).abs() < 1e-6 * r[0], "{r:?}");
    }
}

#[test]
fn isolated_node_is_left_unprotected() {
    // The last node has no incoming edges, so nothing constrains its rate.
    let mut a = complete(6).resize(7, 7, 0.0);
    a[(0, 6)] = 1.0;
    let p = SisParams::calibrated(&a, 1.0, 0, NonPrevention::Uniform(0.5)).unwrap();
    let out = fig2_run(&a, &p, 60.0).unwrap();
    assert_eq!(out.rows[6].in_degree, 0);
    let r = out.design.r_star[6];
    assert!(r > 1.0 - 1e-6, "{r}");
}

#[test]
fn spearman_known_values() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-15);
    assert!((spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]) - 0.866_025_403_784_438_6).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graphs_have_no_self_loops(n in 1usize..30, p in 0.0f64..=1.0, seed in any::<u64>()) {
        let a = erdos_renyi(n, p, seed);
        prop_assert!((0..n).all(|i| a[(i, i)] == 0.0));
        prop_assert!(a.iter().all(|&x| x == 0.0 || x == 1.0));
        prop_assert_eq!(&a, &erdos_renyi(n, p, seed));
    }

    #[test]
    fn eta_and_phi_dominate(r in 1e-4f64..1.0, hi in 0.0f64..5.0, frac in 0.0f64..=1.0) {
        let lo = hi * frac;
        let spread = hi - lo;
        prop_assert!(r.max(1.0 - r) * spread <= spread);
        prop_assert!(r * (1.0 - r) * spread * spread <= r * spread * spread);
    }
}
