use nalgebra::{dmatrix, DMatrix};

use super::*;
use crate::model::{FiniteMatrixDistribution, Side};

fn det(x: f64) -> FiniteMatrixDistribution {
    FiniteMatrixDistribution::deterministic(dmatrix![x])
}

fn bern(r: f64, hi: f64, lo: f64) -> FiniteMatrixDistribution {
    FiniteMatrixDistribution::two_point(r, dmatrix![hi], dmatrix![lo]).unwrap()
}

fn minus_identity(big_n: usize) -> NetworkModel {
    NetworkModel::a1(big_n, 1, (0..big_n).map(|i| ((i, i), det(-1.0)))).unwrap()
}

fn witness(p: Vec<f64>, a: f64, delta: f64, sigma: f64, lambda: f64, eps: f64, big_n: usize) -> CertificateParams {
    CertificateParams {
        p,
        a,
        delta,
        sigma,
        rho: rho_of_eps(eps, 1, big_n).unwrap(),
        lambda,
        eps,
        mode: Mode::A1,
    }
}

#[test]
fn a_max_of_minus_identity() {
    let m = minus_identity(3);
    assert!((a_max(&m, &[1.0; 3], 0.0).unwrap() - 2.0).abs() < 1e-12);
    assert!((a_max(&m, &[1.0; 3], 1.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn a_max_non_metzler_mean_uses_dense_path() {
    // Negative mean coupling is allowed as long as every realisation is
    // Metzler; here the model is built in A2 mode with a dense row.
    let row = FiniteMatrixDistribution::deterministic(dmatrix![-2.0, 0.5]);
    let m = NetworkModel::a2(2, 1, vec![(0, row), (1, FiniteMatrixDistribution::deterministic(dmatrix![0.5, -2.0]))]).unwrap();
    let s = dmatrix![-4.0, 1.0; 1.0, -4.0];
    let expect = -crate::linalg::sym_eig_max(&crate::linalg::SymMatrix::new(s).unwrap()).unwrap();
    assert!((a_max(&m, &[1.0, 1.0], 0.0).unwrap() - expect).abs() < 1e-10);
}

#[test]
fn deterministic_model_has_zero_bounds() {
    let m = minus_identity(2);
    assert_eq!(delta_sigma_a1(&m, &[1.0, 0.5]).unwrap(), (0.0, 0.0));
    assert_eq!(delta_sigma_a2(&m, &[1.0, 0.5]).unwrap(), (0.0, 0.0));
}

#[test]
fn single_uncertain_scalar_block() {
    let (r, hi, lo) = (0.3, 0.4, 0.1);
    let b = bern(r, hi, lo);
    let m = NetworkModel::a1(2, 1, vec![((0, 0), det(-1.0)), ((1, 1), det(-1.0)), ((0, 1), b.clone())]).unwrap();
    let (delta, sigma) = delta_sigma_a1(&m, &[1.0, 1.0]).unwrap();
    assert!((delta - 0.7 * (hi - lo)).abs() < 1e-15);
    let w = r * (1.0 - r) * (hi - lo) * (hi - lo);
    assert!((sigma * sigma - w).abs() < 1e-15);
    assert!((b.w(Side::Normal)[(0, 0)] - w).abs() < 1e-15);

    // Row 1 carries p_1² W(A_12ᵀ), row 2 carries p_1² W(A_12).
    let (delta, sigma) = delta_sigma_a1(&m, &[0.5, 1.0]).unwrap();
    assert!((delta - 0.35 * (hi - lo)).abs() < 1e-15);
    assert!((sigma * sigma - 0.25 * w).abs() < 1e-15);
}

#[test]
fn uncertain_diagonal_block_counts_both_kronecker_terms() {
    let (r, hi, lo) = (0.5, -1.0, -2.0);
    let m = NetworkModel::a1(1, 1, vec![((0, 0), bern(r, hi, lo))]).unwrap();
    let (delta, sigma) = delta_sigma_a1(&m, &[1.0]).unwrap();
    // X = A + Aᵀ = 2A: deviation 2·0.5 and variance 4·0.25.
    assert!((delta - 1.0).abs() < 1e-15);
    assert!((sigma * sigma - 1.0).abs() < 1e-15);
}

#[test]
fn bounds_are_homogeneous_in_p() {
    let m = NetworkModel::a1(
        3,
        1,
        vec![((0, 0), det(-1.0)), ((0, 1), bern(0.2, 0.5, 0.0)), ((2, 1), bern(0.6, 0.3, 0.1)), ((1, 2), bern(0.5, 0.2, 0.0))],
    )
    .unwrap();
    let p = [0.7, 1.0, 0.4];
    let c = 3.5;
    let pc: Vec<f64> = p.iter().map(|x| x * c).collect();
    for f in [delta_sigma_a1, delta_sigma_a2] {
        let (d1, s1) = f(&m, &p).unwrap();
        let (d2, s2) = f(&m, &pc).unwrap();
        assert!((d2 - c * d1).abs() < 1e-13 && (s2 - c * s1).abs() < 1e-13);
    }
}

#[test]
fn single_row_deviation_bound_a2() {
    let row = FiniteMatrixDistribution::new(vec![(0.25, dmatrix![-1.0, 1.0, 2.0]), (0.75, dmatrix![-1.0, 0.0, 0.0])]).unwrap();
    let m = NetworkModel::a2(3, 1, vec![(0, row.clone())]).unwrap();
    let (delta, _) = delta_sigma_a2(&m, &[0.5, 1.0, 1.0]).unwrap();
    assert!((delta - 2.0 * 0.5 * row.esssup_dev().unwrap()).abs() < 1e-14);
}

#[test]
fn a2_sigma_matches_explicit_assembly() {
    let m = NetworkModel::a1(2, 1, vec![((0, 0), det(-1.0)), ((0, 1), bern(0.3, 0.5, 0.1)), ((1, 0), bern(0.6, 0.2, 0.0))]).unwrap();
    let p = [0.8, 1.0];
    let mut total = DMatrix::zeros(2, 2);
    for (i, pi) in p.iter().enumerate() {
        total += m.row_var_s(i).unwrap().to_dense(2) * (pi * pi);
    }
    let expect = crate::linalg::sym_eig_max(&crate::linalg::SymMatrix::new(total).unwrap()).unwrap();
    let (_, sigma) = delta_sigma_a2(&m, &p).unwrap();
    assert!((sigma * sigma - expect).abs() < 1e-14);
}

#[test]
fn deterministic_stable_model_certifies_at_every_eps() {
    let m = minus_identity(3);
    for eps in [1e-12, 0.01, 0.5, 1.0] {
        let w = witness(vec![1.0; 3], 0.5, 0.0, 0.0, 1.0, eps, 3);
        let r = check_certificate(&m, &w).unwrap();
        assert!(r.feasible, "eps = {eps}");
    }
}

#[test]
fn unstable_mean_is_rejected_with_mean_decay_binding() {
    let m = minus_identity(2);
    let w = witness(vec![1.0; 2], 0.1, 0.0, 0.0, 2.5, 0.5, 2);
    let r = check_certificate(&m, &w).unwrap();
    assert!(!r.feasible);
    assert_eq!(r.binding, vec![MEAN_DECAY.to_string()]);
    let s = search_certificate(&m, 2.5, 0.5).unwrap();
    assert!(!s.feasible);
    assert!(s.diagnostics[0].contains("mean system not certifiable"));
}

#[test]
fn non_positive_model_is_rejected() {
    let m = NetworkModel::a1(2, 1, vec![((0, 0), det(-1.0)), ((0, 1), bern(0.5, 0.1, -0.1))]).unwrap();
    let err = check_certificate(&m, &witness(vec![1.0; 2], 0.1, 1.0, 1.0, 0.1, 0.5, 2)).unwrap_err();
    assert!(matches!(err, CertifyError::NotPositive(ref s) if s.contains("block (1,2)")));
}

#[test]
fn inconsistent_rho_is_an_error() {
    let m = minus_identity(1);
    let mut w = witness(vec![1.0], 0.5, 0.0, 0.0, 0.1, 0.5, 1);
    w.rho += 0.1;
    assert!(matches!(check_certificate(&m, &w), Err(CertifyError::InvalidParams(_))));
}

fn uncertain_ring() -> NetworkModel {
    NetworkModel::a1(
        3,
        1,
        vec![
            ((0, 0), det(-1.0)),
            ((1, 1), det(-1.2)),
            ((2, 2), det(-0.9)),
            ((0, 1), bern(0.3, 0.4, 0.05)),
            ((1, 2), bern(0.5, 0.3, 0.1)),
            ((2, 0), bern(0.2, 0.5, 0.0)),
        ],
    )
    .unwrap()
}

#[test]
fn search_result_is_checked_and_eps_monotone() {
    let m = uncertain_ring();
    let lambda = 0.1;
    let u = min_unreliability(&m, Mode::A1, lambda, &SearchOptions::default()).unwrap();
    assert!(u.certifiable);
    let w = u.witness.clone().unwrap();
    assert!(check_certificate(&m, &w).unwrap().feasible);
    for k in [2.0, 10.0] {
        let eps = (w.eps * k).min(1.0);
        assert!(check_certificate(&m, &w.with_eps(eps, 1, 3).unwrap()).unwrap().feasible);
    }
    // Below the minimum the same scaling fails.
    let below = (u.eps_star * 0.5).max(NumericPolicy::DEFAULT.eps_floor);
    assert!(!check_certificate(&m, &w.with_eps(below, 1, 3).unwrap()).unwrap().feasible);
}

#[test]
fn min_unreliability_deterministic_is_floor() {
    let m = minus_identity(4);
    let u = min_unreliability(&m, Mode::A1, 1.0, &SearchOptions::default()).unwrap();
    assert!(u.certifiable);
    assert_eq!(u.eps_star, NumericPolicy::DEFAULT.eps_floor);
    assert_eq!(u.eps_closed_form, 0.0);
}

#[test]
fn min_unreliability_flags_rates_beyond_the_mean_margin() {
    let m = minus_identity(2);
    let ok = min_unreliability(&m, Mode::A1, 1.5, &SearchOptions::default()).unwrap();
    assert!(ok.certifiable);
    let bad = min_unreliability(&m, Mode::A1, 2.5, &SearchOptions::default()).unwrap();
    assert!(!bad.certifiable);
    assert_eq!(bad.eps_star, 1.0);
    assert!(bad.diagnostics.iter().any(|d| d.contains("uncertifiable")));
}

#[test]
fn scaled_witness_keeps_verdict() {
    let m = uncertain_ring();
    let u = min_unreliability(&m, Mode::A1, 0.1, &SearchOptions::default()).unwrap();
    let w = u.witness.unwrap();
    for c in [1e-3, 0.37, 12.0, 1e3] {
        assert!(check_certificate(&m, &w.scaled(c)).unwrap().feasible);
    }
    let mut bad = w.clone();
    bad.a *= 1.5;
    for c in [1e-3, 1.0, 1e3] {
        assert!(!check_certificate(&m, &bad.scaled(c)).unwrap().feasible);
    }
}

#[test]
fn smaller_a_is_never_better() {
    let m = uncertain_ring();
    let u = min_unreliability(&m, Mode::A1, 0.05, &SearchOptions::default()).unwrap();
    let w = u.witness.unwrap();
    for frac in [0.9, 0.5, 0.1] {
        let mut smaller = w.clone();
        smaller.a *= frac;
        let lhs_small = lemma1_lhs(smaller.delta, smaller.sigma, smaller.a, smaller.rho);
        let lhs_full = lemma1_lhs(w.delta, w.sigma, w.a, w.rho);
        assert!(lhs_small > lhs_full);
    }
}

#[test]
fn a2_path_certifies_independent_block_model() {
    let m = uncertain_ring();
    let u = min_unreliability(&m, Mode::A2, 0.1, &SearchOptions::default()).unwrap();
    assert!(u.certifiable);
    assert!(check_certificate(&m, &u.witness.unwrap()).unwrap().feasible);
}

#[test]
fn a1_certificate_on_a2_model_is_a_mode_error() {
    let m = uncertain_ring().to_a2(100).unwrap();
    let err = search_certificate_with(&m, Mode::A1, 0.1, 0.5, &SearchOptions::default()).unwrap_err();
    assert!(matches!(err, CertifyError::ModeMismatch(_)));
}

#[test]
fn parallel_and_serial_searches_agree() {
    let m = uncertain_ring();
    let s = Searcher::new(&m, Mode::A1, 0.1).unwrap();
    let serial = s.run(&SearchOptions::default()).unwrap();
    let parallel = s
        .run(&SearchOptions {
            parallel: true,
            ..SearchOptions::default()
        })
        .unwrap();
    assert_eq!(serial, parallel);
}
