use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::FiniteMatrixDistribution as Dist;

fn det(x: f64) -> Dist {
    Dist::deterministic(dmatrix![x])
}

fn bern(r: f64, hi: f64, lo: f64) -> Dist {
    Dist::two_point(r, dmatrix![hi], dmatrix![lo]).unwrap()
}

/// Directed 3-cycle 1→2→3→1 with Bernoulli weights and unit decay.
fn ring(r: [f64; 3], hi: f64, lo: f64) -> NetworkModel {
    let mut blocks: Vec<((usize, usize), Dist)> = (0..3).map(|i| ((i, i), det(-1.0))).collect();
    for (k, &rk) in r.iter().enumerate() {
        blocks.push((((k + 1) % 3, k), bern(rk, hi, lo)));
    }
    NetworkModel::a1(3, 1, blocks).unwrap()
}

#[test]
fn identity_thresholds() {
    let a = -DMatrix::<f64>::identity(3, 3);
    assert!(stable_with_rate(&a, 1.0).unwrap());
    assert!(!stable_with_rate(&a, 2.0).unwrap());
    assert!(stable_with_rate_as(&a, 1.9, RateConvention::Lyapunov).unwrap());
    assert!(!stable_with_rate_as(&a, 1.0, RateConvention::State).unwrap());
    assert!(stable_with_rate_as(&a, 0.9, RateConvention::State).unwrap());
}

#[test]
fn non_metzler_is_an_error() {
    let a = dmatrix![-1.0, -0.5; 0.2, -1.0];
    assert!(matches!(stable_with_rate(&a, 0.0), Err(McError::NotMetzler { row: 0, col: 1, .. })));
}

#[test]
fn agrees_with_lyapunov_inequality_at_perron_scaling() {
    // For irreducible Metzler A with right/left Perron vectors x, y the
    // scaling P = diag(y/x) makes AᵀP + PA have top eigenvalue 2·perron(A).
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let a = DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                rng.gen_range(-3.0..0.0)
            } else {
                rng.gen_range(0.05..1.0)
            }
        });
        let lambda = rng.gen_range(0.0..2.0);
        let x = crate::linalg::perron(&a).unwrap().vector.unwrap();
        let y = crate::linalg::perron(&a.transpose()).unwrap().vector.unwrap();
        let p = DMatrix::from_diagonal(&y.component_div(&x));
        let s = a.transpose() * &p + &p * &a + &p * lambda;
        let top = s.symmetric_eigen().eigenvalues.max();
        if top.abs() < 1e-9 {
            continue;
        }
        assert_eq!(stable_with_rate(&a, lambda).unwrap(), top < 0.0);
    }
}

#[test]
fn deterministic_realization_is_the_support_matrix() {
    let m = dmatrix![-1.0, 0.3; 0.2, -2.0];
    let model = NetworkModel::a2(1, 2, [(0, Dist::deterministic(m.clone()))]).unwrap();
    for draw in 0..5 {
        assert_eq!(sample_realization(&model, 9, draw), m);
    }
}

#[test]
fn bernoulli_frequency_matches_r() {
    let r = 0.3;
    let model = NetworkModel::a1(2, 1, [((0, 0), det(-1.0)), ((0, 1), bern(r, 2.0, 1.0))]).unwrap();
    let draws = 100_000u64;
    let hits = (0..draws).filter(|&d| sample_realization(&model, 17, d)[(0, 1)] == 2.0).count() as f64;
    let sd = (draws as f64 * r * (1.0 - r)).sqrt();
    assert!((hits - draws as f64 * r).abs() < 3.0 * sd, "{hits}");
}

#[test]
fn substreams_differ_per_unit() {
    let keys = [
        substream_seed(1, 0, 1, 0),
        substream_seed(1, 1, 0, 0),
        substream_seed(1, 0, 1, 1),
        substream_seed(2, 0, 1, 0),
    ];
    for a in 0..keys.len() {
        for b in a + 1..keys.len() {
            assert_ne!(keys[a], keys[b]);
        }
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let model = ring([0.4, 0.5, 0.6], 2.0, 0.1);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_instability_prob(&model, 0.1, 2000, 5).unwrap())
    };
    assert_eq!(run(1), run(3));
    assert_eq!(run(1), estimate_instability_prob(&model, 0.1, 2000, 5).unwrap());
}

#[test]
fn deterministic_models_give_zero_or_one() {
    let stable = NetworkModel::a1(1, 1, [((0, 0), det(-1.0))]).unwrap();
    let r = estimate_instability_prob(&stable, 0.5, 100, 1).unwrap();
    assert_eq!((r.failures, r.p_hat), (0, 0.0));
    assert_eq!(brute_force_prob(&stable, 0.5).unwrap(), 0.0);
    let unstable = NetworkModel::a1(1, 1, [((0, 0), det(0.1))]).unwrap();
    let r = estimate_instability_prob(&unstable, 0.0, 100, 1).unwrap();
    assert_eq!(r.p_hat, 1.0);
    assert_eq!(r.ci_upper, 1.0);
    assert_eq!(brute_force_prob(&unstable, 0.0).unwrap(), 1.0);
}

#[test]
fn single_destabilising_branch_has_probability_r() {
    // perron([[−1, b], [b, −1]]) = b − 1.
    let r = 0.37;
    let model = NetworkModel::a1(
        2,
        1,
        [((0, 0), det(-1.0)), ((1, 1), det(-1.0)), ((1, 0), det(1.5)), ((0, 1), bern(r, 1.5, 0.2))],
    )
    .unwrap();
    let p = brute_force_prob(&model, 0.0).unwrap();
    assert!((p - r).abs() < 1e-15);
}

#[test]
fn ring_enumeration_matches_hand_perron_values() {
    // The cycle with weights b₁, b₂, b₃ has perron −1 + (b₁b₂b₃)^{1/3}.
    let r = [0.2, 0.5, 0.7];
    let (hi, lo) = (1.6, 0.4);
    let model = ring(r, hi, lo);
    for lambda in [0.0, 0.3, 0.8] {
        let mut expect = 0.0;
        for mask in 0..8 {
            let mut prod = 1.0;
            let mut w = 1.0;
            for (k, &rk) in r.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    prod *= hi;
                    w *= rk;
                } else {
                    prod *= lo;
                    w *= 1.0 - rk;
                }
            }
            if -1.0 + prod.cbrt() >= -lambda / 2.0 {
                expect += w;
            }
        }
        let got = brute_force_prob(&model, lambda).unwrap();
        assert!((got - expect).abs() < 1e-14, "lambda {lambda}: {got} vs {expect}");
    }
}

#[test]
fn monte_carlo_brackets_exact_probability() {
    let model = ring([0.3, 0.6, 0.5], 1.6, 0.4);
    for lambda in [0.0, 0.3] {
        let exact = brute_force_prob(&model, lambda).unwrap();
        let mc = estimate_instability_prob(&model, lambda, 20_000, 3).unwrap();
        // Both one-sided 95% bounds hold simultaneously with probability ≥ 0.9.
        assert!(mc.ci_lower <= exact && exact <= mc.ci_upper, "{exact} vs {mc:?}");
    }
}

#[test]
fn several_rates_share_draws() {
    let model = ring([0.3, 0.6, 0.5], 1.6, 0.4);
    let many = estimate_instability_probs(&model, &[0.0, 0.3, 1.0], 500, 8, RateConvention::Lyapunov).unwrap();
    for r in &many {
        assert_eq!(r, &estimate_instability_prob(&model, r.lambda, 500, 8).unwrap());
    }
    assert!(many.windows(2).all(|w| w[0].failures <= w[1].failures));
}

#[test]
fn enumeration_cap_is_enforced() {
    let blocks: Vec<((usize, usize), Dist)> =
        (0..5).flat_map(|i| (0..5).map(move |j| ((i, j), if i == j { bern(0.5, -1.0, -2.0) } else { bern(0.5, 0.1, 0.0) }))).collect();
    let model = NetworkModel::a1(5, 1, blocks).unwrap();
    match brute_force_prob(&model, 0.0) {
        Err(McError::SupportTooLarge { size, .. }) => assert_eq!(size, 1 << 25),
        other => panic!("{other:?}"),
    }
}

#[test]
fn clopper_pearson_closed_forms() {
    let (lo, hi) = clopper_pearson(0, 10, 0.95);
    assert_eq!(lo, 0.0);
    assert!((hi - (1.0 - 0.05f64.powf(0.1))).abs() < 1e-9, "{hi} vs {}", 1.0 - 0.05f64.powf(0.1));
    let (lo, hi) = clopper_pearson(10, 10, 0.95);
    assert!((lo - 0.05f64.powf(0.1)).abs() < 1e-9);
    assert_eq!(hi, 1.0);
}

#[test]
fn csv_row_matches_header() {
    let model = ring([0.3, 0.6, 0.5], 1.6, 0.4);
    let r = estimate_instability_prob(&model, 0.0, 100, 2).unwrap();
    assert_eq!(r.csv_row().split(',').count(), McReport::CSV_HEADER.split(',').count());
    assert!(r.csv_row().ends_with(",lyapunov"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bounds_bracket_the_estimate(n in 1u64..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = clopper_pearson(k, n, CONFIDENCE);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        let (lo2, hi2) = clopper_pearson(n - k, n, CONFIDENCE);
        prop_assert!((lo - (1.0 - hi2)).abs() < 1e-9 && (hi - (1.0 - lo2)).abs() < 1e-9);
    }
}
