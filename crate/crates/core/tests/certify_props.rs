mod common;

use nalgebra::DMatrix;
use posnet::bernstein::{lemma1_lhs, lemma1_lmi, lemma1_scalar};
use posnet::certify::{a_max, check_certificate, min_unreliability, SearchOptions};
use posnet::linalg::{perron_value, sym_eig_max, SymMatrix};
use posnet::model::Mode;
use posnet::montecarlo::brute_force_prob;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_scale() -> impl Strategy<Value = f64> {
    (-3.0f64..3.0).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_and_lmi_forms_agree(a in log_scale(), d in log_scale(), s in log_scale(), rho in log_scale()) {
        let (delta, sigma) = (a * d, a * s);
        prop_assume!((lemma1_lhs(delta, sigma, a, rho) - 3.0).abs() > 1e-9);
        prop_assert_eq!(lemma1_scalar(delta, sigma, a, rho).unwrap(), lemma1_lmi(delta, sigma, a, rho).unwrap());
    }

    #[test]
    fn a_max_is_homogeneous_in_p(seed in any::<u64>(), c in log_scale()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_positive_model(&mut rng, 4, 0.5);
        let p: Vec<f64> = (0..model.subsystems()).map(|_| rng.gen_range(0.2..5.0)).collect();
        let lambda = rng.gen_range(0.0..1.0);
        let base = a_max(&model, &p, lambda).unwrap();
        let pc: Vec<f64> = p.iter().map(|x| x * c).collect();
        let scaled = a_max(&model, &pc, lambda).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * c * base.abs().max(1.0), "{} vs {}", scaled, c * base);
    }

    #[test]
    fn witnesses_survive_scaling_and_relaxation(seed in any::<u64>(), c in log_scale(), factor in 1.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = rng.gen_range(0.01..0.3);
        let model = common::random_positive_model(&mut rng, 4, noise);
        let mode = if seed % 2 == 0 { Mode::A1 } else { Mode::A2 };
        let u = min_unreliability(&model, mode, rng.gen_range(0.0..0.3), &SearchOptions::default()).unwrap();
        let Some(w) = u.witness else { return Ok(()) };
        prop_assert!(check_certificate(&model, &w).unwrap().feasible);
        prop_assert!(check_certificate(&model, &w.scaled(c)).unwrap().feasible);
        let eps = (w.eps * factor).min(1.0);
        let relaxed = w.with_eps(eps, model.state_dim(), model.subsystems()).unwrap();
        prop_assert!(check_certificate(&model, &relaxed).unwrap().feasible);
    }

    #[test]
    fn certified_level_bounds_the_enumerated_probability(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = rng.gen_range(0.05..2.0);
        let model = common::random_positive_model(&mut rng, 6, noise);
        let lambda = rng.gen_range(0.0..0.5);
        let u = min_unreliability(&model, Mode::A1, lambda, &SearchOptions::default()).unwrap();
        if let Some(w) = u.witness {
            prop_assert!(brute_force_prob(&model, lambda).unwrap() <= w.eps);
        }
    }

    #[test]
    fn eigenvalue_routines_match_oracles(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let s = (&b + b.transpose()) * 0.5;
        let got = sym_eig_max(&SymMatrix::new(s.clone()).unwrap()).unwrap();
        prop_assert!((got - common::jacobi_eig_max(&s)).abs() <= 1e-9);

        let metzler = DMatrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(-2.0..1.0) } else { rng.gen_range(0.0..1.0) });
        prop_assert!((perron_value(&metzler).unwrap() - common::bisect_perron(&metzler)).abs() <= 1e-9);
    }
}
