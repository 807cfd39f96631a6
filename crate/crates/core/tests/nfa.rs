use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nfa_core::eval::{epsilon_meaningfulness_check, EpsilonConfig};
use nfa_core::nfa::{
    estimate_naive_model, sigm_alpha_inverse, sigm_alpha_scalar, significance_values, threshold_interval_bound,
    threshold_interval_upper, ActivationConfig, Covariance, CovarianceForm, NaiveModel,
};
use nfa_core::numerics::Tensor;

fn gaussian(shape: [usize; 4], std: &[f64], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, c, _, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * std[c]
    })
}

fn pixel(values: &[f64]) -> Tensor {
    Tensor::new([1, values.len(), 1, 1], values.to_vec()).unwrap()
}

#[test]
fn significance_reference_points() {
    let unit = NaiveModel::spherical(vec![0.0, 0.0], 1.0, 1).unwrap();
    let s = significance_values(&pixel(&[0.0, 0.0]), &unit).unwrap();
    assert!(s.data()[0].abs() < 1e-15);
    let s = significance_values(&pixel(&[2.0, 0.0]), &unit).unwrap();
    assert!((s.data()[0] - 2.0).abs() < 1e-12);
    let wide = NaiveModel::spherical(vec![0.0, 0.0], 1.0, 65536).unwrap();
    let s = significance_values(&pixel(&[0.0, 0.0]), &wide).unwrap();
    assert!((s.data()[0] + 65536f64.ln()).abs() < 1e-12);
    assert!((s.data()[0] + 11.0904).abs() < 1e-4);
}

#[test]
fn four_channel_significance_matches_the_chi_square_tail() {
    // K = 4: Γ(2, u) / Γ(2) = (1 + u) e^{-u}
    let feats = gaussian([1, 4, 30, 30], &[1.0; 4], 3);
    let model = NaiveModel::spherical(vec![0.0; 4], 1.0, 900).unwrap();
    let s = significance_values(&feats, &model).unwrap();
    for p in 0..900 {
        let u: f64 = (0..4).map(|c| feats.plane(0, c)[p].powi(2)).sum::<f64>() / 2.0;
        let want = u - (1.0 + u).ln() - 900f64.ln();
        assert!((s.data()[p] - want).abs() < 1e-9 * want.abs().max(1.0));
    }
}

/// Mean count of `NFA ≤ ε` pixels in 100x100, K = 4 maps of the naive
/// model itself, over 200 maps; each map drawn here, scored by the library.
#[test]
fn false_alarms_stay_below_epsilon() {
    let model = NaiveModel::spherical(vec![0.0; 4], 1.0, 10_000).unwrap();
    let trials = 200;
    for eps in [1.0f64, 10.0] {
        let counts: Vec<f64> = (0..trials)
            .map(|t| {
                let f = gaussian([1, 4, 100, 100], &[1.0; 4], 1000 + t);
                let s = significance_values(&f, &model).unwrap();
                s.data().iter().filter(|&&v| v >= -eps.ln()).count() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / trials as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!(mean <= eps + 3.0 * se, "eps {eps}: mean {mean}, se {se}");
    }
}

#[test]
fn library_epsilon_check_holds() {
    let rows = epsilon_meaningfulness_check(&EpsilonConfig::default()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.holds, "{r:?}");
        assert!(r.mean <= r.epsilon + 3.0 * r.std_err);
    }
}

#[test]
fn elliptical_estimate_of_white_noise() {
    // 10^5 samples of unit white noise
    let f = gaussian([1, 3, 250, 400], &[1.0; 3], 11);
    let m = estimate_naive_model(&f, CovarianceForm::IndependentElliptical).unwrap();
    let Covariance::IndependentElliptical { lambda, delta } = &m.covariance else {
        panic!("wrong form")
    };
    assert!((0.95..=1.05).contains(lambda), "lambda {lambda}");
    for d in delta {
        assert!((0.9..=1.1).contains(d), "delta {d}");
    }
    assert_eq!(m.n_test, 100_000);
    assert!(!m.degenerate);
}

#[test]
fn constant_features_are_flagged() {
    let f = Tensor::full([1, 2, 8, 8], 0.75);
    for form in CovarianceForm::ALL {
        let m = estimate_naive_model(&f, form).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.center, vec![0.75, 0.75]);
    }
}

#[test]
fn dense_and_elliptical_agree_for_diagonal_truth() {
    let std = [0.5, 1.0, 2.0];
    let f = gaussian([1, 3, 250, 400], &std, 12);
    let dense = estimate_naive_model(&f, CovarianceForm::Dense).unwrap();
    let ell = estimate_naive_model(&f, CovarianceForm::IndependentElliptical).unwrap();
    let a = significance_values(&f, &dense).unwrap();
    let b = significance_values(&f, &ell).unwrap();
    let close = a.data().iter().zip(b.data()).filter(|(x, y)| (*x - *y).abs() <= 0.5).count();
    assert!(close as f64 >= 0.95 * a.numel() as f64, "{close} of {}", a.numel());
}

#[test]
fn activation_reference_points() {
    let cfg = ActivationConfig::new(5e-4, 1).unwrap();
    let v = sigm_alpha_scalar(500.0, &cfg);
    assert!((0.124..=0.125).contains(&v), "{v}");
    assert!((v - 0.1244).abs() < 1e-4);
    assert_eq!(threshold_interval_upper(5e-4).unwrap(), v);
    assert_eq!(threshold_interval_bound(5e-4).unwrap(), 0.13);
    let cfg = ActivationConfig::new(0.01, 4096).unwrap();
    assert!(sigm_alpha_scalar(-(4096f64).ln(), &cfg).abs() < 1e-15);
    assert!(ActivationConfig::new(0.0, 1).is_err());
    assert!(ActivationConfig::new(1e-3, 0).is_err());
}

fn diag_delta() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.3f64..3.0, 3).prop_map(|mut d| {
        let g = d.iter().map(|v| v.ln()).sum::<f64>() / 3.0;
        d.iter_mut().for_each(|v| *v /= g.exp());
        d
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn significance_never_drops_below_minus_log_n_test(
        data in proptest::collection::vec(-1e3f64..1e3, 3 * 64),
        form_index in 0usize..3,
    ) {
        let f = Tensor::new([1, 3, 8, 8], data).unwrap();
        let m = estimate_naive_model(&f, CovarianceForm::ALL[form_index]).unwrap();
        let s = significance_values(&f, &m).unwrap();
        let floor = -(m.n_test as f64).ln();
        prop_assert!(s.data().iter().all(|&v| v >= floor - 1e-12));
    }

    #[test]
    fn sigm_alpha_preserves_the_ranking(
        values in proptest::collection::vec(-10.0f64..4000.0, 2..64),
        alpha in 1e-4f64..5e-3,
        n_test in 1usize..100_000,
    ) {
        let cfg = ActivationConfig::new(alpha, n_test).unwrap();
        let mut v = values;
        v.sort_by(f64::total_cmp);
        let shift = (n_test as f64).ln();
        for w in v.windows(2) {
            let (a, b) = (sigm_alpha_scalar(w[0], &cfg), sigm_alpha_scalar(w[1], &cfg));
            prop_assert!(a <= b);
            // strict wherever the sigmoid has not rounded to ±1
            if w[0] < w[1] && alpha * (w[1] + shift) < 30.0 && alpha * (w[0] + shift) > -30.0 {
                prop_assert!(a < b, "{} {} -> {a} {b}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn sigm_alpha_inverse_round_trips(x in -10.0f64..3000.0, alpha in 1e-4f64..1e-2, n_test in 1usize..10_000) {
        let cfg = ActivationConfig::new(alpha, n_test).unwrap();
        let y = sigm_alpha_scalar(x, &cfg);
        prop_assume!(y.abs() < 0.999);
        prop_assert!((sigm_alpha_inverse(y, &cfg) - x).abs() < 1e-6 * x.abs().max(1.0));
    }

    #[test]
    fn scaling_features_and_model_leaves_significance_unchanged(
        data in proptest::collection::vec(-5.0f64..5.0, 3 * 36),
        c in 0.01f64..100.0,
        form_index in 0usize..3,
    ) {
        let f = Tensor::new([1, 3, 6, 6], data).unwrap();
        let form = CovarianceForm::ALL[form_index];
        let m = estimate_naive_model(&f, form).unwrap();
        let base = significance_values(&f, &m).unwrap();
        let fc = Tensor::new([1, 3, 6, 6], f.data().iter().map(|v| v * c).collect()).unwrap();
        let scaled = significance_values(&fc, &m.scaled(c).unwrap()).unwrap();
        let reestimated = significance_values(&fc, &estimate_naive_model(&fc, form).unwrap()).unwrap();
        for ((a, b), r) in base.data().iter().zip(scaled.data()).zip(reestimated.data()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
            prop_assert!((a - r).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {r}");
        }
    }

    #[test]
    fn elliptical_shape_has_unit_determinant(
        data in proptest::collection::vec(-1e2f64..1e2, 3 * 25),
        stretch in diag_delta(),
    ) {
        let mut f = Tensor::new([1, 3, 5, 5], data).unwrap();
        for c in 0..3 {
            for p in 0..25 {
                f.data_mut()[c * 25 + p] *= stretch[c];
            }
        }
        let m = estimate_naive_model(&f, CovarianceForm::IndependentElliptical).unwrap();
        let Covariance::IndependentElliptical { delta, .. } = &m.covariance else { unreachable!() };
        let det: f64 = delta.iter().product();
        prop_assert!((det - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forms_coincide_for_isotropic_models(
        data in proptest::collection::vec(-4.0f64..4.0, 2 * 16),
        lambda in 0.1f64..10.0,
    ) {
        let f = Tensor::new([1, 2, 4, 4], data).unwrap();
        let c = vec![0.3, -0.2];
        let sph = NaiveModel::spherical(c.clone(), lambda, 16).unwrap();
        let ell = NaiveModel::independent(c.clone(), lambda, vec![1.0, 1.0], 16).unwrap();
        let den = NaiveModel::dense(c, DMatrix::identity(2, 2) * lambda, 16).unwrap();
        let a = significance_values(&f, &sph).unwrap();
        let b = significance_values(&f, &ell).unwrap();
        let d = significance_values(&f, &den).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-10);
        prop_assert!(a.max_abs_diff(&d) < 1e-10);
    }
}
