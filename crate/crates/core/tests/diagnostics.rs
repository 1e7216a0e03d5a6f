mod common;

use common::*;
use fieldcal::covariance::Hyperparameters;
use fieldcal::dataio::{EventDataset, EventId, Observation};
use fieldcal::diagnostics::*;
use fieldcal::inference::{ModelFit, PriorSpec};
use fieldcal::numerics::{pivoted_cholesky, DenseMatrix};
use fieldcal::prediction::{predictive_measurements, FieldCovariance, Target};
use fieldcal::Error;
use proptest::prelude::*;
use rand::Rng;

fn ev() -> EventId {
    EventId::new("ev")
}

fn fit_one(data: &EventDataset, theta: Hyperparameters, prior: PriorSpec) -> ModelFit {
    ModelFit::at_theta(std::slice::from_ref(data), theta, prior).unwrap()
}

fn targets(v: &[Observation]) -> Vec<Target> {
    v.iter().map(|o| Target::new(o.location.0, o.location.1, o.x)).collect()
}

/// A training fit plus held-out stations drawn jointly from the model.
fn well_specified(seed: u64, k_train: usize, n_valid: usize) -> (ModelFit, Vec<Observation>) {
    let mut r = rng(seed);
    let theta = theta_example();
    let data = simulate_event(&mut r, "ev", k_train + n_valid, &theta, &TRUE_BETA, TRUE_SIGMA2);
    let (train, valid) = split_holdout(&data, n_valid, 3, seed).unwrap();
    (fit_one(&train, theta, PriorSpec::default()), valid.pairs)
}

#[test]
fn white_noise_variogram_is_flat() {
    let theta = Hyperparameters {
        phi1: 1e-3,
        phi2: 1e-3,
        phi_x: 1e-3,
        ..theta_example()
    };
    let mut r = rng(200);
    let data = random_event(&mut r, 30);
    let fit = fit_one(&data, theta, PriorSpec::default());
    let t = semivariogram(&fit, &ev(), VariogramVariable::H1, 5, 20, 1).unwrap();
    let sill = fit.events[0].sigma_hat2 * (1.0 + theta.lambda2);
    assert!(t.model.iter().all(|m| (m - sill).abs() < 1e-12 * sill));
}

#[test]
fn coincident_pairs_show_the_nugget() {
    let mut r = rng(201);
    let mut data = random_event(&mut r, 12);
    for p in &mut data.pairs {
        p.location = (3.0, 4.0);
        p.x = 25.0;
    }
    let theta = theta_example();
    let fit = fit_one(&data, theta, PriorSpec::default());
    let t = semivariogram(&fit, &ev(), VariogramVariable::DeltaIntensity, 3, 20, 1).unwrap();
    let nugget = fit.events[0].sigma_hat2 * theta.lambda2;
    assert!(t.model.iter().all(|m| (m - nugget).abs() < 1e-12 * nugget));
}

#[test]
fn variogram_table_shape() {
    let mut r = rng(202);
    let data = random_event(&mut r, 25);
    let fit = fit_one(&data, theta_example(), PriorSpec::default());
    for var in [VariogramVariable::H1, VariogramVariable::H2, VariogramVariable::DeltaIntensity] {
        let t = semivariogram(&fit, &ev(), var, 15, 50, 3).unwrap();
        assert_eq!(t.bins(), 15);
        assert_eq!(t.counts.iter().sum::<usize>(), 25 * 24 / 2);
        assert_eq!(t.bin_edges.len(), 16);
        assert!(t.bin_edges.windows(2).all(|w| w[0] <= w[1]));
        for b in 0..15 {
            assert!(t.lower95[b] <= t.model[b] && t.model[b] <= t.upper95[b]);
        }
        // Equal-count bins differ in size by at most one pair.
        let (lo, hi) = (t.counts.iter().min().unwrap(), t.counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(t, semivariogram(&fit, &ev(), var, 15, 50, 3).unwrap());
    }
    assert!(matches!(
        semivariogram(&fit, &ev(), VariogramVariable::H1, 400, 10, 1),
        Err(Error::EmptyBin(_))
    ));
    assert!(semivariogram(&fit, &ev(), VariogramVariable::H1, 2, 10, 1).is_err());
}

#[test]
fn variogram_ignores_constant_shift_with_vague_intercept() {
    let prior = PriorSpec {
        b_cov: DenseMatrix::from_diagonal(&[1e12, 1.0, 1.0]),
        ..PriorSpec::default()
    };
    let mut r = rng(203);
    let data = random_event(&mut r, 30);
    let mut shifted = data.clone();
    for p in &mut shifted.pairs {
        p.y += 7.5;
    }
    let a = semivariogram(&fit_one(&data, theta_example(), prior.clone()), &ev(), VariogramVariable::H2, 6, 10, 1).unwrap();
    let b = semivariogram(&fit_one(&shifted, theta_example(), prior), &ev(), VariogramVariable::H2, 6, 10, 1).unwrap();
    assert!(rel_diff_vec(&a.empirical, &b.empirical) < 1e-6);
    assert!(rel_diff_vec(&a.model, &b.model) < 1e-6);
}

#[test]
fn errors_vanish_at_the_predictive_mean() {
    let (fit, mut valid) = well_specified(204, 40, 6);
    let pred = predictive_measurements(&fit, &ev(), &targets(&valid)).unwrap();
    for (o, m) in valid.iter_mut().zip(&pred.mean) {
        o.y = *m;
    }
    assert!(standardized_errors(&fit, &ev(), &valid).unwrap().iter().all(|e| e.abs() < 1e-12));
    assert!(pivoted_errors(&fit, &ev(), &valid).unwrap().iter().all(|e| e.1.abs() < 1e-12));
    let (d, p) = mahalanobis_test(&fit, &ev(), &valid).unwrap();
    assert!(d < 1e-20 && (p - 1.0).abs() < 1e-12);
}

#[test]
fn single_point_statistic_is_squared_error() {
    let (fit, valid) = well_specified(205, 40, 1);
    let e = standardized_errors(&fit, &ev(), &valid).unwrap()[0];
    let (d, p) = mahalanobis_test(&fit, &ev(), &valid).unwrap();
    assert!((d - e * e).abs() < 1e-12 * d.max(1e-12));
    // F(1, m) upper tail equals the two-sided t(m) tail.
    let m = 37.0;
    let two_sided = 2.0 * (1.0 - t_cdf_quadrature(e.abs(), m));
    assert!((p - two_sided).abs() < 1e-9, "{p} vs {two_sided}");
    assert!(pivoted_errors(&fit, &ev(), &valid).is_err());
}

#[test]
fn pivoted_errors_recorrelate() {
    let (fit, valid) = well_specified(206, 60, 12);
    let pred = predictive_measurements(&fit, &ev(), &targets(&valid)).unwrap();
    let FieldCovariance::Full(cov) = &pred.covariance else { unreachable!() };
    let resid: Vec<f64> = valid.iter().zip(&pred.mean).map(|(o, m)| o.y - m).collect();
    let e = pivoted_errors(&fit, &ev(), &valid).unwrap();
    let factor = pivoted_cholesky(cov).unwrap();
    let order: Vec<usize> = e.iter().map(|p| p.0).collect();
    assert_eq!(order, factor.permutation());
    let values: Vec<f64> = e.iter().map(|p| p.1).collect();
    assert!(rel_diff_vec(&factor.apply_g(&values), &resid) < 1e-8);
}

#[test]
fn uncorrelated_validation_needs_no_decorrelation() {
    // Far-apart held-out stations and a pinned coefficient vector give a
    // diagonal predictive covariance.
    let (fit, mut valid) = well_specified(207, 40, 5);
    let prior = PriorSpec {
        b: TRUE_BETA.to_vec(),
        b_cov: DenseMatrix::from_diagonal(&[1e-22; 3]),
        ..PriorSpec::default()
    };
    let fit = ModelFit::at_theta(&fit.datasets(), fit.theta, prior).unwrap();
    for (i, o) in valid.iter_mut().enumerate() {
        o.location = (1e4 * (i + 1) as f64, -1e4);
    }
    let std = standardized_errors(&fit, &ev(), &valid).unwrap();
    for (i, e) in pivoted_errors(&fit, &ev(), &valid).unwrap() {
        assert!((e - std[i]).abs() < 1e-10 * std[i].abs().max(1.0), "{i}: {e} vs {}", std[i]);
    }
}

#[test]
fn report_fields() {
    let (fit, valid) = well_specified(208, 50, 10);
    let rep = validate(&fit, &ev(), &valid).unwrap();
    assert_eq!(rep.df_pair, (10, 47));
    assert_eq!(rep.standardized_errors.len(), 10);
    assert_eq!(rep.pivoted_errors.len(), 10);
    assert!((0.0..=1.0).contains(&rep.mahalanobis_pvalue));
    let ss: f64 = rep.standardized_errors.iter().map(|e| e * e).sum();
    assert!((rep.raw_sum_squares - ss).abs() < 1e-12 * ss);
    assert!(rep.qq_pairs.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
    assert!(rep.errors_csv().lines().count() > 10);
}

#[test]
fn standardized_errors_calibrated_and_sensitive() {
    let mut all = Vec::new();
    for seed in 0..34 {
        let (fit, valid) = well_specified(1000 + seed, 60, 30);
        all.extend(standardized_errors(&fit, &ev(), &valid).unwrap());
    }
    let n = all.len() as f64;
    assert!(n >= 1000.0);
    let exceed = all.iter().filter(|e| e.abs() > 1.96).count() as f64 / n;
    assert!((0.01..=0.10).contains(&exceed), "exceedance {exceed}");
    // Halving the predictive variance doubles the squared errors.
    let halved: f64 = all.iter().map(|e| 2.0 * e * e).sum::<f64>() / n;
    let plain: f64 = all.iter().map(|e| e * e).sum::<f64>() / n;
    assert!((0.8..1.25).contains(&plain), "mean square {plain}");
    assert!((1.6..2.5).contains(&halved), "halved mean square {halved}");
}

#[test]
fn holdout_split() {
    let mut r = rng(209);
    let data = random_event(&mut r, 40);
    let (t, v) = split_holdout(&data, 30, 3, 1).unwrap();
    assert_eq!((t.len(), v.len()), (10, 30));
    assert!(matches!(split_holdout(&data, 37, 3, 1), Err(Error::InsufficientStations(_))));
    let (_, v2) = split_holdout(&data, 30, 3, 2).unwrap();
    assert_ne!(v.pairs, v2.pairs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_mahalanobis_order_invariant(seed in 0u64..100_000) {
        let (fit, valid) = well_specified(seed, 30, 8);
        let (d, p) = mahalanobis_test(&fit, &ev(), &valid).unwrap();
        let mut r = rng(seed);
        let mut shuffled = valid.clone();
        for i in (1..shuffled.len()).rev() {
            let j = r.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let (d2, p2) = mahalanobis_test(&fit, &ev(), &shuffled).unwrap();
        prop_assert!((d - d2).abs() <= 1e-10 * d.max(1e-10));
        prop_assert!((p - p2).abs() <= 1e-9);
    }
}
