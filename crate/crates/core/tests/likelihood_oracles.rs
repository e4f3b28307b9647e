mod common;

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use refpoint_lmb::geometry::{idx, RefPoint, StateCovariance, StateVector};
use refpoint_lmb::likelihood::{likelihood_max, likelihood_meas, likelihood_mh, HypothesisWeights, Measurement};
use refpoint_lmb::mixture::GaussianMixture;

#[test]
fn mh_masses_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let (prior, z) = common::random_case(&mut rng);
        worst = worst.max(common::mh_relative_error(&prior, &z));
    }
    assert!(worst < 1e-10, "worst relative error {worst:e}");
}

#[test]
fn single_component_weights_are_normalized_evidences() {
    let mean = StateVector::from([0.0, 0.0, 0.3, 0.0, 5.0, 0.0, 2.0, 4.5]);
    let cov = StateCovariance::from_diagonal(&StateVector::from([0.2, 0.2, 0.02, 0.01, 1.0, 0.1, 0.1, 0.2]));
    let prior = GaussianMixture::single(mean, cov);
    let z = Measurement::position(Vector2::new(2.0, 1.5), Matrix2::identity() * 0.3, None, 0, 0.0).unwrap();
    let res = likelihood_mh(&prior, &z, &HypothesisWeights::uniform(&RefPoint::CORNERS)).unwrap();
    let ev: Vec<f64> = RefPoint::CORNERS.iter().map(|&c| common::component_evidence(&prior.components()[0], &z, c)).collect();
    let total: f64 = ev.iter().sum();
    assert_eq!(res.posterior.len(), 4);
    for (c, e) in res.posterior.components().iter().zip(&ev) {
        assert!((c.weight - e / total).abs() < 1e-12);
    }
}

#[test]
fn mh_evidence_is_the_weighted_sum_of_known_corner_evidences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (prior, z) = common::random_case(&mut rng);
        let mh = likelihood_mh(&prior, &z, &HypothesisWeights::uniform(&RefPoint::CORNERS)).unwrap();
        let forced: f64 = RefPoint::CORNERS
            .iter()
            .map(|&c| likelihood_meas(&prior, &Measurement { ref_point: Some(c), ..z.clone() }).unwrap().eta * 0.25)
            .sum();
        assert!((mh.eta - forced).abs() <= 1e-12 * forced, "{} vs {forced}", mh.eta);
    }
}

#[test]
fn known_corner_corrects_extent() {
    // Center and heading are certain; only the length is uncertain. A
    // front-left measurement at x then gives a scalar update of l through
    // z_x = x + l / 2.
    let (l0, var_l, r) = (4.0, 1.0, 0.04);
    let mean = StateVector::from([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, l0]);
    let mut diag = StateVector::from_element(1e-12);
    diag[idx::L] = var_l;
    let prior = GaussianMixture::single(mean, StateCovariance::from_diagonal(&diag));
    let zx = 2.5;
    let z = Measurement::position(Vector2::new(zx, 1.0), Matrix2::identity() * r, Some(RefPoint::FL), 0, 0.0).unwrap();
    let post = likelihood_meas(&prior, &z).unwrap().posterior;
    let gain = 0.5 * var_l / (0.25 * var_l + r);
    let expected = l0 + gain * (zx - l0 / 2.0);
    let got = post.components()[0].mean[idx::L];
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    assert!((post.components()[0].mean[idx::W] - 2.0).abs() < 1e-9);
}

#[test]
fn max_and_mh_agree_when_unambiguous() {
    let mean = StateVector::from([1.0, -1.0, 0.2, 0.0, 5.0, 0.0, 2.0, 4.5]);
    let cov = StateCovariance::from_diagonal(&StateVector::from([0.01, 0.01, 1e-4, 0.01, 0.5, 0.1, 0.002, 0.002]));
    let prior = GaussianMixture::single(mean, cov);
    for zeta in RefPoint::CORNERS {
        let p = common::corner(&mean, zeta);
        let z = Measurement::position(p, Matrix2::identity() * 1e-4, None, 0, 0.0).unwrap();
        let (max, chosen) = likelihood_max(&prior, &z).unwrap();
        let mh = likelihood_mh(&prior, &z, &HypothesisWeights::uniform(&RefPoint::CORNERS)).unwrap();
        assert_eq!(chosen, zeta);
        let dominant = mh.posterior.best().unwrap();
        assert_eq!(dominant.origin_tag, Some(zeta));
        assert!(dominant.weight > 1.0 - 1e-9);
        assert!((dominant.mean - max.posterior.components()[0].mean).amax() < 1e-9);
    }
}
