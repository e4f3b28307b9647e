use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use refpoint_lmb::geometry::{convert_ref_point, corner_offset, idx, RefPoint, StateCovariance, StateVector, TransformMatrix};
use refpoint_lmb::mixture::GaussianComponent;
use refpoint_lmb::motion::{ctra_transition, predict_component, ProcessNoise, UtParams};

/// Classical RK4 on x' = v cos(phi), y' = v sin(phi), phi' = omega, v' = a.
fn rk4(state: &StateVector, dt: f64, h: f64) -> (f64, f64) {
    let f = |s: [f64; 4], omega: f64, a: f64| [s[3] * s[2].cos(), s[3] * s[2].sin(), omega, a];
    let mut s = [state[0], state[1], state[2], state[4]];
    let (omega, a) = (state[3], state[5]);
    let steps = (dt / h).round() as usize;
    for _ in 0..steps {
        let k1 = f(s, omega, a);
        let add = |s: [f64; 4], k: [f64; 4], c: f64| [s[0] + c * k[0], s[1] + c * k[1], s[2] + c * k[2], s[3] + c * k[3]];
        let k2 = f(add(s, k1, h / 2.0), omega, a);
        let k3 = f(add(s, k2, h / 2.0), omega, a);
        let k4 = f(add(s, k3, h), omega, a);
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (s[0], s[1])
}

#[test]
fn ctra_matches_ode_integration() {
    let cases = [
        [0.0, 0.0, 0.0, FRAC_PI_2, 5.0, 0.0, 2.0, 4.0],
        [1.0, -2.0, 0.7, -0.4, 8.0, 1.5, 2.0, 4.0],
        [0.0, 0.0, -2.5, 1.1, 3.0, -0.8, 2.0, 4.0],
        [0.0, 0.0, 0.3, 5e-5, 10.0, 2.0, 2.0, 4.0],
    ];
    for c in cases {
        let s = StateVector::from(c);
        let out = ctra_transition(&s, 1.0);
        let (x, y) = rk4(&s, 1.0, 1e-4);
        assert!((out[0] - x).abs() < 1e-6 && (out[1] - y).abs() < 1e-6, "{c:?}: ({}, {}) vs ({x}, {y})", out[0], out[1]);
    }
}

#[test]
fn unscented_mean_matches_sampling() {
    let mean = StateVector::from([0.0, 0.0, 0.2, 0.5, 8.0, 0.5, 2.0, 4.5]);
    let cov = StateCovariance::from_diagonal(&StateVector::from([0.3, 0.3, 0.1, 0.2, 1.0, 0.3, 0.05, 0.05]));
    let comp = GaussianComponent::new(1.0, mean, cov);
    let dt = 1.0;
    let ut = predict_component(&comp, dt, &ProcessNoise::zero(), &UtParams::default()).unwrap();

    let chol = cov.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 1_000_000;
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..n {
        let e = StateVector::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let out = ctra_transition(&(mean + chol * e), dt);
        sx += out[0];
        sy += out[1];
    }
    let mc = Vector2::new(sx / n as f64, sy / n as f64);
    let err = (Vector2::new(ut.mean[0], ut.mean[1]) - mc).norm();
    assert!(err < 0.05, "UT {:?} vs MC {mc:?}", (ut.mean[0], ut.mean[1]));
}

#[test]
fn linear_regime_prediction_is_exact() {
    let phi = 0.4f64;
    let mean = StateVector::from([1.0, 2.0, phi, 0.0, 6.0, 0.0, 2.0, 4.5]);
    let mut cov = StateCovariance::from_diagonal(&StateVector::from([0.5, 0.4, 0.0, 0.0, 0.8, 0.2, 0.1, 0.2]));
    cov[(0, 4)] = 0.1;
    cov[(4, 0)] = 0.1;
    let dt = 0.5;
    let pred =
        predict_component(&GaussianComponent::new(0.3, mean, cov), dt, &ProcessNoise::zero(), &UtParams::default()).unwrap();
    let mut f = StateCovariance::identity();
    f[(0, idx::V)] = dt * phi.cos();
    f[(1, idx::V)] = dt * phi.sin();
    f[(0, idx::A)] = 0.5 * dt * dt * phi.cos();
    f[(1, idx::A)] = 0.5 * dt * dt * phi.sin();
    f[(idx::V, idx::A)] = dt;
    assert!((pred.mean - ctra_transition(&mean, dt)).amax() < 1e-8);
    assert!((pred.cov - f * cov * f.transpose()).amax() < 1e-8);
    assert_eq!(pred.weight, 0.3);
}

#[test]
fn quarter_turn_corner_geometry() {
    // A box heading along +y has its front-left corner at (-w/2, +l/2).
    let o = corner_offset(FRAC_PI_2, 2.0, 4.0, RefPoint::FL);
    assert!((o - Vector2::new(-1.0, 2.0)).norm() < 1e-12);
    let t = TransformMatrix::center_to(RefPoint::FL, 0.0);
    let s = StateVector::from([3.0, -1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 4.0]);
    let moved = t.apply(&s);
    let expected = corner_offset(0.0, 2.0, 4.0, RefPoint::FL);
    assert!((moved[0] - 3.0 - expected.x).abs() < 1e-15 && (moved[1] + 1.0 - expected.y).abs() < 1e-15);
}

fn spd(entries: [f64; 36]) -> StateCovariance {
    let a = StateCovariance::from_fn(|r, c| if r < 6 && c < 6 { entries[r * 6 + c] } else { 0.0 });
    a * a.transpose() + StateCovariance::identity() * 0.1
}

proptest! {
    #[test]
    fn corner_distance_is_rotation_invariant(phi in -PI..PI, w in 0.5f64..3.0, l in 1.0f64..8.0) {
        for zeta in RefPoint::CORNERS {
            let o = corner_offset(phi, w, l, zeta);
            prop_assert!((o.norm() - 0.5 * (w * w + l * l).sqrt()).abs() < 1e-12);
        }
        prop_assert!((corner_offset(phi, w, l, RefPoint::FL) + corner_offset(phi, w, l, RefPoint::BR)).norm() < 1e-12);
        prop_assert!((corner_offset(phi, w, l, RefPoint::FR) + corner_offset(phi, w, l, RefPoint::BL)).norm() < 1e-12);
    }

    #[test]
    fn ref_point_round_trip_recovers_covariance(
        phi in -PI..PI,
        entries in prop::array::uniform32(-1.0f64..1.0),
        extra in prop::array::uniform4(-1.0f64..1.0),
    ) {
        let mut all = [0.0; 36];
        all[..32].copy_from_slice(&entries);
        all[32..].copy_from_slice(&extra);
        let cov = spd(all);
        let mean = StateVector::from([1.0, 2.0, phi, 0.1, 5.0, 0.0, 2.0, 4.5]);
        for zeta in RefPoint::CORNERS {
            let (m1, c1) = convert_ref_point(&mean, &cov, RefPoint::C, zeta).unwrap();
            let (m2, c2) = convert_ref_point(&m1, &c1, zeta, RefPoint::C).unwrap();
            prop_assert!((m2 - mean).amax() < 1e-12);
            prop_assert!((c2 - cov).norm() < 1e-12 * cov.norm().max(1.0));
            prop_assert!((c1 - c1.transpose()).amax() < 1e-12);
            prop_assert!(c1.symmetric_eigenvalues().min() > -1e-9);
        }
    }
}
