//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix2, SMatrix, Vector2};
use rand::Rng;

use refpoint_lmb::geometry::{RefPoint, StateCovariance, StateVector};
use refpoint_lmb::likelihood::Measurement;
use refpoint_lmb::mixture::{GaussianComponent, GaussianMixture};

/// (along, across) half-extent signs of each corner in the body frame.
pub fn body_signs(zeta: RefPoint) -> (f64, f64) {
    match zeta {
        RefPoint::FL => (1.0, 1.0),
        RefPoint::FR => (1.0, -1.0),
        RefPoint::BL => (-1.0, 1.0),
        RefPoint::BR => (-1.0, -1.0),
        RefPoint::C => (0.0, 0.0),
    }
}

/// World position of corner `zeta` of the box described by `x`.
pub fn corner(x: &StateVector, zeta: RefPoint) -> Vector2<f64> {
    let (sl, sw) = body_signs(zeta);
    let (s, c) = x[2].sin_cos();
    let (a, b) = (sl * x[7] / 2.0, sw * x[6] / 2.0);
    Vector2::new(x[0] + c * a - s * b, x[1] + s * a + c * b)
}

/// Jacobian of [`corner`] with respect to the state.
pub fn corner_jacobian(x: &StateVector, zeta: RefPoint) -> SMatrix<f64, 2, 8> {
    let (sl, sw) = body_signs(zeta);
    let (s, c) = x[2].sin_cos();
    let (a, b) = (sl * x[7] / 2.0, sw * x[6] / 2.0);
    let mut j = SMatrix::<f64, 2, 8>::zeros();
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    j[(0, 2)] = -s * a - c * b;
    j[(1, 2)] = c * a - s * b;
    j[(0, 6)] = -s * sw / 2.0;
    j[(1, 6)] = c * sw / 2.0;
    j[(0, 7)] = c * sl / 2.0;
    j[(1, 7)] = s * sl / 2.0;
    j
}

pub fn normal_pdf_2d(z: Vector2<f64>, mean: Vector2<f64>, cov: Matrix2<f64>) -> f64 {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let d = z - mean;
    (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

/// Evidence of a position measurement for one component and corner.
pub fn component_evidence(comp: &GaussianComponent, z: &Measurement, zeta: RefPoint) -> f64 {
    let j = corner_jacobian(&comp.mean, zeta);
    let r = Matrix2::new(z.cov[(0, 0)], z.cov[(0, 1)], z.cov[(1, 0)], z.cov[(1, 1)]);
    let s = j * comp.cov * j.transpose() + r;
    normal_pdf_2d(z.xy(), corner(&comp.mean, zeta), s)
}

/// Unnormalized posterior masses of the multi-hypothesis update in
/// (component, corner) order, with uniform corner priors.
pub fn mh_masses(prior: &GaussianMixture, z: &Measurement) -> Vec<f64> {
    let mut out = Vec::new();
    for comp in prior.components() {
        for zeta in RefPoint::CORNERS {
            out.push(comp.weight * 0.25 * component_evidence(comp, z, zeta));
        }
    }
    out
}

pub fn random_spd(rng: &mut impl Rng, scale: f64) -> StateCovariance {
    let a = StateCovariance::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    (a * a.transpose() * 0.2 + StateCovariance::identity()) * scale
}

/// A random car-like prior with one to three components and a position
/// measurement near one of its corners.
pub fn random_case(rng: &mut impl Rng) -> (GaussianMixture, Measurement) {
    let n = rng.gen_range(1..=3);
    let heading = rng.gen_range(-3.1..3.1);
    let comps: Vec<_> = (0..n)
        .map(|_| {
            let mean = StateVector::from([
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                heading + rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.0..10.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1.5..2.5),
                rng.gen_range(3.5..5.5),
            ]);
            let scale = rng.gen_range(0.05..0.5);
            GaussianComponent::new(rng.gen_range(0.1..1.0), mean, random_spd(rng, scale))
        })
        .collect();
    let prior = GaussianMixture::new(comps);
    let anchor = &prior.components()[0].mean;
    let zeta = RefPoint::CORNERS[rng.gen_range(0..4)];
    let p = corner(anchor, zeta) + Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let a = Matrix2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let r = a * a.transpose() * 0.3 + Matrix2::identity() * 0.1;
    let z = Measurement::position(p, r, None, 0, 0.0).unwrap();
    (prior, z)
}

/// Largest relative deviation of the multi-hypothesis update from the
/// brute-force masses: posterior weights, total evidence and per-corner evidence.
pub fn mh_relative_error(prior: &GaussianMixture, z: &Measurement) -> f64 {
    use refpoint_lmb::likelihood::{likelihood_mh, HypothesisWeights};
    let res = likelihood_mh(prior, z, &HypothesisWeights::uniform(&RefPoint::CORNERS)).unwrap();
    let masses = mh_masses(prior, z);
    let eta: f64 = masses.iter().sum();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let mut worst = rel(res.eta, eta);
    assert_eq!(res.posterior.len(), masses.len());
    for (c, m) in res.posterior.components().iter().zip(&masses) {
        worst = worst.max(rel(c.weight * res.eta, *m));
    }
    for zeta in RefPoint::CORNERS {
        let per: f64 = prior.components().iter().map(|c| c.weight * component_evidence(c, z, zeta)).sum();
        worst = worst.max(rel(res.hypothesis_evidence(zeta).unwrap(), per));
    }
    worst
}
