//! Measurement models for reference-point measurements.
//!
//! A sensor reports a position anchored at some corner of the box, possibly
//! without saying which. The models differ only in how the unknown corner is
//! handled:
//!
//! * `Max` picks the single corner with the largest predictive likelihood.
//! * `Mh` keeps every corner as a weighted hypothesis, so each prior
//!   component fans out into one posterior component per corner.
//! * `Meas` uses the corner reported by the sensor.
//! * `Mhc` is `Mh` followed by the physical validation gate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, SMatrix, Vector2, U2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    corner_offset, idx, normalize_angle, symmetrize, FeatureMask, RefPoint, StateCovariance, StateVector, TransformMatrix,
    STATE_DIM,
};
use crate::mixture::{GaussianComponent, GaussianMixture};

/// Evidence below this value is clamped and the update treated as a miss.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MeasurementModel {
    Max,
    Mh,
    Meas,
    Mhc,
}

impl MeasurementModel {
    pub const ALL: [MeasurementModel; 4] =
        [MeasurementModel::Max, MeasurementModel::Mh, MeasurementModel::Meas, MeasurementModel::Mhc];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementModel::Max => "MAX",
            MeasurementModel::Mh => "MH",
            MeasurementModel::Meas => "MEAS",
            MeasurementModel::Mhc => "MHC",
        }
    }

    /// Whether the sensor's reference point is passed to the filter.
    pub fn uses_reported_ref_point(self) -> bool {
        self == MeasurementModel::Meas
    }
}

impl fmt::Display for MeasurementModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasurementModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MAX" => Ok(MeasurementModel::Max),
            "MH" => Ok(MeasurementModel::Mh),
            "MEAS" => Ok(MeasurementModel::Meas),
            "MHC" => Ok(MeasurementModel::Mhc),
            other => Err(Error::Config(format!("unknown method '{other}' (expected MAX, MH, MEAS or MHC)"))),
        }
    }
}

/// A possibly incomplete sensor observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mask: FeatureMask,
    pub ref_point: Option<RefPoint>,
    pub sensor_id: usize,
    pub timestamp: f64,
}

impl Measurement {
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        mask: FeatureMask,
        ref_point: Option<RefPoint>,
        sensor_id: usize,
        timestamp: f64,
    ) -> Result<Self> {
        let d = mask.dim();
        if mean.len() != d {
            return Err(Error::Dimension { expected: d, got: mean.len() });
        }
        if cov.shape() != (d, d) {
            return Err(Error::Dimension { expected: d, got: cov.nrows() });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) || !timestamp.is_finite() {
            return Err(Error::NonFinite("measurement"));
        }
        if (&cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1.0) || cov.clone().cholesky().is_none() {
            return Err(Error::InvalidMeasurement("covariance must be symmetric positive definite".into()));
        }
        Ok(Measurement { mean, cov, mask, ref_point, sensor_id, timestamp })
    }

    /// Position-only measurement.
    pub fn position(
        position: Vector2<f64>,
        cov: nalgebra::Matrix2<f64>,
        ref_point: Option<RefPoint>,
        sensor_id: usize,
        timestamp: f64,
    ) -> Result<Self> {
        Measurement::new(
            DVector::from_column_slice(position.as_slice()),
            DMatrix::from_column_slice(2, 2, cov.as_slice()),
            FeatureMask::POSITION,
            ref_point,
            sensor_id,
            timestamp,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    /// Row of the heading feature, if measured.
    fn heading_row(&self) -> Option<usize> {
        self.mask.contains(idx::PHI).then(|| self.mask.indices().position(|i| i == idx::PHI).unwrap())
    }

    /// Reference points this measurement may originate from.
    pub fn candidate_ref_points(&self) -> Vec<RefPoint> {
        match self.ref_point {
            Some(z) => vec![z],
            None => RefPoint::CORNERS.to_vec(),
        }
    }
}

/// Prior weights of the reference-point hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisWeights {
    entries: Vec<(RefPoint, f64)>,
}

impl HypothesisWeights {
    pub fn uniform(points: &[RefPoint]) -> Self {
        let w = 1.0 / points.len() as f64;
        HypothesisWeights { entries: points.iter().map(|&p| (p, w)).collect() }
    }

    pub fn delta(point: RefPoint) -> Self {
        HypothesisWeights { entries: vec![(point, 1.0)] }
    }

    /// Custom prior; weights must be non-negative and sum to one.
    pub fn new(entries: Vec<(RefPoint, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("hypothesis set must not be empty".into()));
        }
        if entries.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("hypothesis weights must be non-negative".into()));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("hypothesis weights sum to {total}, expected 1")));
        }
        Ok(HypothesisWeights { entries })
    }

    /// Uniform over the measurement's candidate reference points.
    pub fn for_measurement(z: &Measurement) -> Self {
        Self::uniform(&z.candidate_ref_points())
    }

    pub fn entries(&self) -> &[(RefPoint, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Outcome of updating one track's spatial density with one measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateResult {
    pub posterior: GaussianMixture,
    /// Marginal likelihood of the measurement under the prior density.
    pub eta: f64,
    /// Evidence of each reference point considered on its own.
    pub per_hypothesis: Vec<(RefPoint, f64)>,
    /// Set when the evidence fell below [`LIKELIHOOD_FLOOR`].
    pub effectively_missed: bool,
    /// Set when every component failed the validation gate and the
    /// ungated result was kept.
    pub gate_bypassed: bool,
}

impl UpdateResult {
    pub fn hypothesis_evidence(&self, zeta: RefPoint) -> Option<f64> {
        self.per_hypothesis.iter().find(|(z, _)| *z == zeta).map(|(_, e)| *e)
    }
}

/// Innovation of one component against one reference-point hypothesis.
pub(crate) struct Innovation {
    gain: Gain,
    pub(crate) likelihood: f64,
    pub(crate) mahalanobis: f64,
}

// Position-only measurements are by far the common case and get fixed-size
// matrices; anything else goes through the dynamic path.
enum Gain {
    Position { hp: SMatrix<f64, 2, STATE_DIM>, chol: Cholesky<f64, U2>, residual: Vector2<f64> },
    General { hp: DMatrix<f64>, chol: Cholesky<f64, Dyn>, residual: DVector<f64> },
}

fn gaussian_terms(mahalanobis: f64, log_det: f64, dim: usize) -> f64 {
    (-0.5 * (mahalanobis + log_det + dim as f64 * (2.0 * std::f64::consts::PI).ln())).exp()
}

pub(crate) fn innovation(comp: &GaussianComponent, z: &Measurement, zeta: RefPoint) -> Result<Innovation> {
    let m = &comp.mean;
    let transform = TransformMatrix::center_to(zeta, m[idx::PHI]);
    // The corner rotates with the heading; linearize that too so heading
    // uncertainty shows up in the innovation covariance. The residual keeps
    // the plain transform.
    let offset = corner_offset(m[idx::PHI], m[idx::W], m[idx::L], zeta);
    if z.mask == FeatureMask::POSITION {
        let mut h = transform.position_rows();
        let residual = z.xy() - h * m;
        h[(0, idx::PHI)] -= offset.y;
        h[(1, idx::PHI)] += offset.x;
        let hp = h * comp.cov;
        let s = hp * h.transpose() + Matrix2::new(z.cov[(0, 0)], z.cov[(0, 1)], z.cov[(1, 0)], z.cov[(1, 1)]);
        let chol = Cholesky::new((s + s.transpose()) * 0.5).ok_or(Error::SingularInnovation)?;
        let mahalanobis = residual.dot(&chol.solve(&residual));
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let likelihood = gaussian_terms(mahalanobis, log_det, 2);
        return Ok(Innovation { gain: Gain::Position { hp, chol, residual }, likelihood, mahalanobis });
    }
    let mut h = transform.measurement_matrix(z.mask);
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, comp.cov.as_slice());
    let x = DVector::from_column_slice(m.as_slice());
    let mut residual = &z.mean - &h * &x;
    h[(0, idx::PHI)] -= offset.y;
    h[(1, idx::PHI)] += offset.x;
    let hp = &h * &p;
    let mut s = &hp * h.transpose() + &z.cov;
    s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    if let Some(row) = z.heading_row() {
        residual[row] = normalize_angle(residual[row]);
    }
    let mahalanobis = residual.dot(&chol.solve(&residual));
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let likelihood = gaussian_terms(mahalanobis, log_det, z.dim());
    Ok(Innovation { gain: Gain::General { hp, chol, residual }, likelihood, mahalanobis })
}

impl Innovation {
    fn posterior(&self, comp: &GaussianComponent, zeta: RefPoint) -> GaussianComponent {
        // K = (S^-1 H P)^T and K S K^T = (H P)^T S^-1 H P.
        let (dx, dp) = match &self.gain {
            Gain::Position { hp, chol, residual } => {
                let s_inv_hp = chol.solve(hp);
                (s_inv_hp.transpose() * residual, hp.transpose() * s_inv_hp)
            }
            Gain::General { hp, chol, residual } => {
                let s_inv_hp = chol.solve(hp);
                let dx = s_inv_hp.transpose() * residual;
                let dp = hp.transpose() * &s_inv_hp;
                (StateVector::from_column_slice(dx.as_slice()), StateCovariance::from_column_slice(dp.as_slice()))
            }
        };
        let mut mean = comp.mean + dx;
        mean[idx::PHI] = normalize_angle(mean[idx::PHI]);
        let cov = symmetrize(&(comp.cov - dp));
        GaussianComponent { weight: comp.weight, mean, cov, origin_tag: Some(zeta) }
    }
}

/// Squared Mahalanobis distance of `z` to the nearest (component, hypothesis).
pub fn min_mahalanobis(mix: &GaussianMixture, z: &Measurement) -> f64 {
    let mut best = f64::INFINITY;
    for comp in mix.components() {
        for zeta in z.candidate_ref_points() {
            if let Ok(inn) = innovation(comp, z, zeta) {
                best = best.min(inn.mahalanobis);
            }
        }
    }
    best
}

fn floored(prior: &GaussianMixture, per_hypothesis: Vec<(RefPoint, f64)>) -> UpdateResult {
    UpdateResult {
        posterior: prior.clone(),
        eta: LIKELIHOOD_FLOOR,
        per_hypothesis,
        effectively_missed: true,
        gate_bypassed: false,
    }
}

/// Multi-hypothesis update: every prior component is conditioned on every
/// reference point, weighted by the hypothesis prior and its evidence.
pub fn likelihood_mh(prior: &GaussianMixture, z: &Measurement, weights: &HypothesisWeights) -> Result<UpdateResult> {
    let hyps = weights.entries();
    let mut evidence = vec![0.0; hyps.len()];
    let mut components = Vec::with_capacity(prior.len() * hyps.len());
    for comp in prior.components() {
        for (k, &(zeta, w_zeta)) in hyps.iter().enumerate() {
            let inn = innovation(comp, z, zeta)?;
            evidence[k] += comp.weight * inn.likelihood;
            let mut post = inn.posterior(comp, zeta);
            post.weight = comp.weight * w_zeta * inn.likelihood;
            components.push(post);
        }
    }
    let eta: f64 = components.iter().map(|c| c.weight).sum();
    let per_hypothesis: Vec<(RefPoint, f64)> = hyps.iter().map(|h| h.0).zip(evidence).collect();
    if !(eta >= LIKELIHOOD_FLOOR) {
        return Ok(floored(prior, per_hypothesis));
    }
    Ok(UpdateResult {
        posterior: GaussianMixture::new(components),
        eta,
        per_hypothesis,
        effectively_missed: false,
        gate_bypassed: false,
    })
}

/// Single-hypothesis update with the reference point the sensor reported.
pub fn likelihood_meas(prior: &GaussianMixture, z: &Measurement) -> Result<UpdateResult> {
    let zeta = z.ref_point.ok_or(Error::MissingRefPoint)?;
    likelihood_mh(prior, z, &HypothesisWeights::delta(zeta))
}

/// Maximum-likelihood reference point choice followed by a single update.
///
/// The corner is chosen by the component-weighted predictive likelihood; ties
/// go to the first candidate in `FL, FR, BL, BR` order.
pub fn likelihood_max(prior: &GaussianMixture, z: &Measurement) -> Result<(UpdateResult, RefPoint)> {
    let candidates = z.candidate_ref_points();
    let mut innovations = Vec::with_capacity(candidates.len());
    let mut evidence = Vec::with_capacity(candidates.len());
    for &zeta in &candidates {
        let per_comp: Vec<Innovation> = prior.components().iter().map(|c| innovation(c, z, zeta)).collect::<Result<_>>()?;
        let e: f64 = prior.components().iter().zip(&per_comp).map(|(c, inn)| c.weight * inn.likelihood).sum();
        evidence.push(e);
        innovations.push(per_comp);
    }
    let mut chosen = 0;
    for k in 1..candidates.len() {
        if evidence[k] > evidence[chosen] {
            chosen = k;
        }
    }
    let zeta = candidates[chosen];
    let per_hypothesis: Vec<(RefPoint, f64)> = candidates.iter().copied().zip(evidence.iter().copied()).collect();

    let components: Vec<GaussianComponent> = prior
        .components()
        .iter()
        .zip(&innovations[chosen])
        .map(|(c, inn)| {
            let mut post = inn.posterior(c, zeta);
            post.weight = c.weight * inn.likelihood;
            post
        })
        .collect();
    let eta: f64 = components.iter().map(|c| c.weight).sum();
    if !(eta >= LIKELIHOOD_FLOOR) {
        return Ok((floored(prior, per_hypothesis), zeta));
    }
    Ok((
        UpdateResult {
            posterior: GaussianMixture::new(components),
            eta,
            per_hypothesis,
            effectively_missed: false,
            gate_bypassed: false,
        },
        zeta,
    ))
}

/// Likelihood of a miss: the density is unchanged and the evidence is `1 - p_D`.
pub fn missed_detection_update(prior: &GaussianMixture, p_detect: f64) -> UpdateResult {
    UpdateResult {
        posterior: prior.clone(),
        eta: 1.0 - p_detect,
        per_hypothesis: Vec::new(),
        effectively_missed: false,
        gate_bypassed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;

    fn prior_box(x: f64, y: f64, phi: f64, w: f64, l: f64) -> GaussianMixture {
        let mean = StateVector::from([x, y, phi, 0.0, 5.0, 0.0, w, l]);
        let cov = StateCovariance::from_diagonal(&StateVector::from([0.3, 0.3, 0.02, 0.01, 1.0, 0.5, 0.1, 0.1]));
        GaussianMixture::single(mean, cov)
    }

    fn pos(x: f64, y: f64, var: f64, zeta: Option<RefPoint>) -> Measurement {
        Measurement::position(Vector2::new(x, y), Matrix2::identity() * var, zeta, 0, 0.0).unwrap()
    }

    #[test]
    fn measurement_validation() {
        assert!(Measurement::new(DVector::zeros(3), DMatrix::identity(2, 2), FeatureMask::POSITION, None, 0, 0.0).is_err());
        let bad_cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Measurement::new(DVector::zeros(2), bad_cov, FeatureMask::POSITION, None, 0, 0.0).is_err());
    }

    #[test]
    fn max_with_known_ref_point_equals_meas() {
        let prior = prior_box(5.0, 0.0, 0.0, 2.0, 4.0);
        let z = pos(7.2, 0.8, 0.5, Some(RefPoint::FL));
        let (max, chosen) = likelihood_max(&prior, &z).unwrap();
        let meas = likelihood_meas(&prior, &z).unwrap();
        assert_eq!(chosen, RefPoint::FL);
        assert_eq!(max.eta, meas.eta);
        assert_eq!(max.posterior, meas.posterior);
    }

    #[test]
    fn max_picks_generating_corner() {
        let prior = prior_box(0.0, 0.0, 0.0, 2.0, 2.2);
        let fl = nalgebra::Vector2::new(1.1, 1.0);
        let (_, chosen) = likelihood_max(&prior, &pos(fl.x, fl.y, 0.05, None)).unwrap();
        assert_eq!(chosen, RefPoint::FL);
    }

    #[test]
    fn max_flips_to_front_right_on_noisy_front_left() {
        // Box at (5, 0), w = 2, l = 4: FL corner (7, 1), FR corner (7, -1).
        let prior = prior_box(5.0, 0.0, 0.0, 2.0, 4.0);
        let (res, chosen) = likelihood_max(&prior, &pos(7.0, -0.1, 1.0, None)).unwrap();
        assert_eq!(chosen, RefPoint::FR);
        assert!(res.hypothesis_evidence(RefPoint::FR).unwrap() > res.hypothesis_evidence(RefPoint::FL).unwrap());
    }

    #[test]
    fn mh_fans_out_per_hypothesis() {
        let prior = prior_box(5.0, 0.0, 0.2, 2.0, 4.0);
        let z = pos(7.0, 0.5, 1.0, None);
        let res = likelihood_mh(&prior, &z, &HypothesisWeights::for_measurement(&z)).unwrap();
        assert_eq!(res.posterior.len(), 4);
        assert_relative_eq!(res.posterior.total_weight(), 1.0, epsilon = 1e-12);
        let tags: Vec<_> = res.posterior.components().iter().map(|c| c.origin_tag.unwrap()).collect();
        assert_eq!(tags, RefPoint::CORNERS.to_vec());
    }

    #[test]
    fn single_hypothesis_mh_is_bitwise_max() {
        let prior = GaussianMixture::new(vec![prior_box(5.0, 0.0, 0.1, 2.0, 4.0).components()[0].clone().with_tag(None), {
            let mut c = prior_box(5.5, 0.3, -0.1, 1.8, 4.4).components()[0].clone();
            c.weight = 0.5;
            c
        }]);
        let z = pos(7.0, 0.7, 0.8, Some(RefPoint::BR));
        let mh = likelihood_mh(&prior, &z, &HypothesisWeights::delta(RefPoint::BR)).unwrap();
        let (max, _) = likelihood_max(&prior, &z).unwrap();
        assert_eq!(mh.eta.to_bits(), max.eta.to_bits());
        assert_eq!(mh.posterior, max.posterior);
    }

    #[test]
    fn mh_evidence_is_linear_in_hypotheses() {
        let prior = prior_box(1.0, 2.0, 0.7, 2.0, 4.5);
        let z = pos(2.5, 4.0, 0.6, None);
        let w = HypothesisWeights::for_measurement(&z);
        let mh = likelihood_mh(&prior, &z, &w).unwrap();
        let mut sum = 0.0;
        for &(zeta, wz) in w.entries() {
            let mut zz = z.clone();
            zz.ref_point = Some(zeta);
            sum += wz * likelihood_meas(&prior, &zz).unwrap().eta;
        }
        assert_relative_eq!(mh.eta, sum, max_relative = 1e-12);
    }

    #[test]
    fn meas_requires_ref_point() {
        let prior = prior_box(0.0, 0.0, 0.0, 2.0, 4.0);
        assert_eq!(likelihood_meas(&prior, &pos(0.0, 0.0, 1.0, None)), Err(Error::MissingRefPoint));
    }

    #[test]
    fn full_state_center_measurement_is_plain_kalman() {
        let prior = prior_box(0.0, 0.0, 0.3, 2.0, 4.0);
        let z_mean = DVector::from_column_slice(&[0.5, -0.2, 0.35, 0.0, 5.5, 0.1, 2.1, 3.9]);
        let r = DMatrix::identity(8, 8) * 0.4;
        let z = Measurement::new(z_mean.clone(), r.clone(), FeatureMask::FULL, Some(RefPoint::C), 0, 0.0).unwrap();
        let res = likelihood_meas(&prior, &z).unwrap();
        let (post, lik) =
            crate::mixture::kalman_condition(&prior.components()[0], &z_mean, &DMatrix::identity(8, 8), &r).unwrap();
        assert_relative_eq!(res.posterior.components()[0].mean, post.mean, epsilon = 1e-12);
        assert_relative_eq!(res.posterior.components()[0].cov, post.cov, epsilon = 1e-12);
        assert_relative_eq!(res.eta, lik, max_relative = 1e-12);
    }

    #[test]
    fn far_measurement_is_floored() {
        let prior = prior_box(0.0, 0.0, 0.0, 2.0, 4.0);
        let res = likelihood_mh(&prior, &pos(1e6, 1e6, 0.01, None), &HypothesisWeights::uniform(&RefPoint::CORNERS)).unwrap();
        assert!(res.effectively_missed);
        assert_eq!(res.eta, LIKELIHOOD_FLOOR);
        assert_eq!(res.posterior, prior);
    }

    #[test]
    fn missed_detection() {
        let prior = prior_box(0.0, 0.0, 0.0, 2.0, 4.0);
        let res = missed_detection_update(&prior, 0.95);
        assert_relative_eq!(res.eta, 0.05, epsilon = 1e-15);
        assert_eq!(res.posterior, prior);
        assert_eq!(missed_detection_update(&prior, 0.0).eta, 1.0);
    }

    #[test]
    fn hypothesis_order_only_permutes_components() {
        let prior = prior_box(1.0, 2.0, 0.7, 2.0, 4.5);
        let z = pos(2.5, 4.0, 0.6, None);
        let a = likelihood_mh(&prior, &z, &HypothesisWeights::uniform(&RefPoint::CORNERS)).unwrap();
        let rev: Vec<RefPoint> = RefPoint::CORNERS.iter().rev().copied().collect();
        let b = likelihood_mh(&prior, &z, &HypothesisWeights::uniform(&rev)).unwrap();
        assert_relative_eq!(a.eta, b.eta, max_relative = 1e-14);
        for c in a.posterior.components() {
            let other = b.posterior.components().iter().find(|o| o.origin_tag == c.origin_tag).unwrap();
            assert_relative_eq!(c.weight, other.weight, max_relative = 1e-12);
            assert_eq!(c.mean, other.mean);
        }
    }
}
