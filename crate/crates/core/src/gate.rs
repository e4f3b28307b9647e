//! Physical validation gate.
//!
//! After a multi-hypothesis update each posterior component is checked
//! against simple vehicle constraints; reference-point associations that
//! produce impossible boxes are dropped together with their evidence.

use serde::{Deserialize, Serialize};

use crate::geometry::{idx, StateVector};
use crate::likelihood::UpdateResult;
use crate::mixture::GaussianMixture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    Extent,
    Ratio,
    YawRate,
    Acceleration,
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSet {
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Maximum steering angle, rad.
    pub steer_max: f64,
    /// m/s^2
    pub a_max: f64,
    /// m/s
    pub v_min: f64,
    pub check_extent: bool,
    pub check_ratio: bool,
    pub check_yaw_rate: bool,
    pub check_acceleration: bool,
    pub check_velocity: bool,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            ratio_min: 1.5,
            ratio_max: 4.0,
            steer_max: 75f64.to_radians(),
            a_max: 10.0,
            v_min: -5.0,
            check_extent: true,
            check_ratio: true,
            check_yaw_rate: true,
            check_acceleration: true,
            check_velocity: true,
        }
    }
}

impl ConstraintSet {
    pub fn disabled() -> Self {
        ConstraintSet {
            check_extent: false,
            check_ratio: false,
            check_yaw_rate: false,
            check_acceleration: false,
            check_velocity: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let finite = [self.ratio_min, self.ratio_max, self.steer_max, self.a_max, self.v_min].iter().all(|v| v.is_finite());
        if !finite {
            return Err(crate::Error::Config("constraint bounds must be finite".into()));
        }
        if self.ratio_min > self.ratio_max {
            return Err(crate::Error::Config("ratio_min must not exceed ratio_max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GateVerdict {
    pub violations: Vec<Constraint>,
}

impl GateVerdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a posterior component mean against the enabled constraints.
pub fn check_component(mean: &StateVector, cs: &ConstraintSet) -> GateVerdict {
    let (w, l) = (mean[idx::W], mean[idx::L]);
    let (v, a, yaw_rate) = (mean[idx::V], mean[idx::A], mean[idx::PHI_DOT]);
    let mut violations = Vec::new();
    if cs.check_extent && !(w >= 0.0 && l >= 0.0) {
        violations.push(Constraint::Extent);
    }
    if cs.check_ratio {
        let ok = w > 0.0 && {
            let r = l / w;
            r >= cs.ratio_min && r <= cs.ratio_max
        };
        if !ok {
            violations.push(Constraint::Ratio);
        }
    }
    if cs.check_yaw_rate {
        // Turning radius of a single-track vehicle; a reversing vehicle turns too.
        let ok = l > 0.0 && yaw_rate.abs() <= v.abs() * cs.steer_max / l;
        if !ok {
            violations.push(Constraint::YawRate);
        }
    }
    if cs.check_acceleration && !(a <= cs.a_max) {
        violations.push(Constraint::Acceleration);
    }
    if cs.check_velocity && !(v >= cs.v_min) {
        violations.push(Constraint::Velocity);
    }
    GateVerdict { violations }
}

/// Removes posterior components that violate the constraints.
///
/// The surviving unnormalized mass becomes the new evidence. If nothing
/// survives, the input is returned with `gate_bypassed` set.
pub fn gate_mixture(result: &UpdateResult, cs: &ConstraintSet) -> UpdateResult {
    if result.effectively_missed {
        return result.clone();
    }
    let comps = result.posterior.components();
    let keep: Vec<bool> = comps.iter().map(|c| check_component(&c.mean, cs).passed()).collect();
    if keep.iter().all(|&k| k) {
        return result.clone();
    }
    if !keep.iter().any(|&k| k) {
        let mut out = result.clone();
        out.gate_bypassed = true;
        return out;
    }
    let surviving: f64 = comps.iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c.weight).sum();
    let per_hypothesis = result
        .per_hypothesis
        .iter()
        .map(|&(zeta, evidence)| {
            let tagged = |only_kept: bool| -> f64 {
                comps
                    .iter()
                    .zip(&keep)
                    .filter(|(c, &k)| c.origin_tag == Some(zeta) && (k || !only_kept))
                    .map(|(c, _)| c.weight)
                    .sum()
            };
            let all = tagged(false);
            let scale = if all > 0.0 { tagged(true) / all } else { 1.0 };
            (zeta, evidence * scale)
        })
        .collect();
    let kept = comps.iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c.clone()).collect();
    UpdateResult {
        posterior: GaussianMixture::new(kept),
        eta: result.eta * surviving,
        per_hypothesis,
        effectively_missed: false,
        gate_bypassed: false,
    }
}
