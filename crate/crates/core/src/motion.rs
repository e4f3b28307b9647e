//! Constant turn rate and acceleration (CTRA) motion with unscented prediction.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{idx, normalize_angle, symmetrize, StateCovariance, StateVector, STATE_DIM};
use crate::mixture::GaussianComponent;

/// Below this yaw rate the closed-form arc is replaced by its Taylor expansion.
pub const TURN_RATE_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoise {
    /// Longitudinal jerk, m/s^3.
    pub sigma_jerk: f64,
    /// Turn acceleration, rad/s^2.
    pub sigma_turn_acc: f64,
    /// Pseudo noise on width and length, m.
    pub sigma_extent: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise { sigma_jerk: 1.0, sigma_turn_acc: 0.5, sigma_extent: 0.1 }
    }
}

impl ProcessNoise {
    pub fn zero() -> Self {
        ProcessNoise { sigma_jerk: 0.0, sigma_turn_acc: 0.0, sigma_extent: 0.0 }
    }

    /// Additive process covariance over `dt`, with the jerk acting along `heading`.
    pub fn covariance(&self, dt: f64, heading: f64) -> StateCovariance {
        let mut q = StateCovariance::zeros();
        if dt <= 0.0 {
            return q;
        }
        let (s, c) = heading.sin_cos();
        let dir = [c, s];
        let j2 = self.sigma_jerk * self.sigma_jerk;
        let t2 = dt * dt;
        let t3 = t2 * dt;
        let t4 = t3 * dt;
        let t5 = t4 * dt;
        // Integrated white jerk on the along-track chain [p, v, a].
        let pp = j2 * t5 / 20.0;
        let pv = j2 * t4 / 8.0;
        let pa = j2 * t3 / 6.0;
        for r in 0..2 {
            for k in 0..2 {
                q[(r, k)] = pp * dir[r] * dir[k];
            }
            q[(r, idx::V)] = pv * dir[r];
            q[(idx::V, r)] = pv * dir[r];
            q[(r, idx::A)] = pa * dir[r];
            q[(idx::A, r)] = pa * dir[r];
        }
        q[(idx::V, idx::V)] = j2 * t3 / 3.0;
        q[(idx::V, idx::A)] = j2 * t2 / 2.0;
        q[(idx::A, idx::V)] = j2 * t2 / 2.0;
        q[(idx::A, idx::A)] = j2 * dt;

        let w2 = self.sigma_turn_acc * self.sigma_turn_acc;
        q[(idx::PHI, idx::PHI)] = w2 * t3 / 3.0;
        q[(idx::PHI, idx::PHI_DOT)] = w2 * t2 / 2.0;
        q[(idx::PHI_DOT, idx::PHI)] = w2 * t2 / 2.0;
        q[(idx::PHI_DOT, idx::PHI_DOT)] = w2 * dt;

        let e2 = self.sigma_extent * self.sigma_extent;
        q[(idx::W, idx::W)] = e2 * dt;
        q[(idx::L, idx::L)] = e2 * dt;
        q
    }
}

/// Unscented transform spread parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams { alpha: 1.0, beta: 2.0, kappa: 3.0 - STATE_DIM as f64 }
    }
}

impl UtParams {
    fn lambda(&self) -> f64 {
        let n = STATE_DIM as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    /// Mean and covariance weights of the central and outer sigma points.
    pub fn weights(&self) -> (f64, f64, f64) {
        let n = STATE_DIM as f64;
        let lambda = self.lambda();
        let wm0 = lambda / (n + lambda);
        let wc0 = wm0 + (1.0 - self.alpha * self.alpha + self.beta);
        let wi = 1.0 / (2.0 * (n + lambda));
        (wm0, wc0, wi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("UT alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if STATE_DIM as f64 + self.lambda() <= 0.0 {
            return Err(Error::Config("UT spread n + lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Propagates a center-frame state by `dt` seconds of CTRA motion.
pub fn ctra_transition(state: &StateVector, dt: f64) -> StateVector {
    let mut out = *state;
    let (phi, omega, v, a) = (state[idx::PHI], state[idx::PHI_DOT], state[idx::V], state[idx::A]);
    let (dx, dy) = if omega.abs() < TURN_RATE_EPSILON {
        // Expansion of the arc integral to first order in omega.
        let (s, c) = phi.sin_cos();
        let along = v * dt + 0.5 * a * dt * dt;
        let bend = omega * (0.5 * v * dt * dt + a * dt * dt * dt / 3.0);
        (along * c - bend * s, along * s + bend * c)
    } else {
        let phi_end = phi + omega * dt;
        let (s0, c0) = phi.sin_cos();
        let (s1, c1) = phi_end.sin_cos();
        let w2 = omega * omega;
        let v_end = v + a * dt;
        (
            (v_end * omega * s1 + a * c1 - v * omega * s0 - a * c0) / w2,
            (-v_end * omega * c1 + a * s1 + v * omega * c0 - a * s0) / w2,
        )
    };
    out[idx::X] += dx;
    out[idx::Y] += dy;
    out[idx::PHI] = normalize_angle(phi + omega * dt);
    out[idx::V] = v + a * dt;
    out
}

/// Lower-triangular square root of a PSD matrix, falling back to an
/// eigen-decomposition when Cholesky fails on a singular matrix.
fn psd_sqrt(cov: &StateCovariance) -> Result<StateCovariance> {
    if let Some(chol) = cov.cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-9 * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(eig.eigenvectors * StateCovariance::from_diagonal(&root))
}

/// Unscented prediction of one mixture component through CTRA motion.
pub fn predict_component(comp: &GaussianComponent, dt: f64, noise: &ProcessNoise, ut: &UtParams) -> Result<GaussianComponent> {
    let n = STATE_DIM as f64;
    let spread = (n + ut.lambda()).sqrt();
    let root = psd_sqrt(&comp.cov)? * spread;
    let (wm0, wc0, wi) = ut.weights();

    let center = ctra_transition(&comp.mean, dt);
    let mut points = Vec::with_capacity(2 * STATE_DIM);
    for k in 0..STATE_DIM {
        let col = root.column(k);
        points.push(ctra_transition(&(comp.mean + col), dt));
        points.push(ctra_transition(&(comp.mean - col), dt));
    }

    // Headings are averaged as offsets from the propagated center point.
    let offset = |p: &StateVector| {
        let mut d = p - center;
        d[idx::PHI] = normalize_angle(d[idx::PHI]);
        d
    };
    let mean_offset = points.iter().fold(StateVector::zeros(), |acc, p| acc + offset(p) * wi);
    let mut mean = center + mean_offset;
    mean[idx::PHI] = normalize_angle(mean[idx::PHI]);

    let dev = |p: &StateVector| {
        let mut d = p - mean;
        d[idx::PHI] = normalize_angle(d[idx::PHI]);
        d
    };
    let d0 = dev(&center);
    let mut cov = d0 * d0.transpose() * wc0;
    for p in &points {
        let d = dev(p);
        cov += d * d.transpose() * wi;
    }
    // The center carries the remaining mean weight; folded in above through
    // the offsets because wm0 + 2n * wi = 1.
    debug_assert!((wm0 + 2.0 * n * wi - 1.0).abs() < 1e-12);
    cov += noise.covariance(dt, comp.mean[idx::PHI]);
    Ok(GaussianComponent { weight: comp.weight, mean, cov: symmetrize(&cov), origin_tag: comp.origin_tag })
}
