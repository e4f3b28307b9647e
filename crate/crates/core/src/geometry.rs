//! Reference-point geometry of the probabilistic box model.
//!
//! A box is stored as `[x, y, phi, phi_dot, v, a, w, l]`, where `(x, y)` is
//! anchored at one of five reference points. Inside the filter every density
//! lives in the center frame; the corner frames are reached through the
//! block-triangular transform `[[I, Delta], [0, I]]`, whose `Delta` block
//! couples the position rows to the extent columns.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 8;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Indices into the state vector.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const PHI: usize = 2;
    pub const PHI_DOT: usize = 3;
    pub const V: usize = 4;
    pub const A: usize = 5;
    pub const W: usize = 6;
    pub const L: usize = 7;
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Anchor of the box position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RefPoint {
    C,
    FL,
    FR,
    BL,
    BR,
}

impl RefPoint {
    pub const ALL: [RefPoint; 5] = [RefPoint::C, RefPoint::FL, RefPoint::FR, RefPoint::BL, RefPoint::BR];
    /// The corner-only set used when the sensor does not report the anchor.
    pub const CORNERS: [RefPoint; 4] = [RefPoint::FL, RefPoint::FR, RefPoint::BL, RefPoint::BR];

    /// Lateral (`delta`) and longitudinal (`gamma`) signs of a corner.
    pub fn signs(self) -> Option<(f64, f64)> {
        match self {
            RefPoint::C => None,
            RefPoint::FL => Some((1.0, 1.0)),
            RefPoint::FR => Some((-1.0, 1.0)),
            RefPoint::BL => Some((1.0, -1.0)),
            RefPoint::BR => Some((-1.0, -1.0)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RefPoint::C => "C",
            RefPoint::FL => "FL",
            RefPoint::FR => "FR",
            RefPoint::BL => "BL",
            RefPoint::BR => "BR",
        }
    }
}

impl fmt::Display for RefPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C" => Ok(RefPoint::C),
            "FL" => Ok(RefPoint::FL),
            "FR" => Ok(RefPoint::FR),
            "BL" => Ok(RefPoint::BL),
            "BR" => Ok(RefPoint::BR),
            other => Err(Error::Config(format!("unknown reference point '{other}'"))),
        }
    }
}

/// Kinematic and extent state of a box together with its anchor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub phi_dot: f64,
    pub v: f64,
    pub a: f64,
    pub w: f64,
    pub l: f64,
    pub ref_point: RefPoint,
}

impl BoxState {
    pub fn from_vector(v: &StateVector, ref_point: RefPoint) -> Self {
        BoxState {
            x: v[idx::X],
            y: v[idx::Y],
            phi: v[idx::PHI],
            phi_dot: v[idx::PHI_DOT],
            v: v[idx::V],
            a: v[idx::A],
            w: v[idx::W],
            l: v[idx::L],
            ref_point,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from([self.x, self.y, self.phi, self.phi_dot, self.v, self.a, self.w, self.l])
    }

    /// Position of the given reference point.
    pub fn point(&self, zeta: RefPoint) -> Vector2<f64> {
        let center = Vector2::new(self.x, self.y) - corner_offset(self.phi, self.w, self.l, self.ref_point);
        center + corner_offset(self.phi, self.w, self.l, zeta)
    }

    /// The same box re-anchored at `zeta`.
    pub fn at(&self, zeta: RefPoint) -> BoxState {
        let p = self.point(zeta);
        BoxState { x: p.x, y: p.y, ref_point: zeta, ..*self }
    }
}

/// Subset of state features carried by a measurement, as a bit mask over
/// state indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask(u8);

impl FeatureMask {
    pub const POSITION: FeatureMask = FeatureMask(0b11);
    pub const FULL: FeatureMask = FeatureMask(0xff);

    /// Builds a mask from state indices; position is always included.
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut bits = Self::POSITION.0;
        for &i in indices {
            if i >= STATE_DIM {
                return Err(Error::Dimension { expected: STATE_DIM, got: i + 1 });
            }
            bits |= 1 << i;
        }
        Ok(FeatureMask(bits))
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits & Self::POSITION.0 != Self::POSITION.0 {
            return Err(Error::InvalidMeasurement("feature mask must contain the position".into()));
        }
        Ok(FeatureMask(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, index: usize) -> bool {
        index < STATE_DIM && self.0 & (1 << index) != 0
    }

    pub fn dim(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        (0..STATE_DIM).filter(move |&i| self.contains(i))
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::POSITION
    }
}

/// The 2x2 matrix mapping `[w, l]` to the center-to-corner displacement.
pub fn extent_coupling(phi: f64, zeta: RefPoint) -> Matrix2<f64> {
    match zeta.signs() {
        None => Matrix2::zeros(),
        Some((delta, gamma)) => {
            let (s, c) = phi.sin_cos();
            0.5 * Matrix2::new(-s * delta, c * gamma, c * delta, s * gamma)
        }
    }
}

/// Displacement from the box center to reference point `zeta`.
pub fn corner_offset(phi: f64, w: f64, l: f64, zeta: RefPoint) -> Vector2<f64> {
    extent_coupling(phi, zeta) * Vector2::new(w, l)
}

/// Full center-to-`zeta` transform, frozen at one heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformMatrix {
    matrix: StateCovariance,
}

impl TransformMatrix {
    pub fn identity() -> Self {
        TransformMatrix { matrix: StateCovariance::identity() }
    }

    /// Transform from the center frame to `zeta` evaluated at heading `phi`.
    pub fn center_to(zeta: RefPoint, phi: f64) -> Self {
        Self::from_coupling(extent_coupling(phi, zeta))
    }

    /// Transform from `from` to `to` at heading `phi`, composed through the center.
    pub fn between(from: RefPoint, to: RefPoint, phi: f64) -> Self {
        Self::from_coupling(extent_coupling(phi, to) - extent_coupling(phi, from))
    }

    fn from_coupling(f: Matrix2<f64>) -> Self {
        let mut matrix = StateCovariance::identity();
        matrix.fixed_view_mut::<2, 2>(idx::X, idx::W).copy_from(&f);
        TransformMatrix { matrix }
    }

    pub fn matrix(&self) -> &StateCovariance {
        &self.matrix
    }

    /// The `Delta` block: position rows against the six non-position columns.
    pub fn delta(&self) -> SMatrix<f64, 2, 6> {
        self.matrix.fixed_view::<2, 6>(0, 2).into_owned()
    }

    pub fn inverse(&self) -> Self {
        let mut matrix = self.matrix;
        let f = -matrix.fixed_view::<2, 2>(idx::X, idx::W).into_owned();
        matrix.fixed_view_mut::<2, 2>(idx::X, idx::W).copy_from(&f);
        TransformMatrix { matrix }
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    /// Rows of the transform selected by `mask`: the `d x 8` measurement matrix.
    pub fn measurement_matrix(&self, mask: FeatureMask) -> DMatrix<f64> {
        let rows: Vec<usize> = mask.indices().collect();
        DMatrix::from_fn(rows.len(), STATE_DIM, |r, c| self.matrix[(rows[r], c)])
    }

    /// The two position rows, for position-only measurements.
    pub fn position_rows(&self) -> nalgebra::SMatrix<f64, 2, STATE_DIM> {
        self.matrix.fixed_rows::<2>(0).into_owned()
    }

    pub fn apply(&self, state: &StateVector) -> StateVector {
        self.matrix * state
    }
}

/// Center-to-`zeta` transform at the heading of `state`.
///
/// `state` is expected in the center frame; only its heading enters the matrix.
pub fn build_transform(state: &BoxState, zeta: RefPoint) -> TransformMatrix {
    TransformMatrix::center_to(zeta, state.phi)
}

/// Moves a Gaussian density from reference point `from` to `to`.
///
/// The transform is frozen at the heading of `mean`, so the covariance is
/// propagated linearly without heading Jacobian terms.
pub fn convert_ref_point(
    mean: &StateVector,
    cov: &StateCovariance,
    from: RefPoint,
    to: RefPoint,
) -> Result<(StateVector, StateCovariance)> {
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mean"));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    if from == to {
        return Ok((*mean, *cov));
    }
    let h = TransformMatrix::between(from, to, mean[idx::PHI]);
    let mut out_mean = h.apply(mean);
    out_mean[idx::PHI] = normalize_angle(out_mean[idx::PHI]);
    let out_cov = h.matrix() * cov * h.matrix().transpose();
    Ok((out_mean, symmetrize(&out_cov)))
}

pub(crate) fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}
