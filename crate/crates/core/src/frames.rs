//! Coordinate frames, rotation helpers and Earth geodesy.
//!
//! Conventions used throughout the crate:
//!
//! * The navigation frame is local-level **ENU** (east, north, up).
//! * The body frame has `x_b` along image columns, `y_b` along image rows and
//!   `z_b` along the optical axis. A [`Dcm`] labelled `C_b^n` maps body
//!   coordinates into ENU.
//! * Euler angles use the **Z-X-Y** order: `C_b^n = Rz(-yaw) · Rx(pitch) · Ry(roll)`.
//!   Yaw is a heading measured clockwise from north, so with `yaw = 90°` the body
//!   `y` axis points east.
//! * Attitude errors follow `C_true = (I + φ×) · C_computed`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Distance from ±90° pitch at which the Z-X-Y decomposition is refused.
pub const GIMBAL_LOCK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FrameError {
    #[error("gimbal lock: pitch {pitch} rad is within {GIMBAL_LOCK_MARGIN} of ±π/2")]
    GimbalLock { pitch: f64 },
}

/// Cross-product (skew-symmetric) matrix: `skew(a) * v == a.cross(&v)`.
pub fn skew(a: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues rotation matrix for rotation vector `theta`.
pub fn rotation_from_vector(theta: &Vec3) -> Mat3 {
    let angle_sq = theta.norm_squared();
    let k = skew(theta);
    let (a, b) = if angle_sq < 1e-10 {
        // series terms keep full precision for the tiny per-step angles
        (1.0 - angle_sq / 6.0, 0.5 - angle_sq / 24.0)
    } else {
        let angle = angle_sq.sqrt();
        (angle.sin() / angle, (1.0 - angle.cos()) / angle_sq)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Direction cosine matrix. Construction through [`Dcm::new`] orthonormalizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcm(Mat3);

impl Dcm {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Projects `m` onto the nearest rotation.
    pub fn new(m: Mat3) -> Self {
        Self(orthonormalize(m))
    }

    /// Wraps a matrix that the caller guarantees is already a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn from_euler(e: &EulerAngles) -> Self {
        dcm_from_euler(e)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn compose(&self, rhs: &Dcm) -> Dcm {
        Self(self.0 * rhs.0)
    }

    /// `‖C·Cᵀ − I‖` (Frobenius).
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).norm()
    }

    pub fn to_euler(&self) -> Result<EulerAngles, FrameError> {
        euler_from_dcm(self)
    }
}

impl Default for Dcm {
    fn default() -> Self {
        Self::identity()
    }
}

/// Nearest orthonormal matrix via Newton iteration on the polar factor.
pub fn orthonormalize(mut m: Mat3) -> Mat3 {
    for _ in 0..8 {
        let err = m * m.transpose() - Mat3::identity();
        if err.amax() < 1e-15 {
            break;
        }
        m -= 0.5 * err * m;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(yaw.to_radians(), pitch.to_radians(), roll.to_radians())
    }
}

/// Small attitude error angles `φ = (φ_E, φ_N, φ_U)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MisalignmentAngles {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl MisalignmentAngles {
    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn as_vec(&self) -> Vec3 {
        Vec3::new(self.east, self.north, self.up)
    }
}

impl From<Vec3> for MisalignmentAngles {
    fn from(v: Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// First-order attitude error matrix `I + (φ×)`.
///
/// The printed third row of this matrix in some references reads
/// `(-φ_E, φ_E, 1)`; the skew-symmetric definition requires `(-φ_N, φ_E, 1)`,
/// which is what is built here. The result is deliberately left
/// un-orthonormalized.
pub fn misalignment_dcm(phi: &MisalignmentAngles) -> Mat3 {
    Mat3::identity() + skew(&phi.as_vec())
}

fn wrap_half_open(angle: f64) -> f64 {
    // (-π, π]
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub fn dcm_from_euler(e: &EulerAngles) -> Dcm {
    let (sy, cy) = e.yaw.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sr, cr) = e.roll.sin_cos();
    Dcm(Matrix3::new(
        cy * cr + sy * sp * sr,
        sy * cp,
        cy * sr - sy * sp * cr,
        -sy * cr + cy * sp * sr,
        cy * cp,
        -sy * sr - cy * sp * cr,
        -cp * sr,
        sp,
        cp * cr,
    ))
}

pub fn euler_from_dcm(c: &Dcm) -> Result<EulerAngles, FrameError> {
    let m = c.matrix();
    let pitch = m[(2, 1)].clamp(-1.0, 1.0).asin();
    if FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_MARGIN {
        return Err(FrameError::GimbalLock { pitch });
    }
    let roll = (-m[(2, 0)]).atan2(m[(2, 2)]);
    let yaw = m[(0, 1)].atan2(m[(1, 1)]);
    Ok(EulerAngles {
        yaw: wrap_half_open(yaw),
        pitch,
        roll: wrap_half_open(roll),
    })
}

/// Geodetic latitude/longitude (radians) and ellipsoidal height (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeodeticPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Self {
        Self {
            latitude,
            longitude,
            height,
        }
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Self {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height)
    }

    /// Same point with longitude wrapped into (−π, π].
    pub fn wrapped(self) -> Self {
        Self {
            longitude: wrap_half_open(self.longitude),
            ..self
        }
    }
}

/// Reference ellipsoid, rotation rate and normal gravity model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthModel {
    pub semi_major_axis: f64,
    pub eccentricity_sq: f64,
    pub rotation_rate: f64,
    /// Normal gravity at the equator, m/s².
    pub gravity_equator: f64,
    /// Somigliana constant `k = (b·γ_p)/(a·γ_e) − 1`.
    pub gravity_k: f64,
}

impl EarthModel {
    pub const WGS84: EarthModel = EarthModel {
        semi_major_axis: 6_378_137.0,
        eccentricity_sq: 6.694_379_990_14e-3,
        rotation_rate: 7.292_115e-5,
        gravity_equator: 9.780_325_335_9,
        gravity_k: 1.931_852_652_41e-3,
    };

    /// `(R_M, R_N)`: meridian and prime-vertical radii of curvature (no height).
    pub fn curvature_radii(&self, latitude: f64) -> (f64, f64) {
        curvature_radii(latitude, self)
    }

    /// Radii with height added, `(R_M + h, R_N + h)`.
    pub fn radii_with_height(&self, pos: &GeodeticPosition) -> (f64, f64) {
        let (rm, rn) = self.curvature_radii(pos.latitude);
        (rm + pos.height, rn + pos.height)
    }

    /// Derivatives `(dR_M/dL, dR_N/dL)`.
    pub fn curvature_radii_derivative(&self, latitude: f64) -> (f64, f64) {
        let (s, c) = latitude.sin_cos();
        let e2 = self.eccentricity_sq;
        let w = 1.0 - e2 * s * s;
        let a = self.semi_major_axis;
        (
            3.0 * a * (1.0 - e2) * e2 * s * c / w.powf(2.5),
            a * e2 * s * c / w.powf(1.5),
        )
    }

    /// Earth rotation expressed in ENU, `ω_ie^n`.
    pub fn earth_rate_enu(&self, latitude: f64) -> Vec3 {
        let (s, c) = latitude.sin_cos();
        Vec3::new(0.0, self.rotation_rate * c, self.rotation_rate * s)
    }

    /// Transport rate `ω_en^n` for ENU velocity `v`.
    pub fn transport_rate(&self, pos: &GeodeticPosition, v: &Vec3) -> Vec3 {
        let (rm, rn) = self.radii_with_height(pos);
        Vec3::new(-v.y / rm, v.x / rn, v.x * pos.latitude.tan() / rn)
    }

    /// Normal gravity magnitude (Somigliana with free-air height correction).
    pub fn gravity(&self, pos: &GeodeticPosition) -> f64 {
        let s2 = pos.latitude.sin().powi(2);
        let h = pos.height;
        self.gravity_equator * (1.0 + self.gravity_k * s2)
            / (1.0 - self.eccentricity_sq * s2).sqrt()
            - (3.0877e-6 - 4.4e-9 * s2) * h
            + 7.2e-14 * h * h
    }

    /// Partial derivatives of [`EarthModel::gravity`], `(∂g/∂L, ∂g/∂h)`.
    pub fn gravity_partials(&self, pos: &GeodeticPosition) -> (f64, f64) {
        let (s, c) = pos.latitude.sin_cos();
        let s2 = s * s;
        let e2 = self.eccentricity_sq;
        let w = 1.0 - e2 * s2;
        let ge = self.gravity_equator;
        let k = self.gravity_k;
        let d_s2 = 2.0 * s * c;
        let dg_dl = ge * (k * d_s2 / w.sqrt() + (1.0 + k * s2) * 0.5 * e2 * d_s2 / w.powf(1.5))
            + 4.4e-9 * d_s2 * pos.height;
        let dg_dh = -(3.0877e-6 - 4.4e-9 * s2) + 1.44e-13 * pos.height;
        (dg_dl, dg_dh)
    }

    /// Gravity vector in ENU, `(0, 0, −g)`.
    pub fn gravity_enu(&self, pos: &GeodeticPosition) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.gravity(pos))
    }
}

impl Default for EarthModel {
    fn default() -> Self {
        Self::WGS84
    }
}

/// `(R_M, R_N)` at `latitude`; callers add height where required.
pub fn curvature_radii(latitude: f64, earth: &EarthModel) -> (f64, f64) {
    let s2 = latitude.sin().powi(2);
    let w = 1.0 - earth.eccentricity_sq * s2;
    let a = earth.semi_major_axis;
    (
        a * (1.0 - earth.eccentricity_sq) / w.powf(1.5),
        a / w.sqrt(),
    )
}
