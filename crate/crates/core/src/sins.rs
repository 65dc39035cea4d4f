//! Strapdown inertial mechanization in the local-level ENU frame.
//!
//! Each [`ImuSample`] carries the mean body rate and specific force over the
//! interval ending at its timestamp. The update rotates the attitude with the
//! body increment and the navigation-frame rate `ω_in^n = ω_ie^n + ω_en^n`,
//! integrates velocity with the mid-interval attitude plus Coriolis and normal
//! gravity, and integrates position trapezoidally.

use crate::frames::{
    orthonormalize, rotation_from_vector, skew, Dcm, EarthModel, GeodeticPosition, Mat3, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub time: f64,
    /// Body angular rate, rad/s.
    pub gyro: Vec3,
    /// Body specific force, m/s².
    pub accel: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavSolution {
    pub time: f64,
    pub position: GeodeticPosition,
    /// ENU velocity, m/s.
    pub velocity: Vec3,
    /// `C_b^n`.
    pub attitude: Dcm,
}

impl NavSolution {
    pub fn at_rest(time: f64, position: GeodeticPosition, attitude: Dcm) -> Self {
        Self {
            time,
            position,
            velocity: Vec3::zeros(),
            attitude,
        }
    }
}

/// Continuous-time rates of the navigation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavDerivative {
    /// `(L̇, λ̇, ḣ)`.
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Mat3,
}

/// `ω_in^n` for the given state.
pub fn nav_frame_rate(nav: &NavSolution, earth: &EarthModel) -> Vec3 {
    earth.earth_rate_enu(nav.position.latitude) + earth.transport_rate(&nav.position, &nav.velocity)
}

/// Right-hand side of the nonlinear mechanization equations.
pub fn nav_derivative(
    nav: &NavSolution,
    gyro: &Vec3,
    accel: &Vec3,
    earth: &EarthModel,
) -> NavDerivative {
    let p = &nav.position;
    let v = &nav.velocity;
    let c = nav.attitude.matrix();
    let w_ie = earth.earth_rate_enu(p.latitude);
    let w_en = earth.transport_rate(p, v);
    let (rm, rn) = earth.radii_with_height(p);
    let f_n = c * accel;
    NavDerivative {
        position: Vec3::new(v.y / rm, v.x / (rn * p.latitude.cos()), v.z),
        velocity: f_n - (2.0 * w_ie + w_en).cross(v) + earth.gravity_enu(p),
        attitude: c * skew(gyro) - skew(&(w_ie + w_en)) * c,
    }
}

/// One strapdown step of length `dt` using `imu` (rates averaged over the step).
pub fn mechanize(prev: &NavSolution, imu: &ImuSample, dt: f64, earth: &EarthModel) -> NavSolution {
    debug_assert!(dt > 0.0 && dt <= 0.1, "dt {dt} outside (0, 0.1]");
    let p = prev.position;
    let v = prev.velocity;
    let c = *prev.attitude.matrix();
    let w_ie = earth.earth_rate_enu(p.latitude);
    let w_en = earth.transport_rate(&p, &v);
    let w_in = w_ie + w_en;

    let body_step = imu.gyro * dt;
    let nav_step = w_in * dt;
    let c_mid =
        rotation_from_vector(&(-0.5 * nav_step)) * c * rotation_from_vector(&(0.5 * body_step));
    let c_new = rotation_from_vector(&(-nav_step)) * c * rotation_from_vector(&body_step);

    let f_n = c_mid * imu.accel;
    let accel_n = f_n - (2.0 * w_ie + w_en).cross(&v) + earth.gravity_enu(&p);
    let v_new = v + accel_n * dt;

    let v_avg = 0.5 * (v + v_new);
    let (rm, rn) = earth.radii_with_height(&p);
    let lat = p.latitude + v_avg.y / rm * dt;
    let mid_lat = 0.5 * (p.latitude + lat);
    let lon = p.longitude + v_avg.x / (rn * mid_lat.cos()) * dt;
    let height = p.height + v_avg.z * dt;

    NavSolution {
        time: imu.time,
        position: GeodeticPosition::new(lat, lon, height),
        velocity: v_new,
        attitude: Dcm::from_matrix_unchecked(orthonormalize(c_new)),
    }
}

/// Specific force resolved in ENU.
pub fn specific_force_enu(nav: &NavSolution, accel: &Vec3) -> Vec3 {
    nav.attitude.rotate(accel)
}
