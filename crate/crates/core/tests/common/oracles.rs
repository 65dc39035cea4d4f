//! Independent reference computations used by the integration and acceptance tests.

use nalgebra::{DMatrix, DVector, SMatrix};
use polnav_core::frames::{
    rotation_from_vector, vee, Dcm, EarthModel, GeodeticPosition, Mat3, Vec3,
};
use polnav_core::fusion::{StateMatrix, StateVector, ACCEL, ATT, GYRO, POS, VEL};
use polnav_core::sins::{nav_derivative, NavSolution};

/// Perturbation size per state, scaled to each state's natural magnitude.
pub const FD_STEPS: [f64; 15] = [
    1e-6, 1e-6, 1e-6, 1e-3, 1e-3, 1e-3, 1e-5, 1e-5, 1.0, 1e-6, 1e-6, 1e-6, 1e-4, 1e-4, 1e-4,
];

/// Error-state rate of the nonlinear mechanization when the computed solution
/// differs from `truth` by `x`.
pub fn error_rate(
    truth: &NavSolution,
    gyro: &Vec3,
    accel: &Vec3,
    x: &StateVector,
    earth: &EarthModel,
) -> StateVector {
    let phi = Vec3::new(x[ATT], x[ATT + 1], x[ATT + 2]);
    let dv = Vec3::new(x[VEL], x[VEL + 1], x[VEL + 2]);
    let eps = Vec3::new(x[GYRO], x[GYRO + 1], x[GYRO + 2]);
    let nabla = Vec3::new(x[ACCEL], x[ACCEL + 1], x[ACCEL + 2]);
    let computed = NavSolution {
        time: truth.time,
        position: GeodeticPosition::new(
            truth.position.latitude + x[POS],
            truth.position.longitude + x[POS + 1],
            truth.position.height + x[POS + 2],
        ),
        velocity: truth.velocity + dv,
        attitude: Dcm::from_matrix_unchecked(rotation_from_vector(&-phi) * truth.attitude.matrix()),
    };
    let dt = nav_derivative(truth, gyro, accel, earth);
    let dc = nav_derivative(&computed, &(gyro - eps), &(accel + nabla), earth);
    let ct: &Mat3 = truth.attitude.matrix();
    let cc: &Mat3 = computed.attitude.matrix();
    // d/dt (C_t C_cᵀ) = d/dt exp(φ×)
    let m = dt.attitude * cc.transpose() + ct * dc.attitude.transpose();
    let phi_dot = vee(&((m - m.transpose()) * 0.5));
    let mut out = StateVector::zeros();
    out.fixed_rows_mut::<3>(ATT).copy_from(&phi_dot);
    out.fixed_rows_mut::<3>(VEL)
        .copy_from(&(dc.velocity - dt.velocity));
    out.fixed_rows_mut::<3>(POS)
        .copy_from(&(dc.position - dt.position));
    out
}

/// Central-difference Jacobian of [`error_rate`] at zero error.
pub fn fd_jacobian(
    truth: &NavSolution,
    gyro: &Vec3,
    accel: &Vec3,
    earth: &EarthModel,
) -> StateMatrix {
    let mut j = StateMatrix::zeros();
    for (col, h) in FD_STEPS.iter().enumerate() {
        let mut xp = StateVector::zeros();
        let mut xm = StateVector::zeros();
        xp[col] = *h;
        xm[col] = -*h;
        let d = (error_rate(truth, gyro, accel, &xp, earth)
            - error_rate(truth, gyro, accel, &xm, earth))
            / (2.0 * h);
        j.set_column(col, &d);
    }
    j
}

/// Exhaustive minimizer of `Σ w (E·s)²` over a hemisphere grid of `step` radians.
pub fn grid_minimizer(evecs: &[Vec3], weights: &[f64], step: f64) -> Vec3 {
    let mut best = (f64::INFINITY, Vec3::z());
    let n_el = (std::f64::consts::FRAC_PI_2 / step).round() as usize;
    for i in 0..=n_el {
        let el = i as f64 * step;
        let ring = ((std::f64::consts::TAU * el.cos() / step).ceil() as usize).max(1);
        for k in 0..ring {
            let az = k as f64 * std::f64::consts::TAU / ring as f64;
            let s = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let cost: f64 = evecs
                .iter()
                .zip(weights)
                .map(|(e, w)| w * e.dot(&s).powi(2))
                .sum();
            if cost < best.0 {
                best = (cost, s);
            }
        }
    }
    best.1
}

/// Angle between two axes, ignoring sign.
pub fn axis_angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (a.normalize().dot(&b.normalize()).abs().min(1.0))
        .acos()
        .to_degrees()
}

/// Joint MAP estimate of `x_0..x_n` for a linear-Gaussian chain, returning the last state.
///
/// `x_0 ~ N(m0, P0)`, `x_{k+1} = Φ x_k + w_k` with `w_k ~ N(0, Q)`, and
/// `z_k = H x_k + v_k` for `k = 1..n` with `v_k ~ N(0, R)`.
pub fn batch_map<const N: usize, const M: usize>(
    m0: &SMatrix<f64, N, 1>,
    p0: &SMatrix<f64, N, N>,
    phi: &SMatrix<f64, N, N>,
    q: &SMatrix<f64, N, N>,
    h: &SMatrix<f64, M, N>,
    r: &SMatrix<f64, M, M>,
    zs: &[SMatrix<f64, M, 1>],
) -> SMatrix<f64, N, 1> {
    let steps = zs.len();
    let dim = N * (steps + 1);
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let p0i = p0.try_inverse().unwrap();
    let qi = q.try_inverse().unwrap();
    let ri = r.try_inverse().unwrap();
    let add_block = |info: &mut DMatrix<f64>, i: usize, j: usize, b: &SMatrix<f64, N, N>| {
        let mut v = info.view_mut((i * N, j * N), (N, N));
        v += b;
    };
    add_block(&mut info, 0, 0, &p0i);
    rhs.rows_mut(0, N).copy_from(&(p0i * m0));
    for (k, z) in zs.iter().enumerate() {
        // process term: (x_{k+1} − Φ x_k)ᵀ Q⁻¹ (…)
        add_block(&mut info, k, k, &(phi.transpose() * qi * phi));
        add_block(&mut info, k, k + 1, &(-phi.transpose() * qi));
        add_block(&mut info, k + 1, k, &(-qi * phi));
        add_block(&mut info, k + 1, k + 1, &qi);
        let hri = h.transpose() * ri;
        add_block(&mut info, k + 1, k + 1, &(hri * h));
        let mut seg = rhs.rows_mut((k + 1) * N, N);
        seg += hri * z;
    }
    let sol = info.cholesky().unwrap().solve(&rhs);
    SMatrix::<f64, N, 1>::from_iterator(sol.rows(steps * N, N).iter().copied())
}

/// Sun azimuth/elevation (degrees, geometric, no parallax) from the Astronomical
/// Almanac low-precision formulas and the USNO sidereal-time expression.
pub fn almanac_sun_az_el(jd_ut: f64, lat_deg: f64, lon_deg: f64) -> (f64, f64) {
    let n = jd_ut - 2_451_545.0;
    let l = (280.460 + 0.985_647_4 * n).rem_euclid(360.0);
    let g = (357.528 + 0.985_600_3 * n).rem_euclid(360.0).to_radians();
    let lambda = (l + 1.915 * g.sin() + 0.020 * (2.0 * g).sin()).to_radians();
    let eps = (23.439 - 4.0e-7 * n).to_radians();
    let ra = (eps.cos() * lambda.sin()).atan2(lambda.cos());
    let dec = (eps.sin() * lambda.sin()).asin();
    let gmst_h = (18.697_374_558 + 24.065_709_824_419_08 * n).rem_euclid(24.0);
    let lst = (gmst_h * 15.0 + lon_deg).to_radians();
    let ha = lst - ra;
    let lat = lat_deg.to_radians();
    let el = (lat.sin() * dec.sin() + lat.cos() * dec.cos() * ha.cos()).asin();
    let az =
        (-ha.sin() * dec.cos()).atan2(lat.cos() * dec.sin() - lat.sin() * dec.cos() * ha.cos());
    (az.to_degrees().rem_euclid(360.0), el.to_degrees())
}
