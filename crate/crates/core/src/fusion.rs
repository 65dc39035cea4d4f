//! 15-state error-state Kalman filter fusing SINS with GNSS position/velocity and
//! the bi-directional sun vector.
//!
//! State ordering: `[φ_E φ_N φ_U | δv_E δv_N δv_U | δL δλ δh | ε_x ε_y ε_z | ∇_x ∇_y ∇_z]`.
//!
//! Sign conventions (all errors are "computed minus true" unless noted):
//!
//! * `C_true = (I + φ×) · C_computed`.
//! * `∇` is the accelerometer bias, `f_measured = f_true + ∇`.
//! * `ε` is the gyro drift state entering the attitude error as `φ̇ = … + C_b^n ε`,
//!   i.e. `ω_measured = ω_true − ε`. With this choice the bias blocks of `F` and `G`
//!   are `+C_b^n` in both the attitude and velocity rows.
//!
//! The covariance update uses `P = (I − K H) P⁻` (or the Joseph form), and the
//! solar residual is `S^n − C_b^n (±S^b)` with the sign that gives the smaller norm.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{
    orthonormalize, skew, Dcm, EarthModel, GeodeticPosition, MisalignmentAngles, Vec3,
};
use crate::polarimetry::{canonicalize_sign, BidirSolarVector};
use crate::sins::{mechanize, ImuSample, NavSolution};

pub const STATE_DIM: usize = 15;
pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type NoiseInput = SMatrix<f64, STATE_DIM, 6>;
pub type RowBlock = SMatrix<f64, 3, STATE_DIM>;

pub const ATT: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const GYRO: usize = 9;
pub const ACCEL: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("measurement epoch {measurement} too far from filter epoch {filter}")]
    StaleMeasurement { filter: f64, measurement: f64 },
    #[error("solar sign ambiguous: residual norms {plus:.4} vs {minus:.4}")]
    AmbiguousSign { plus: f64, minus: f64 },
    #[error("no measurement blocks available")]
    EmptyMeasurement,
    #[error("innovation covariance singular (condition {condition:.3e})")]
    SingularInnovation { condition: f64 },
}

/// Error state `X`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState15(pub StateVector);

impl ErrorState15 {
    pub fn zero() -> Self {
        Self(StateVector::zeros())
    }

    fn block(&self, start: usize) -> Vec3 {
        self.0.fixed_rows::<3>(start).into_owned()
    }

    fn set_block(&mut self, start: usize, v: &Vec3) {
        self.0.fixed_rows_mut::<3>(start).copy_from(v);
    }

    pub fn attitude(&self) -> Vec3 {
        self.block(ATT)
    }
    pub fn velocity(&self) -> Vec3 {
        self.block(VEL)
    }
    /// `(δL, δλ, δh)`.
    pub fn position(&self) -> Vec3 {
        self.block(POS)
    }
    pub fn gyro_drift(&self) -> Vec3 {
        self.block(GYRO)
    }
    pub fn accel_bias(&self) -> Vec3 {
        self.block(ACCEL)
    }
    pub fn set_attitude(&mut self, v: &Vec3) {
        self.set_block(ATT, v)
    }
    pub fn set_velocity(&mut self, v: &Vec3) {
        self.set_block(VEL, v)
    }
    pub fn set_position(&mut self, v: &Vec3) {
        self.set_block(POS, v)
    }
    pub fn set_gyro_drift(&mut self, v: &Vec3) {
        self.set_block(GYRO, v)
    }
    pub fn set_accel_bias(&mut self, v: &Vec3) {
        self.set_block(ACCEL, v)
    }
}

/// Continuous-time model `Ẋ = F X + G W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    pub f: StateMatrix,
    pub g: NoiseInput,
}

/// White-noise power spectral densities driving `W = [w_gyro; w_accel]`, plus
/// optional bias random-walk intensities added directly on the bias states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProcessNoise {
    /// Gyro angle random walk PSD, rad²/s.
    pub gyro_psd: f64,
    /// Accelerometer velocity random walk PSD, m²/s³.
    pub accel_psd: f64,
    /// Gyro bias random walk, rad²/s³.
    #[serde(default)]
    pub gyro_bias_walk: f64,
    /// Accelerometer bias random walk, m²/s⁵.
    #[serde(default)]
    pub accel_bias_walk: f64,
}

impl ProcessNoise {
    pub fn matrix(&self) -> SMatrix<f64, 6, 6> {
        let mut q = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            q[(i, i)] = self.gyro_psd;
            q[(i + 3, i + 3)] = self.accel_psd;
        }
        q
    }
}

/// Builds `F` and `G` at the current navigation solution. `f_n` is the specific
/// force in ENU.
pub fn build_system(nav: &NavSolution, f_n: &Vec3, earth: &EarthModel) -> SystemMatrices {
    let p = &nav.position;
    let v = &nav.velocity;
    let c = *nav.attitude.matrix();
    let (s, co) = p.latitude.sin_cos();
    let t = p.latitude.tan();
    let (rm, rn) = earth.radii_with_height(p);
    let (drm, drn) = earth.curvature_radii_derivative(p.latitude);
    let omega = earth.rotation_rate;
    let (dg_dl, dg_dh) = earth.gravity_partials(p);

    let w_ie = earth.earth_rate_enu(p.latitude);
    let w_en = earth.transport_rate(p, v);
    let w_in = w_ie + w_en;

    // partials of ω_en and ω_ie
    let den_dv = Matrix3::new(0.0, -1.0 / rm, 0.0, 1.0 / rn, 0.0, 0.0, t / rn, 0.0, 0.0);
    let den_dl = Vec3::new(
        v.y * drm / (rm * rm),
        -v.x * drn / (rn * rn),
        v.x / (co * co * rn) - v.x * t * drn / (rn * rn),
    );
    let den_dh = Vec3::new(v.y / (rm * rm), -v.x / (rn * rn), -v.x * t / (rn * rn));
    let die_dl = Vec3::new(0.0, -omega * s, omega * co);

    let mut f = StateMatrix::zeros();
    // attitude rows
    f.fixed_view_mut::<3, 3>(ATT, ATT)
        .copy_from(&(-skew(&w_in)));
    f.fixed_view_mut::<3, 3>(ATT, VEL).copy_from(&den_dv);
    f.fixed_view_mut::<3, 1>(ATT, POS)
        .copy_from(&(die_dl + den_dl));
    f.fixed_view_mut::<3, 1>(ATT, POS + 2).copy_from(&den_dh);
    // velocity rows
    let vx = skew(v);
    f.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&skew(f_n));
    f.fixed_view_mut::<3, 3>(VEL, VEL)
        .copy_from(&(-skew(&(2.0 * w_ie + w_en)) + vx * den_dv));
    let mut dl = vx * (2.0 * die_dl + den_dl);
    dl.z -= dg_dl;
    let mut dh = vx * den_dh;
    dh.z -= dg_dh;
    f.fixed_view_mut::<3, 1>(VEL, POS).copy_from(&dl);
    f.fixed_view_mut::<3, 1>(VEL, POS + 2).copy_from(&dh);
    // position rows
    f[(POS, VEL + 1)] = 1.0 / rm;
    f[(POS, POS)] = -v.y * drm / (rm * rm);
    f[(POS, POS + 2)] = -v.y / (rm * rm);
    f[(POS + 1, VEL)] = 1.0 / (rn * co);
    f[(POS + 1, POS)] = v.x * s / (rn * co * co) - v.x * drn / (rn * rn * co);
    f[(POS + 1, POS + 2)] = -v.x / (rn * rn * co);
    f[(POS + 2, VEL + 2)] = 1.0;
    // F_S; F_M stays zero
    f.fixed_view_mut::<3, 3>(ATT, GYRO).copy_from(&c);
    f.fixed_view_mut::<3, 3>(VEL, ACCEL).copy_from(&c);

    let mut g = NoiseInput::zeros();
    g.fixed_view_mut::<3, 3>(ATT, 0).copy_from(&c);
    g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&c);
    SystemMatrices { f, g }
}

/// Discrete model: `Φ`, noise-mapping `Γ` (identity; `Q_d` is already in state
/// space) and `Q_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteModel {
    pub phi: StateMatrix,
    pub gamma: StateMatrix,
    pub qd: StateMatrix,
}

pub fn discretize(sys: &SystemMatrices, noise: &ProcessNoise, dt: f64) -> DiscreteModel {
    let fdt = sys.f * dt;
    let phi = StateMatrix::identity() + fdt + fdt * fdt * 0.5;
    let gqg = sys.g * noise.matrix() * sys.g.transpose();
    let mut qd = (phi * gqg * phi.transpose() + gqg) * (0.5 * dt);
    for i in 0..3 {
        qd[(GYRO + i, GYRO + i)] += noise.gyro_bias_walk * dt;
        qd[(ACCEL + i, ACCEL + i)] += noise.accel_bias_walk * dt;
    }
    DiscreteModel {
        phi,
        gamma: StateMatrix::identity(),
        qd: symmetrize(&qd),
    }
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// GNSS position/velocity fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub time: f64,
    pub position: GeodeticPosition,
    pub velocity: Vec3,
}

fn check_epoch(sins: &NavSolution, t: f64, period: f64) -> Result<(), FusionError> {
    if (sins.time - t).abs() > 0.5 * period {
        return Err(FusionError::StaleMeasurement {
            filter: sins.time,
            measurement: t,
        });
    }
    Ok(())
}

/// `Z_p` in meters and `H_p = [0 diag(R_M+h, (R_N+h) cos L, 1) 0]`.
pub fn position_measurement(
    sins: &NavSolution,
    fix: &GnssFix,
    earth: &EarthModel,
    gnss_period: f64,
) -> Result<(Vector3<f64>, RowBlock), FusionError> {
    check_epoch(sins, fix.time, gnss_period)?;
    let (rm, rn) = earth.radii_with_height(&sins.position);
    let cos_l = sins.position.latitude.cos();
    let z = Vector3::new(
        rm * (sins.position.latitude - fix.position.latitude),
        rn * cos_l * (sins.position.longitude - fix.position.longitude),
        sins.position.height - fix.position.height,
    );
    let mut h = RowBlock::zeros();
    h[(0, POS)] = rm;
    h[(1, POS + 1)] = rn * cos_l;
    h[(2, POS + 2)] = 1.0;
    Ok((z, h))
}

/// `Z_v = V_sins − V_gnss`, `H_v = [0 I 0]`.
pub fn velocity_measurement(
    sins: &NavSolution,
    fix: &GnssFix,
    gnss_period: f64,
) -> Result<(Vector3<f64>, RowBlock), FusionError> {
    check_epoch(sins, fix.time, gnss_period)?;
    let mut h = RowBlock::zeros();
    h.fixed_view_mut::<3, 3>(0, VEL).fill_with_identity();
    Ok((sins.velocity - fix.velocity, h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarMeasurement {
    pub z: Vector3<f64>,
    pub h: RowBlock,
    /// +1 if the input vector was used as is, −1 if it was flipped.
    pub sign: i8,
}

/// Sun-vector residual and Jacobian, resolving the ± ambiguity by the smaller
/// residual norm. The input sign never affects `z` or `h`.
pub fn solar_measurement(
    sun_enu: &Vec3,
    sun_body: &BidirSolarVector,
    attitude: &Dcm,
    sign_margin: f64,
) -> Result<SolarMeasurement, FusionError> {
    let canonical = canonicalize_sign(&sun_body.vector);
    let input_sign: i8 = if canonical == sun_body.vector { 1 } else { -1 };
    let a = attitude.rotate(&canonical);
    let plus = sun_enu - a;
    let minus = sun_enu + a;
    let (np, nm) = (plus.norm(), minus.norm());
    if (np - nm).abs() < sign_margin * np.max(nm) {
        return Err(FusionError::AmbiguousSign {
            plus: np,
            minus: nm,
        });
    }
    let (z, selected, chosen) = if np < nm {
        (plus, a, 1)
    } else {
        (minus, -a, -1)
    };
    let mut h = RowBlock::zeros();
    h.fixed_view_mut::<3, 3>(0, ATT)
        .copy_from(&(-skew(&selected)));
    Ok(SolarMeasurement {
        z,
        h,
        sign: chosen * input_sign,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Velocity,
    Position,
    Solar,
}

/// 1σ measurement noise per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    /// E, N, U in m/s.
    pub velocity: [f64; 3],
    /// E, N, U in m.
    pub position: [f64; 3],
    /// Per unit-vector component.
    pub solar: f64,
}

impl MeasurementNoise {
    fn variances(&self, kind: BlockKind) -> [f64; 3] {
        match kind {
            BlockKind::Velocity => self.velocity.map(|s| s * s),
            BlockKind::Position => self.position.map(|s| s * s),
            BlockKind::Solar => [self.solar * self.solar; 3],
        }
    }
}

/// Stacked `Z`, `H`, `R` in the fixed (velocity, position, solar) order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBundle {
    pub z: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub blocks: Vec<BlockKind>,
}

pub fn assemble_measurement(
    velocity: Option<(Vector3<f64>, RowBlock)>,
    position: Option<(Vector3<f64>, RowBlock)>,
    solar: Option<(Vector3<f64>, RowBlock)>,
    noise: &MeasurementNoise,
) -> Result<MeasurementBundle, FusionError> {
    let parts: Vec<_> = [
        (BlockKind::Velocity, velocity),
        (BlockKind::Position, position),
        (BlockKind::Solar, solar),
    ]
    .into_iter()
    .filter_map(|(k, b)| b.map(|b| (k, b)))
    .collect();
    if parts.is_empty() {
        return Err(FusionError::EmptyMeasurement);
    }
    let m = 3 * parts.len();
    let mut z = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, STATE_DIM);
    let mut r = DMatrix::zeros(m, m);
    for (i, (kind, (zb, hb))) in parts.iter().enumerate() {
        z.rows_mut(3 * i, 3).copy_from(zb);
        h.view_mut((3 * i, 0), (3, STATE_DIM)).copy_from(hb);
        for (j, var) in noise.variances(*kind).into_iter().enumerate() {
            r[(3 * i + j, 3 * i + j)] = var;
        }
    }
    Ok(MeasurementBundle {
        z,
        h,
        r,
        blocks: parts.into_iter().map(|(k, _)| k).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfState {
    pub x: ErrorState15,
    pub p: StateMatrix,
}

impl KfState {
    pub fn new(p: StateMatrix) -> Self {
        Self {
            x: ErrorState15::zero(),
            p,
        }
    }

    /// Smallest eigenvalue of `P` relative to its trace.
    pub fn min_eigenvalue_ratio(&self) -> f64 {
        let eig = self.p.symmetric_eigen();
        eig.eigenvalues.min() / self.p.trace()
    }

    pub fn asymmetry(&self) -> f64 {
        (self.p - self.p.transpose()).amax()
    }
}

pub fn kf_predict(state: &KfState, model: &DiscreteModel) -> KfState {
    let p = model.phi * state.p * model.phi.transpose()
        + model.gamma * model.qd * model.gamma.transpose();
    KfState {
        x: ErrorState15(model.phi * state.x.0),
        p: symmetrize(&p),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub state: KfState,
    /// `Z − H x̂⁻`.
    pub innovation: DVector<f64>,
    pub gain: DMatrix<f64>,
}

pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Passes of the iterated measurement update.
pub const MAX_UPDATE_ITERATIONS: usize = 5;
/// Stop iterating once the navigation-error estimate moves less than this.
pub const UPDATE_TOLERANCE: f64 = 1e-10;

pub fn kf_update(
    state: &KfState,
    m: &MeasurementBundle,
    joseph: bool,
) -> Result<UpdateOutcome, FusionError> {
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, state.p.as_slice());
    let x = DVector::from_column_slice(state.x.0.as_slice());
    let ph_t = &p * m.h.transpose();
    let s = &m.h * &ph_t + &m.r;
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition.is_nan() || condition >= MAX_INNOVATION_CONDITION {
        return Err(FusionError::SingularInnovation { condition });
    }
    let k = s
        .lu()
        .solve(&ph_t.transpose())
        .ok_or(FusionError::SingularInnovation { condition })?
        .transpose();
    let innovation = &m.z - &m.h * &x;
    let x_new = &x + &k * &innovation;
    let i_kh = DMatrix::identity(STATE_DIM, STATE_DIM) - &k * &m.h;
    let p_new = if joseph {
        &i_kh * &p * i_kh.transpose() + &k * &m.r * k.transpose()
    } else {
        &i_kh * &p
    };
    let p_new = StateMatrix::from_column_slice(p_new.as_slice());
    Ok(UpdateOutcome {
        state: KfState {
            x: ErrorState15(StateVector::from_column_slice(x_new.as_slice())),
            p: symmetrize(&p_new),
        },
        innovation,
        gain: k,
    })
}

/// Removes the estimated navigation errors from `nav`. Returns the corrected
/// solution and the remaining state: navigation errors zeroed, sensor-bias
/// estimates passed through for IMU compensation.
pub fn correct_nav(nav: &NavSolution, x: &ErrorState15) -> (NavSolution, ErrorState15) {
    let phi = MisalignmentAngles::from(x.attitude());
    let c = crate::frames::misalignment_dcm(&phi) * nav.attitude.matrix();
    let dpos = x.position();
    let corrected = NavSolution {
        time: nav.time,
        position: GeodeticPosition::new(
            nav.position.latitude - dpos.x,
            nav.position.longitude - dpos.y,
            nav.position.height - dpos.z,
        ),
        velocity: nav.velocity - x.velocity(),
        attitude: Dcm::from_matrix_unchecked(orthonormalize(c)),
    };
    let mut rest = ErrorState15::zero();
    rest.set_gyro_drift(&x.gyro_drift());
    rest.set_accel_bias(&x.accel_bias());
    (corrected, rest)
}

/// Accumulated sensor corrections applied to raw IMU samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuCompensation {
    /// Added to raw gyro output (`ω_true ≈ ω_raw + ε̂`).
    pub gyro: Vec3,
    /// Subtracted from raw accelerometer output.
    pub accel: Vec3,
}

impl ImuCompensation {
    pub fn apply(&self, raw: &ImuSample) -> ImuSample {
        ImuSample {
            time: raw.time,
            gyro: raw.gyro + self.gyro,
            accel: raw.accel - self.accel,
        }
    }

    /// Moves the bias estimates of `x` into the compensation and zeroes them.
    pub fn absorb(&mut self, x: &mut ErrorState15) {
        self.gyro += x.gyro_drift();
        self.accel += x.accel_bias();
        x.set_gyro_drift(&Vec3::zeros());
        x.set_accel_bias(&Vec3::zeros());
    }
}

/// Initial 1σ uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialUncertainty {
    /// φ_E, φ_N, φ_U in rad.
    pub attitude: [f64; 3],
    pub velocity: [f64; 3],
    /// E, N, U in meters.
    pub position: [f64; 3],
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl InitialUncertainty {
    pub fn covariance(&self, pos: &GeodeticPosition, earth: &EarthModel) -> StateMatrix {
        let (rm, rn) = earth.radii_with_height(pos);
        let mut d = StateVector::zeros();
        for i in 0..3 {
            d[ATT + i] = self.attitude[i].powi(2);
            d[VEL + i] = self.velocity[i].powi(2);
            d[GYRO + i] = self.gyro_bias.powi(2);
            d[ACCEL + i] = self.accel_bias.powi(2);
        }
        d[POS] = (self.position[1] / rm).powi(2);
        d[POS + 1] = (self.position[0] / (rn * pos.latitude.cos())).powi(2);
        d[POS + 2] = self.position[2].powi(2);
        StateMatrix::from_diagonal(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub noise: ProcessNoise,
    pub measurement: MeasurementNoise,
    pub joseph: bool,
    /// Relative residual-norm margin below which a solar sign is ambiguous.
    pub sign_margin: f64,
    pub gnss_period: f64,
}

/// Per-epoch filter diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochReport {
    /// Innovations in (velocity, position, solar) slots; `None` where absent.
    pub innovation: [Option<Vector3<f64>>; 3],
    /// Estimate after the update, before feedback.
    pub estimate: ErrorState15,
    pub psns_sign: Option<i8>,
    pub psns_rejected: Option<FusionError>,
}

/// Closed-loop SINS + error-state filter.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub nav: NavSolution,
    pub kf: KfState,
    pub compensation: ImuCompensation,
    pub settings: FilterSettings,
    pub earth: EarthModel,
    force_sum: Vec3,
    force_count: usize,
}

impl Navigator {
    pub fn new(
        nav: NavSolution,
        p0: StateMatrix,
        settings: FilterSettings,
        earth: EarthModel,
    ) -> Self {
        Self {
            nav,
            kf: KfState::new(p0),
            compensation: ImuCompensation::default(),
            settings,
            earth,
            force_sum: Vec3::zeros(),
            force_count: 0,
        }
    }

    /// Compensates and mechanizes one raw IMU sample.
    pub fn propagate(&mut self, raw: &ImuSample, dt: f64) {
        let imu = self.compensation.apply(raw);
        self.force_sum += self.nav.attitude.rotate(&imu.accel);
        self.force_count += 1;
        self.nav = mechanize(&self.nav, &imu, dt, &self.earth);
    }

    /// Covariance/state prediction over `dt` with the mean specific force since
    /// the previous prediction.
    pub fn predict(&mut self, dt: f64) {
        let f_n = if self.force_count > 0 {
            self.force_sum / self.force_count as f64
        } else {
            Vec3::new(0.0, 0.0, self.earth.gravity(&self.nav.position))
        };
        self.force_sum = Vec3::zeros();
        self.force_count = 0;
        let sys = build_system(&self.nav, &f_n, &self.earth);
        let model = discretize(&sys, &self.settings.noise, dt);
        self.kf = kf_predict(&self.kf, &model);
    }

    /// Residuals and Jacobians of the available measurements, linearized at `nav`.
    fn measure(
        &self,
        nav: &NavSolution,
        gnss: Option<&GnssFix>,
        sun: Option<(&Vec3, &BidirSolarVector)>,
        report: &mut EpochReport,
    ) -> Result<Option<MeasurementBundle>, FusionError> {
        let period = self.settings.gnss_period;
        let (vel, pos) = match gnss {
            Some(fix) => (
                Some(velocity_measurement(nav, fix, period)?),
                Some(position_measurement(nav, fix, &self.earth, period)?),
            ),
            None => (None, None),
        };
        let solar = match sun {
            Some((s_n, s_b)) => {
                match solar_measurement(s_n, s_b, &nav.attitude, self.settings.sign_margin) {
                    Ok(m) => {
                        report.psns_sign = Some(m.sign);
                        Some((m.z, m.h))
                    }
                    Err(e @ FusionError::AmbiguousSign { .. }) => {
                        report.psns_rejected = Some(e);
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            None => None,
        };
        match assemble_measurement(vel, pos, solar, &self.settings.measurement) {
            Ok(b) => Ok(Some(b)),
            Err(FusionError::EmptyMeasurement) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Applies whatever measurements are present, then feeds the estimate back.
    ///
    /// The update is iterated: each pass re-linearizes every block at the
    /// solution corrected by the current estimate, so large initial attitude
    /// errors do not leave second-order residue in weakly observable states.
    pub fn update(
        &mut self,
        gnss: Option<&GnssFix>,
        sun: Option<(&Vec3, &BidirSolarVector)>,
    ) -> Result<EpochReport, FusionError> {
        let mut report = EpochReport::default();
        let Some(bundle) = self.measure(&self.nav, gnss, sun, &mut report)? else {
            return Ok(report);
        };
        let prior = self.kf;
        let mut out = kf_update(&prior, &bundle, self.settings.joseph)?;
        let mut slots: [Option<Vector3<f64>>; 3] = [None; 3];
        for (i, kind) in bundle.blocks.iter().enumerate() {
            let slot = match kind {
                BlockKind::Velocity => 0,
                BlockKind::Position => 1,
                BlockKind::Solar => 2,
            };
            slots[slot] = Some(Vector3::new(
                out.innovation[3 * i],
                out.innovation[3 * i + 1],
                out.innovation[3 * i + 2],
            ));
        }
        report.innovation = slots;

        for _ in 1..MAX_UPDATE_ITERATIONS {
            let x_i = out.state.x;
            let (nav_i, _) = correct_nav(&self.nav, &x_i);
            let mut scratch = EpochReport::default();
            let relinearized = match self.measure(&nav_i, gnss, sun, &mut scratch) {
                Ok(Some(b)) if b.blocks == bundle.blocks => b,
                _ => break,
            };
            let x_dyn = DVector::from_column_slice(x_i.0.as_slice());
            let shifted = MeasurementBundle {
                z: &relinearized.z + &relinearized.h * x_dyn,
                ..relinearized
            };
            let next = kf_update(&prior, &shifted, self.settings.joseph)?;
            let step = (next.state.x.0 - x_i.0).fixed_rows::<9>(ATT).amax();
            out = next;
            if step < UPDATE_TOLERANCE {
                break;
            }
        }

        report.estimate = out.state.x;
        self.kf = out.state;
        self.feedback();
        Ok(report)
    }

    fn feedback(&mut self) {
        let (nav, mut rest) = correct_nav(&self.nav, &self.kf.x);
        self.nav = nav;
        self.compensation.absorb(&mut rest);
        self.kf.x = rest;
    }
}
