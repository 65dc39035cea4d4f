//! Scenario engine: truth trajectories, IMU/GNSS/PSNS sensor models, and the
//! closed-loop run that ties them to the filter.
//!
//! Trajectories are defined kinematically (ENU velocity, acceleration and Euler
//! angles as functions of time). Position is integrated with RK4 on a half-step
//! grid, so each IMU interval has exact endpoint and midpoint states, and the
//! truth IMU sample is the Simpson mean of the instantaneous body rate and
//! specific force over its interval.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::frames::{
    dcm_from_euler, euler_from_dcm, rotation_from_vector, vee, Dcm, EarthModel, EulerAngles,
    GeodeticPosition, Vec3,
};
use crate::fusion::{
    ErrorState15, FilterSettings, FusionError, GnssFix, InitialUncertainty, MeasurementNoise,
    Navigator, ProcessNoise, STATE_DIM,
};
use crate::io::{write_atomic, IoError};
use crate::polarimetry::{
    extract_solar_vector, BidirSolarVector, CameraIntrinsics, ExtractConfig, PolarError,
};
use crate::rng::{substream, Stream};
use crate::sins::{mechanize, ImuSample, NavSolution};
use crate::sky::{render_frame, SkyScene};
use crate::sun::{solar_position, EphemerisError, UtcInstant};

const DEG_PER_HOUR: f64 = std::f64::consts::PI / 180.0 / 3600.0;
const MILLI_G: f64 = 9.80665e-3;

/// Direct-path per-axis angular σ (rad) matched to the image path on the default
/// 128×128 camera at 1% intensity noise.
pub const DEFAULT_PSNS_SIGMA: f64 = 4.35e-4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("ephemeris: {0}")]
    Ephemeris(#[from] EphemerisError),
    #[error("filter failure at t = {time:.3} s: {source}")]
    Fusion {
        time: f64,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Stationary,
    /// Straight and level along the initial heading.
    ConstantVelocity {
        speed: f64,
    },
    /// Constant speed and turn rate (rad/s, positive clockwise).
    CoordinatedTurn {
        speed: f64,
        turn_rate: f64,
    },
    /// Catmull-Rom path through local `(east, north)` offsets in meters, visited at
    /// equal time spacing. Heading follows the path.
    WaypointSpline {
        waypoints: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProfile {
    pub motion: Motion,
    pub start: GeodeticPosition,
    pub attitude: EulerAngles,
    pub duration: f64,
}

/// Instantaneous kinematic state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub euler: EulerAngles,
    /// `(ψ̇, θ̇, γ̇)`.
    pub euler_rate: Vec3,
}

impl TrajectoryProfile {
    pub fn stationary(start: GeodeticPosition, attitude: EulerAngles, duration: f64) -> Self {
        Self {
            motion: Motion::Stationary,
            start,
            attitude,
            duration,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(m.to_string()));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if self.attitude.pitch.abs() > 80f64.to_radians() {
            return bad("pitch must be within ±80°");
        }
        match &self.motion {
            Motion::Stationary => {}
            Motion::ConstantVelocity { speed } => {
                if !speed.is_finite() {
                    return bad("speed must be finite");
                }
            }
            Motion::CoordinatedTurn { speed, turn_rate } => {
                if !(speed.is_finite() && turn_rate.is_finite()) {
                    return bad("speed and turn rate must be finite");
                }
            }
            Motion::WaypointSpline { waypoints } => {
                if waypoints.len() < 2 {
                    return bad("waypoint spline needs at least two waypoints");
                }
                if waypoints.windows(2).any(|w| w[0] == w[1]) {
                    return bad("consecutive waypoints must differ");
                }
            }
        }
        Ok(())
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let base = self.attitude;
        let level =
            |heading: f64, speed: f64| Vec3::new(heading.sin() * speed, heading.cos() * speed, 0.0);
        match &self.motion {
            Motion::Stationary => Kinematics {
                velocity: Vec3::zeros(),
                acceleration: Vec3::zeros(),
                euler: base,
                euler_rate: Vec3::zeros(),
            },
            Motion::ConstantVelocity { speed } => Kinematics {
                velocity: level(base.yaw, *speed),
                acceleration: Vec3::zeros(),
                euler: base,
                euler_rate: Vec3::zeros(),
            },
            Motion::CoordinatedTurn { speed, turn_rate } => {
                let yaw = base.yaw + turn_rate * t;
                Kinematics {
                    velocity: level(yaw, *speed),
                    acceleration: Vec3::new(yaw.cos(), -yaw.sin(), 0.0) * (speed * turn_rate),
                    euler: EulerAngles { yaw, ..base },
                    euler_rate: Vec3::new(*turn_rate, 0.0, 0.0),
                }
            }
            Motion::WaypointSpline { waypoints } => {
                let (v, a) = catmull_rom(waypoints, self.duration, t);
                let speed_sq = v.x * v.x + v.y * v.y;
                let yaw = v.x.atan2(v.y);
                let yaw_rate = if speed_sq > 0.0 {
                    (v.y * a.x - v.x * a.y) / speed_sq
                } else {
                    0.0
                };
                Kinematics {
                    velocity: Vec3::new(v.x, v.y, 0.0),
                    acceleration: Vec3::new(a.x, a.y, 0.0),
                    euler: EulerAngles { yaw, ..base },
                    euler_rate: Vec3::new(yaw_rate, 0.0, 0.0),
                }
            }
        }
    }
}

/// Velocity and acceleration of the Catmull-Rom path at time `t`.
fn catmull_rom(
    points: &[[f64; 2]],
    duration: f64,
    t: f64,
) -> (nalgebra::Vector2<f64>, nalgebra::Vector2<f64>) {
    use nalgebra::Vector2;
    let p: Vec<Vector2<f64>> = points.iter().map(|q| Vector2::new(q[0], q[1])).collect();
    let n = p.len();
    let seg_t = duration / (n - 1) as f64;
    let tangent = |i: usize| -> Vector2<f64> {
        if i == 0 {
            p[1] - p[0]
        } else if i == n - 1 {
            p[n - 1] - p[n - 2]
        } else {
            (p[i + 1] - p[i - 1]) * 0.5
        }
    };
    let s = (t / seg_t).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let u = s - i as f64;
    let (p0, p1, m0, m1) = (p[i], p[i + 1], tangent(i), tangent(i + 1));
    let d1 = p0 * (6.0 * u * u - 6.0 * u)
        + m0 * (3.0 * u * u - 4.0 * u + 1.0)
        + p1 * (-6.0 * u * u + 6.0 * u)
        + m1 * (3.0 * u * u - 2.0 * u);
    let d2 = p0 * (12.0 * u - 6.0)
        + m0 * (6.0 * u - 4.0)
        + p1 * (-12.0 * u + 6.0)
        + m1 * (6.0 * u - 2.0);
    (d1 / seg_t, d2 / (seg_t * seg_t))
}

/// Body rate `ω_nb^b` of the Euler sequence `C = Rz(−ψ) Rx(θ) Ry(γ)`.
pub fn body_rate_from_euler(e: &EulerAngles, rate: &Vec3) -> Vec3 {
    let (sp, cp) = e.pitch.sin_cos();
    let (sr, cr) = e.roll.sin_cos();
    // (Rx Ry)ᵀ ẑ and Ryᵀ x̂
    let z_in_body = Vec3::new(-cp * sr, sp, cp * cr);
    let x_in_body = Vec3::new(cr, 0.0, sr);
    -rate.x * z_in_body + rate.y * x_in_body + Vec3::new(0.0, rate.z, 0.0)
}

fn geodetic_rate(p: &GeodeticPosition, v: &Vec3, earth: &EarthModel) -> Vec3 {
    let (rm, rn) = earth.radii_with_height(p);
    Vec3::new(v.y / rm, v.x / (rn * p.latitude.cos()), v.z)
}

fn offset(p: &GeodeticPosition, d: &Vec3) -> GeodeticPosition {
    GeodeticPosition::new(p.latitude + d.x, p.longitude + d.y, p.height + d.z)
}

/// Instantaneous perfect IMU output at `t`.
fn ideal_imu(
    profile: &TrajectoryProfile,
    t: f64,
    p: &GeodeticPosition,
    earth: &EarthModel,
) -> (Vec3, Vec3) {
    let k = profile.kinematics(t);
    let c = dcm_from_euler(&k.euler);
    let w_ie = earth.earth_rate_enu(p.latitude);
    let w_en = earth.transport_rate(p, &k.velocity);
    let ct = c.transpose();
    let gyro = body_rate_from_euler(&k.euler, &k.euler_rate) + ct.rotate(&(w_ie + w_en));
    let f_n = k.acceleration + (2.0 * w_ie + w_en).cross(&k.velocity) - earth.gravity_enu(p);
    (gyro, ct.rotate(&f_n))
}

/// Truth timeline at the IMU rate. `imu[k]` is the mean over `(t_{k−1}, t_k]`;
/// `imu[0]` is the instantaneous value at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub dt: f64,
    pub nav: Vec<NavSolution>,
    pub imu: Vec<ImuSample>,
}

impl Truth {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Index of the sample nearest `t`.
    pub fn index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.nav.len() - 1)
    }
}

pub fn gen_truth(profile: &TrajectoryProfile, dt: f64, earth: &EarthModel) -> Truth {
    let steps = (profile.duration / dt).round() as usize;
    let h = 0.5 * dt;
    let rate =
        |t: f64, p: &GeodeticPosition| geodetic_rate(p, &profile.kinematics(t).velocity, earth);
    let rk4 = |t: f64, p: &GeodeticPosition| -> GeodeticPosition {
        let k1 = rate(t, p);
        let k2 = rate(t + 0.5 * h, &offset(p, &(k1 * 0.5 * h)));
        let k3 = rate(t + 0.5 * h, &offset(p, &(k2 * 0.5 * h)));
        let k4 = rate(t + h, &offset(p, &(k3 * h)));
        offset(p, &((k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0)))
    };
    let state = |t: f64, p: GeodeticPosition| {
        let k = profile.kinematics(t);
        NavSolution {
            time: t,
            position: p,
            velocity: k.velocity,
            attitude: dcm_from_euler(&k.euler),
        }
    };

    let mut nav = Vec::with_capacity(steps + 1);
    let mut imu = Vec::with_capacity(steps + 1);
    let mut p = profile.start;
    let (g0, a0) = ideal_imu(profile, 0.0, &p, earth);
    nav.push(state(0.0, p));
    imu.push(ImuSample {
        time: 0.0,
        gyro: g0,
        accel: a0,
    });
    let (mut g_prev, mut a_prev) = (g0, a0);
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * dt;
        let t1 = k as f64 * dt;
        let p_mid = rk4(t0, &p);
        let p_end = rk4(t0 + h, &p_mid);
        let (g_mid, a_mid) = ideal_imu(profile, t0 + h, &p_mid, earth);
        let (g_end, a_end) = ideal_imu(profile, t1, &p_end, earth);
        imu.push(ImuSample {
            time: t1,
            gyro: (g_prev + 4.0 * g_mid + g_end) / 6.0,
            accel: (a_prev + 4.0 * a_mid + a_end) / 6.0,
        });
        nav.push(state(t1, p_end));
        p = p_end;
        g_prev = g_end;
        a_prev = a_end;
    }
    Truth { dt, nav, imu }
}

/// IMU error model. Bias terms are 1σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSpec {
    pub rate_hz: f64,
    /// Turn-on bias, rad/s.
    pub gyro_bias_repeatability: f64,
    /// In-run bias random walk, rad/s of drift after one hour.
    pub gyro_bias_stability: f64,
    /// Angle random walk, rad/√s.
    pub gyro_noise: f64,
    pub gyro_range: f64,
    /// m/s².
    pub accel_bias_repeatability: f64,
    pub accel_bias_stability: f64,
    /// Velocity random walk, m/s/√s.
    pub accel_noise: f64,
    pub accel_range: f64,
}

impl Default for ImuSpec {
    /// Bounds of 40°/h, 20°/h, 7 mg and 3.5 mg read as 3σ.
    fn default() -> Self {
        Self {
            rate_hz: 200.0,
            gyro_bias_repeatability: 40.0 / 3.0 * DEG_PER_HOUR,
            gyro_bias_stability: 20.0 / 3.0 * DEG_PER_HOUR,
            gyro_noise: 0.2_f64.to_radians() / 60.0,
            gyro_range: 400f64.to_radians(),
            accel_bias_repeatability: 7.0 / 3.0 * MILLI_G,
            accel_bias_stability: 3.5 / 3.0 * MILLI_G,
            accel_noise: 0.05 / 60.0,
            accel_range: 16.0 * 9.80665,
        }
    }
}

impl ImuSpec {
    pub fn ideal() -> Self {
        Self {
            gyro_bias_repeatability: 0.0,
            gyro_bias_stability: 0.0,
            gyro_noise: 0.0,
            accel_bias_repeatability: 0.0,
            accel_bias_stability: 0.0,
            accel_noise: 0.0,
            ..Self::default()
        }
    }

    /// Multiplies every noise σ by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            gyro_bias_repeatability: self.gyro_bias_repeatability * k,
            gyro_bias_stability: self.gyro_bias_stability * k,
            gyro_noise: self.gyro_noise * k,
            accel_bias_repeatability: self.accel_bias_repeatability * k,
            accel_bias_stability: self.accel_bias_stability * k,
            accel_noise: self.accel_noise * k,
            ..*self
        }
    }

    /// Filter process noise matched to this spec.
    pub fn process_noise(&self) -> ProcessNoise {
        ProcessNoise {
            gyro_psd: self.gyro_noise.powi(2),
            accel_psd: self.accel_noise.powi(2),
            gyro_bias_walk: self.gyro_bias_stability.powi(2) / 3600.0,
            accel_bias_walk: self.accel_bias_stability.powi(2) / 3600.0,
        }
    }
}

fn normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Simulated IMU output with the turn-on biases that were drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
}

pub fn simulate_imu(truth: &Truth, spec: &ImuSpec, seed: u64) -> ImuStream {
    let mut turn_on = substream(seed, Stream::Imu, u64::MAX);
    let gyro_bias = normal3(&mut turn_on) * spec.gyro_bias_repeatability;
    let accel_bias = normal3(&mut turn_on) * spec.accel_bias_repeatability;
    let dt = truth.dt;
    let walk = (dt / 3600.0).sqrt();
    let (mut g_walk, mut a_walk) = (Vec3::zeros(), Vec3::zeros());
    let clip = |v: Vec3, r: f64| v.map(|x| x.clamp(-r, r));
    let samples = truth
        .imu
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = substream(seed, Stream::Imu, k as u64);
            g_walk += normal3(&mut rng) * (spec.gyro_bias_stability * walk);
            a_walk += normal3(&mut rng) * (spec.accel_bias_stability * walk);
            let g_white = normal3(&mut rng) * (spec.gyro_noise / dt.sqrt());
            let a_white = normal3(&mut rng) * (spec.accel_noise / dt.sqrt());
            ImuSample {
                time: s.time,
                gyro: clip(s.gyro + gyro_bias + g_walk + g_white, spec.gyro_range),
                accel: clip(s.accel + accel_bias + a_walk + a_white, spec.accel_range),
            }
        })
        .collect();
    ImuStream {
        samples,
        gyro_bias,
        accel_bias,
    }
}

/// GNSS error model, 1σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssSpec {
    pub enabled: bool,
    pub rate_hz: f64,
    pub horizontal_position: f64,
    pub vertical_position: f64,
    pub horizontal_velocity: f64,
    pub vertical_velocity: f64,
}

impl Default for GnssSpec {
    /// 10 m / 15 m position and 0.1 / 0.2 m/s velocity bounds read as 3σ.
    fn default() -> Self {
        Self {
            enabled: true,
            rate_hz: 1.0,
            horizontal_position: 10.0 / 3.0,
            vertical_position: 15.0 / 3.0,
            horizontal_velocity: 0.1 / 3.0,
            vertical_velocity: 0.2 / 3.0,
        }
    }
}

impl GnssSpec {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            horizontal_position: self.horizontal_position * k,
            vertical_position: self.vertical_position * k,
            horizontal_velocity: self.horizontal_velocity * k,
            vertical_velocity: self.vertical_velocity * k,
            ..*self
        }
    }
}

fn epoch_count(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize
}

pub fn simulate_gnss(
    truth: &Truth,
    spec: &GnssSpec,
    seed: u64,
    earth: &EarthModel,
) -> Vec<GnssFix> {
    if !spec.enabled {
        return Vec::new();
    }
    let duration = truth.time(truth.nav.len() - 1);
    (1..=epoch_count(duration, spec.rate_hz))
        .map(|j| {
            let t = j as f64 / spec.rate_hz;
            let nav = &truth.nav[truth.index(t)];
            let mut rng = substream(seed, Stream::Gnss, j as u64);
            let dp = normal3(&mut rng).component_mul(&Vec3::new(
                spec.horizontal_position,
                spec.horizontal_position,
                spec.vertical_position,
            ));
            let dv = normal3(&mut rng).component_mul(&Vec3::new(
                spec.horizontal_velocity,
                spec.horizontal_velocity,
                spec.vertical_velocity,
            ));
            let (rm, rn) = earth.radii_with_height(&nav.position);
            let p = &nav.position;
            GnssFix {
                time: t,
                position: GeodeticPosition::new(
                    p.latitude + dp.y / rm,
                    p.longitude + dp.x / (rn * p.latitude.cos()),
                    p.height + dp.z,
                ),
                velocity: nav.velocity + dv,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsnsPath {
    /// Perturb the true body sun vector directly.
    Direct,
    /// Render a sky image and run the polarimetric pipeline.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignPolicy {
    /// Flip each epoch with probability ½.
    Random,
    AlwaysPositive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnsSpec {
    pub enabled: bool,
    pub rate_hz: f64,
    pub path: PsnsPath,
    pub sign_policy: SignPolicy,
    /// Direct path: per-axis rotation σ, rad.
    pub angular_sigma: f64,
    pub camera: CameraIntrinsics,
    pub max_dop: f64,
    pub base_intensity: f64,
    /// Fraction of `base_intensity`.
    pub intensity_noise: f64,
    pub aop_noise: f64,
    pub extract: ExtractConfig,
}

impl Default for PsnsSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            rate_hz: 1.0,
            path: PsnsPath::Direct,
            sign_policy: SignPolicy::Random,
            angular_sigma: DEFAULT_PSNS_SIGMA,
            camera: CameraIntrinsics::default(),
            max_dop: 0.75,
            base_intensity: 30_000.0,
            intensity_noise: 0.01,
            aop_noise: 0.0,
            extract: ExtractConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DropReason {
    BelowHorizon,
    Polarimetry(PolarError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnsEpoch {
    pub time: f64,
    /// Ephemeris sun vector at the true position.
    pub sun_enu: Vec3,
    pub measurement: Result<BidirSolarVector, DropReason>,
}

pub fn simulate_psns(
    truth: &Truth,
    spec: &PsnsSpec,
    start: &UtcInstant,
    seed: u64,
) -> Result<Vec<PsnsEpoch>, SimError> {
    if !spec.enabled {
        return Ok(Vec::new());
    }
    let duration = truth.time(truth.nav.len() - 1);
    let epochs: Vec<usize> = (1..=epoch_count(duration, spec.rate_hz)).collect();
    epochs
        .par_iter()
        .map(|&j| {
            let t = j as f64 / spec.rate_hz;
            let nav = &truth.nav[truth.index(t)];
            let sun = solar_position(&start.offset_seconds(t)?, &nav.position).vector;
            Ok(PsnsEpoch {
                time: t,
                sun_enu: sun,
                measurement: psns_measurement(nav, &sun, spec, seed, j as u64),
            })
        })
        .collect()
}

fn psns_measurement(
    nav: &NavSolution,
    sun: &Vec3,
    spec: &PsnsSpec,
    seed: u64,
    epoch: u64,
) -> Result<BidirSolarVector, DropReason> {
    if sun.z < 0.0 {
        return Err(DropReason::BelowHorizon);
    }
    let truth_body = nav.attitude.transpose().rotate(sun);
    let s = match spec.path {
        PsnsPath::Direct => {
            let mut rng = substream(seed, Stream::Psns, epoch);
            let tilt = normal3(&mut rng) * spec.angular_sigma;
            BidirSolarVector::from_vector(rotation_from_vector(&tilt) * truth_body)
        }
        PsnsPath::Image => {
            let mut scene = SkyScene::new(*sun, nav.attitude, spec.camera);
            scene.max_dop = spec.max_dop;
            scene.base_intensity = spec.base_intensity;
            scene.intensity_noise = spec.intensity_noise;
            scene.aop_noise = spec.aop_noise;
            let frame_seed: u64 = substream(seed, Stream::Psns, epoch).random();
            let frame = render_frame(&scene, frame_seed);
            extract_solar_vector(&frame, &spec.camera, &spec.extract)
                .map_err(DropReason::Polarimetry)?
                .solar
        }
    };
    let flip = match spec.sign_policy {
        SignPolicy::AlwaysPositive => false,
        SignPolicy::Random => substream(seed, Stream::PsnsSign, epoch).random::<bool>(),
    };
    Ok(if flip { s.negated() } else { s })
}

/// Everything needed to run one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub profile: TrajectoryProfile,
    pub start_time: UtcInstant,
    pub imu: ImuSpec,
    pub gnss: GnssSpec,
    pub psns: PsnsSpec,
    pub filter_rate_hz: f64,
    pub joseph: bool,
    pub sign_margin: f64,
    pub process_noise: ProcessNoise,
    pub measurement_noise: MeasurementNoise,
    /// Filter prior.
    pub initial_uncertainty: InitialUncertainty,
    /// Distribution of the actual initial navigation errors.
    pub initial_error: InitialUncertainty,
    pub earth: EarthModel,
}

/// Measurement noise matched to the sensor specs.
pub fn matched_measurement_noise(gnss: &GnssSpec, psns: &PsnsSpec) -> MeasurementNoise {
    MeasurementNoise {
        velocity: [
            gnss.horizontal_velocity,
            gnss.horizontal_velocity,
            gnss.vertical_velocity,
        ],
        position: [
            gnss.horizontal_position,
            gnss.horizontal_position,
            gnss.vertical_position,
        ],
        solar: psns.angular_sigma,
    }
}

pub fn default_initial_uncertainty(imu: &ImuSpec) -> InitialUncertainty {
    InitialUncertainty {
        attitude: [0.5f64.to_radians(), 0.5f64.to_radians(), 5f64.to_radians()],
        velocity: [0.1; 3],
        position: [5.0; 3],
        gyro_bias: imu.gyro_bias_repeatability,
        accel_bias: imu.accel_bias_repeatability,
    }
}

impl Scenario {
    /// Default sensor suite and filter tuning around `profile`.
    pub fn new(profile: TrajectoryProfile, start_time: UtcInstant) -> Self {
        let imu = ImuSpec::default();
        let gnss = GnssSpec::default();
        let psns = PsnsSpec::default();
        let initial = default_initial_uncertainty(&imu);
        Self {
            profile,
            start_time,
            imu,
            gnss,
            psns,
            filter_rate_hz: 10.0,
            joseph: false,
            sign_margin: 0.1,
            process_noise: imu.process_noise(),
            measurement_noise: matched_measurement_noise(&gnss, &psns),
            initial_uncertainty: initial,
            initial_error: initial,
            earth: EarthModel::WGS84,
        }
    }

    /// Stationary 300 s scenario used by the defaults and the test suites.
    pub fn default_stationary() -> Self {
        let profile = TrajectoryProfile::stationary(
            GeodeticPosition::from_degrees(32.0, 118.8, 20.0),
            EulerAngles::from_degrees(30.0, 0.0, 0.0),
            300.0,
        );
        Self::new(profile, default_start_time())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.profile.validate()?;
        let bad = |m: String| Err(SimError::Invalid(m));
        let ratio = |a: f64, b: f64| {
            let r = a / b;
            (r - r.round()).abs() < 1e-9 && r.round() >= 1.0
        };
        for (name, rate) in [
            ("imu.rate_hz", self.imu.rate_hz),
            ("filter.rate_hz", self.filter_rate_hz),
            ("gnss.rate_hz", self.gnss.rate_hz),
            ("psns.rate_hz", self.psns.rate_hz),
        ] {
            if !(rate.is_finite() && rate > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !ratio(self.imu.rate_hz, self.filter_rate_hz) {
            return bad("imu.rate_hz must be an integer multiple of filter.rate_hz".into());
        }
        if self.gnss.enabled && !ratio(self.filter_rate_hz, self.gnss.rate_hz) {
            return bad("filter.rate_hz must be an integer multiple of gnss.rate_hz".into());
        }
        if self.psns.enabled && !ratio(self.filter_rate_hz, self.psns.rate_hz) {
            return bad("filter.rate_hz must be an integer multiple of psns.rate_hz".into());
        }
        if 1.0 / self.imu.rate_hz > 0.1 {
            return bad("imu.rate_hz must be at least 10 Hz".into());
        }
        let sigmas = [
            self.imu.gyro_bias_repeatability,
            self.imu.gyro_bias_stability,
            self.imu.gyro_noise,
            self.imu.accel_bias_repeatability,
            self.imu.accel_bias_stability,
            self.imu.accel_noise,
            self.gnss.horizontal_position,
            self.gnss.vertical_position,
            self.gnss.horizontal_velocity,
            self.gnss.vertical_velocity,
            self.psns.angular_sigma,
            self.psns.intensity_noise,
            self.psns.aop_noise,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise parameters must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.sign_margin) {
            return bad("filter.sign_margin must be in [0, 1)".into());
        }
        self.psns
            .camera
            .validate()
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn settings(&self) -> FilterSettings {
        FilterSettings {
            noise: self.process_noise,
            measurement: self.measurement_noise,
            joseph: self.joseph,
            sign_margin: self.sign_margin,
            gnss_period: 1.0 / self.gnss.rate_hz,
        }
    }
}

pub fn default_start_time() -> UtcInstant {
    UtcInstant::new(2024, 4, 15, 1, 30, 0.0).expect("valid default epoch")
}

/// Navigation error of `est` against `truth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavError {
    /// East, north, up in meters.
    pub position: Vec3,
    pub velocity: Vec3,
    /// `φ` with `C_true = exp(φ×) C_est`.
    pub attitude: Vec3,
    /// Wrapped yaw difference, rad.
    pub yaw: f64,
}

impl NavError {
    pub fn horizontal(&self) -> f64 {
        self.position.x.hypot(self.position.y)
    }
}

pub fn nav_error(est: &NavSolution, truth: &NavSolution, earth: &EarthModel) -> NavError {
    let (rm, rn) = earth.radii_with_height(&truth.position);
    let d_lon = (est.position.longitude - truth.position.longitude + std::f64::consts::PI)
        .rem_euclid(std::f64::consts::TAU)
        - std::f64::consts::PI;
    let position = Vec3::new(
        d_lon * rn * truth.position.latitude.cos(),
        (est.position.latitude - truth.position.latitude) * rm,
        est.position.height - truth.position.height,
    );
    let rel = truth.attitude.matrix() * est.attitude.matrix().transpose();
    let yaw = match (
        euler_from_dcm(&est.attitude),
        euler_from_dcm(&truth.attitude),
    ) {
        (Ok(a), Ok(b)) => wrap_pi(a.yaw - b.yaw),
        _ => -vee(&rel).z,
    };
    NavError {
        position,
        velocity: est.velocity - truth.velocity,
        attitude: log_rotation(&rel),
        yaw,
    }
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

fn log_rotation(r: &crate::frames::Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let axis = vee(&((r - r.transpose()) * 0.5));
    let s = angle.sin();
    if s.abs() < 1e-12 {
        axis
    } else {
        axis * (angle / s)
    }
}

/// One filter epoch of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub time: f64,
    pub truth: NavSolution,
    pub sins: NavSolution,
    pub fused: NavSolution,
    /// Estimate at this epoch before feedback (zero when nothing was applied).
    pub estimate: ErrorState15,
    pub p_diagonal: [f64; STATE_DIM],
    /// Smallest eigenvalue of `P` over its trace.
    pub p_min_eig_ratio: f64,
    pub p_asymmetry: f64,
    /// Velocity, position, solar innovations.
    pub innovation: [Option<Vector3<f64>>; 3],
    pub psns_sign: Option<i8>,
    pub psns_rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    /// IMU compensation accumulated by the filter.
    pub gyro_compensation: Vec3,
    pub accel_compensation: Vec3,
    pub psns_dropped: usize,
    pub earth: EarthModel,
}

impl RunRecord {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("runs have at least one epoch")
    }

    pub fn fused_error(&self, i: usize) -> NavError {
        let e = &self.epochs[i];
        nav_error(&e.fused, &e.truth, &self.earth)
    }

    pub fn sins_error(&self, i: usize) -> NavError {
        let e = &self.epochs[i];
        nav_error(&e.sins, &e.truth, &self.earth)
    }

    pub fn terminal_fused(&self) -> NavError {
        self.fused_error(self.epochs.len() - 1)
    }

    pub fn terminal_sins(&self) -> NavError {
        self.sins_error(self.epochs.len() - 1)
    }
}

fn perturbed_start(
    truth: &NavSolution,
    dist: &InitialUncertainty,
    seed: u64,
    earth: &EarthModel,
) -> NavSolution {
    let mut rng = substream(seed, Stream::InitialError, 0);
    let phi = normal3(&mut rng).component_mul(&Vec3::from(dist.attitude));
    let dv = normal3(&mut rng).component_mul(&Vec3::from(dist.velocity));
    let dp = normal3(&mut rng).component_mul(&Vec3::from(dist.position));
    let (rm, rn) = earth.radii_with_height(&truth.position);
    let p = &truth.position;
    NavSolution {
        time: truth.time,
        position: GeodeticPosition::new(
            p.latitude + dp.y / rm,
            p.longitude + dp.x / (rn * p.latitude.cos()),
            p.height + dp.z,
        ),
        velocity: truth.velocity + dv,
        attitude: Dcm::from_matrix_unchecked(rotation_from_vector(&-phi) * truth.attitude.matrix()),
    }
}

/// Runs the scenario end to end. Pure in `(scenario, seed)`.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<RunRecord, SimError> {
    sc.validate()?;
    let earth = sc.earth;
    let dt = 1.0 / sc.imu.rate_hz;
    let truth = gen_truth(&sc.profile, dt, &earth);
    let imu = simulate_imu(&truth, &sc.imu, seed);
    let gnss = simulate_gnss(&truth, &sc.gnss, seed, &earth);
    let psns = simulate_psns(&truth, &sc.psns, &sc.start_time, seed)?;

    let start = perturbed_start(&truth.nav[0], &sc.initial_error, seed, &earth);
    let p0 = sc.initial_uncertainty.covariance(&start.position, &earth);
    let mut nav = Navigator::new(start, p0, sc.settings(), earth);
    let mut sins = start;

    let per_filter = (sc.imu.rate_hz / sc.filter_rate_hz).round() as usize;
    let filter_dt = per_filter as f64 * dt;
    let mut epochs = Vec::with_capacity(truth.nav.len() / per_filter + 1);
    let record = |k: usize,
                  nav: &Navigator,
                  sins: &NavSolution,
                  report: Option<crate::fusion::EpochReport>| {
        let eig = nav.kf.min_eigenvalue_ratio();
        let report = report.unwrap_or_default();
        EpochRecord {
            time: truth.time(k),
            truth: truth.nav[k],
            sins: *sins,
            fused: nav.nav,
            estimate: report.estimate,
            p_diagonal: std::array::from_fn(|i| nav.kf.p[(i, i)]),
            p_min_eig_ratio: eig,
            p_asymmetry: nav.kf.asymmetry(),
            innovation: report.innovation,
            psns_sign: report.psns_sign,
            psns_rejected: report.psns_rejected.is_some(),
        }
    };
    epochs.push(record(0, &nav, &sins, None));

    let (mut gi, mut pi) = (0usize, 0usize);
    let mut dropped = 0usize;
    for k in 1..truth.nav.len() {
        let sample = &imu.samples[k];
        nav.propagate(sample, dt);
        sins = mechanize(&sins, sample, dt, &earth);
        if k % per_filter != 0 {
            continue;
        }
        let t = truth.time(k);
        nav.predict(filter_dt);
        let near = |x: f64| (x - t).abs() < 0.5 * dt;
        let fix = match gnss.get(gi) {
            Some(f) if near(f.time) => {
                gi += 1;
                Some(*f)
            }
            _ => None,
        };
        let sun = match psns.get(pi) {
            Some(p) if near(p.time) => {
                pi += 1;
                match &p.measurement {
                    Ok(s) => {
                        let reference =
                            solar_position(&sc.start_time.offset_seconds(t)?, &nav.nav.position)
                                .vector;
                        Some((reference, *s))
                    }
                    Err(_) => {
                        dropped += 1;
                        None
                    }
                }
            }
            _ => None,
        };
        let report = nav
            .update(fix.as_ref(), sun.as_ref().map(|(r, s)| (r, s)))
            .map_err(|source| SimError::Fusion { time: t, source })?;
        epochs.push(record(k, &nav, &sins, Some(report)));
    }

    Ok(RunRecord {
        seed,
        epochs,
        gyro_bias: imu.gyro_bias,
        accel_bias: imu.accel_bias,
        gyro_compensation: nav.compensation.gyro,
        accel_compensation: nav.compensation.accel,
        psns_dropped: dropped,
        earth,
    })
}

const STATE_NAMES: [&str; STATE_DIM] = [
    "phiE", "phiN", "phiU", "dvE", "dvN", "dvU", "dL", "dlon", "dh", "epsX", "epsY", "epsZ",
    "nabX", "nabY", "nabZ",
];
const RESIDUAL_NAMES: [&str; 9] = ["vE", "vN", "vU", "pE", "pN", "pU", "sE", "sN", "sU"];

/// CSV column names, in order.
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["time".to_string()];
    for src in ["truth", "sins", "fused"] {
        for c in [
            "lat_deg",
            "lon_deg",
            "h_m",
            "vE",
            "vN",
            "vU",
            "yaw_deg",
            "pitch_deg",
            "roll_deg",
        ] {
            h.push(format!("{src}_{c}"));
        }
    }
    h.extend(STATE_NAMES.iter().map(|s| format!("x_{s}")));
    h.extend(STATE_NAMES.iter().map(|s| format!("P_{s}")));
    h.extend(RESIDUAL_NAMES.iter().map(|s| format!("res_{s}")));
    h.push("psns_sign".into());
    h
}

fn nav_fields(n: &NavSolution, out: &mut Vec<String>) {
    let e = euler_from_dcm(&n.attitude).unwrap_or(EulerAngles::new(f64::NAN, f64::NAN, f64::NAN));
    let vals = [
        n.position.latitude.to_degrees(),
        n.position.longitude.to_degrees(),
        n.position.height,
        n.velocity.x,
        n.velocity.y,
        n.velocity.z,
        e.yaw.to_degrees(),
        e.pitch.to_degrees(),
        e.roll.to_degrees(),
    ];
    out.extend(vals.iter().map(|v| v.to_string()));
}

fn epoch_row(e: &EpochRecord) -> Vec<String> {
    let mut row = vec![e.time.to_string()];
    nav_fields(&e.truth, &mut row);
    nav_fields(&e.sins, &mut row);
    nav_fields(&e.fused, &mut row);
    row.extend(e.estimate.0.iter().map(|v| v.to_string()));
    row.extend(e.p_diagonal.iter().map(|v| v.to_string()));
    for block in &e.innovation {
        match block {
            Some(v) => row.extend(v.iter().map(|x| x.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
    }
    row.push(e.psns_sign.map_or(0, i64::from).to_string());
    row
}

pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<(), SimError> {
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(csv_header())?;
        for e in &record.epochs {
            wr.write_record(epoch_row(e))?;
        }
        wr.flush().map_err(IoError::from)?;
        Ok(())
    })?;
    Ok(())
}

/// Terminal and RMS error per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub terminal: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// `(channel, sins, fused)`.
    pub channels: Vec<(&'static str, ChannelStats, ChannelStats)>,
}

pub fn summarize(record: &RunRecord) -> RunSummary {
    type Pick = fn(&NavError) -> f64;
    let picks: [(&'static str, Pick); 7] = [
        ("horizontal_position_m", |e| e.horizontal()),
        ("vertical_position_m", |e| e.position.z),
        ("horizontal_velocity_mps", |e| {
            e.velocity.x.hypot(e.velocity.y)
        }),
        ("vertical_velocity_mps", |e| e.velocity.z),
        ("tilt_east_deg", |e| e.attitude.x.to_degrees()),
        ("tilt_north_deg", |e| e.attitude.y.to_degrees()),
        ("yaw_deg", |e| e.yaw.to_degrees()),
    ];
    let n = record.epochs.len();
    let sins: Vec<NavError> = (0..n).map(|i| record.sins_error(i)).collect();
    let fused: Vec<NavError> = (0..n).map(|i| record.fused_error(i)).collect();
    let stats = |errs: &[NavError], f: Pick| ChannelStats {
        terminal: f(&errs[n - 1]),
        rms: (errs.iter().map(|e| f(e).powi(2)).sum::<f64>() / n as f64).sqrt(),
    };
    RunSummary {
        channels: picks
            .iter()
            .map(|(name, f)| (*name, stats(&sins, *f), stats(&fused, *f)))
            .collect(),
    }
}

impl RunSummary {
    pub fn to_text(&self, record: &RunRecord) -> String {
        let mut s = String::new();
        let last = record.last();
        let _ = writeln!(s, "seed: {}", record.seed);
        let _ = writeln!(s, "epochs: {}", record.epochs.len());
        let _ = writeln!(s, "duration_s: {}", last.time);
        let _ = writeln!(s, "psns_dropped: {}", record.psns_dropped);
        let _ = writeln!(
            s,
            "psns_rejected: {}",
            record.epochs.iter().filter(|e| e.psns_rejected).count()
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<26} {:>14} {:>14} {:>14} {:>14}",
            "channel", "sins_terminal", "sins_rms", "fused_terminal", "fused_rms"
        );
        for (name, sins, fused) in &self.channels {
            let _ = writeln!(
                s,
                "{:<26} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
                name, sins.terminal, sins.rms, fused.terminal, fused.rms
            );
        }
        s
    }
}

/// Terminal errors of one batch member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRow {
    pub seed: u64,
    pub fused_horizontal_m: f64,
    pub fused_vertical_m: f64,
    pub fused_yaw_deg: f64,
    pub sins_horizontal_m: f64,
    pub sins_vertical_m: f64,
    pub sins_yaw_deg: f64,
}

impl BatchRow {
    pub const HEADER: [&'static str; 7] = [
        "seed",
        "fused_horizontal_m",
        "fused_vertical_m",
        "fused_yaw_deg",
        "sins_horizontal_m",
        "sins_vertical_m",
        "sins_yaw_deg",
    ];

    fn from_record(r: &RunRecord) -> Self {
        let (f, s) = (r.terminal_fused(), r.terminal_sins());
        Self {
            seed: r.seed,
            fused_horizontal_m: f.horizontal(),
            fused_vertical_m: f.position.z,
            fused_yaw_deg: f.yaw.to_degrees(),
            sins_horizontal_m: s.horizontal(),
            sins_vertical_m: s.position.z,
            sins_yaw_deg: s.yaw.to_degrees(),
        }
    }

    fn values(&self) -> [f64; 6] {
        [
            self.fused_horizontal_m,
            self.fused_vertical_m,
            self.fused_yaw_deg,
            self.sins_horizontal_m,
            self.sins_vertical_m,
            self.sins_yaw_deg,
        ]
    }
}

/// Runs seeds `base_seed .. base_seed + n` in parallel; rows come back in seed order.
pub fn run_batch(sc: &Scenario, base_seed: u64, n: usize) -> Result<Vec<BatchRow>, SimError> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| run_scenario(sc, base_seed.wrapping_add(i)).map(|r| BatchRow::from_record(&r)))
        .collect()
}

/// Linear-interpolated percentile of `values` (`q` in [0, 100]).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Per-seed rows, a blank line, then the aggregate block.
pub fn batch_stats_text(rows: &[BatchRow]) -> String {
    let mut s = BatchRow::HEADER.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.seed.to_string());
        for v in r.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s.push('\n');
    let mut head = BatchRow::HEADER;
    head[0] = "statistic";
    s.push_str(&head.join(","));
    s.push('\n');
    let cols: Vec<Vec<f64>> = (0..6)
        .map(|c| rows.iter().map(|r| r.values()[c].abs()).collect())
        .collect();
    for (label, q) in [
        ("median_abs", 50.0),
        ("p05_abs", 5.0),
        ("p25_abs", 25.0),
        ("p75_abs", 75.0),
        ("p95_abs", 95.0),
    ] {
        s.push_str(label);
        for c in &cols {
            let _ = write!(s, ",{}", percentile(c, q));
        }
        s.push('\n');
    }
    s.push_str("std");
    for c in 0..6 {
        let v: Vec<f64> = rows.iter().map(|r| r.values()[c]).collect();
        let _ = write!(s, ",{}", std_dev(&v));
    }
    s.push('\n');
    s
}

/// Sample standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
