//! TOML run configuration.
//!
//! Angles are degrees and rates are per hour where the sensor datasheets use
//! those units; conversion to SI radians happens in [`RunConfig::to_scenario`].
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{EulerAngles, GeodeticPosition};
use crate::fusion::{InitialUncertainty, MeasurementNoise, ProcessNoise};
use crate::polarimetry::{CameraIntrinsics, ExtractConfig};
use crate::sim::{
    default_initial_uncertainty, matched_measurement_noise, GnssSpec, ImuSpec, Motion, PsnsPath,
    PsnsSpec, Scenario, SignPolicy, TrajectoryProfile,
};
use crate::sun::UtcInstant;

const DEG_PER_HOUR: f64 = std::f64::consts::PI / 180.0 / 3600.0;
const MILLI_G: f64 = 9.80665e-3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    #[default]
    Stationary,
    ConstantVelocity,
    CoordinatedTurn,
    WaypointSpline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub profile: ProfileKind,
    pub duration_s: f64,
    /// `YYYY-MM-DDTHH:MM:SS[.fff]`, UTC.
    pub start_utc: String,
    pub delta_t_s: f64,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub height_m: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub speed_mps: f64,
    pub turn_rate_deg_s: f64,
    /// `[[east_m, north_m], ...]`.
    pub waypoints_m: Vec<[f64; 2]>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            profile: ProfileKind::Stationary,
            duration_s: 300.0,
            start_utc: "2024-04-15T01:30:00".into(),
            delta_t_s: crate::sun::DEFAULT_DELTA_T,
            latitude_deg: 32.0,
            longitude_deg: 118.8,
            height_m: 20.0,
            yaw_deg: 30.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            speed_mps: 10.0,
            turn_rate_deg_s: 3.0,
            waypoints_m: vec![[0.0, 0.0], [500.0, 500.0], [1000.0, 0.0], [1500.0, 500.0]],
        }
    }
}

/// IMU error model, 1σ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSection {
    pub rate_hz: f64,
    pub gyro_bias_repeatability_deg_h: f64,
    pub gyro_bias_stability_deg_h: f64,
    pub gyro_arw_deg_rt_h: f64,
    pub gyro_range_deg_s: f64,
    pub accel_bias_repeatability_mg: f64,
    pub accel_bias_stability_mg: f64,
    pub accel_vrw_mps_rt_h: f64,
    pub accel_range_mps2: f64,
}

impl Default for ImuSection {
    fn default() -> Self {
        let s = ImuSpec::default();
        Self {
            rate_hz: s.rate_hz,
            gyro_bias_repeatability_deg_h: s.gyro_bias_repeatability / DEG_PER_HOUR,
            gyro_bias_stability_deg_h: s.gyro_bias_stability / DEG_PER_HOUR,
            gyro_arw_deg_rt_h: s.gyro_noise.to_degrees() * 60.0,
            gyro_range_deg_s: s.gyro_range.to_degrees(),
            accel_bias_repeatability_mg: s.accel_bias_repeatability / MILLI_G,
            accel_bias_stability_mg: s.accel_bias_stability / MILLI_G,
            accel_vrw_mps_rt_h: s.accel_noise * 60.0,
            accel_range_mps2: s.accel_range,
        }
    }
}

/// GNSS error model, 1σ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnssSection {
    pub enabled: bool,
    pub rate_hz: f64,
    pub horizontal_position_m: f64,
    pub vertical_position_m: f64,
    pub horizontal_velocity_mps: f64,
    pub vertical_velocity_mps: f64,
}

impl Default for GnssSection {
    fn default() -> Self {
        let g = GnssSpec::default();
        Self {
            enabled: g.enabled,
            rate_hz: g.rate_hz,
            horizontal_position_m: g.horizontal_position,
            vertical_position_m: g.vertical_position,
            horizontal_velocity_mps: g.horizontal_velocity,
            vertical_velocity_mps: g.vertical_velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    #[default]
    Direct,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignKind {
    #[default]
    Random,
    AlwaysPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub focal_length_mm: f64,
    /// Defaults to the full sensor extent divided by `width`/`height`.
    pub pixel_size_x_um: Option<f64>,
    pub pixel_size_y_um: Option<f64>,
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = CameraIntrinsics::default();
        Self {
            width: c.width,
            height: c.height,
            focal_length_mm: c.focal_length * 1e3,
            pixel_size_x_um: None,
            pixel_size_y_um: None,
        }
    }
}

impl CameraSection {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let mut c = CameraIntrinsics::binned(self.width.max(1), self.height.max(1));
        c.width = self.width;
        c.height = self.height;
        c.focal_length = self.focal_length_mm * 1e-3;
        if let Some(p) = self.pixel_size_x_um {
            c.pixel_size_x = p * 1e-6;
        }
        if let Some(p) = self.pixel_size_y_um {
            c.pixel_size_y = p * 1e-6;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsnsSection {
    pub enabled: bool,
    pub rate_hz: f64,
    pub path: PathKind,
    pub sign_policy: SignKind,
    /// Direct path, per axis, 1σ.
    pub angular_sigma_deg: f64,
    pub intensity_noise: f64,
    pub aop_noise_deg: f64,
    pub max_dop: f64,
    pub base_intensity: f64,
    pub camera: CameraSection,
    pub extract: ExtractConfig,
}

impl Default for PsnsSection {
    fn default() -> Self {
        let p = PsnsSpec::default();
        Self {
            enabled: p.enabled,
            rate_hz: p.rate_hz,
            path: PathKind::Direct,
            sign_policy: SignKind::Random,
            angular_sigma_deg: p.angular_sigma.to_degrees(),
            intensity_noise: p.intensity_noise,
            aop_noise_deg: p.aop_noise.to_degrees(),
            max_dop: p.max_dop,
            base_intensity: p.base_intensity,
            camera: CameraSection::default(),
            extract: p.extract,
        }
    }
}

/// Filter tuning. Unset noise entries are matched to the sensor sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub rate_hz: f64,
    pub joseph: bool,
    pub sign_margin: f64,
    pub process_noise: Option<ProcessNoise>,
    pub r_velocity_mps: Option<[f64; 3]>,
    pub r_position_m: Option<[f64; 3]>,
    pub r_solar_deg: Option<f64>,
    pub initial_attitude_deg: [f64; 3],
    pub initial_velocity_mps: [f64; 3],
    pub initial_position_m: [f64; 3],
}

impl Default for FilterSection {
    fn default() -> Self {
        let init = default_initial_uncertainty(&ImuSpec::default());
        Self {
            rate_hz: 10.0,
            joseph: false,
            sign_margin: 0.1,
            process_noise: None,
            r_velocity_mps: None,
            r_position_m: None,
            r_solar_deg: None,
            initial_attitude_deg: init.attitude.map(f64::to_degrees),
            initial_velocity_mps: init.velocity,
            initial_position_m: init.position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub run_csv: String,
    pub summary: String,
    pub batch_stats: String,
    pub batch_runs: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            run_csv: "run.csv".into(),
            summary: "summary.txt".into(),
            batch_stats: "batch_stats.txt".into(),
            batch_runs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub imu: ImuSection,
    pub gnss: GnssSection,
    pub psns: PsnsSection,
    pub filter: FilterSection,
    pub output: OutputSection,
}

/// Line (1-based) of `key` inside `[section]`, for error messages.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let name = t.split('=').next().unwrap_or("").trim();
        if current == section && name == key {
            return Some(i + 1);
        }
    }
    None
}

impl RunConfig {
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate_with_source(Some(source))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, source: Option<&str>) -> Result<(), ConfigError> {
        let fail = |section: &str, key: &str, message: &str| {
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let line = source.and_then(|s| locate(s, section, key));
            Err(ConfigError::Invalid {
                key: full,
                line,
                message: message.to_string(),
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;

        let s = &self.scenario;
        if !positive(s.duration_s) {
            return fail("scenario", "duration_s", "must be positive");
        }
        if parse_start(&s.start_utc).is_err() {
            return fail(
                "scenario",
                "start_utc",
                "expected YYYY-MM-DDTHH:MM:SS within 1950..=2150",
            );
        }
        if !(-90.0..=90.0).contains(&s.latitude_deg) || s.latitude_deg.abs() > 89.0 {
            return fail("scenario", "latitude_deg", "must be within ±89°");
        }
        if !s.longitude_deg.is_finite() {
            return fail("scenario", "longitude_deg", "must be finite");
        }
        if s.pitch_deg.abs() > 80.0 {
            return fail("scenario", "pitch_deg", "must be within ±80°");
        }
        if s.profile == ProfileKind::WaypointSpline && s.waypoints_m.len() < 2 {
            return fail("scenario", "waypoints_m", "needs at least two waypoints");
        }

        let i = &self.imu;
        if !positive(i.rate_hz) || i.rate_hz < 10.0 {
            return fail("imu", "rate_hz", "must be at least 10 Hz");
        }
        for (k, v) in [
            (
                "gyro_bias_repeatability_deg_h",
                i.gyro_bias_repeatability_deg_h,
            ),
            ("gyro_bias_stability_deg_h", i.gyro_bias_stability_deg_h),
            ("gyro_arw_deg_rt_h", i.gyro_arw_deg_rt_h),
            ("accel_bias_repeatability_mg", i.accel_bias_repeatability_mg),
            ("accel_bias_stability_mg", i.accel_bias_stability_mg),
            ("accel_vrw_mps_rt_h", i.accel_vrw_mps_rt_h),
        ] {
            if !non_negative(v) {
                return fail("imu", k, "must be finite and non-negative");
            }
        }
        for (k, v) in [
            ("gyro_range_deg_s", i.gyro_range_deg_s),
            ("accel_range_mps2", i.accel_range_mps2),
        ] {
            if !positive(v) {
                return fail("imu", k, "must be positive");
            }
        }

        let g = &self.gnss;
        if !positive(g.rate_hz) {
            return fail("gnss", "rate_hz", "must be positive");
        }
        for (k, v) in [
            ("horizontal_position_m", g.horizontal_position_m),
            ("vertical_position_m", g.vertical_position_m),
            ("horizontal_velocity_mps", g.horizontal_velocity_mps),
            ("vertical_velocity_mps", g.vertical_velocity_mps),
        ] {
            if !non_negative(v) {
                return fail("gnss", k, "must be finite and non-negative");
            }
        }

        let p = &self.psns;
        if !positive(p.rate_hz) {
            return fail("psns", "rate_hz", "must be positive");
        }
        for (k, v) in [
            ("angular_sigma_deg", p.angular_sigma_deg),
            ("intensity_noise", p.intensity_noise),
            ("aop_noise_deg", p.aop_noise_deg),
        ] {
            if !non_negative(v) {
                return fail("psns", k, "must be finite and non-negative");
            }
        }
        if !(p.max_dop > 0.0 && p.max_dop <= 1.0) {
            return fail("psns", "max_dop", "must be in (0, 1]");
        }
        if !positive(p.base_intensity) {
            return fail("psns", "base_intensity", "must be positive");
        }
        if let Err(e) = p.camera.intrinsics().validate() {
            return fail("psns.camera", "width", &e.to_string());
        }

        let f = &self.filter;
        if !positive(f.rate_hz) {
            return fail("filter", "rate_hz", "must be positive");
        }
        if !(0.0..1.0).contains(&f.sign_margin) {
            return fail("filter", "sign_margin", "must be in [0, 1)");
        }
        let rates_ok = |a: f64, b: f64| {
            let r = a / b;
            (r - r.round()).abs() < 1e-9 && r.round() >= 1.0
        };
        if !rates_ok(i.rate_hz, f.rate_hz) {
            return fail(
                "filter",
                "rate_hz",
                "imu.rate_hz must be an integer multiple of it",
            );
        }
        if g.enabled && !rates_ok(f.rate_hz, g.rate_hz) {
            return fail("gnss", "rate_hz", "must divide filter.rate_hz");
        }
        if p.enabled && !rates_ok(f.rate_hz, p.rate_hz) {
            return fail("psns", "rate_hz", "must divide filter.rate_hz");
        }
        if let Some(q) = &f.process_noise {
            if ![q.gyro_psd, q.accel_psd, q.gyro_bias_walk, q.accel_bias_walk]
                .iter()
                .all(|v| non_negative(*v))
            {
                return fail(
                    "filter",
                    "process_noise",
                    "entries must be finite and non-negative",
                );
            }
        }
        for (k, v) in [
            ("r_velocity_mps", f.r_velocity_mps),
            ("r_position_m", f.r_position_m),
        ] {
            if let Some(v) = v {
                if !v.iter().all(|x| positive(*x)) {
                    return fail("filter", k, "entries must be positive");
                }
            }
        }
        if let Some(v) = f.r_solar_deg {
            if !positive(v) {
                return fail("filter", "r_solar_deg", "must be positive");
            }
        }
        for (k, v) in [
            ("initial_attitude_deg", f.initial_attitude_deg),
            ("initial_velocity_mps", f.initial_velocity_mps),
            ("initial_position_m", f.initial_position_m),
        ] {
            if !v.iter().all(|x| non_negative(*x)) {
                return fail("filter", k, "entries must be finite and non-negative");
            }
        }
        if self.output.batch_runs == 0 {
            return fail("output", "batch_runs", "must be at least 1");
        }
        Ok(())
    }

    /// Converts to the internal scenario (SI units, radians).
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let s = &self.scenario;
        let motion = match s.profile {
            ProfileKind::Stationary => Motion::Stationary,
            ProfileKind::ConstantVelocity => Motion::ConstantVelocity { speed: s.speed_mps },
            ProfileKind::CoordinatedTurn => Motion::CoordinatedTurn {
                speed: s.speed_mps,
                turn_rate: s.turn_rate_deg_s.to_radians(),
            },
            ProfileKind::WaypointSpline => Motion::WaypointSpline {
                waypoints: s.waypoints_m.clone(),
            },
        };
        let profile = TrajectoryProfile {
            motion,
            start: GeodeticPosition::from_degrees(s.latitude_deg, s.longitude_deg, s.height_m),
            attitude: EulerAngles::from_degrees(s.yaw_deg, s.pitch_deg, s.roll_deg),
            duration: s.duration_s,
        };
        let start = parse_start(&s.start_utc)
            .map_err(|m| ConfigError::Invalid {
                key: "scenario.start_utc".into(),
                line: None,
                message: m,
            })?
            .with_delta_t(s.delta_t_s);

        let i = &self.imu;
        let imu = ImuSpec {
            rate_hz: i.rate_hz,
            gyro_bias_repeatability: i.gyro_bias_repeatability_deg_h * DEG_PER_HOUR,
            gyro_bias_stability: i.gyro_bias_stability_deg_h * DEG_PER_HOUR,
            gyro_noise: (i.gyro_arw_deg_rt_h / 60.0).to_radians(),
            gyro_range: i.gyro_range_deg_s.to_radians(),
            accel_bias_repeatability: i.accel_bias_repeatability_mg * MILLI_G,
            accel_bias_stability: i.accel_bias_stability_mg * MILLI_G,
            accel_noise: i.accel_vrw_mps_rt_h / 60.0,
            accel_range: i.accel_range_mps2,
        };
        let g = &self.gnss;
        let gnss = GnssSpec {
            enabled: g.enabled,
            rate_hz: g.rate_hz,
            horizontal_position: g.horizontal_position_m,
            vertical_position: g.vertical_position_m,
            horizontal_velocity: g.horizontal_velocity_mps,
            vertical_velocity: g.vertical_velocity_mps,
        };
        let p = &self.psns;
        let psns = PsnsSpec {
            enabled: p.enabled,
            rate_hz: p.rate_hz,
            path: match p.path {
                PathKind::Direct => PsnsPath::Direct,
                PathKind::Image => PsnsPath::Image,
            },
            sign_policy: match p.sign_policy {
                SignKind::Random => SignPolicy::Random,
                SignKind::AlwaysPositive => SignPolicy::AlwaysPositive,
            },
            angular_sigma: p.angular_sigma_deg.to_radians(),
            camera: p.camera.intrinsics(),
            max_dop: p.max_dop,
            base_intensity: p.base_intensity,
            intensity_noise: p.intensity_noise,
            aop_noise: p.aop_noise_deg.to_radians(),
            extract: p.extract,
        };

        let f = &self.filter;
        let matched = matched_measurement_noise(&gnss, &psns);
        let measurement = MeasurementNoise {
            velocity: f.r_velocity_mps.unwrap_or(matched.velocity),
            position: f.r_position_m.unwrap_or(matched.position),
            solar: f.r_solar_deg.map_or(matched.solar, f64::to_radians),
        };
        let initial = InitialUncertainty {
            attitude: f.initial_attitude_deg.map(f64::to_radians),
            velocity: f.initial_velocity_mps,
            position: f.initial_position_m,
            gyro_bias: imu.gyro_bias_repeatability,
            accel_bias: imu.accel_bias_repeatability,
        };

        let mut sc = Scenario::new(profile, start);
        sc.imu = imu;
        sc.gnss = gnss;
        sc.psns = psns;
        sc.filter_rate_hz = f.rate_hz;
        sc.joseph = f.joseph;
        sc.sign_margin = f.sign_margin;
        sc.process_noise = f.process_noise.unwrap_or_else(|| imu.process_noise());
        sc.measurement_noise = measurement;
        sc.initial_uncertainty = initial;
        sc.initial_error = initial;
        sc.validate().map_err(|e| ConfigError::Invalid {
            key: "scenario".into(),
            line: None,
            message: e.to_string(),
        })?;
        Ok(sc)
    }
}

fn parse_start(text: &str) -> Result<UtcInstant, String> {
    let dt =
        NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f").map_err(|e| e.to_string())?;
    UtcInstant::from_datetime(dt).map_err(|e| e.to_string())
}
