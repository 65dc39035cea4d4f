//! Reference solar vector in ENU from UTC time and geodetic position.
//!
//! Solar coordinates follow the low-precision theory of Meeus, *Astronomical
//! Algorithms* ch. 25 (apparent longitude with nutation and aberration, true
//! obliquity), Greenwich apparent sidereal time from ch. 12, and a topocentric
//! parallax correction on elevation. Stated accuracy is about 0.01°.

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{GeodeticPosition, Vec3};

/// Default TT − UT1 in seconds.
pub const DEFAULT_DELTA_T: f64 = 69.0;
pub const MIN_YEAR: i32 = 1950;
pub const MAX_YEAR: i32 = 2150;

const J2000: f64 = 2_451_545.0;
const UNIX_EPOCH_JD: f64 = 2_440_587.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EphemerisError {
    #[error("date {0} outside supported span {MIN_YEAR}..={MAX_YEAR}")]
    OutOfRange(String),
    #[error("invalid calendar date or time: {0}")]
    InvalidDate(String),
}

/// A UTC instant with an optional ΔT override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtcInstant {
    datetime: NaiveDateTime,
    pub delta_t: f64,
}

impl UtcInstant {
    pub fn new(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: f64,
    ) -> Result<Self, EphemerisError> {
        let whole = second.floor();
        let nanos = ((second - whole) * 1e9).round() as u32;
        let dt = NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_nano_opt(hour, minute, whole as u32, nanos.min(999_999_999)))
            .ok_or_else(|| {
                EphemerisError::InvalidDate(format!(
                    "{year:04}-{month:02}-{day:02} {hour:02}:{minute:02}:{second}"
                ))
            })?;
        Self::from_datetime(dt)
    }

    pub fn from_datetime(datetime: NaiveDateTime) -> Result<Self, EphemerisError> {
        use chrono::Datelike;
        let year = datetime.year();
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(EphemerisError::OutOfRange(datetime.to_string()));
        }
        Ok(Self {
            datetime,
            delta_t: DEFAULT_DELTA_T,
        })
    }

    pub fn with_delta_t(mut self, delta_t: f64) -> Self {
        self.delta_t = delta_t;
        self
    }

    /// Shifts the instant by `seconds` (may be fractional).
    pub fn offset_seconds(&self, seconds: f64) -> Result<Self, EphemerisError> {
        let nanos = (seconds * 1e9).round() as i64;
        let dt = self.datetime + chrono::Duration::nanoseconds(nanos);
        Ok(Self::from_datetime(dt)?.with_delta_t(self.delta_t))
    }

    pub fn datetime(&self) -> NaiveDateTime {
        self.datetime
    }

    /// Julian day (UT).
    pub fn julian_day(&self) -> f64 {
        let utc = self.datetime.and_utc();
        let secs = utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9;
        UNIX_EPOCH_JD + secs / 86_400.0
    }
}

/// Apparent sun direction in ENU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarVectorEnu {
    pub vector: Vec3,
    /// Radians clockwise from north.
    pub azimuth: f64,
    /// Radians above the horizon.
    pub elevation: f64,
}

impl SolarVectorEnu {
    pub fn from_az_el(azimuth: f64, elevation: f64) -> Self {
        Self {
            vector: enu_from_az_el(azimuth, elevation),
            azimuth,
            elevation,
        }
    }

    pub fn zenith_deg(&self) -> f64 {
        90.0 - self.elevation.to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EphemerisOptions {
    /// Add the standard (Bennett/Saemundsson) refraction to elevation.
    pub refraction: bool,
}

/// Unit ENU vector for azimuth (clockwise from north) and elevation.
pub fn enu_from_az_el(azimuth: f64, elevation: f64) -> Vec3 {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vec3::new(sa * ce, ca * ce, se)
}

/// Inverse of [`enu_from_az_el`]; azimuth in [0, 2π). At the zenith azimuth is 0.
pub fn az_el_from_enu(v: &Vec3) -> (f64, f64) {
    let u = v.normalize();
    let el = u.z.clamp(-1.0, 1.0).asin();
    let horiz = u.x.hypot(u.y);
    let az = if horiz < 1e-15 {
        0.0
    } else {
        u.x.atan2(u.y).rem_euclid(std::f64::consts::TAU)
    };
    (az, el)
}

pub fn solar_position(t: &UtcInstant, p: &GeodeticPosition) -> SolarVectorEnu {
    solar_position_with(t, p, EphemerisOptions::default())
}

pub fn solar_position_with(
    t: &UtcInstant,
    p: &GeodeticPosition,
    opts: EphemerisOptions,
) -> SolarVectorEnu {
    let jd = t.julian_day();
    let jde = jd + t.delta_t / 86_400.0;
    let eq = apparent_equatorial(jde);

    let tu = (jd - J2000) / 36_525.0;
    let gmst = 280.460_618_37 + 360.985_647_366_29 * (jd - J2000) + 0.000_387_933 * tu * tu
        - tu * tu * tu / 38_710_000.0;
    let gast = gmst + eq.nutation_longitude * eq.obliquity.to_radians().cos();
    let hour_angle = (gast + p.longitude.to_degrees() - eq.right_ascension).to_radians();

    let (sd, cd) = eq.declination.to_radians().sin_cos();
    let (sl, cl) = p.latitude.sin_cos();
    let (sh, ch) = hour_angle.sin_cos();
    let east = -cd * sh;
    let north = sd * cl - cd * sl * ch;
    let up = sd * sl + cd * cl * ch;

    let azimuth = east.atan2(north).rem_euclid(std::f64::consts::TAU);
    let mut elevation = up.clamp(-1.0, 1.0).asin();
    // horizontal parallax, 8.794" at 1 AU
    elevation -= (8.794 / 3600.0_f64).to_radians() / eq.distance_au * elevation.cos();
    if opts.refraction {
        elevation += refraction(elevation);
    }
    SolarVectorEnu::from_az_el(azimuth, elevation)
}

/// Bennett refraction in radians for a geometric elevation, standard atmosphere.
fn refraction(elevation: f64) -> f64 {
    let e = elevation.to_degrees();
    if e < -1.0 {
        return 0.0;
    }
    let arcmin = 1.02 / (e + 10.3 / (e + 5.11)).to_radians().tan();
    (arcmin / 60.0).to_radians()
}

struct Equatorial {
    right_ascension: f64,
    declination: f64,
    obliquity: f64,
    nutation_longitude: f64,
    distance_au: f64,
}

/// Apparent right ascension / declination in degrees at Julian ephemeris day `jde`.
fn apparent_equatorial(jde: f64) -> Equatorial {
    let t = (jde - J2000) / 36_525.0;
    let l0 = 280.466_46 + 36_000.769_83 * t + 0.000_303_2 * t * t;
    let m = 357.529_11 + 35_999.050_29 * t - 0.000_153_7 * t * t;
    let e = 0.016_708_634 - 0.000_042_037 * t - 0.000_000_126_7 * t * t;
    let mr = m.to_radians();
    let center = (1.914_602 - 0.004_817 * t - 0.000_014 * t * t) * mr.sin()
        + (0.019_993 - 0.000_101 * t) * (2.0 * mr).sin()
        + 0.000_289 * (3.0 * mr).sin();
    let true_long = l0 + center;
    let anomaly = (m + center).to_radians();
    let distance_au = 1.000_001_018 * (1.0 - e * e) / (1.0 + e * anomaly.cos());

    let omega = (125.04452 - 1934.136261 * t).to_radians();
    let lmoon = (218.3165 + 481267.8813 * t).to_radians();
    let lsun = (280.4665 + 36000.7698 * t).to_radians();
    let nutation_longitude =
        (-17.20 * omega.sin() - 1.32 * (2.0 * lsun).sin() - 0.23 * (2.0 * lmoon).sin()
            + 0.21 * (2.0 * omega).sin())
            / 3600.0;
    let nutation_obliquity =
        (9.20 * omega.cos() + 0.57 * (2.0 * lsun).cos() + 0.10 * (2.0 * lmoon).cos()
            - 0.09 * (2.0 * omega).cos())
            / 3600.0;

    let eps0 = 23.0 + 26.0 / 60.0 + 21.448 / 3600.0
        - (46.8150 * t + 0.000_59 * t * t - 0.001_813 * t * t * t) / 3600.0;
    let obliquity = eps0 + nutation_obliquity;
    // aberration -20.4898"/R
    let lambda = (true_long + nutation_longitude - 20.4898 / 3600.0 / distance_au).to_radians();
    let eps = obliquity.to_radians();
    let right_ascension = (eps.cos() * lambda.sin()).atan2(lambda.cos()).to_degrees();
    let declination = (eps.sin() * lambda.sin()).asin().to_degrees();
    Equatorial {
        right_ascension,
        declination,
        obliquity,
        nutation_longitude,
        distance_au,
    }
}
