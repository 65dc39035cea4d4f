//! Single-scattering Rayleigh sky: per-pixel AOP/DOP and mosaic rendering.
//!
//! At a view ray `v` and sun direction `s` (both body frame) the E-vector is
//! `unit(v × s)` and the degree of polarization is
//! `max_dop · sin²γ / (1 + cos²γ)` with `cos γ = v̂·s`. Each 2×2 superpixel is
//! sampled along its center ray, so all four channels of a block see the same
//! sky point.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{Dcm, Vec3};
use crate::io::{write_text_atomic, IoError};
use crate::polarimetry::{view_direction, CameraIntrinsics, MosaicFrame, MosaicPattern};
use crate::rng::{substream, Stream};

/// Below this `sin γ` the E-vector is undefined.
pub const SUN_ALIGNED_SIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SkyError {
    #[error("view ray within {SUN_ALIGNED_SIN} rad of the sun/anti-sun axis")]
    SunAligned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyScene {
    pub sun_enu: Vec3,
    /// `C_b^n` of the camera.
    pub attitude: Dcm,
    pub camera: CameraIntrinsics,
    pub max_dop: f64,
    /// Sky radiance `S0`, in sensor counts.
    pub base_intensity: f64,
    /// Per-raw-pixel Gaussian noise σ as a fraction of `base_intensity`.
    pub intensity_noise: f64,
    /// Gaussian AOP jitter σ in radians, applied before inversion.
    pub aop_noise: f64,
    pub pattern: MosaicPattern,
}

impl SkyScene {
    pub fn new(sun_enu: Vec3, attitude: Dcm, camera: CameraIntrinsics) -> Self {
        Self {
            sun_enu: sun_enu.normalize(),
            attitude,
            camera,
            max_dop: 0.75,
            base_intensity: 30_000.0,
            intensity_noise: 0.0,
            aop_noise: 0.0,
            pattern: MosaicPattern::default(),
        }
    }

    pub fn sun_body(&self) -> Vec3 {
        self.attitude.transpose().rotate(&self.sun_enu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSample {
    pub x: f64,
    pub y: f64,
    pub view_dir: Vec3,
    /// Unit body-frame E-vector, `unit(V × S)`.
    pub evec: Vec3,
    pub aop: f64,
    pub dop: f64,
    pub i0: f64,
    pub i45: f64,
    pub i90: f64,
    pub i135: f64,
}

fn fold_aop(a: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    if a > FRAC_PI_2 {
        a - PI
    } else if a <= -FRAC_PI_2 {
        a + PI
    } else {
        a
    }
}

/// Channel intensities that invert exactly to `(s0, dop, aop)`.
pub fn intensities_from_polarization(s0: f64, dop: f64, aop: f64) -> [f64; 4] {
    let (c2, s2) = ((2.0 * aop).cos(), (2.0 * aop).sin());
    [
        0.5 * s0 * (1.0 + dop * c2),
        0.5 * s0 * (1.0 + dop * s2),
        0.5 * s0 * (1.0 - dop * c2),
        0.5 * s0 * (1.0 - dop * s2),
    ]
}

/// Noise-free sample at one-based image point `(x, y)`.
pub fn synth_sample(scene: &SkyScene, x: f64, y: f64) -> Result<SyntheticSample, SkyError> {
    let view_dir = view_direction(x, y, &scene.camera);
    let sun = scene.sun_body();
    let v = view_dir.normalize();
    let cross = v.cross(&sun);
    let sin_g = cross.norm();
    if sin_g < SUN_ALIGNED_SIN {
        return Err(SkyError::SunAligned);
    }
    let cos_g = v.dot(&sun);
    let evec = cross / sin_g;
    let aop = fold_aop(evec.x.atan2(evec.y));
    let dop = scene.max_dop * sin_g * sin_g / (1.0 + cos_g * cos_g);
    let [i0, i45, i90, i135] = intensities_from_polarization(scene.base_intensity, dop, aop);
    Ok(SyntheticSample {
        x,
        y,
        view_dir,
        evec,
        aop,
        dop,
        i0,
        i45,
        i90,
        i135,
    })
}

/// Whether the ray through image point `(x, y)` points below the local horizon.
pub fn below_horizon(scene: &SkyScene, x: f64, y: f64) -> bool {
    let v = view_direction(x, y, &scene.camera);
    scene.attitude.rotate(&v).z < 0.0
}

/// Renders the mosaic. Pure in `(scene, seed)`: each raw pixel draws from its own
/// indexed stream. Below-horizon blocks are black; sun-aligned blocks are
/// rendered unpolarized.
pub fn render_frame(scene: &SkyScene, seed: u64) -> MosaicFrame {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let blocks_x = w / 2;
    let sigma = scene.intensity_noise * scene.base_intensity;
    let rows: Vec<Vec<f64>> = (0..h / 2)
        .into_par_iter()
        .map(|by| {
            let mut rows = vec![0.0; 2 * w];
            for bx in 0..blocks_x {
                let (x, y) = ((2 * bx) as f64 + 1.5, (2 * by) as f64 + 1.5);
                let channels = if below_horizon(scene, x, y) {
                    [0.0; 4]
                } else {
                    block_channels(scene, x, y, seed, (by * blocks_x + bx) as u64)
                };
                for dy in 0..2 {
                    for dx in 0..2 {
                        let angle = scene.pattern.angle_at(dx, dy);
                        let idx = match angle {
                            0 => 0,
                            45 => 1,
                            90 => 2,
                            _ => 3,
                        };
                        let mut value = channels[idx];
                        let px = 2 * bx + dx;
                        let py = 2 * by + dy;
                        if sigma > 0.0 && value > 0.0 {
                            let mut rng = substream(seed, Stream::SkyPixel, (py * w + px) as u64);
                            let n: f64 = rng.sample(StandardNormal);
                            value = (value + sigma * n).max(0.0);
                        }
                        rows[dy * w + px] = value;
                    }
                }
            }
            rows
        })
        .collect();
    MosaicFrame::new(w, h, rows.concat(), scene.pattern)
}

fn block_channels(scene: &SkyScene, x: f64, y: f64, seed: u64, block: u64) -> [f64; 4] {
    match synth_sample(scene, x, y) {
        Ok(s) => {
            let mut aop = s.aop;
            if scene.aop_noise > 0.0 {
                let n: f64 = substream(seed, Stream::SkyAop, block).sample(StandardNormal);
                aop += scene.aop_noise * n;
            }
            intensities_from_polarization(scene.base_intensity, s.dop, aop)
        }
        Err(SkyError::SunAligned) => [0.5 * scene.base_intensity; 4],
    }
}

/// Structured truth written next to a synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkyTruth {
    pub seed: u64,
    pub sun_enu: [f64; 3],
    pub sun_body: [f64; 3],
    pub attitude_row_major: [f64; 9],
    pub max_dop: f64,
    pub base_intensity: f64,
    pub intensity_noise: f64,
    pub aop_noise_deg: f64,
    pub pattern: MosaicPattern,
    pub camera: CameraIntrinsics,
}

impl SkyTruth {
    pub fn from_scene(scene: &SkyScene, seed: u64) -> Self {
        let m = scene.attitude.matrix();
        let mut rows = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rows[r * 3 + c] = m[(r, c)];
            }
        }
        Self {
            seed,
            sun_enu: scene.sun_enu.into(),
            sun_body: scene.sun_body().into(),
            attitude_row_major: rows,
            max_dop: scene.max_dop,
            base_intensity: scene.base_intensity,
            intensity_noise: scene.intensity_noise,
            aop_noise_deg: scene.aop_noise.to_degrees(),
            pattern: scene.pattern,
            camera: scene.camera,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sky truth serializes")
    }
}

pub fn write_truth_sidecar(path: &Path, scene: &SkyScene, seed: u64) -> Result<(), IoError> {
    write_text_atomic(path, &SkyTruth::from_scene(scene, seed).to_toml())
}
