//! Division-of-focal-plane polarimetry and bi-directional solar vector recovery.
//!
//! Pipeline: [`demosaic`] → [`stokes`] → [`dop`] / [`aop`] → [`view_direction`] and
//! [`evector_body`] → [`estimate_bidir_solar`].
//!
//! Pixel coordinates: [`SuperPixelIntensities`] carries block centers in 0-indexed,
//! edge-based pixel units (pixel `j` spans `[j, j+1)`). [`view_direction`] takes the
//! one-based pixel-center coordinates in which the image center is `(η+1)/2`;
//! [`SuperPixelIntensities::image_point`] converts between the two.
//!
//! The E-vector z-component is solved from `E·V = 0`, giving
//! `E_z = −(V_x sin AOP + V_y cos AOP)/f`. (Substituting the opposite sign back
//! into the perpendicularity constraint does not vanish.)

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen3::symmetric_eigen3;
use crate::frames::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolarError {
    #[error("mosaic dimensions {width}x{height} must be even and at least 2")]
    BadDimensions { width: usize, height: usize },
    #[error("intensity S0={s0} at or below threshold")]
    ZeroIntensity { s0: f64 },
    #[error("angle of polarization undefined for unpolarized light")]
    UndefinedAop,
    #[error("need at least 2 positively weighted samples, got {0}")]
    InsufficientSamples(usize),
    #[error("degenerate E-vector geometry: relative eigen-gap {relative_gap:.3e}")]
    DegenerateGeometry { relative_gap: f64 },
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Pixel pitch along image columns (x), meters.
    pub pixel_size_x: f64,
    /// Pixel pitch along image rows (y), meters.
    pub pixel_size_y: f64,
    /// Pixel count along x (η_x).
    pub width: usize,
    /// Pixel count along y (η_y).
    pub height: usize,
    pub focal_length: f64,
}

impl CameraIntrinsics {
    /// Full-resolution 2448×2048 polarization sensor with 3.45 µm pixels and a
    /// 4.5 mm lens.
    pub fn full_sensor() -> Self {
        Self {
            pixel_size_x: 3.45e-6,
            pixel_size_y: 3.45e-6,
            width: 2448,
            height: 2048,
            focal_length: 4.5e-3,
        }
    }

    /// The same optics with the sensor binned down to `width`×`height` pixels.
    pub fn binned(width: usize, height: usize) -> Self {
        let full = Self::full_sensor();
        Self {
            pixel_size_x: full.pixel_size_x * full.width as f64 / width as f64,
            pixel_size_y: full.pixel_size_y * full.height as f64 / height as f64,
            width,
            height,
            focal_length: full.focal_length,
        }
    }

    pub fn validate(&self) -> Result<(), PolarError> {
        let positive = [self.pixel_size_x, self.pixel_size_y, self.focal_length]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(PolarError::BadIntrinsics(
                "pixel sizes and focal length must be positive".into(),
            ));
        }
        if self.width < 2
            || self.height < 2
            || !self.width.is_multiple_of(2)
            || !self.height.is_multiple_of(2)
        {
            return Err(PolarError::BadDimensions {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::binned(128, 128)
    }
}

/// Micro-polarizer layout of one 2×2 block, named by the polarizer angle in the
/// top-left, top-right, bottom-left and bottom-right cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MosaicPattern {
    #[default]
    Tl90Tr45Bl135Br0,
    Tl45Tr90Bl0Br135,
    Tl135Tr0Bl90Br45,
    Tl0Tr135Bl45Br90,
}

impl MosaicPattern {
    /// Polarizer angle in degrees for the cell at `(dx, dy)` within a block.
    pub fn angle_at(self, dx: usize, dy: usize) -> u16 {
        let cells = match self {
            Self::Tl90Tr45Bl135Br0 => [90, 45, 135, 0],
            Self::Tl45Tr90Bl0Br135 => [45, 90, 0, 135],
            Self::Tl135Tr0Bl90Br45 => [135, 0, 90, 45],
            Self::Tl0Tr135Bl45Br90 => [0, 135, 45, 90],
        };
        cells[dy * 2 + dx]
    }
}

/// Raw mosaic intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub pattern: MosaicPattern,
}

impl MosaicFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>, pattern: MosaicPattern) -> Self {
        assert_eq!(data.len(), width * height, "mosaic buffer size mismatch");
        Self {
            width,
            height,
            data,
            pattern,
        }
    }

    pub fn uniform(width: usize, height: usize, value: f64, pattern: MosaicPattern) -> Self {
        Self::new(width, height, vec![value; width * height], pattern)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperPixelIntensities {
    pub i0: f64,
    pub i45: f64,
    pub i90: f64,
    pub i135: f64,
    /// Block center, 0-indexed edge-based pixel units.
    pub center_x: f64,
    pub center_y: f64,
}

impl SuperPixelIntensities {
    /// Block center in the one-based pixel-center coordinates used by
    /// [`view_direction`].
    pub fn image_point(&self) -> (f64, f64) {
        (self.center_x + 0.5, self.center_y + 0.5)
    }
}

pub fn demosaic(frame: &MosaicFrame) -> Result<Vec<SuperPixelIntensities>, PolarError> {
    let (w, h) = (frame.width, frame.height);
    if w < 2 || h < 2 || w % 2 != 0 || h % 2 != 0 {
        return Err(PolarError::BadDimensions {
            width: w,
            height: h,
        });
    }
    let mut out = Vec::with_capacity(w * h / 4);
    for by in 0..h / 2 {
        for bx in 0..w / 2 {
            let mut sp = SuperPixelIntensities {
                i0: 0.0,
                i45: 0.0,
                i90: 0.0,
                i135: 0.0,
                center_x: (2 * bx + 1) as f64,
                center_y: (2 * by + 1) as f64,
            };
            for dy in 0..2 {
                for dx in 0..2 {
                    let v = frame.get(2 * bx + dx, 2 * by + dy);
                    match frame.pattern.angle_at(dx, dy) {
                        0 => sp.i0 = v,
                        45 => sp.i45 = v,
                        90 => sp.i90 = v,
                        _ => sp.i135 = v,
                    }
                }
            }
            out.push(sp);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    /// Linear polarization exceeds total intensity (noise artefact; flagged, not rejected).
    pub fn is_overpolarized(&self) -> bool {
        self.s1 * self.s1 + self.s2 * self.s2 > self.s0 * self.s0
    }
}

/// Linear Stokes parameters from the four polarizer channels (`S3 = 0`).
pub fn stokes(i: &SuperPixelIntensities) -> StokesVector {
    StokesVector {
        s0: 0.5 * (i.i0 + i.i45 + i.i90 + i.i135),
        s1: i.i0 - i.i90,
        s2: i.i45 - i.i135,
        s3: 0.0,
    }
}

/// Degree of polarization, clamped to [0, 1], with the unclamped value kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dop {
    pub value: f64,
    pub raw: f64,
}

pub fn dop(s: &StokesVector, zero_intensity: f64) -> Result<Dop, PolarError> {
    if s.s0 <= zero_intensity {
        return Err(PolarError::ZeroIntensity { s0: s.s0 });
    }
    let raw = (s.s1 * s.s1 + s.s2 * s.s2 + s.s3 * s.s3).sqrt() / s.s0;
    Ok(Dop {
        value: raw.clamp(0.0, 1.0),
        raw,
    })
}

/// Angle of polarization in (−π/2, π/2], measured from body `y` toward body `x`.
///
/// `½·atan2(S2, S1)` reproduces all three branches of the piecewise
/// `½·arctan(S2/S1) [± 90°]` form.
pub fn aop(s: &StokesVector) -> Result<f64, PolarError> {
    if s.s1 == 0.0 && s.s2 == 0.0 {
        return Err(PolarError::UndefinedAop);
    }
    let a = 0.5 * s.s2.atan2(s.s1);
    // atan2 returns -π only for S2 = -0.0, S1 < 0
    Ok(if a <= -std::f64::consts::FRAC_PI_2 {
        a + std::f64::consts::PI
    } else {
        a
    })
}

/// Un-normalized body-frame view direction of image point `(x, y)` (one-based,
/// pixel-center coordinates).
pub fn view_direction(x: f64, y: f64, cam: &CameraIntrinsics) -> Vec3 {
    Vec3::new(
        cam.pixel_size_x * (x - (cam.width as f64 + 1.0) / 2.0),
        cam.pixel_size_y * (y - (cam.height as f64 + 1.0) / 2.0),
        cam.focal_length,
    )
}

/// Body-frame E-vector `(sin AOP, cos AOP, E_z)` perpendicular to `view`.
/// Defined up to sign.
pub fn evector_body(aop: f64, view: &Vec3, cam: &CameraIntrinsics) -> Vec3 {
    let (s, c) = aop.sin_cos();
    debug_assert!((view.z - cam.focal_length).abs() <= 1e-12 * cam.focal_length.max(view.z.abs()));
    Vec3::new(s, c, -(view.x * s + view.y * c) / view.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarSample {
    pub view_dir: Vec3,
    pub evec: Vec3,
    pub aop: f64,
    pub dop: f64,
    pub weight: f64,
}

/// How sample weights derive from the degree of polarization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    #[default]
    Dop,
    DopSquared,
    /// Unit weight for every sample above the DOP floor.
    Binary,
}

impl WeightPolicy {
    pub fn weight(self, dop: f64, floor: f64) -> f64 {
        if dop < floor {
            return 0.0;
        }
        match self {
            Self::Dop => dop,
            Self::DopSquared => dop * dop,
            Self::Binary => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub weighting: WeightPolicy,
    /// Samples with DOP below this get zero weight.
    pub dop_floor: f64,
    /// Uniform grid decimation cap on superpixels fed to the solver.
    pub max_samples: usize,
    /// `S0` at or below this is treated as no signal.
    pub zero_intensity: f64,
    /// Minimum `(λ₂ − λ₁)/trace(K)`.
    pub min_relative_gap: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            weighting: WeightPolicy::Dop,
            dop_floor: 0.05,
            max_samples: 4096,
            zero_intensity: 1e-12 * 65535.0,
            min_relative_gap: 1e-6,
        }
    }
}

/// Sun direction in the body frame, defined up to sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidirSolarVector {
    pub vector: Vec3,
    pub min_eigenvalue: f64,
    pub sample_count: usize,
    pub eigen_gap: f64,
    pub trace: f64,
}

impl BidirSolarVector {
    /// Wraps an externally produced unit vector (e.g. a simulated sensor).
    pub fn from_vector(v: Vec3) -> Self {
        Self {
            vector: v.normalize(),
            min_eigenvalue: 0.0,
            sample_count: 0,
            eigen_gap: 1.0,
            trace: 1.0,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            vector: -self.vector,
            ..*self
        }
    }

    /// Angle to the line through `other`, in [0, π/2].
    pub fn axis_angle_to(&self, other: &Vec3) -> f64 {
        axis_angle(&self.vector, other)
    }
}

/// Angle between two lines (sign-blind), in [0, π/2].
pub fn axis_angle(a: &Vec3, b: &Vec3) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    let s = a.cross(b).norm() / (a.norm() * b.norm());
    s.atan2(c)
}

/// Negates `v` when its largest-magnitude component is negative (ties go to z, then y, then x).
pub fn canonicalize_sign(v: &Vec3) -> Vec3 {
    let mut idx = 2;
    for i in [1, 0] {
        if v[i].abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        -v
    } else {
        *v
    }
}

/// Weighted scatter `K = Σ ω E Eᵀ` of the E-vectors.
pub fn scatter_matrix(samples: &[PolarSample]) -> Mat3 {
    samples
        .iter()
        .filter(|s| s.weight > 0.0)
        .fold(Mat3::zeros(), |k, s| {
            k + s.evec * s.evec.transpose() * s.weight
        })
}

/// Minimum-eigenvalue eigenvector of the weighted E-vector scatter.
pub fn estimate_bidir_solar(
    samples: &[PolarSample],
    min_relative_gap: f64,
) -> Result<BidirSolarVector, PolarError> {
    let used = samples.iter().filter(|s| s.weight > 0.0).count();
    if used < 2 {
        return Err(PolarError::InsufficientSamples(used));
    }
    let k = scatter_matrix(samples);
    let trace = k.trace();
    if trace.is_nan() || trace <= 0.0 {
        return Err(PolarError::InsufficientSamples(used));
    }
    let eig = symmetric_eigen3(&k);
    let gap = eig.values[1] - eig.values[0];
    let relative_gap = gap / trace;
    if relative_gap < min_relative_gap {
        return Err(PolarError::DegenerateGeometry { relative_gap });
    }
    Ok(BidirSolarVector {
        vector: canonicalize_sign(&eig.vectors[0]),
        min_eigenvalue: eig.values[0].max(0.0),
        sample_count: used,
        eigen_gap: gap,
        trace,
    })
}

/// Per-superpixel diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperPixelReport {
    pub x: f64,
    pub y: f64,
    pub stokes: StokesVector,
    pub dop: Option<f64>,
    pub aop: Option<f64>,
}

/// Converts superpixels into weighted samples; unusable pixels get weight 0.
pub fn samples_from_superpixels(
    superpixels: &[SuperPixelIntensities],
    cam: &CameraIntrinsics,
    cfg: &ExtractConfig,
) -> Vec<PolarSample> {
    superpixels
        .iter()
        .filter_map(|sp| {
            let s = stokes(sp);
            let d = dop(&s, cfg.zero_intensity).ok()?;
            let a = aop(&s).ok()?;
            let (x, y) = sp.image_point();
            let view_dir = view_direction(x, y, cam);
            Some(PolarSample {
                view_dir,
                evec: evector_body(a, &view_dir, cam),
                aop: a,
                dop: d.value,
                weight: cfg.weighting.weight(d.value, cfg.dop_floor),
            })
        })
        .collect()
}

/// Uniform grid decimation so that at most `max` superpixels remain.
pub fn decimate(
    superpixels: &[SuperPixelIntensities],
    blocks_x: usize,
    max: usize,
) -> Vec<SuperPixelIntensities> {
    if max == 0 || superpixels.len() <= max {
        return superpixels.to_vec();
    }
    let blocks_y = superpixels.len() / blocks_x;
    let mut stride = ((superpixels.len() as f64 / max as f64).sqrt().ceil() as usize).max(1);
    while blocks_x.div_ceil(stride) * blocks_y.div_ceil(stride) > max {
        stride += 1;
    }
    let offset = stride / 2;
    let mut out = Vec::new();
    for by in (offset.min(blocks_y - 1)..blocks_y).step_by(stride) {
        for bx in (offset.min(blocks_x - 1)..blocks_x).step_by(stride) {
            out.push(superpixels[by * blocks_x + bx]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub solar: BidirSolarVector,
    pub superpixels: usize,
    pub samples: Vec<PolarSample>,
}

/// Full image → bi-directional solar vector pipeline.
pub fn extract_solar_vector(
    frame: &MosaicFrame,
    cam: &CameraIntrinsics,
    cfg: &ExtractConfig,
) -> Result<Extraction, PolarError> {
    let all = demosaic(frame)?;
    if frame.width != cam.width || frame.height != cam.height {
        return Err(PolarError::BadIntrinsics(format!(
            "image is {}x{} but camera is {}x{}",
            frame.width, frame.height, cam.width, cam.height
        )));
    }
    cam.validate()?;
    let picked = decimate(&all, frame.width / 2, cfg.max_samples);
    let samples = samples_from_superpixels(&picked, cam, cfg);
    let solar = estimate_bidir_solar(&samples, cfg.min_relative_gap)?;
    Ok(Extraction {
        solar,
        superpixels: all.len(),
        samples,
    })
}

pub fn superpixel_report(sp: &SuperPixelIntensities, cfg: &ExtractConfig) -> SuperPixelReport {
    let s = stokes(sp);
    let (x, y) = sp.image_point();
    SuperPixelReport {
        x,
        y,
        stokes: s,
        dop: dop(&s, cfg.zero_intensity).ok().map(|d| d.value),
        aop: aop(&s).ok(),
    }
}

/// Writes the per-superpixel debug CSV (`x,y,S0,S1,S2,DOP,AOP_deg`); undefined
/// values are left empty.
pub fn write_superpixel_csv(
    path: &Path,
    superpixels: &[SuperPixelIntensities],
    cfg: &ExtractConfig,
) -> Result<(), crate::io::IoError> {
    crate::io::write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["x", "y", "S0", "S1", "S2", "DOP", "AOP_deg"])?;
        for sp in superpixels {
            let r = superpixel_report(sp, cfg);
            csv.write_record([
                r.x.to_string(),
                r.y.to_string(),
                r.stokes.s0.to_string(),
                r.stokes.s1.to_string(),
                r.stokes.s2.to_string(),
                r.dop.map(|d| d.to_string()).unwrap_or_default(),
                r.aop
                    .map(|a| a.to_degrees().to_string())
                    .unwrap_or_default(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sp(i0: f64, i45: f64, i90: f64, i135: f64) -> SuperPixelIntensities {
        SuperPixelIntensities {
            i0,
            i45,
            i90,
            i135,
            center_x: 0.0,
            center_y: 0.0,
        }
    }

    fn sample(e: Vec3, w: f64) -> PolarSample {
        PolarSample {
            view_dir: Vec3::z(),
            evec: e,
            aop: 0.0,
            dop: w,
            weight: w,
        }
    }

    #[test]
    fn demosaic_single_block() {
        let f = MosaicFrame::new(
            2,
            2,
            vec![5.0, 3.0, 1.0, 7.0],
            MosaicPattern::Tl90Tr45Bl135Br0,
        );
        let b = demosaic(&f).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(
            (b[0].i90, b[0].i45, b[0].i135, b[0].i0),
            (5.0, 3.0, 1.0, 7.0)
        );
    }

    #[test]
    fn demosaic_uniform_and_geometry() {
        let f = MosaicFrame::uniform(4, 4, 9.0, MosaicPattern::default());
        let b = demosaic(&f).unwrap();
        let centers: Vec<_> = b.iter().map(|s| (s.center_x, s.center_y)).collect();
        assert_eq!(
            centers,
            vec![(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)]
        );
        assert!(b
            .iter()
            .all(|s| s.i0 == 9.0 && s.i45 == 9.0 && s.i90 == 9.0 && s.i135 == 9.0));
    }

    #[test]
    fn demosaic_rejects_odd() {
        let f = MosaicFrame::uniform(3, 4, 1.0, MosaicPattern::default());
        assert!(matches!(
            demosaic(&f),
            Err(PolarError::BadDimensions { .. })
        ));
    }

    #[test]
    fn demosaic_patterns_are_permutations() {
        for p in [
            MosaicPattern::Tl90Tr45Bl135Br0,
            MosaicPattern::Tl45Tr90Bl0Br135,
            MosaicPattern::Tl135Tr0Bl90Br45,
            MosaicPattern::Tl0Tr135Bl45Br90,
        ] {
            let mut angles: Vec<u16> = (0..4).map(|i| p.angle_at(i % 2, i / 2)).collect();
            angles.sort();
            assert_eq!(angles, vec![0, 45, 90, 135]);
        }
    }

    #[test]
    fn stokes_examples() {
        let s = stokes(&sp(2.0, 1.0, 0.0, 1.0));
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (2.0, 2.0, 0.0, 0.0));
        let s = stokes(&sp(3.0, 3.0, 3.0, 3.0));
        assert_eq!((s.s0, s.s1, s.s2), (6.0, 0.0, 0.0));
        let s = stokes(&sp(1.0, 2.0, 1.0, 0.0));
        assert_eq!((s.s0, s.s1, s.s2), (2.0, 0.0, 2.0));
    }

    #[test]
    fn dop_examples() {
        let st = |s0, s1, s2| StokesVector {
            s0,
            s1,
            s2,
            s3: 0.0,
        };
        assert_eq!(dop(&st(2.0, 2.0, 0.0), 0.0).unwrap().value, 1.0);
        assert_abs_diff_eq!(
            dop(&st(2.0, 1.0, 1.0), 0.0).unwrap().value,
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(dop(&st(2.0, 0.0, 0.0), 0.0).unwrap().value, 0.0);
        assert!(matches!(
            dop(&st(0.0, 0.0, 0.0), 1e-12),
            Err(PolarError::ZeroIntensity { .. })
        ));
        let over = dop(&st(1.0, 1.0, 1.0), 0.0).unwrap();
        assert_eq!(over.value, 1.0);
        assert!(over.raw > 1.0);
    }

    #[test]
    fn aop_examples() {
        let st = |s1, s2| StokesVector {
            s0: 10.0,
            s1,
            s2,
            s3: 0.0,
        };
        assert_eq!(aop(&st(2.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            aop(&st(-1.0, 1.0)).unwrap().to_degrees(),
            67.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            aop(&st(-1.0, -1.0)).unwrap().to_degrees(),
            -67.5,
            epsilon = 1e-12
        );
        assert_eq!(aop(&st(0.0, 0.0)), Err(PolarError::UndefinedAop));
        assert_eq!(aop(&st(-1.0, -0.0)).unwrap(), std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn view_direction_examples() {
        let cam = CameraIntrinsics {
            pixel_size_x: 2e-6,
            pixel_size_y: 3e-6,
            width: 4,
            height: 6,
            focal_length: 5e-3,
        };
        assert_eq!(view_direction(2.5, 3.5, &cam), Vec3::new(0.0, 0.0, 5e-3));
        assert_eq!(view_direction(3.5, 3.5, &cam), Vec3::new(2e-6, 0.0, 5e-3));
        let c3 = CameraIntrinsics {
            pixel_size_x: 1e-5,
            pixel_size_y: 1e-5,
            width: 3,
            height: 3,
            focal_length: 1e-2,
        };
        assert_eq!(view_direction(1.0, 1.0, &c3), Vec3::new(-1e-5, -1e-5, 1e-2));
    }

    #[test]
    fn evector_examples() {
        let cam = CameraIntrinsics::default();
        let center = Vec3::new(0.0, 0.0, cam.focal_length);
        assert_eq!(evector_body(0.0, &center, &cam), Vec3::new(0.0, 1.0, 0.0));
        let k = 7.0;
        let v = Vec3::new(0.0, cam.pixel_size_y * k, cam.focal_length);
        let e = evector_body(0.0, &v, &cam);
        assert_abs_diff_eq!(
            e,
            Vec3::new(0.0, 1.0, -cam.pixel_size_y * k / cam.focal_length),
            epsilon = 1e-15
        );
        assert!(e.dot(&v).abs() < 1e-15);
    }

    #[test]
    fn estimate_exact_null_space() {
        let s = [sample(Vec3::x(), 1.0), sample(Vec3::y(), 1.0)];
        let r = estimate_bidir_solar(&s, 1e-6).unwrap();
        assert_eq!(r.vector, Vec3::z());
        assert_eq!(r.min_eigenvalue, 0.0);
        assert_eq!(r.sample_count, 2);
    }

    #[test]
    fn estimate_errors() {
        let s = [
            sample(Vec3::x(), 1.0),
            sample(Vec3::x(), 2.0),
            sample(-Vec3::x(), 0.5),
        ];
        assert!(matches!(
            estimate_bidir_solar(&s, 1e-6),
            Err(PolarError::DegenerateGeometry { .. })
        ));
        let s = [sample(Vec3::x(), 1.0), sample(Vec3::y(), 0.0)];
        assert_eq!(
            estimate_bidir_solar(&s, 1e-6),
            Err(PolarError::InsufficientSamples(1))
        );
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize_sign(&Vec3::new(0.0, 0.0, -1.0)), Vec3::z());
        assert_eq!(
            canonicalize_sign(&Vec3::new(0.6, -0.8, 0.0)),
            Vec3::new(-0.6, 0.8, 0.0)
        );
        // tie between |x| and |z|: z decides
        let v = Vec3::new(0.6, 0.0, -0.6);
        assert_eq!(canonicalize_sign(&v), Vec3::new(-0.6, 0.0, 0.6));
    }

    #[test]
    fn uniform_frame_extraction_fails() {
        let cam = CameraIntrinsics::binned(16, 16);
        let f = MosaicFrame::uniform(16, 16, 1000.0, MosaicPattern::default());
        assert!(matches!(
            extract_solar_vector(&f, &cam, &ExtractConfig::default()),
            Err(PolarError::InsufficientSamples(0))
        ));
    }

    #[test]
    fn decimation_caps_count() {
        let f = MosaicFrame::uniform(256, 200, 1.0, MosaicPattern::default());
        let all = demosaic(&f).unwrap();
        for max in [1, 10, 100, 4096, 20_000] {
            let d = decimate(&all, 128, max);
            assert!(d.len() <= max.max(1) || all.len() <= max);
            assert!(!d.is_empty());
        }
    }

    fn unit(v: [f64; 3]) -> Option<Vec3> {
        let v = Vec3::from(v);
        (v.norm() > 1e-3).then(|| v.normalize())
    }

    proptest! {
        #[test]
        fn canonicalize_idempotent(v in prop::array::uniform3(-1.0f64..1.0)) {
            if let Some(u) = unit(v) {
                let c = canonicalize_sign(&u);
                prop_assert_eq!(canonicalize_sign(&c), c);
                prop_assert!(c == u || c == -u);
            }
        }

        #[test]
        fn evector_perpendicular(a in -1.57f64..1.57, x in 1.0f64..128.0, y in 1.0f64..128.0) {
            let cam = CameraIntrinsics::default();
            let v = view_direction(x, y, &cam);
            let e = evector_body(a, &v, &cam);
            prop_assert!(e.dot(&v).abs() < 1e-12 * v.norm());
        }

        #[test]
        fn scatter_psd_and_sign_blind(
            es in prop::collection::vec((prop::array::uniform3(-1.0f64..1.0), 0.0f64..1.0, any::<bool>()), 3..30)
        ) {
            let samples: Vec<_> = es.iter().map(|(e, w, _)| sample(Vec3::from(*e), *w)).collect();
            let flipped: Vec<_> = es.iter().map(|(e, w, f)| sample(Vec3::from(*e) * if *f { -1.0 } else { 1.0 }, *w)).collect();
            let k = scatter_matrix(&samples);
            let eig = symmetric_eigen3(&k);
            prop_assert!(eig.values[0] >= -1e-9);
            prop_assert_eq!(k, scatter_matrix(&flipped));
            if let (Ok(a), Ok(b)) = (estimate_bidir_solar(&samples, 1e-6), estimate_bidir_solar(&flipped, 1e-6)) {
                prop_assert_eq!(a.vector, b.vector);
            }
        }

        #[test]
        fn weight_scaling(c in 0.01f64..100.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = (0..20)
                .map(|_| sample(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)), rng.random_range(0.1..1.0)))
                .collect();
            let scaled: Vec<_> = samples.iter().map(|s| PolarSample { weight: s.weight * c, ..*s }).collect();
            let a = estimate_bidir_solar(&samples, 1e-6).unwrap();
            let b = estimate_bidir_solar(&scaled, 1e-6).unwrap();
            prop_assert!(axis_angle(&a.vector, &b.vector) < 1e-9);
            prop_assert!((b.min_eigenvalue - c * a.min_eigenvalue).abs() < 1e-9 * (1.0 + c * a.min_eigenvalue));
        }

        #[test]
        fn rotation_equivariance(y in -3.1f64..3.1, p in -1.5f64..1.5, r in -3.1f64..3.1, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let rot = crate::frames::dcm_from_euler(&crate::frames::EulerAngles::new(y, p, r));
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = (0..20)
                .map(|_| sample(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)), rng.random_range(0.1..1.0)))
                .collect();
            let rotated: Vec<_> = samples.iter().map(|s| PolarSample { evec: rot.rotate(&s.evec), view_dir: rot.rotate(&s.view_dir), ..*s }).collect();
            let a = estimate_bidir_solar(&samples, 1e-6).unwrap();
            let b = estimate_bidir_solar(&rotated, 1e-6).unwrap();
            prop_assert!(axis_angle(&rot.rotate(&a.vector), &b.vector) < 1e-9);
        }
    }
}
