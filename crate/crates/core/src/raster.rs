//! In-memory containers for 2D rasters, complex views, point clouds, and
//! height fields. File formats live in `io`.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;

/// Row-major 2D raster of real values.
///
/// `pixel_pitch` is the metric size of one pixel in meters when known; image
/// stages that are unit-free leave it untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster2D {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: Option<f64>,
    pub values: Vec<f64>,
}

impl Raster2D {
    pub fn zeros(width: usize, height: usize) -> Self {
        Raster2D {
            width,
            height,
            pixel_pitch: None,
            values: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Raster2D {
            width,
            height,
            pixel_pitch: None,
            values: vec![value; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} raster",
                values.len(),
                width,
                height
            )));
        }
        Ok(Raster2D {
            width,
            height,
            pixel_pitch: None,
            values,
        })
    }

    pub fn with_pitch(mut self, pitch: f64) -> Self {
        self.pixel_pitch = Some(pitch);
        self
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = y * self.width + x;
        self.values[i] = v;
    }

    /// Bilinear sample at fractional pixel coordinates; out-of-bounds reads
    /// return `fill`.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f64) -> f64 {
        if !x.is_finite() || !y.is_finite() {
            return fill;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let at = |xi: isize, yi: isize| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as isize || yi >= self.height as isize {
                fill
            } else {
                self.values[yi as usize * self.width + xi as usize]
            }
        };
        let v00 = at(x0, y0);
        let v10 = at(x0 + 1, y0);
        let v01 = at(x0, y0 + 1);
        let v11 = at(x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Value at the given quantile (0..=1) by sorting a copy; quantile
    /// positions between samples are resolved by lower-neighbor selection.
    pub fn percentile(&self, q: f64) -> f64 {
        let mut sorted = self.values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
        let n = sorted.len();
        if n == 0 {
            return f64::NAN;
        }
        let pos = (q.clamp(0.0, 1.0) * (n - 1) as f64).round() as usize;
        sorted[pos.min(n - 1)]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Verifies equal dimensions against another raster.
    pub fn check_same_shape(&self, other: &Raster2D, what: &str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Retrieved (or simulated) real-space complex field on a square metric grid.
/// Amplitude is nonnegative; phase is wrapped to (-pi, pi].
#[derive(Debug, Clone)]
pub struct ComplexView {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl ComplexView {
    pub fn from_complex(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        field: &[Complex64],
    ) -> Result<Self> {
        if field.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {}x{} view",
                field.len(),
                width,
                height
            )));
        }
        let mut amplitude = Vec::with_capacity(field.len());
        let mut phase = Vec::with_capacity(field.len());
        for c in field {
            let a = c.norm();
            amplitude.push(a);
            // arg(0) is defined as 0 so zero-amplitude pixels carry no phase.
            phase.push(if a == 0.0 { 0.0 } else { c.arg() });
        }
        Ok(ComplexView {
            width,
            height,
            pixel_pitch,
            amplitude,
            phase,
        })
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.amplitude
            .iter()
            .zip(&self.phase)
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect()
    }

    pub fn amplitude_raster(&self) -> Raster2D {
        Raster2D {
            width: self.width,
            height: self.height,
            pixel_pitch: Some(self.pixel_pitch),
            values: self.amplitude.clone(),
        }
    }

    pub fn phase_raster(&self) -> Raster2D {
        Raster2D {
            width: self.width,
            height: self.height,
            pixel_pitch: Some(self.pixel_pitch),
            values: self.phase.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.amplitude.len() != n || self.phase.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "view buffers {}amp/{}phase for {}x{}",
                self.amplitude.len(),
                self.phase.len(),
                self.width,
                self.height
            )));
        }
        if self.amplitude.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::NonFiniteData(
                "amplitude must be finite and nonnegative".into(),
            ));
        }
        if self.phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteData("phase must be finite".into()));
        }
        Ok(())
    }
}

/// Provenance of a point in a reconstruction cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    LeftMap,
    RightMap,
    Frame,
    FittedSurface,
}

impl PointSource {
    pub fn code(self) -> u8 {
        match self {
            PointSource::LeftMap => 0,
            PointSource::RightMap => 1,
            PointSource::Frame => 2,
            PointSource::FittedSurface => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointSource::LeftMap),
            1 => Some(PointSource::RightMap),
            2 => Some(PointSource::Frame),
            3 => Some(PointSource::FittedSurface),
            _ => None,
        }
    }
}

/// Metric 3D point cloud with per-point provenance tags.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub sources: Vec<PointSource>,
}

impl PointCloud {
    pub fn new() -> Self {
        PointCloud::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: [f64; 3], source: PointSource) {
        self.points.push(p);
        self.sources.push(source);
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.sources.extend_from_slice(&other.sources);
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        if self.points.is_empty() {
            return None;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.sources.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} source tags",
                self.points.len(),
                self.sources.len()
            )));
        }
        for p in &self.points {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteData("point coordinates".into()));
            }
        }
        Ok(())
    }

    /// Sub-cloud containing only points with the given tag.
    pub fn filter_source(&self, source: PointSource) -> PointCloud {
        let mut out = PointCloud::new();
        for (p, s) in self.points.iter().zip(&self.sources) {
            if *s == source {
                out.push(*p, *s);
            }
        }
        out
    }
}

/// Interpolated surface on a square grid; nodes outside the interpolation
/// domain are undefined. Undefined nodes store z = 0 and are excluded from
/// serialization and metrics through the mask.
#[derive(Debug, Clone)]
pub struct HeightField {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub z: Vec<f64>,
    pub defined: Vec<bool>,
}

impl HeightField {
    pub fn undefined(width: usize, height: usize, pixel_pitch: f64) -> Self {
        HeightField {
            width,
            height,
            pixel_pitch,
            z: vec![0.0; width * height],
            defined: vec![false; width * height],
        }
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|d| **d).count()
    }

    /// Min/max over defined nodes, or None when nothing is defined.
    pub fn z_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for (v, d) in self.z.iter().zip(&self.defined) {
            if *d {
                any = true;
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if any {
            Some((lo, hi))
        } else {
            None
        }
    }
}

/// One recorded detector frame: photon counts plus a saturation mask and the
/// relative integration time that produced it.
#[derive(Debug, Clone)]
pub struct DiffractionFrame {
    pub intensity: Raster2D,
    pub saturated: Vec<bool>,
    pub exposure_scale: f64,
}

impl DiffractionFrame {
    /// Wraps an ideal (noise-free, unsaturated) pattern as a frame of
    /// exposure scale 1, so composition helpers accept it.
    pub fn from_ideal(intensity: Raster2D) -> Self {
        let n = intensity.values.len();
        DiffractionFrame {
            intensity,
            saturated: vec![false; n],
            exposure_scale: 1.0,
        }
    }

    pub fn saturated_count(&self) -> usize {
        self.saturated.iter().filter(|s| **s).count()
    }
}

/// A diffraction intensity with a per-pixel validity mask. Invalid pixels
/// (overlap-cropped or saturated) are excluded from the modulus constraint
/// and from error norms.
#[derive(Debug, Clone)]
pub struct MeasuredPattern {
    pub intensity: Raster2D,
    pub valid: Vec<bool>,
}

impl MeasuredPattern {
    pub fn from_raster(intensity: Raster2D) -> Self {
        let n = intensity.values.len();
        MeasuredPattern {
            intensity,
            valid: vec![true; n],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.valid.len() != self.intensity.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} mask entries for {} pixels",
                self.valid.len(),
                self.intensity.values.len()
            )));
        }
        if self
            .intensity
            .values
            .iter()
            .zip(&self.valid)
            .any(|(v, ok)| *ok && (!v.is_finite() || *v < 0.0))
        {
            return Err(Error::NonFiniteData(
                "measured intensity must be finite and nonnegative on valid pixels".into(),
            ));
        }
        Ok(())
    }
}
