//! Forward simulation: builds a two-plane cross-on-membrane test sample,
//! projects it along each tilted beam into an exit wave, turns exit waves
//! into far-field diffraction intensities, applies counting noise and
//! saturation, and composes the two patterns on one virtual detector.
//!
//! Structures are thin planes composited multiplicatively under a tilted
//! parallel projection (a lateral shear of `depth * tan(theta)`), not full
//! wave propagation between planes. That is the simulator's validity limit,
//! and it makes the ground-truth disparity of a plane at depth z exactly
//! `z * (tan(theta1) + tan(theta2))`.

use crate::error::{Error, Result};
use crate::fft2;
use crate::geometry::ObjectGrid;
use crate::raster::{ComplexView, DiffractionFrame, Raster2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One thin planar structure: a binary occupancy mask on the model grid, the
/// z-plane it sits on, and the complex transmission of its material. Pixels
/// outside the mask transmit unchanged (factor 1).
#[derive(Debug, Clone)]
pub struct SampleStructure {
    pub mask: Raster2D,
    /// z-plane of the structure, meters; positive is toward the source.
    pub depth: f64,
    /// Amplitude transmission of the material, in [0, 1] (0 = opaque).
    pub transmission_amplitude: f64,
    /// Phase shift imposed by the material, radians.
    pub transmission_phase: f64,
}

/// A sample as a stack of thin planar structures sharing one lateral grid.
#[derive(Debug, Clone)]
pub struct SampleModel {
    pub structures: Vec<SampleStructure>,
    /// Lateral sampling pitch of the structure masks, meters.
    pub lateral_pitch: f64,
}

impl SampleModel {
    pub fn validate(&self) -> Result<()> {
        if self.structures.is_empty() {
            return Err(Error::InvalidArgument(
                "sample must contain at least one structure".into(),
            ));
        }
        if !(self.lateral_pitch.is_finite() && self.lateral_pitch > 0.0) {
            return Err(Error::InvalidArgument("lateral_pitch must be > 0".into()));
        }
        for (i, s) in self.structures.iter().enumerate() {
            if !s.depth.is_finite() {
                return Err(Error::InvalidArgument(format!("structure {i}: depth not finite")));
            }
            if !(0.0..=1.0).contains(&s.transmission_amplitude) {
                return Err(Error::InvalidArgument(format!(
                    "structure {i}: transmission amplitude {} outside [0, 1]",
                    s.transmission_amplitude
                )));
            }
            if !s.transmission_phase.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "structure {i}: transmission phase not finite"
                )));
            }
            if s.mask.values.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "structure {i}: mask must be binary"
                )));
            }
        }
        Ok(())
    }

    /// Model grid shared by the structure masks.
    pub fn grid(&self) -> Result<ObjectGrid> {
        let first = &self.structures[0].mask;
        for s in &self.structures {
            s.mask.check_same_shape(&self.structures[0].mask, "structure masks")?;
        }
        if first.width != first.height {
            return Err(Error::InvalidArgument("structure masks must be square".into()));
        }
        ObjectGrid::new(self.lateral_pitch, first.width)
    }
}

/// Which transmission set `make_cross_sample` assigns to the two structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Opaque membrane and lid; only the drilled cut transmits.
    Amplitude,
    /// Semi-transparent materials with distinct grey tones and phase shifts.
    Phase,
}

/// Parameters of the canonical test sample: a cross-shaped lid cut out of a
/// membrane by a trench of constant width, the lid sitting at an offset
/// depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    /// Model raster the structure masks are drawn on.
    pub grid: ObjectGrid,
    pub mode: SampleMode,
    /// Full width of the horizontal cross arm, meters.
    pub cross_width: f64,
    /// Full height of the vertical cross arm, meters.
    pub cross_height: f64,
    /// Width of both cross arms, meters.
    pub arm_width: f64,
    /// Width of the trench cut between lid and membrane, meters.
    pub cut_width: f64,
    /// z-offset of the lid plane relative to the membrane, meters. The real
    /// sample's offset is unknown; this is a free parameter.
    pub lid_depth: f64,
    /// Grey levels used in `Phase` mode (ignored in `Amplitude` mode, where
    /// both materials are opaque).
    pub membrane_transmission: f64,
    pub lid_transmission: f64,
    pub membrane_phase: f64,
    pub lid_phase: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            // 512 grid at the object pitch of a 512-pixel detector crop
            // (wavelength 24 nm, 26 mm distance, 13.5 um pixels).
            grid: ObjectGrid {
                pixel_pitch: 9.027777777777779e-8,
                side: 512,
            },
            mode: SampleMode::Amplitude,
            cross_width: 6.9e-6,
            cross_height: 6.1e-6,
            arm_width: 1.5e-6,
            cut_width: 0.3e-6,
            lid_depth: 0.3e-6,
            membrane_transmission: 0.45,
            lid_transmission: 0.75,
            membrane_phase: 0.5,
            lid_phase: 1.2,
        }
    }
}

impl SampleParams {
    /// Phase-contrast preset: same geometry, semi-transparent materials.
    pub fn phase_defaults() -> Self {
        SampleParams {
            mode: SampleMode::Phase,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cross_width", self.cross_width),
            ("cross_height", self.cross_height),
            ("arm_width", self.arm_width),
            ("cut_width", self.cut_width),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        if !self.lid_depth.is_finite() {
            return Err(Error::InvalidArgument("lid_depth must be finite".into()));
        }
        if self.arm_width > self.cross_width || self.arm_width > self.cross_height {
            return Err(Error::InvalidArgument(
                "arm_width cannot exceed the cross extents".into(),
            ));
        }
        for (name, v) in [
            ("membrane_transmission", self.membrane_transmission),
            ("lid_transmission", self.lid_transmission),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Point-in-cross test: union of the horizontal (w x arm) and vertical
/// (arm x h) bars, centered on the origin, boundaries inclusive.
fn cross_contains(x: f64, y: f64, w: f64, h: f64, arm: f64) -> bool {
    (x.abs() <= w / 2.0 && y.abs() <= arm / 2.0) || (x.abs() <= arm / 2.0 && y.abs() <= h / 2.0)
}

/// Builds the two-structure cross sample: the membrane plane at z = 0 with
/// the cross-shaped cut removed, and the inner cross lid at `lid_depth`.
/// The trench between them has width `cut_width` on every side (the lid
/// keeps the nominal cross dimensions; the cut is taken out of the
/// membrane).
pub fn make_cross_sample(params: &SampleParams) -> Result<SampleModel> {
    params.validate()?;
    let grid = params.grid;
    let extent = grid.extent();
    let outer_w = params.cross_width + 2.0 * params.cut_width;
    let outer_h = params.cross_height + 2.0 * params.cut_width;
    if outer_w > extent || outer_h > extent {
        return Err(Error::InvalidArgument(format!(
            "cross with cut ({:.3e} x {:.3e} m) exceeds the {:.3e} m grid extent",
            outer_w, outer_h, extent
        )));
    }
    let side = grid.side;
    let mut membrane = Raster2D::zeros(side, side).with_pitch(grid.pixel_pitch);
    let mut lid = Raster2D::zeros(side, side).with_pitch(grid.pixel_pitch);
    let outer_arm = params.arm_width + 2.0 * params.cut_width;
    for iy in 0..side {
        let y = grid.coord(iy as f64);
        for ix in 0..side {
            let x = grid.coord(ix as f64);
            let in_lid = cross_contains(x, y, params.cross_width, params.cross_height, params.arm_width);
            let in_outer = cross_contains(x, y, outer_w, outer_h, outer_arm);
            // Membrane material is everywhere except the full drilled
            // outline (lid footprint plus trench).
            membrane.set(ix, iy, if in_outer { 0.0 } else { 1.0 });
            lid.set(ix, iy, if in_lid { 1.0 } else { 0.0 });
        }
    }
    let (membrane_t, lid_t, membrane_p, lid_p) = match params.mode {
        SampleMode::Amplitude => (0.0, 0.0, 0.0, 0.0),
        SampleMode::Phase => (
            params.membrane_transmission,
            params.lid_transmission,
            params.membrane_phase,
            params.lid_phase,
        ),
    };
    let model = SampleModel {
        structures: vec![
            SampleStructure {
                mask: membrane,
                depth: 0.0,
                transmission_amplitude: membrane_t,
                transmission_phase: membrane_p,
            },
            SampleStructure {
                mask: lid,
                depth: params.lid_depth,
                transmission_amplitude: lid_t,
                transmission_phase: lid_p,
            },
        ],
        lateral_pitch: grid.pixel_pitch,
    };
    model.validate()?;
    Ok(model)
}

/// Projects the sample along a beam tilted by `theta` onto `grid`. Each
/// structure's mask is sheared laterally by `depth * tan(theta)`, resampled
/// bilinearly, and composited multiplicatively: a pixel covered with
/// fraction m by a structure of complex transmission T contributes the
/// factor 1 + m*(T - 1).
pub fn project_view(s: &SampleModel, theta: f64, grid: ObjectGrid) -> Result<ComplexView> {
    s.validate()?;
    let model_grid = s.grid()?;
    if !theta.is_finite() || theta.abs() >= 45f64.to_radians() {
        return Err(Error::InvalidArgument(format!(
            "|theta| = {} rad must be below 45 degrees",
            theta.abs()
        )));
    }
    // Half-pixel slack so a structure exactly filling the grid passes.
    let slack = 0.5 * grid.pixel_pitch;
    let lo = grid.coord(0.0) - slack;
    let hi = grid.coord((grid.side - 1) as f64) + slack;
    for (i, st) in s.structures.iter().enumerate() {
        if let Some((x0, y0, x1, y1)) = mask_bounds(&st.mask) {
            let shift = st.depth * theta.tan();
            let bx0 = model_grid.coord(x0 as f64) + shift;
            let bx1 = model_grid.coord(x1 as f64) + shift;
            let by0 = model_grid.coord(y0 as f64);
            let by1 = model_grid.coord(y1 as f64);
            if bx0 < lo || bx1 > hi || by0 < lo || by1 > hi {
                return Err(Error::InvalidArgument(format!(
                    "structure {i} sheared by {shift:.3e} m projects outside the target grid"
                )));
            }
        }
    }

    let side = grid.side;
    let mut field = vec![Complex64::new(1.0, 0.0); side * side];
    for st in &s.structures {
        let t = Complex64::from_polar(st.transmission_amplitude, st.transmission_phase);
        let shift = st.depth * theta.tan();
        for iy in 0..side {
            let sy = model_grid.index(grid.coord(iy as f64));
            for ix in 0..side {
                let sx = model_grid.index(grid.coord(ix as f64) - shift);
                let m = st.mask.sample_bilinear(sx, sy, 0.0);
                if m != 0.0 {
                    field[iy * side + ix] *= Complex64::new(1.0 - m, 0.0) + t * m;
                }
            }
        }
    }
    ComplexView::from_complex(side, side, grid.pixel_pitch, &field)
}

/// Bounding box (x0, y0, x1, y1) of nonzero mask pixels, inclusive.
fn mask_bounds(mask: &Raster2D) -> Option<(usize, usize, usize, usize)> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) != 0.0 {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bounds
}

/// Far-field diffraction: squared modulus of the centered 2D DFT of the
/// exit wave. The wave's nonzero support must fit in half the frame per
/// dimension (linear oversampling >= 2) for the pattern to be invertible.
pub fn diffract(v: &ComplexView) -> Result<Raster2D> {
    v.validate()?;
    let (w, h) = (v.width, v.height);
    let peak = v.amplitude.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidArgument("exit wave is identically zero".into()));
    }
    let threshold = peak * 1e-12;
    let mut x0 = w;
    let mut x1 = 0usize;
    let mut y0 = h;
    let mut y1 = 0usize;
    for y in 0..h {
        for x in 0..w {
            if v.amplitude[y * w + x] > threshold {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    let support_w = x1 - x0 + 1;
    let support_h = y1 - y0 + 1;
    if 2 * support_w > w || 2 * support_h > h {
        return Err(Error::InsufficientOversampling {
            support_w,
            support_h,
            frame_w: w,
            frame_h: h,
        });
    }
    let spectrum = fft2::centered_forward(&v.to_complex(), w, h);
    let values = spectrum.iter().map(|c| c.norm_sqr()).collect();
    Ok(Raster2D {
        width: w,
        height: h,
        pixel_pitch: None,
        values,
    })
}

/// One detector exposure: total photon budget, relative integration time,
/// full-well count, and the noise seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureSpec {
    /// Photons reaching the detector over a unit integration time.
    pub photons_total: f64,
    /// Relative integration time; recorded in the frame for later rescaling.
    pub exposure_scale: f64,
    /// Counts at which a pixel saturates; `f64::INFINITY` disables clipping.
    pub saturation_level: f64,
    pub seed: u64,
}

impl ExposureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.photons_total.is_finite() && self.photons_total > 0.0) {
            return Err(Error::InvalidArgument("photons_total must be > 0".into()));
        }
        if !(self.exposure_scale.is_finite() && self.exposure_scale > 0.0) {
            return Err(Error::InvalidArgument("exposure_scale must be > 0".into()));
        }
        if !(self.saturation_level > 0.0) {
            return Err(Error::InvalidArgument("saturation_level must be > 0".into()));
        }
        Ok(())
    }
}

/// Scales the ideal pattern to the exposure's photon budget, draws an
/// independent Poisson count per pixel, and clips at the saturation level,
/// flagging clipped pixels. Deterministic for a fixed seed.
pub fn simulate_exposure(ideal: &Raster2D, e: &ExposureSpec) -> Result<DiffractionFrame> {
    e.validate()?;
    let mut total = 0.0;
    for &v in &ideal.values {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ideal intensity must be finite and nonnegative, found {v}"
            )));
        }
        total += v;
    }
    if total == 0.0 {
        return Err(Error::InvalidArgument("ideal pattern carries no intensity".into()));
    }
    let scale = e.photons_total * e.exposure_scale / total;
    let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
    let mut counts = Vec::with_capacity(ideal.values.len());
    let mut saturated = Vec::with_capacity(ideal.values.len());
    for &v in &ideal.values {
        let lambda = v * scale;
        let n = if lambda > 0.0 {
            let poisson = Poisson::new(lambda)
                .map_err(|err| Error::InvalidArgument(format!("Poisson({lambda}): {err}")))?;
            poisson.sample(&mut rng)
        } else {
            0.0
        };
        if n > e.saturation_level {
            counts.push(e.saturation_level);
            saturated.push(true);
        } else {
            counts.push(n);
            saturated.push(false);
        }
    }
    Ok(DiffractionFrame {
        intensity: Raster2D {
            width: ideal.width,
            height: ideal.height,
            pixel_pitch: ideal.pixel_pitch,
            values: counts,
        },
        saturated,
        exposure_scale: e.exposure_scale,
    })
}

/// Adds the two patterns onto one virtual detector with their centers
/// `separation_px` apart horizontally. The canvas is sized to hold both
/// frames exactly (width + separation), so a separation below the frame
/// width produces the partial overlap of a single-sensor acquisition and a
/// larger one places them disjointly.
pub fn compose_dual_frame(
    left: &DiffractionFrame,
    right: &DiffractionFrame,
    separation_px: usize,
) -> Result<Raster2D> {
    left.intensity.check_same_shape(&right.intensity, "dual frames")?;
    if left.exposure_scale != right.exposure_scale {
        return Err(Error::InvalidArgument(format!(
            "exposure scales differ: {} vs {}",
            left.exposure_scale, right.exposure_scale
        )));
    }
    let (w, h) = (left.intensity.width, left.intensity.height);
    let out_w = w + separation_px;
    let mut out = Raster2D::zeros(out_w, h);
    for y in 0..h {
        for x in 0..w {
            let v = out.get(x, y) + left.intensity.get(x, y);
            out.set(x, y, v);
        }
        for x in 0..w {
            let v = out.get(x + separation_px, y) + right.intensity.get(x, y);
            out.set(x + separation_px, y, v);
        }
    }
    Ok(out)
}

/// Center abscissae of the two patterns inside the composite canvas, in the
/// layout used by `compose_dual_frame`.
pub fn composite_centers(frame_side: usize, separation_px: usize) -> (f64, f64) {
    let c = (frame_side / 2) as f64;
    (c, c + separation_px as f64)
}
