//! Stereo acquisition geometry and the closed-form conversions between
//! disparity, depth, and object coordinates.
//!
//! Angle convention: `theta1` and `theta2` are the (positive) angles between
//! each beam and the detector normal, the two beams lying on opposite sides
//! of the normal. A point at height `z` above the reference plane appears at
//! `x + z*tan(theta1)` in the left view and `x - z*tan(theta2)` in the right
//! view, so the metric disparity `d = x1 - x2 = z*(tan(theta1)+tan(theta2))`
//! is positive when the left-view coordinate is the larger one.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoGeometry {
    /// Left beam to detector normal, radians.
    pub theta1: f64,
    /// Right beam to detector normal, radians.
    pub theta2: f64,
    /// Illumination wavelength, meters.
    pub wavelength: f64,
    /// Sample-to-detector distance, meters.
    pub detector_distance: f64,
    /// Detector pixel size, meters.
    pub detector_pixel: f64,
    /// Detector side length, pixels.
    pub detector_side: usize,
    /// Side length of the cropped diffraction region actually inverted.
    pub roi_side: usize,
}

/// Which view a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSide {
    Left,
    Right,
}

impl StereoGeometry {
    pub fn new(
        theta1: f64,
        theta2: f64,
        wavelength: f64,
        detector_distance: f64,
        detector_pixel: f64,
        detector_side: usize,
        roi_side: usize,
    ) -> Result<Self> {
        let g = StereoGeometry {
            theta1,
            theta2,
            wavelength,
            detector_distance,
            detector_pixel,
            detector_side,
            roi_side,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::FRAC_PI_2;
        let sum = self.theta1 + self.theta2;
        if !(self.theta1.is_finite() && self.theta2.is_finite()) {
            return Err(Error::InvalidArgument("angles must be finite".into()));
        }
        if self.theta1.abs() >= FRAC_PI_2 || self.theta2.abs() >= FRAC_PI_2 {
            return Err(Error::InvalidArgument(
                "each beam angle must satisfy |theta| < pi/2".into(),
            ));
        }
        if !(sum > 0.0 && sum < FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "theta1 + theta2 = {sum} rad must lie in (0, pi/2)"
            )));
        }
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("detector_distance", self.detector_distance),
            ("detector_pixel", self.detector_pixel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        if self.detector_side == 0 || self.roi_side == 0 {
            return Err(Error::InvalidArgument("detector sides must be > 0".into()));
        }
        if self.roi_side > self.detector_side {
            return Err(Error::InvalidArgument(format!(
                "roi_side {} exceeds detector_side {}",
                self.roi_side, self.detector_side
            )));
        }
        Ok(())
    }

    /// Object-plane sampling of a view retrieved from the ROI:
    /// delta = wavelength * detector_distance / (roi_side * detector_pixel).
    pub fn object_pixel_pitch(&self) -> f64 {
        self.wavelength * self.detector_distance / (self.roi_side as f64 * self.detector_pixel)
    }

    /// Same relation for an arbitrary crop side, used when a stage works on
    /// a frame size other than the configured ROI.
    pub fn object_pixel_pitch_for(&self, side: usize) -> f64 {
        self.wavelength * self.detector_distance / (side as f64 * self.detector_pixel)
    }

    /// Depth from metric disparity: z = d / (tan(theta1) + tan(theta2)).
    pub fn depth_from_disparity(&self, disparity: f64) -> Result<f64> {
        let denom = self.theta1.tan() + self.theta2.tan();
        if denom == 0.0 {
            return Err(Error::Degenerate(
                "tan(theta1) + tan(theta2) = 0".into(),
            ));
        }
        Ok(disparity / denom)
    }

    /// Inverse of `depth_from_disparity`.
    pub fn disparity_from_depth(&self, z: f64) -> f64 {
        z * (self.theta1.tan() + self.theta2.tan())
    }

    /// Signed beam tilt of one view: +theta1 for the left view, -theta2 for
    /// the right view. Projection of a point at height z shifts laterally by
    /// z * tan(signed_tilt).
    pub fn signed_tilt(&self, side: ViewSide) -> f64 {
        match side {
            ViewSide::Left => self.theta1,
            ViewSide::Right => -self.theta2,
        }
    }

    /// Removes the view-dependent parallax from a view coordinate:
    /// x = x_view - z * tan(signed tilt of that side).
    pub fn correct_coordinate(&self, x_view: f64, z: f64, side: ViewSide) -> f64 {
        x_view - z * self.signed_tilt(side).tan()
    }

    /// Depth quantum per lateral pixel: 1 / (tan(theta1) + tan(theta2)).
    pub fn axial_lateral_ratio(&self) -> f64 {
        1.0 / (self.theta1.tan() + self.theta2.tan())
    }

    /// Axial voxel size for a given lateral pitch.
    pub fn axial_voxel(&self, lateral_pitch: f64) -> f64 {
        lateral_pitch * self.axial_lateral_ratio()
    }
}

/// Object-plane sampling grid a retrieved view or a surface lives on.
/// Pixel (ix, iy) sits at metric coordinates ((ix - side/2) * pitch,
/// (iy - side/2) * pitch), matching the centered-FFT convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectGrid {
    pub pixel_pitch: f64,
    pub side: usize,
}

impl ObjectGrid {
    pub fn new(pixel_pitch: f64, side: usize) -> Result<Self> {
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(Error::InvalidArgument("pixel_pitch must be > 0".into()));
        }
        if side == 0 {
            return Err(Error::InvalidArgument("grid side must be > 0".into()));
        }
        Ok(ObjectGrid { pixel_pitch, side })
    }

    /// Center pixel index (FFT convention: side/2).
    pub fn center(&self) -> f64 {
        (self.side / 2) as f64
    }

    /// Metric coordinate of a (fractional) pixel index.
    pub fn coord(&self, index: f64) -> f64 {
        (index - self.center()) * self.pixel_pitch
    }

    /// Fractional pixel index of a metric coordinate.
    pub fn index(&self, coord: f64) -> f64 {
        coord / self.pixel_pitch + self.center()
    }

    /// Metric half-extent covered by the grid.
    pub fn extent(&self) -> f64 {
        self.side as f64 * self.pixel_pitch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_geometry(roi_side: usize) -> StereoGeometry {
        StereoGeometry::new(
            9.5_f64.to_radians(),
            9.5_f64.to_radians(),
            24e-9,
            26e-3,
            13.5e-6,
            2048,
            roi_side,
        )
        .unwrap()
    }

    // Expected pitches computed by hand from delta = lambda*z/(N*p):
    // 24e-9 * 26e-3 / (2048 * 13.5e-6) = 2.2569444444e-8 m, and twice that
    // for the 1024 ROI.
    #[test]
    fn object_pitch_matches_hand_computation() {
        let g = paper_geometry(2048);
        assert!((g.object_pixel_pitch() - 2.2569444444e-8).abs() < 1e-15);
        let g = paper_geometry(1024);
        assert!((g.object_pixel_pitch() - 4.5138888889e-8).abs() < 1e-15);
    }

    #[test]
    fn doubling_roi_halves_pitch() {
        let g1 = paper_geometry(512);
        let g2 = paper_geometry(1024);
        assert!((g2.object_pixel_pitch() - g1.object_pixel_pitch() / 2.0).abs() < 1e-18);
    }

    // tan(9.5 deg) = 0.167342609081 (frozen from an independent evaluation),
    // so 49 nm / (2 tan 9.5 deg) = 146.4062 nm.
    #[test]
    fn depth_from_disparity_reference_values() {
        let g = paper_geometry(1024);
        let z49 = g.depth_from_disparity(49e-9).unwrap();
        assert!((z49 - 1.464062e-7).abs() / 1.464062e-7 < 1e-6);
        let z127 = g.depth_from_disparity(127e-9).unwrap();
        assert!((z127 - 3.794610e-7).abs() / 3.794610e-7 < 1e-6);
        assert_eq!(g.depth_from_disparity(0.0).unwrap(), 0.0);
    }

    #[test]
    fn depth_is_linear_and_invertible() {
        let g = paper_geometry(1024);
        let z = g.depth_from_disparity(10e-9).unwrap();
        let z3 = g.depth_from_disparity(30e-9).unwrap();
        assert!((z3 - 3.0 * z).abs() < 1e-22);
        for z0 in [-3.3e-7, 0.0, 1.7e-7, 9.9e-6] {
            let d = g.disparity_from_depth(z0);
            assert_eq!(g.depth_from_disparity(d).unwrap(), z0);
        }
    }

    #[test]
    fn axial_lateral_ratio_at_19_degrees() {
        let g = paper_geometry(1024);
        // 1 / (2 tan 9.5 deg) = 2.987882, the paper-scale 49 -> 146 and
        // 127 -> 379 ratios.
        assert!((g.axial_lateral_ratio() - 2.987882).abs() < 1e-5);
    }

    #[test]
    fn coordinate_correction_examples() {
        let g = paper_geometry(1024);
        let delta = g.object_pixel_pitch();
        // z = 0 leaves coordinates unchanged.
        assert_eq!(g.correct_coordinate(5.0 * delta, 0.0, ViewSide::Left), 5.0 * delta);
        // x1 = 100 px, z = 10 px worth of depth: 100 - 10*tan(9.5 deg) px.
        let x = g.correct_coordinate(100.0 * delta, 10.0 * delta, ViewSide::Left);
        assert!((x / delta - 98.326574).abs() < 1e-5);
    }

    // Algebraic consistency: substituting x1 - x2 = z(tan t1 + tan t2) into
    // the two corrections gives x1 - z tan(t1) = x2 + z tan(t2) identically.
    #[test]
    fn matched_coordinates_agree_between_views() {
        let g = StereoGeometry::new(
            9.5_f64.to_radians(),
            7.0_f64.to_radians(),
            24e-9,
            26e-3,
            13.5e-6,
            2048,
            2048,
        )
        .unwrap();
        for (x1, z) in [(3.0e-6, 5.0e-7), (-1.0e-6, -2.0e-7), (0.0, 1.0e-6)] {
            let d = g.disparity_from_depth(z);
            let x2 = x1 - d;
            let left = g.correct_coordinate(x1, z, ViewSide::Left);
            let right = g.correct_coordinate(x2, z, ViewSide::Right);
            let scale = left.abs().max(right.abs()).max(1e-12);
            assert!((left - right).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        // Degenerate angle sum.
        assert!(StereoGeometry::new(0.1, -0.1, 24e-9, 26e-3, 13.5e-6, 2048, 2048).is_err());
        // Sum above pi/2.
        assert!(StereoGeometry::new(0.9, 0.9, 24e-9, 26e-3, 13.5e-6, 2048, 2048).is_err());
        // Nonpositive wavelength.
        assert!(StereoGeometry::new(0.1, 0.1, 0.0, 26e-3, 13.5e-6, 2048, 2048).is_err());
        // ROI larger than detector.
        assert!(StereoGeometry::new(0.1, 0.1, 24e-9, 26e-3, 13.5e-6, 1024, 2048).is_err());
    }

    #[test]
    fn grid_coordinates_roundtrip() {
        let grid = ObjectGrid::new(4.5138888889e-8, 512).unwrap();
        assert_eq!(grid.coord(grid.center()), 0.0);
        for ix in [0.0, 17.0, 255.5, 511.0] {
            let x = grid.coord(ix);
            assert!((grid.index(x) - ix).abs() < 1e-9);
        }
    }
}
