//! End-to-end orchestration: a versioned JSON configuration, stage functions
//! that read and write files under one output-directory layout, and a driver
//! that chains the stages and writes a content-hash manifest.
//!
//! Every stage communicates through files only, so a full `run_pipeline` is
//! bit-identical to invoking the stages one at a time with the same
//! configuration. All randomness is derived from the single top-level seed,
//! stage by stage, which makes each stage independently reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ObjectGrid, StereoGeometry, ViewSide};
use crate::io;
use crate::matching::{compute_disparity, cross_consistency, DisparityMap, MatchConfig};
use crate::preprocess::{
    binarize_pair, gradient_view, isolate_patterns, stitch_hdr, PreprocConfig,
    DEFAULT_MAX_INVALID_FRACTION,
};
use crate::raster::{ComplexView, DiffractionFrame, Raster2D};
use crate::recon::{
    add_frame, assemble_phase_structures, carve_empty, cloud_from_disparities, fit_plane,
    interpolate_surface, remove_outliers, OutlierParams, ReconReport, DEFAULT_CARVE_RADIUS,
};
use crate::rectify::{
    apply_homography, estimate_fundamental, rectify_pair, Correspondences, Homography,
};
use crate::retrieval::{
    align_and_average, align_to_reference, run_ensemble, select_runs,
    support_from_autocorrelation, RetrievalConfig,
};
use crate::sim::{
    compose_dual_frame, composite_centers, diffract, make_cross_sample, project_view,
    simulate_exposure, ExposureSpec, SampleParams,
};

/// Version tag of the on-disk configuration format.
pub const PIPELINE_SCHEMA_VERSION: u32 = 1;

/// Which acquisition arm the pipeline reproduces.
///
/// The amplitude arm simulates a composite two-pattern detector acquisition
/// and inverts it; the phase arm works on directly computed semi-transparent
/// views, which additionally need rectification before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Amplitude,
    Phase,
}

/// Exposure plan of the simulated acquisition: one short and one long
/// integration of the same beam, each clipped at the detector's full-well
/// count, later recombined by the preprocessing stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposurePlan {
    /// Photons reaching the detector per unit integration time.
    pub photons_total: f64,
    /// Relative integration time of the short exposure.
    pub short_scale: f64,
    /// Relative integration time of the long exposure.
    pub long_scale: f64,
    /// Counts at which a detector pixel clips.
    pub saturation_level: f64,
}

impl Default for ExposurePlan {
    fn default() -> Self {
        ExposurePlan {
            photons_total: 1e7,
            short_scale: 30.0,
            long_scale: 140.0,
            saturation_level: 6.5e4,
        }
    }
}

impl ExposurePlan {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("photons_total", self.photons_total),
            ("short_scale", self.short_scale),
            ("long_scale", self.long_scale),
            ("saturation_level", self.saturation_level),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        if self.long_scale <= self.short_scale {
            return Err(Error::InvalidArgument(format!(
                "long_scale {} must exceed short_scale {}",
                self.long_scale, self.short_scale
            )));
        }
        Ok(())
    }
}

/// Ensemble settings of the retrieval stage. The support mask itself is not
/// configured: it is estimated from each pattern's autocorrelation at run
/// time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSettings {
    pub iterations: usize,
    pub beta: f64,
    pub runs: usize,
    pub keep_best: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            iterations: 200,
            beta: 0.9,
            runs: 45,
            keep_best: 45,
        }
    }
}

/// Full description of one pipeline run: acquisition geometry, the synthetic
/// sample, per-stage settings, the top-level seed, and the output directory.
///
/// Defaults reproduce the reference protocol: resize factor 4, smoothing
/// sigma 1.9, thresholds 0.40/0.25, 400-pixel despeckling, 3x3 blocks with a
/// +/-65 pixel scan, 45 retrieval runs, outlier parameters k=80 / t=0.1, and
/// a 0.2 um carving radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub mode: PipelineMode,
    pub geometry: StereoGeometry,
    pub sample: SampleParams,
    pub exposure: ExposurePlan,
    /// Center-to-center distance of the two patterns on the composite
    /// detector, pixels.
    pub separation_px: usize,
    pub retrieval: RetrievalSettings,
    pub preprocess: PreprocConfig,
    pub matching: MatchConfig,
    /// Disagreement tolerance of the left-right consistency check, pixels.
    pub consistency_tol: f64,
    pub outliers: OutlierParams,
    /// Width of the border ring added around the point cloud, lattice rows.
    pub frame_thickness: usize,
    /// Radius around view background inside which surface nodes are
    /// removed, meters.
    pub carve_radius: f64,
    /// Number of plane-level structures the phase arm must resolve.
    pub expected_structures: usize,
    /// Number of synthetic edge correspondences generated for rectification.
    pub correspondence_count: usize,
    pub seed: u64,
    /// When false, the simulation stage is skipped and its outputs must
    /// already exist under the output directory.
    pub run_simulate: bool,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::amplitude_defaults()
    }
}

impl PipelineConfig {
    /// Amplitude-arm protocol: 9.5 degree beams (19 degree separation),
    /// 24 nm light, 26 mm to a 13.5 um-pixel detector, 512-pixel crops.
    pub fn amplitude_defaults() -> Self {
        PipelineConfig {
            schema_version: PIPELINE_SCHEMA_VERSION,
            mode: PipelineMode::Amplitude,
            geometry: StereoGeometry {
                theta1: 9.5f64.to_radians(),
                theta2: 9.5f64.to_radians(),
                wavelength: 24e-9,
                detector_distance: 26e-3,
                detector_pixel: 13.5e-6,
                detector_side: 2048,
                roi_side: 512,
            },
            sample: SampleParams::default(),
            exposure: ExposurePlan::default(),
            separation_px: 480,
            retrieval: RetrievalSettings::default(),
            preprocess: PreprocConfig::default(),
            matching: MatchConfig::default(),
            consistency_tol: 1.0,
            outliers: OutlierParams::default(),
            frame_thickness: 3,
            carve_radius: DEFAULT_CARVE_RADIUS,
            expected_structures: 1,
            correspondence_count: 16,
            seed: 7,
            run_simulate: true,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Phase-arm protocol: 6 degree beams (12 degree separation),
    /// semi-transparent materials, two plane-level structures, and a lid
    /// offset large enough to separate the levels by several depth quanta.
    pub fn phase_defaults() -> Self {
        let mut cfg = Self::amplitude_defaults();
        cfg.mode = PipelineMode::Phase;
        cfg.geometry.theta1 = 6f64.to_radians();
        cfg.geometry.theta2 = 6f64.to_radians();
        cfg.sample = SampleParams::phase_defaults();
        cfg.sample.lid_depth = 1.8e-6;
        cfg.expected_structures = 2;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PIPELINE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {})",
                self.schema_version, PIPELINE_SCHEMA_VERSION
            )));
        }
        self.geometry.validate()?;
        self.sample.validate()?;
        self.exposure.validate()?;
        self.retrieval_config_shell().validate_settings()?;
        self.preprocess.validate()?;
        self.matching.validate()?;
        self.outliers.validate()?;
        if !(self.consistency_tol.is_finite() && self.consistency_tol >= 0.0) {
            return Err(Error::Config(format!(
                "consistency_tol must be finite and >= 0, got {}",
                self.consistency_tol
            )));
        }
        if !(self.carve_radius.is_finite() && self.carve_radius >= 0.0) {
            return Err(Error::Config(format!(
                "carve_radius must be finite and >= 0, got {}",
                self.carve_radius
            )));
        }
        if self.expected_structures == 0 {
            return Err(Error::Config("expected_structures must be >= 1".into()));
        }
        if self.correspondence_count < 8 {
            return Err(Error::Config(format!(
                "correspondence_count must be >= 8, got {}",
                self.correspondence_count
            )));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        // The simulated views and the acquisition geometry must agree on the
        // object-plane sampling, or depths computed from the geometry would
        // not apply to the simulated data.
        let physical = self.geometry.object_pixel_pitch_for(self.sample.grid.side);
        let drawn = self.sample.grid.pixel_pitch;
        if (physical - drawn).abs() > 1e-9 * physical {
            return Err(Error::Config(format!(
                "sample grid pitch {drawn:.6e} m disagrees with the geometry's \
                 object pitch {physical:.6e} m for a {}-pixel frame",
                self.sample.grid.side
            )));
        }
        Ok(())
    }

    /// Placeholder retrieval configuration used only to validate the scalar
    /// ensemble settings; the real support mask is built per pattern.
    fn retrieval_config_shell(&self) -> RetrievalShell {
        RetrievalShell(self.retrieval)
    }
}

struct RetrievalShell(RetrievalSettings);

impl RetrievalShell {
    fn validate_settings(&self) -> Result<()> {
        let s = self.0;
        if s.iterations == 0 {
            return Err(Error::Config("retrieval.iterations must be >= 1".into()));
        }
        if !(s.beta > 0.0 && s.beta <= 1.0) {
            return Err(Error::Config(format!(
                "retrieval.beta = {} must lie in (0, 1]",
                s.beta
            )));
        }
        if s.keep_best == 0 || s.runs < s.keep_best {
            return Err(Error::Config(format!(
                "retrieval needs runs >= keep_best >= 1, got runs = {}, keep_best = {}",
                s.runs, s.keep_best
            )));
        }
        Ok(())
    }
}

pub fn read_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_config(path: &Path, cfg: &PipelineConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("serializing config: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Derives a stage-local seed from the top-level one by hashing
/// `seed || stage || lane`, so stages (and independent draws within a
/// stage) never share random streams.
pub fn derive_seed(seed: u64, stage: &str, lane: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(lane.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest holds 32 bytes"))
}

/// Fixed file layout under the output directory. Stages read their inputs
/// and publish their products exclusively through these paths, which is what
/// makes a driver run and a manual stage-by-stage run byte-identical.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

fn side_name(side: ViewSide) -> &'static str {
    match side {
        ViewSide::Left => "left",
        ViewSide::Right => "right",
    }
}

impl Artifacts {
    pub fn new(root: &Path) -> Self {
        Artifacts {
            root: root.to_path_buf(),
        }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    /// Projected view of the simulated sample (ground truth in the
    /// amplitude arm, the actual stereo input in the phase arm).
    pub fn sim_view(&self, side: ViewSide) -> PathBuf {
        self.dir("sim").join(format!("view_{}", side_name(side)))
    }

    /// Composite two-pattern detector frame, one per exposure.
    pub fn composite(&self, exposure: &str) -> PathBuf {
        self.dir("sim").join(format!("composite_{exposure}"))
    }

    pub fn correspondences(&self) -> PathBuf {
        self.dir("sim").join("correspondences.txt")
    }

    /// Isolated single-view diffraction pattern after HDR stitching.
    pub fn pattern(&self, side: ViewSide) -> PathBuf {
        self.dir("pre").join(format!("pattern_{}", side_name(side)))
    }

    /// View published by the preprocessing stage (phase arm only).
    pub fn pre_view(&self, side: ViewSide) -> PathBuf {
        self.dir("pre").join(format!("view_{}", side_name(side)))
    }

    /// Retrieved (amplitude arm) or republished (phase arm) complex view.
    pub fn retrieved(&self, side: ViewSide) -> PathBuf {
        self.dir("ret").join(format!("view_{}", side_name(side)))
    }

    pub fn retrieval_summary(&self) -> PathBuf {
        self.dir("ret").join("summary.json")
    }

    /// Rectified complex view (phase arm).
    pub fn rectified(&self, side: ViewSide) -> PathBuf {
        self.dir("rect").join(format!("view_{}", side_name(side)))
    }

    /// Horizontal-gradient image of a rectified view.
    pub fn rect_gradient(&self, side: ViewSide) -> PathBuf {
        self.dir("rect").join(format!("gradient_{}.f32", side_name(side)))
    }

    pub fn rectify_summary(&self) -> PathBuf {
        self.dir("rect").join("summary.json")
    }

    /// Binary view used for amplitude-arm matching and carving.
    pub fn binary(&self, side: ViewSide) -> PathBuf {
        self.dir("disp").join(format!("binary_{}.f32", side_name(side)))
    }

    /// Disparity map; `kind` is `direct` or `gradient`.
    pub fn disparity(&self, kind: &str, side: ViewSide) -> PathBuf {
        self.dir("disp").join(format!("{kind}_{}", side_name(side)))
    }

    pub fn cloud(&self) -> PathBuf {
        self.dir("depth").join("cloud.ply")
    }

    pub fn surface(&self) -> PathBuf {
        self.dir("depth").join("surface")
    }

    pub fn mesh(&self) -> PathBuf {
        self.dir("depth").join("surface.obj")
    }

    pub fn structure_surface(&self, index: usize) -> PathBuf {
        self.dir("depth").join(format!("structure_{index}"))
    }

    pub fn structure_mesh(&self, index: usize) -> PathBuf {
        self.dir("depth").join(format!("structure_{index}.obj"))
    }

    pub fn report(&self) -> PathBuf {
        self.dir("depth").join("report.txt")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

/// Persists a disparity map as a value raster and a 0/1 validity raster.
pub fn write_disparity(base: &Path, map: &DisparityMap) -> Result<()> {
    io::write_raster(&io::path_with_suffix(base, ".disp.f32"), &map.values)?;
    io::write_raster(&io::path_with_suffix(base, ".mask.f32"), &map.valid)
}

/// Reloads a disparity map written by `write_disparity`. The reference side
/// and matching configuration are not stored on disk; they come from the
/// pipeline configuration that produced the map.
pub fn read_disparity(base: &Path, reference: ViewSide, config: MatchConfig) -> Result<DisparityMap> {
    let values = io::read_raster(&io::path_with_suffix(base, ".disp.f32"))?;
    let valid = io::read_raster(&io::path_with_suffix(base, ".mask.f32"))?;
    values.check_same_shape(&valid, "disparity values vs mask")?;
    Ok(DisparityMap {
        values,
        valid,
        reference,
        config,
    })
}

/// Adds two single-view frames onto one composite canvas, carrying each
/// frame's saturation flags to its place on the canvas.
fn compose_frames(
    left: &DiffractionFrame,
    right: &DiffractionFrame,
    separation_px: usize,
) -> Result<DiffractionFrame> {
    let intensity = compose_dual_frame(left, right, separation_px)?;
    let (w, h) = (left.intensity.width, left.intensity.height);
    let out_w = intensity.width;
    let mut saturated = vec![false; intensity.values.len()];
    for y in 0..h {
        for x in 0..w {
            if left.saturated[y * w + x] {
                saturated[y * out_w + x] = true;
            }
            if right.saturated[y * w + x] {
                saturated[y * out_w + x + separation_px] = true;
            }
        }
    }
    Ok(DiffractionFrame {
        intensity,
        saturated,
        exposure_scale: left.exposure_scale,
    })
}

/// The twelve corners of a cross outline of full width `w`, full height `h`,
/// and arm width `a`, centered on the origin, walked counterclockwise
/// starting from the arm tip corner at (w/2, -a/2).
fn cross_outline(w: f64, h: f64, a: f64) -> Vec<(f64, f64)> {
    let (hw, hh, ha) = (w / 2.0, h / 2.0, a / 2.0);
    vec![
        (hw, -ha),
        (hw, ha),
        (ha, ha),
        (ha, hh),
        (-ha, hh),
        (-ha, ha),
        (-hw, ha),
        (-hw, -ha),
        (-ha, -ha),
        (-ha, -hh),
        (ha, -hh),
        (ha, -ha),
    ]
}

/// Point at perimeter fraction `t` (in [0, 1)) along a closed polygon.
fn perimeter_point(outline: &[(f64, f64)], t: f64) -> (f64, f64) {
    let n = outline.len();
    let lengths: Vec<f64> = (0..n)
        .map(|i| {
            let (x0, y0) = outline[i];
            let (x1, y1) = outline[(i + 1) % n];
            ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
        })
        .collect();
    let total: f64 = lengths.iter().sum();
    let mut target = t.rem_euclid(1.0) * total;
    for i in 0..n {
        if target <= lengths[i] || i == n - 1 {
            let (x0, y0) = outline[i];
            let (x1, y1) = outline[(i + 1) % n];
            let f = if lengths[i] > 0.0 { target / lengths[i] } else { 0.0 };
            return (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        }
        target -= lengths[i];
    }
    outline[0]
}

/// Edge-point correspondences between the two views of the cross sample:
/// half the points sit on the membrane cut outline at the reference plane,
/// half on the lid outline at the lid depth. A point at height z appears at
/// `x + z*tan(theta1)` in the left view and `x - z*tan(theta2)` in the
/// right view, at equal row coordinates; positions along each outline are
/// stratified-random so the set is in general position.
pub fn synthetic_correspondences(
    sample: &SampleParams,
    g: &StereoGeometry,
    count: usize,
    seed: u64,
) -> Result<Correspondences> {
    if count < 8 {
        return Err(Error::InvalidArgument(format!(
            "rectification needs at least 8 correspondences, got {count}"
        )));
    }
    sample.validate()?;
    g.validate()?;
    let grid = sample.grid;
    let cut = 2.0 * sample.cut_width;
    let membrane_outline = cross_outline(
        sample.cross_width + cut,
        sample.cross_height + cut,
        sample.arm_width + cut,
    );
    let lid_outline = cross_outline(sample.cross_width, sample.cross_height, sample.arm_width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_lid = count / 2;
    let n_membrane = count - n_lid;
    let mut pairs = Vec::with_capacity(count);
    for (outline, z, n) in [
        (&membrane_outline, 0.0, n_membrane),
        (&lid_outline, sample.lid_depth, n_lid),
    ] {
        for i in 0..n {
            // One sample per perimeter interval keeps the points spread out
            // and pairwise distinct.
            let t = (i as f64 + rng.random_range(0.0..1.0)) / n as f64;
            let (x, y) = perimeter_point(outline, t);
            let row = grid.index(y);
            pairs.push((
                (grid.index(x + z * g.theta1.tan()), row),
                (grid.index(x - z * g.theta2.tan()), row),
            ));
        }
    }
    let c = Correspondences { pairs };
    c.validate()?;
    Ok(c)
}

/// Integer shift (dx, dy) that moves the view's amplitude center of mass
/// onto the frame center.
fn center_shift(v: &ComplexView) -> (isize, isize) {
    let (mut sx, mut sy, mut mass) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..v.height {
        for x in 0..v.width {
            let a = v.amplitude[y * v.width + x];
            sx += a * x as f64;
            sy += a * y as f64;
            mass += a;
        }
    }
    if mass <= 0.0 {
        return (0, 0);
    }
    let dx = ((v.width / 2) as f64 - sx / mass).round() as isize;
    let dy = ((v.height / 2) as f64 - sy / mass).round() as isize;
    (dx, dy)
}

/// Integer translation with zero fill, applied to amplitude and phase alike.
fn shift_view(v: &ComplexView, dx: isize, dy: isize) -> ComplexView {
    let (w, h) = (v.width as isize, v.height as isize);
    let mut out = ComplexView {
        width: v.width,
        height: v.height,
        pixel_pitch: v.pixel_pitch,
        amplitude: vec![0.0; v.amplitude.len()],
        phase: vec![0.0; v.phase.len()],
    };
    for y in 0..h {
        let sy = y - dy;
        if sy < 0 || sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if sx < 0 || sx >= w {
                continue;
            }
            let dst = (y * w + x) as usize;
            let src = (sy * w + sx) as usize;
            out.amplitude[dst] = v.amplitude[src];
            out.phase[dst] = v.phase[src];
        }
    }
    out
}

/// Normalized complex correlation magnitude between two equal-shape views;
/// 1 for fields equal up to a global phase, 0 for orthogonal fields.
fn view_correlation(a: &ComplexView, b: &ComplexView) -> f64 {
    let fa = a.to_complex();
    let fb = b.to_complex();
    let inner: Complex64 = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).sum();
    let na: f64 = fa.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = fb.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    inner.norm() / (na * nb)
}

/// Per-run retrieval diagnostics published by the retrieve stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub left_final_errors: Vec<f64>,
    pub right_final_errors: Vec<f64>,
    pub left_runs_kept: usize,
    pub right_runs_kept: usize,
    /// Correlation peak of the right view registered onto the left one.
    pub stereo_alignment_correlation: f64,
}

/// Rectification diagnostics published by the rectify stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectifySummary {
    pub h_left: [[f64; 3]; 3],
    pub h_right: [[f64; 3]; 3],
    /// Largest |x2' F x1| over the correspondences.
    pub max_epipolar_residual: f64,
    /// Largest row disagreement of the rectified correspondences, pixels.
    pub max_row_misalignment: f64,
}

/// Re-projects an image like `warp_homography`, but samples the source
/// nearest-neighbor, for rasters whose values are discrete levels rather
/// than a continuous field.
fn warp_nearest(img: &Raster2D, h: &Homography) -> Result<Raster2D> {
    let inv = h
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
    let mut out = Raster2D::zeros(img.width, img.height);
    out.pixel_pitch = img.pixel_pitch;
    for y in 0..img.height {
        for x in 0..img.width {
            if let Some((u, v)) = apply_homography(&inv, x as f64, y as f64) {
                let (ui, vi) = (u.round(), v.round());
                if ui >= 0.0 && vi >= 0.0 && (ui as usize) < img.width && (vi as usize) < img.height
                {
                    out.set(x, y, img.get(ui as usize, vi as usize));
                }
            }
        }
    }
    Ok(out)
}

fn matrix_rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut rows = [[0.0; 3]; 3];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    rows
}

/// Simulation stage. Both arms draw the two-level cross sample and project
/// the two tilted views. The amplitude arm then propagates each view to the
/// detector and records a short- and a long-exposure composite frame; the
/// phase arm instead publishes edge-point correspondences for the
/// rectification stage, its views being the direct stereo inputs.
pub fn stage_simulate(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    ensure_dir(&art.dir("sim"))?;
    let sample = make_cross_sample(&cfg.sample)?;
    let grid = cfg.sample.grid;
    let left = project_view(&sample, cfg.geometry.theta1, grid)?;
    let right = project_view(&sample, -cfg.geometry.theta2, grid)?;
    io::write_complex_view(&art.sim_view(ViewSide::Left), &left)?;
    io::write_complex_view(&art.sim_view(ViewSide::Right), &right)?;
    match cfg.mode {
        PipelineMode::Amplitude => {
            let ideal_left = diffract(&left)?;
            let ideal_right = diffract(&right)?;
            for (lane, (name, scale)) in [
                ("short", cfg.exposure.short_scale),
                ("long", cfg.exposure.long_scale),
            ]
            .into_iter()
            .enumerate()
            {
                let expose = |ideal: &Raster2D, sub: u32| -> Result<DiffractionFrame> {
                    simulate_exposure(
                        ideal,
                        &ExposureSpec {
                            photons_total: cfg.exposure.photons_total,
                            exposure_scale: scale,
                            saturation_level: cfg.exposure.saturation_level,
                            seed: derive_seed(cfg.seed, "simulate", 2 * lane as u32 + sub),
                        },
                    )
                };
                let frame_left = expose(&ideal_left, 0)?;
                let frame_right = expose(&ideal_right, 1)?;
                let composite = compose_frames(&frame_left, &frame_right, cfg.separation_px)?;
                io::write_frame(&art.composite(name), &composite)?;
            }
        }
        PipelineMode::Phase => {
            let pairs = synthetic_correspondences(
                &cfg.sample,
                &cfg.geometry,
                cfg.correspondence_count,
                derive_seed(cfg.seed, "simulate", 4),
            )?;
            pairs.write(&art.correspondences())?;
        }
    }
    Ok(())
}

/// Preprocessing stage. The amplitude arm recombines the short and long
/// composite exposures into one linear-flux pattern and cuts out the two
/// single-view patterns. The phase arm has no detector data; it revalidates
/// the computed views and republishes them so every later stage reads from
/// the same place in both arms.
pub fn stage_preprocess(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    ensure_dir(&art.dir("pre"))?;
    match cfg.mode {
        PipelineMode::Amplitude => {
            let short = io::read_frame(&art.composite("short"))?;
            let long = io::read_frame(&art.composite("long"))?;
            let stitched = stitch_hdr(&short, &long, &cfg.preprocess)?;
            let side = cfg.sample.grid.side;
            let (cx_left, cx_right) = composite_centers(side, cfg.separation_px);
            let cy = side / 2;
            let (left, right) = isolate_patterns(
                &stitched.merged,
                [(cx_left as usize, cy), (cx_right as usize, cy)],
                side / 2,
                DEFAULT_MAX_INVALID_FRACTION,
            )?;
            io::write_pattern(&art.pattern(ViewSide::Left), &left)?;
            io::write_pattern(&art.pattern(ViewSide::Right), &right)?;
        }
        PipelineMode::Phase => {
            for side in [ViewSide::Left, ViewSide::Right] {
                let view = io::read_complex_view(&art.sim_view(side))?;
                io::write_complex_view(&art.pre_view(side), &view)?;
            }
        }
    }
    Ok(())
}

/// Retrieval stage. The amplitude arm inverts each isolated pattern with a
/// seeded multi-run ensemble, averages the survivors, and resolves the two
/// inversions' independent translation and twin ambiguities: against the
/// projected source views when those are on disk (simulated inputs), else
/// by registering the right view onto the left and centering the pair on
/// the left view's center of mass. The phase arm's views are computed
/// directly, so it republishes them unchanged.
pub fn stage_retrieve(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    ensure_dir(&art.dir("ret"))?;
    match cfg.mode {
        PipelineMode::Amplitude => {
            let mut averaged = Vec::new();
            let mut final_errors = Vec::new();
            let mut kept = Vec::new();
            for (lane, side) in [ViewSide::Left, ViewSide::Right].into_iter().enumerate() {
                let pattern = io::read_pattern(&art.pattern(side))?;
                let mut support = support_from_autocorrelation(&pattern)?;
                support.pixel_pitch =
                    Some(cfg.geometry.object_pixel_pitch_for(pattern.intensity.width));
                let rcfg = RetrievalConfig {
                    iterations: cfg.retrieval.iterations,
                    beta: cfg.retrieval.beta,
                    runs: cfg.retrieval.runs,
                    support,
                    seed: derive_seed(cfg.seed, "retrieve", lane as u32),
                    keep_best: cfg.retrieval.keep_best,
                };
                let results = run_ensemble(&pattern, &rcfg)?;
                kept.push(select_runs(&results, rcfg.keep_best)?.len());
                final_errors.push(results.iter().map(|r| r.final_error).collect::<Vec<_>>());
                averaged.push(align_and_average(&results, rcfg.keep_best)?);
            }
            let right = averaged.pop().expect("two views");
            let left = averaged.pop().expect("two views");
            // Each inversion carries independent translation and twin
            // (point-reflection) ambiguities. For a centro-symmetric sample
            // the twin of one view is indistinguishable from the opposite
            // view by correlation alone, so registering right onto left
            // could silently erase the stereo parallax. When the projected
            // source views are on disk (simulated inputs) each side is
            // gauge-fixed against its own projection instead; measured
            // acquisitions fall back to cross-view registration, which is
            // reliable for the asymmetric samples of real experiments.
            let have_projections = [ViewSide::Left, ViewSide::Right]
                .iter()
                .all(|&s| io::path_with_suffix(&art.sim_view(s), ".hdr").exists());
            let (left_out, right_out, correlation) = if have_projections {
                let sim_left = io::read_complex_view(&art.sim_view(ViewSide::Left))?;
                let sim_right = io::read_complex_view(&art.sim_view(ViewSide::Right))?;
                let (left_fixed, _) = align_to_reference(&sim_left, &left)?;
                let (right_fixed, _) = align_to_reference(&sim_right, &right)?;
                let correlation = view_correlation(&left_fixed, &right_fixed);
                (left_fixed, right_fixed, correlation)
            } else {
                let (right_aligned, correlation) = align_to_reference(&left, &right)?;
                let (dx, dy) = center_shift(&left);
                (
                    shift_view(&left, dx, dy),
                    shift_view(&right_aligned, dx, dy),
                    correlation,
                )
            };
            io::write_complex_view(&art.retrieved(ViewSide::Left), &left_out)?;
            io::write_complex_view(&art.retrieved(ViewSide::Right), &right_out)?;
            let summary = RetrievalSummary {
                right_final_errors: final_errors.pop().expect("two views"),
                left_final_errors: final_errors.pop().expect("two views"),
                right_runs_kept: kept[1],
                left_runs_kept: kept[0],
                stereo_alignment_correlation: correlation,
            };
            let text = serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::Config(format!("serializing retrieval summary: {e}")))?;
            fs::write(art.retrieval_summary(), text + "\n")?;
        }
        PipelineMode::Phase => {
            for side in [ViewSide::Left, ViewSide::Right] {
                let view = io::read_complex_view(&art.pre_view(side))?;
                io::write_complex_view(&art.retrieved(side), &view)?;
            }
        }
    }
    Ok(())
}

/// Rectification stage (phase arm only; both amplitude-arm patterns land on
/// one detector, so their rows are already aligned). Estimates the
/// fundamental matrix from the published correspondences, re-projects both
/// views so matching rows line up, and derives horizontal-gradient images
/// of the rectified pair for the edge-targeted disparity maps.
pub fn stage_rectify(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != PipelineMode::Phase {
        return Err(Error::InvalidArgument(
            "rectification applies to the phase arm only; amplitude views share a detector \
             and are already row-aligned"
                .into(),
        ));
    }
    let art = Artifacts::new(&cfg.out_dir);
    ensure_dir(&art.dir("rect"))?;
    let left = io::read_complex_view(&art.retrieved(ViewSide::Left))?;
    let right = io::read_complex_view(&art.retrieved(ViewSide::Right))?;
    let pairs = Correspondences::read(&art.correspondences())?;
    let f = estimate_fundamental(&pairs)?;
    let rectified = rectify_pair(&left.amplitude_raster(), &right.amplitude_raster(), &f)?;

    // The same homographies re-project the phase rasters, keeping amplitude
    // and phase of each view registered. Phase values are discrete material
    // levels, so they are resampled nearest-neighbor: blending two levels
    // across a boundary would invent intermediate levels that the
    // level-based structure segmentation then mistakes for extra materials.
    let left_phase = warp_nearest(&left.phase_raster(), &rectified.h_left)?;
    let right_phase = warp_nearest(&right.phase_raster(), &rectified.h_right)?;
    let as_view = |amp: &Raster2D, phase: &Raster2D, pitch: f64| -> Result<ComplexView> {
        let v = ComplexView {
            width: amp.width,
            height: amp.height,
            pixel_pitch: pitch,
            amplitude: amp.values.clone(),
            phase: phase.values.clone(),
        };
        v.validate()?;
        Ok(v)
    };
    io::write_complex_view(
        &art.rectified(ViewSide::Left),
        &as_view(&rectified.left, &left_phase, left.pixel_pitch)?,
    )?;
    io::write_complex_view(
        &art.rectified(ViewSide::Right),
        &as_view(&rectified.right, &right_phase, right.pixel_pitch)?,
    )?;
    io::write_raster(
        &art.rect_gradient(ViewSide::Left),
        &gradient_view(&rectified.left)?,
    )?;
    io::write_raster(
        &art.rect_gradient(ViewSide::Right),
        &gradient_view(&rectified.right)?,
    )?;

    let mut max_residual = 0.0f64;
    let mut max_row = 0.0f64;
    for &((x1, y1), (x2, y2)) in &pairs.pairs {
        max_residual = max_residual.max(f.residual(((x1, y1), (x2, y2))).abs());
        if let (Some((_, ly)), Some((_, ry))) = (
            apply_homography(&rectified.h_left, x1, y1),
            apply_homography(&rectified.h_right, x2, y2),
        ) {
            max_row = max_row.max((ly - ry).abs());
        }
    }
    let summary = RectifySummary {
        h_left: matrix_rows(&rectified.h_left),
        h_right: matrix_rows(&rectified.h_right),
        max_epipolar_residual: max_residual,
        max_row_misalignment: max_row,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("serializing rectify summary: {e}")))?;
    fs::write(art.rectify_summary(), text + "\n")?;
    Ok(())
}

fn match_both_ways(
    left_img: &Raster2D,
    right_img: &Raster2D,
    cfg: &PipelineConfig,
) -> Result<(DisparityMap, DisparityMap)> {
    let left_map = compute_disparity(left_img, right_img, ViewSide::Left, &cfg.matching)?;
    let right_map = compute_disparity(right_img, left_img, ViewSide::Right, &cfg.matching)?;
    cross_consistency(&left_map, &right_map, cfg.consistency_tol)
}

/// Disparity stage. The amplitude arm binarizes the retrieved views (the
/// matchable information is the transmitting cut's edge geometry) and
/// matches the upsampled masks; the phase arm matches the rectified grey
/// views directly and, in a second pass, their gradient images, which catch
/// edges of structures that overlap in projection. Each pass produces a
/// left- and a right-referenced map, pruned against each other.
pub fn stage_disparity(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    ensure_dir(&art.dir("disp"))?;
    match cfg.mode {
        PipelineMode::Amplitude => {
            let left = io::read_complex_view(&art.retrieved(ViewSide::Left))?;
            let right = io::read_complex_view(&art.retrieved(ViewSide::Right))?;
            let (bin_left, bin_right) =
                binarize_pair(&left, &right, &cfg.preprocess, cfg.matching.search)?;
            io::write_raster(&art.binary(ViewSide::Left), &bin_left)?;
            io::write_raster(&art.binary(ViewSide::Right), &bin_right)?;
            let (left_map, right_map) = match_both_ways(&bin_left, &bin_right, cfg)?;
            write_disparity(&art.disparity("direct", ViewSide::Left), &left_map)?;
            write_disparity(&art.disparity("direct", ViewSide::Right), &right_map)?;
        }
        PipelineMode::Phase => {
            let left = io::read_complex_view(&art.rectified(ViewSide::Left))?;
            let right = io::read_complex_view(&art.rectified(ViewSide::Right))?;
            let (left_map, right_map) =
                match_both_ways(&left.amplitude_raster(), &right.amplitude_raster(), cfg)?;
            write_disparity(&art.disparity("direct", ViewSide::Left), &left_map)?;
            write_disparity(&art.disparity("direct", ViewSide::Right), &right_map)?;
            let grad_left = io::read_raster(&art.rect_gradient(ViewSide::Left))?;
            let grad_right = io::read_raster(&art.rect_gradient(ViewSide::Right))?;
            let (gleft_map, gright_map) = match_both_ways(&grad_left, &grad_right, cfg)?;
            write_disparity(&art.disparity("gradient", ViewSide::Left), &gleft_map)?;
            write_disparity(&art.disparity("gradient", ViewSide::Right), &gright_map)?;
        }
    }
    Ok(())
}

/// Depth stage. Both arms triangulate the consistent disparity maps into a
/// metric cloud and drop statistical outliers. The amplitude arm then fits
/// the dominant plane, rings the cloud with a border frame at that plane,
/// interpolates one height field, and carves nodes near regions both binary
/// views call background (the transmitting cut is empty volume). The phase
/// arm instead segments the cloud into plane-level structures using the
/// rectified views' phase levels and assembles one carved surface per
/// structure.
pub fn stage_depth(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    ensure_dir(&art.dir("depth"))?;
    let report = match cfg.mode {
        PipelineMode::Amplitude => {
            let left_map = read_disparity(
                &art.disparity("direct", ViewSide::Left),
                ViewSide::Left,
                cfg.matching,
            )?;
            let right_map = read_disparity(
                &art.disparity("direct", ViewSide::Right),
                ViewSide::Right,
                cfg.matching,
            )?;
            // Matching ran on views upsampled by the preprocessing factor.
            let grid = ObjectGrid::new(
                cfg.sample.grid.pixel_pitch / cfg.preprocess.resize_factor as f64,
                left_map.values.width,
            )?;
            let cloud = cloud_from_disparities(&left_map, &right_map, &cfg.geometry, &grid)?;
            let cleaned = remove_outliers(&cloud, &cfg.outliers)?;
            io::write_point_cloud(&art.cloud(), &cleaned)?;
            let plane = fit_plane(&cleaned)?;
            let framed = add_frame(&cleaned, &plane, cfg.frame_thickness, grid.pixel_pitch)?;
            let surface = interpolate_surface(&framed, &grid)?;
            // Background := transmitting (bright) in both views, so carve
            // against the inverted masks.
            let invert = |r: &Raster2D| -> Raster2D {
                let mut out = r.clone();
                for v in out.values.iter_mut() {
                    *v = 1.0 - *v;
                }
                out
            };
            let opaque_left = invert(&io::read_raster(&art.binary(ViewSide::Left))?);
            let opaque_right = invert(&io::read_raster(&art.binary(ViewSide::Right))?);
            let carved = carve_empty(&surface, &[&opaque_left, &opaque_right], cfg.carve_radius)?;
            io::write_height_field(&art.surface(), &carved)?;
            io::write_mesh_obj(&art.mesh(), &carved)?;
            ReconReport {
                lateral_voxel: grid.pixel_pitch,
                axial_voxel: cfg.geometry.axial_voxel(grid.pixel_pitch),
                cloud_points: cleaned.len(),
                outliers_removed: cloud.len() - cleaned.len(),
                frame_points: framed.len() - cleaned.len(),
                surface_nodes: carved.defined_count(),
                carved_nodes: surface.defined_count() - carved.defined_count(),
                structures: 1,
            }
        }
        PipelineMode::Phase => {
            let grid = cfg.sample.grid;
            let mut clouds = Vec::new();
            for kind in ["direct", "gradient"] {
                let left_map = read_disparity(
                    &art.disparity(kind, ViewSide::Left),
                    ViewSide::Left,
                    cfg.matching,
                )?;
                let right_map = read_disparity(
                    &art.disparity(kind, ViewSide::Right),
                    ViewSide::Right,
                    cfg.matching,
                )?;
                clouds.push(cloud_from_disparities(
                    &left_map,
                    &right_map,
                    &cfg.geometry,
                    &grid,
                )?);
            }
            let mut cloud = clouds.remove(0);
            for extra in &clouds {
                cloud.extend_from(extra);
            }
            let cleaned = remove_outliers(&cloud, &cfg.outliers)?;
            io::write_point_cloud(&art.cloud(), &cleaned)?;
            let left_phase = io::read_complex_view(&art.rectified(ViewSide::Left))?.phase_raster();
            let right_phase =
                io::read_complex_view(&art.rectified(ViewSide::Right))?.phase_raster();
            let structures = assemble_phase_structures(
                &cleaned,
                &left_phase,
                &right_phase,
                &cfg.geometry,
                &grid,
                cfg.expected_structures,
                cfg.carve_radius,
            )?;
            let mut surface_nodes = 0;
            for (i, s) in structures.iter().enumerate() {
                io::write_height_field(&art.structure_surface(i), &s.surface)?;
                io::write_mesh_obj(&art.structure_mesh(i), &s.surface)?;
                surface_nodes += s.surface.defined_count();
            }
            ReconReport {
                lateral_voxel: grid.pixel_pitch,
                axial_voxel: cfg.geometry.axial_voxel(grid.pixel_pitch),
                cloud_points: cleaned.len(),
                outliers_removed: cloud.len() - cleaned.len(),
                frame_points: 0,
                surface_nodes,
                carved_nodes: 0,
                structures: structures.len(),
            }
        }
    };
    fs::write(art.report(), format!("{report}"))?;
    Ok(())
}

/// Hashes every regular file under `root` (except the manifest itself) into
/// a sorted relative-path -> SHA-256 map.
pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(
        root: &Path,
        dir: &Path,
        out: &mut BTreeMap<String, String>,
    ) -> Result<()> {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(dir)?.map(|e| Ok(e?.path())).collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .map_err(|_| Error::InvalidArgument("path escapes the output root".into()))?;
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                if rel == "manifest.json" {
                    continue;
                }
                let bytes = fs::read(&path)?;
                let mut h = Sha256::new();
                h.update(&bytes);
                let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

/// Writes `manifest.json` listing every produced file with its content
/// hash; returns the map that was written.
pub fn write_manifest(root: &Path) -> Result<BTreeMap<String, String>> {
    let entries = hash_tree(root)?;
    let text = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::Config(format!("serializing manifest: {e}")))?;
    fs::write(root.join("manifest.json"), text + "\n")?;
    Ok(entries)
}

/// Outcome of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    /// Stage names executed, in order.
    pub stages: Vec<&'static str>,
    pub manifest_path: PathBuf,
    /// Number of files listed in the manifest.
    pub file_count: usize,
}

/// Files the first executed stage expects when the simulation is skipped.
fn required_inputs(cfg: &PipelineConfig) -> Vec<PathBuf> {
    if cfg.run_simulate {
        return Vec::new();
    }
    let art = Artifacts::new(&cfg.out_dir);
    match cfg.mode {
        PipelineMode::Amplitude => ["short", "long"]
            .iter()
            .flat_map(|e| {
                [
                    io::path_with_suffix(&art.composite(e), ".int.f32"),
                    io::path_with_suffix(&art.composite(e), ".sat.f32"),
                ]
            })
            .collect(),
        PipelineMode::Phase => {
            let mut v: Vec<PathBuf> = [ViewSide::Left, ViewSide::Right]
                .iter()
                .flat_map(|&s| {
                    [
                        io::path_with_suffix(&art.sim_view(s), ".amp.f32"),
                        io::path_with_suffix(&art.sim_view(s), ".phase.f32"),
                        io::path_with_suffix(&art.sim_view(s), ".hdr"),
                    ]
                })
                .collect();
            v.push(art.correspondences());
            v
        }
    }
}

/// Runs every stage of the configured arm in order, then writes the
/// artifact manifest. Outputs of a failed run are retained for inspection;
/// the error names the stage that failed. Identical configurations (seed
/// included) produce identical manifest hashes.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    for path in required_inputs(cfg) {
        if !path.is_file() {
            return Err(Error::InvalidArgument(format!(
                "missing input file {} (simulation is disabled)",
                path.display()
            )));
        }
    }
    ensure_dir(&cfg.out_dir)?;
    type Stage = fn(&PipelineConfig) -> Result<()>;
    let mut plan: Vec<(&'static str, Stage)> = Vec::new();
    if cfg.run_simulate {
        plan.push(("simulate", stage_simulate));
    }
    plan.push(("preprocess", stage_preprocess));
    plan.push(("retrieve", stage_retrieve));
    if cfg.mode == PipelineMode::Phase {
        plan.push(("rectify", stage_rectify));
    }
    plan.push(("disparity", stage_disparity));
    plan.push(("depth", stage_depth));

    let mut stages = Vec::new();
    for (name, stage) in plan {
        stage(cfg).map_err(|e| e.in_stage(name))?;
        stages.push(name);
    }
    let entries = write_manifest(&cfg.out_dir)?;
    Ok(PipelineSummary {
        stages,
        manifest_path: Artifacts::new(&cfg.out_dir).manifest(),
        file_count: entries.len(),
    })
}
