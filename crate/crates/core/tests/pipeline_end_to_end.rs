//! Full-pipeline runs on a reduced 64-pixel frame: every stage of each arm
//! executes, artifacts land where the layout says they do, reruns into
//! different directories are bit-identical, and the driver matches a manual
//! stage-by-stage invocation.

use std::fs;
use std::path::Path;

use stereo_cdi::io;
use stereo_cdi::pipeline::{
    hash_tree, run_pipeline, stage_depth, stage_disparity, stage_preprocess, stage_rectify,
    stage_retrieve, stage_simulate, write_manifest, Artifacts, PipelineConfig, RetrievalSettings,
};
use stereo_cdi::{HeightField, ObjectGrid, ViewSide};

/// Amplitude-arm configuration scaled down to a 64-pixel frame: the sample
/// is enlarged to stay several pixels wide at the coarser pitch, exposure
/// and ensemble sizes are cut for speed, and the despeckle area is reduced
/// below the (smaller) trench area.
fn smoke_amplitude(out_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::amplitude_defaults();
    let side = 64;
    cfg.geometry.roi_side = side;
    cfg.sample.grid = ObjectGrid::new(cfg.geometry.object_pixel_pitch_for(side), side).unwrap();
    cfg.sample.cross_width = 12e-6;
    cfg.sample.cross_height = 10e-6;
    cfg.sample.arm_width = 4e-6;
    cfg.sample.cut_width = 1.6e-6;
    cfg.sample.lid_depth = 2e-6;
    cfg.exposure.photons_total = 1e6;
    cfg.separation_px = 56;
    cfg.retrieval = RetrievalSettings {
        iterations: 60,
        beta: 0.9,
        runs: 6,
        keep_best: 6,
    };
    cfg.preprocess.resize_factor = 2;
    cfg.preprocess.min_region = 40;
    cfg.matching.search = 12;
    cfg.outliers.k = 20;
    cfg.frame_thickness = 2;
    cfg.seed = 11;
    cfg.out_dir = out_dir.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

/// Phase-arm counterpart on the same 64-pixel frame; the lid offset is
/// raised to roughly one and a half depth quanta of the 12-degree geometry
/// so the two levels stay separable.
fn smoke_phase(out_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::phase_defaults();
    let side = 64;
    cfg.geometry.roi_side = side;
    cfg.sample.grid = ObjectGrid::new(cfg.geometry.object_pixel_pitch_for(side), side).unwrap();
    cfg.sample.cross_width = 12e-6;
    cfg.sample.cross_height = 10e-6;
    cfg.sample.arm_width = 4e-6;
    cfg.sample.cut_width = 1.6e-6;
    cfg.sample.lid_depth = 5e-6;
    cfg.matching.search = 8;
    cfg.outliers.k = 20;
    cfg.seed = 13;
    cfg.out_dir = out_dir.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

fn mean_defined_z(h: &HeightField) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (z, &d) in h.z.iter().zip(&h.defined) {
        if d {
            sum += z;
            n += 1;
        }
    }
    assert!(n > 0, "surface has no defined nodes");
    sum / n as f64
}

#[test]
fn amplitude_pipeline_produces_a_carved_surface() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_amplitude(&dir.path().join("run"));
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(
        summary.stages,
        vec!["simulate", "preprocess", "retrieve", "disparity", "depth"]
    );
    assert!(summary.manifest_path.is_file());
    assert_eq!(summary.file_count, hash_tree(&cfg.out_dir).unwrap().len());

    let art = Artifacts::new(&cfg.out_dir);
    let binary = io::read_raster(&art.binary(ViewSide::Left)).unwrap();
    assert_eq!(binary.width, 64 * cfg.preprocess.resize_factor);

    let cloud = io::read_point_cloud(&art.cloud()).unwrap();
    assert!(
        cloud.len() > cfg.outliers.k,
        "only {} matched points",
        cloud.len()
    );
    // The retrieval stage anchors the shared trench plane at zero
    // disparity, so the bulk of the matched edge points must sit near
    // z = 0. Allow a couple of depth quanta for the center-of-mass
    // registration residual.
    let mut zs: Vec<f64> = cloud.points.iter().map(|p| p[2]).collect();
    zs.sort_by(f64::total_cmp);
    let median_z = zs[zs.len() / 2];
    let resized_pitch = cfg.sample.grid.pixel_pitch / cfg.preprocess.resize_factor as f64;
    let axial = cfg.geometry.axial_voxel(resized_pitch);
    assert!(
        median_z.abs() <= 2.5 * axial,
        "median depth {median_z:.3e} m strays from the reference plane (axial quantum {axial:.3e} m)"
    );

    let surface = io::read_height_field(&art.surface()).unwrap();
    assert!(surface.defined_count() > 0);
    assert!(art.mesh().is_file());
    let report = fs::read_to_string(art.report()).unwrap();
    assert!(report.contains("structures"), "report was: {report}");
}

#[test]
fn phase_pipeline_resolves_both_structures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_phase(&dir.path().join("run"));
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(
        summary.stages,
        vec![
            "simulate",
            "preprocess",
            "retrieve",
            "rectify",
            "disparity",
            "depth"
        ]
    );

    let art = Artifacts::new(&cfg.out_dir);
    let rect: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(art.rectify_summary()).unwrap()).unwrap();
    assert!(
        rect["max_row_misalignment"].as_f64().unwrap() < 0.5,
        "rectified rows disagree: {}",
        rect["max_row_misalignment"]
    );
    for side in [ViewSide::Left, ViewSide::Right] {
        assert!(io::read_raster(&art.rect_gradient(side)).is_ok());
        for kind in ["direct", "gradient"] {
            let base = art.disparity(kind, side);
            assert!(
                io::path_with_suffix(&base, ".disp.f32").is_file(),
                "missing {kind} map"
            );
        }
    }

    let cloud = io::read_point_cloud(&art.cloud()).unwrap();
    assert!(cloud.len() > cfg.outliers.k);

    // Exactly the two configured structures, stacked lid-over-membrane
    // with the configured offset (one depth quantum of tolerance).
    let low = io::read_height_field(&art.structure_surface(0)).unwrap();
    let high = io::read_height_field(&art.structure_surface(1)).unwrap();
    assert!(!art.structure_surface(2).with_extension("").exists());
    assert!(
        !io::path_with_suffix(&art.structure_surface(2), ".z.f32").exists(),
        "more structures than configured"
    );
    assert!(low.defined_count() > 0 && high.defined_count() > 0);
    let dz = mean_defined_z(&high) - mean_defined_z(&low);
    let axial = cfg.geometry.axial_voxel(cfg.sample.grid.pixel_pitch);
    assert!(
        (dz - cfg.sample.lid_depth).abs() < axial,
        "level separation {dz:.3e} m, expected {:.3e} m (quantum {axial:.3e} m)",
        cfg.sample.lid_depth
    );
}

#[test]
fn identical_configs_are_bit_identical_across_directories() {
    let dir = tempfile::tempdir().unwrap();
    // Different directory names and nesting: any absolute path leaking
    // into an artifact would break the hash comparison.
    let mut cfg_a = smoke_amplitude(&dir.path().join("a"));
    let mut cfg_b = smoke_amplitude(&dir.path().join("deeply/nested/b"));
    cfg_a.retrieval.iterations = 25;
    cfg_b.retrieval.iterations = 25;
    run_pipeline(&cfg_a).unwrap();
    run_pipeline(&cfg_b).unwrap();
    let hashes_a = hash_tree(&cfg_a.out_dir).unwrap();
    let hashes_b = hash_tree(&cfg_b.out_dir).unwrap();
    assert!(!hashes_a.is_empty());
    assert_eq!(hashes_a, hashes_b);
    assert_eq!(
        fs::read(cfg_a.out_dir.join("manifest.json")).unwrap(),
        fs::read(cfg_b.out_dir.join("manifest.json")).unwrap()
    );
}

#[test]
fn driver_matches_a_manual_stage_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_driver = smoke_phase(&dir.path().join("driver"));
    run_pipeline(&cfg_driver).unwrap();

    let cfg_manual = smoke_phase(&dir.path().join("manual"));
    stage_simulate(&cfg_manual).unwrap();
    stage_preprocess(&cfg_manual).unwrap();
    stage_retrieve(&cfg_manual).unwrap();
    stage_rectify(&cfg_manual).unwrap();
    stage_disparity(&cfg_manual).unwrap();
    stage_depth(&cfg_manual).unwrap();
    write_manifest(&cfg_manual.out_dir).unwrap();

    assert_eq!(
        hash_tree(&cfg_driver.out_dir).unwrap(),
        hash_tree(&cfg_manual.out_dir).unwrap()
    );
}
