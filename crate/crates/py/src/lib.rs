//! Python bindings: pipeline configuration, the stage functions and driver,
//! acquisition geometry, and readers for the on-disk artifacts, exposed as
//! the `stereocdi` extension module.
//!
//! Configurations cross the boundary as JSON (the same schema the files
//! use), so Python callers edit them as plain dictionaries; bulk data comes
//! back as flat lists plus shape.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stereo_cdi::pipeline::{self, Artifacts, PipelineConfig, PipelineMode};
use stereo_cdi::{io, StereoGeometry, ViewSide};

/// Validation failures map to `ValueError`, everything else (I/O, stage
/// failures, numerical degeneracies) to `RuntimeError`.
fn to_py(e: stereo_cdi::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Stereo acquisition geometry: two beam tilts onto one detector, and the
/// depth scale they imply.
#[pyclass(module = "stereocdi", skip_from_py_object)]
#[derive(Clone)]
struct Geometry {
    inner: StereoGeometry,
}

#[pymethods]
impl Geometry {
    /// Metric depth of a feature from its metric disparity between the
    /// corrected views.
    fn depth_from_disparity(&self, disparity: f64) -> PyResult<f64> {
        self.inner.depth_from_disparity(disparity).map_err(to_py)
    }

    /// Object-plane sampling pitch of a retrieved view cropped to
    /// `side` detector pixels.
    fn object_pixel_pitch(&self, side: usize) -> f64 {
        self.inner.object_pixel_pitch_for(side)
    }

    /// Depth quantum corresponding to one pixel of disparity at the given
    /// lateral pitch.
    fn axial_voxel(&self, lateral_pitch: f64) -> f64 {
        self.inner.axial_voxel(lateral_pitch)
    }

    #[getter]
    fn theta1(&self) -> f64 {
        self.inner.theta1
    }

    #[getter]
    fn theta2(&self) -> f64 {
        self.inner.theta2
    }

    #[getter]
    fn wavelength(&self) -> f64 {
        self.inner.wavelength
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(theta1={:.6}, theta2={:.6}, wavelength={:.3e})",
            self.inner.theta1, self.inner.theta2, self.inner.wavelength
        )
    }
}

/// Full pipeline configuration; construct from a preset or JSON, tweak via
/// JSON round-trips or the dedicated accessors, then hand to the stage
/// functions or `run_pipeline`.
#[pyclass(module = "stereocdi", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: PipelineConfig,
}

#[pymethods]
impl Config {
    /// Opaque-sample protocol preset (19-degree beam separation).
    #[staticmethod]
    fn amplitude() -> Self {
        Config {
            inner: PipelineConfig::amplitude_defaults(),
        }
    }

    /// Semi-transparent-sample protocol preset (12-degree separation).
    #[staticmethod]
    fn phase() -> Self {
        Config {
            inner: PipelineConfig::phase_defaults(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: PipelineConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Config { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Config {
            inner: pipeline::read_config(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pipeline::write_config(&path, &self.inner).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            inner: self.inner.geometry,
        }
    }

    /// Paths of the run's main artifacts, keyed by name.
    fn paths(&self) -> BTreeMap<String, String> {
        let art = Artifacts::new(&self.inner.out_dir);
        let s = |p: &Path| p.display().to_string();
        let mut out = BTreeMap::new();
        out.insert("manifest".into(), s(&art.manifest()));
        out.insert("report".into(), s(&art.report()));
        out.insert("cloud".into(), s(&art.cloud()));
        out.insert("view_left".into(), s(&art.retrieved(ViewSide::Left)));
        out.insert("view_right".into(), s(&art.retrieved(ViewSide::Right)));
        match self.inner.mode {
            PipelineMode::Amplitude => {
                out.insert("surface".into(), s(&art.surface()));
                out.insert("mesh".into(), s(&art.mesh()));
            }
            PipelineMode::Phase => {
                for i in 0..self.inner.expected_structures {
                    out.insert(format!("structure_{i}"), s(&art.structure_surface(i)));
                    out.insert(format!("structure_{i}_mesh"), s(&art.structure_mesh(i)));
                }
            }
        }
        out
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn get_out_dir(&self) -> String {
        self.inner.out_dir.display().to_string()
    }

    #[setter]
    fn set_out_dir(&mut self, out_dir: PathBuf) {
        self.inner.out_dir = out_dir;
    }

    #[getter]
    fn get_run_simulate(&self) -> bool {
        self.inner.run_simulate
    }

    #[setter]
    fn set_run_simulate(&mut self, run: bool) {
        self.inner.run_simulate = run;
    }

    #[getter]
    fn get_mode(&self) -> &'static str {
        match self.inner.mode {
            PipelineMode::Amplitude => "amplitude",
            PipelineMode::Phase => "phase",
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(mode={}, seed={}, out_dir={:?})",
            self.get_mode(),
            self.inner.seed,
            self.get_out_dir()
        )
    }
}

/// Runs every stage of the configured arm; returns (stage names, manifest
/// path, manifest file count).
#[pyfunction]
fn run_pipeline(cfg: &Config) -> PyResult<(Vec<String>, String, usize)> {
    let summary = pipeline::run_pipeline(&cfg.inner).map_err(to_py)?;
    Ok((
        summary.stages.iter().map(|s| s.to_string()).collect(),
        summary.manifest_path.display().to_string(),
        summary.file_count,
    ))
}

macro_rules! stage_fn {
    ($name:ident) => {
        #[pyfunction]
        fn $name(cfg: &Config) -> PyResult<()> {
            pipeline::$name(&cfg.inner).map_err(to_py)
        }
    };
}

stage_fn!(stage_simulate);
stage_fn!(stage_preprocess);
stage_fn!(stage_retrieve);
stage_fn!(stage_rectify);
stage_fn!(stage_disparity);
stage_fn!(stage_depth);

/// Reads a raster payload; returns (width, height, row-major values).
#[pyfunction]
fn read_raster(path: PathBuf) -> PyResult<(usize, usize, Vec<f64>)> {
    let r = io::read_raster(&path).map_err(to_py)?;
    Ok((r.width, r.height, r.values))
}

/// Reads a height field written by the depth stage; returns
/// (width, height, z values, defined flags).
#[pyfunction]
fn read_height_field(base: PathBuf) -> PyResult<(usize, usize, Vec<f64>, Vec<bool>)> {
    let h = io::read_height_field(&base).map_err(to_py)?;
    Ok((h.width, h.height, h.z, h.defined))
}

/// Reads a point cloud; returns (x, y, z, source code) per point.
#[pyfunction]
fn read_point_cloud(path: PathBuf) -> PyResult<Vec<(f64, f64, f64, u8)>> {
    let c = io::read_point_cloud(&path).map_err(to_py)?;
    Ok(c.points
        .iter()
        .zip(&c.sources)
        .map(|(p, s)| (p[0], p[1], p[2], s.code()))
        .collect())
}

/// SHA-256 of every file under a directory, keyed by relative path.
#[pyfunction]
fn hash_tree(root: PathBuf) -> PyResult<BTreeMap<String, String>> {
    pipeline::hash_tree(&root).map_err(to_py)
}

/// Stage-local seed derivation used by the pipeline.
#[pyfunction]
fn derive_seed(seed: u64, stage: &str, lane: u32) -> u64 {
    pipeline::derive_seed(seed, stage, lane)
}

#[pymodule]
fn stereocdi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Geometry>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(stage_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(stage_preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(stage_retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(stage_rectify, m)?)?;
    m.add_function(wrap_pyfunction!(stage_disparity, m)?)?;
    m.add_function(wrap_pyfunction!(stage_depth, m)?)?;
    m.add_function(wrap_pyfunction!(read_raster, m)?)?;
    m.add_function(wrap_pyfunction!(read_height_field, m)?)?;
    m.add_function(wrap_pyfunction!(read_point_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(hash_tree, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
