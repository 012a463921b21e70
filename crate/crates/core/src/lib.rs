//! Stereo coherent-diffraction imaging toolkit: simulate two-beam diffraction
//! data, retrieve real-space views, match them into disparity maps, and
//! reconstruct metric depth.

pub mod error;
pub mod geometry;
pub mod io;
pub(crate) mod knn;
pub mod matching;
pub mod pipeline;
pub mod preprocess;
pub mod recon;
pub mod raster;
pub mod rectify;
pub mod retrieval;
pub mod sim;

pub(crate) mod fft2;

pub use error::{Error, Result};
pub use geometry::{ObjectGrid, StereoGeometry, ViewSide};
pub use raster::{
    ComplexView, DiffractionFrame, HeightField, MeasuredPattern, PointCloud, PointSource, Raster2D,
};
