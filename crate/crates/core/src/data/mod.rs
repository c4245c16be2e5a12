//! Synthetic partial-view datasets: procedural shapes, virtual depth
//! scans, normalized samples and point cloud files.

pub mod dataset;
pub mod io;
pub mod scan;
pub mod shape;

use std::path::PathBuf;

use thiserror::Error;

use crate::binio::FormatError;
use crate::geom::GeomError;

pub use dataset::{
    build_from_surface, build_sample, generate, plan_views, random_camera, DataConfig, Dataset, GenerateOptions,
    Manifest, NormMode, MANIFEST_FILE, Sample, SampleMeta, SampleRecord, SampleTrace, Split,
};
pub use io::{read_cloud, write_cloud};
pub use scan::{virtual_scan, virtual_scan_indices, DEFAULT_RESOLUTION};
pub use shape::{random_rotation, random_spec, sample_surface, ShapeKind, ShapeSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad shape spec: {0}")]
    BadSpec(String),
    #[error("camera at distance {distance} is inside the bounding sphere of radius {radius}")]
    CameraInside { distance: f64, radius: f64 },
    #[error("no point survived the scan")]
    EmptyScan,
    #[error("scan kept {got} points, need {need}")]
    InsufficientPoints { got: usize, need: usize },
    #[error("dataset not found at {0}")]
    DatasetMissing(PathBuf),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
