//! Shared repository of 3D-printing slicing results.
//!
//! The crate stores per-model print time and material estimates over a grid
//! of print resolutions × model scales, fills unsliced cells with a quadratic
//! surface fit, runs slicing jobs in parallel, and serves all of it over HTTP.

pub mod eval;
pub mod geometry;
pub mod grid;
pub mod interpolation;
pub mod orchestrator;
pub mod repository;
pub mod slicer;

pub use geometry::{compute_metrics, parse_stl, MeshMetrics, TriangleMesh};
pub use grid::{CellIndex, ConstraintSet, GridAxes, SliceGrid};
pub use interpolation::{fit, interpolate_grid, SurfaceFit};
pub use slicer::{PrintProfile, ResultStatus, SliceRequest, SlicerBackend, SlicingResult, SyntheticSlicer};
pub use orchestrator::{BatchId, BatchStatus, Orchestrator};
pub use repository::{MetadataDocument, Repository, RepositoryConfig, RepositoryError};
