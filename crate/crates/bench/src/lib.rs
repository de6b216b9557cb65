//! Fixtures shared by the benchmarks.

use slicehub::geometry::cube;
use slicehub::grid::{build_axes, place_samples, SliceGrid};
use slicehub::{compute_metrics, PrintProfile, SyntheticSlicer};

/// Grid for a cube of `edge` mm with the cells chosen by `fraction` sliced.
pub fn sampled_grid(edge: f64, levels: usize, fraction: f64) -> SliceGrid {
    let metrics = compute_metrics(&cube(edge)).unwrap();
    let axes = build_axes(levels, levels).unwrap();
    let cells = place_samples(&axes, fraction).unwrap();
    let slicer = SyntheticSlicer::new();
    let mut grid = SliceGrid::new(axes);
    for cell in cells {
        let (lh, scale) = grid.axes().point(cell);
        let profile = PrintProfile::for_layer_height("ultimaker-3", "pla", lh);
        grid.set(cell, slicer.slice_metrics(&metrics, &profile, scale)).unwrap();
    }
    grid
}
