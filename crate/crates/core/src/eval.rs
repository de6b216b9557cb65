//! Desk-scale versions of the two accuracy experiments: how closely a grid of
//! a given size can meet a random constraint, and how accurate the surface fit
//! is for a given share of interpolated cells.
//!
//! Both run over a procedurally generated corpus with the synthetic slicer and
//! are deterministic for a fixed seed.

use std::f64::consts::PI;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{self, cuboid, Triangle, TriangleMesh, Vec3};
use crate::grid::{self, GridAxes, SliceGrid};
use crate::interpolation;
use crate::slicer::{synthetic_cost, SlicingResult};

/// Smallest and largest characteristic size of corpus meshes, in mm.
pub const CORPUS_MIN_SIZE_MM: f64 = 5.0;
pub const CORPUS_MAX_SIZE_MM: f64 = 120.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusModel {
    pub name: String,
    pub stl: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    /// Human-readable label, e.g. `9x9` or `90.2% interpolated`.
    pub condition: String,
    /// Grid size or sub-lattice size the row belongs to.
    pub size: usize,
    pub mean_relative_error_time_pct: f64,
    pub mean_relative_error_material_pct: f64,
    pub n_models: usize,
    /// Constraints or evaluated cells, summed over models.
    pub n_points: usize,
    pub seed: u64,
}

/// `n` closed meshes cycling through boxes, cylinders, tori and random convex
/// hulls, with sizes log-spaced between [`CORPUS_MIN_SIZE_MM`] and
/// [`CORPUS_MAX_SIZE_MM`] and randomized proportions.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<CorpusModel> {
    assert!(n >= 1, "corpus needs at least one model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let size = CORPUS_MIN_SIZE_MM * (CORPUS_MAX_SIZE_MM / CORPUS_MIN_SIZE_MM).powf(t);
            let (kind, mesh) = match i % 4 {
                0 => {
                    let dims = [size, size * rng.random_range(0.5..1.5), size * rng.random_range(0.5..1.5)];
                    ("box", cuboid(dims))
                }
                1 => {
                    let radius = size / 2.0 * rng.random_range(0.6..1.0);
                    ("cylinder", cylinder(radius, size * rng.random_range(0.5..1.5), 48))
                }
                2 => {
                    let major = size / 2.0;
                    ("torus", torus(major, major * rng.random_range(0.2..0.5), 48, 24))
                }
                _ => ("hull", random_hull(&mut rng, size, 14)),
            };
            CorpusModel { name: format!("{kind}-{i:02}"), stl: geometry::write_binary_stl(&mesh) }
        })
        .collect()
}

/// Closed cylinder standing on the XY plane.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let ring = |i: usize, z: f64| {
        let a = 2.0 * PI * i as f64 / segments as f64;
        [radius * a.cos(), radius * a.sin(), z]
    };
    let mut tris = Vec::with_capacity(segments * 4);
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b0, b1, t0, t1) = (ring(i, 0.0), ring(j, 0.0), ring(i, height), ring(j, height));
        tris.push(Triangle::new([0.0, 0.0, 0.0], b1, b0));
        tris.push(Triangle::new([0.0, 0.0, height], t0, t1));
        tris.push(Triangle::new(b0, b1, t1));
        tris.push(Triangle::new(b0, t1, t0));
    }
    TriangleMesh::new(tris).expect("cylinder is non-empty")
}

/// Torus around the Z axis, lifted to sit on the XY plane.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriangleMesh {
    let point = |i: usize, j: usize| {
        let u = 2.0 * PI * (i % nu) as f64 / nu as f64;
        let v = 2.0 * PI * (j % nv) as f64 / nv as f64;
        let ring = major + minor * v.cos();
        [ring * u.cos(), ring * u.sin(), minor + minor * v.sin()]
    };
    let mut tris = Vec::with_capacity(nu * nv * 2);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (point(i, j), point(i + 1, j), point(i + 1, j + 1), point(i, j + 1));
            tris.push(Triangle::new(a, b, c));
            tris.push(Triangle::new(a, c, d));
        }
    }
    TriangleMesh::new(tris).expect("torus is non-empty")
}

/// Convex hull of `n` random points in an ellipsoid of diameter about `size`.
///
/// Brute force: a triple is a face when every other point lies on one side.
fn random_hull(rng: &mut ChaCha8Rng, size: f64, n: usize) -> TriangleMesh {
    let axes = [size / 2.0, size / 2.0 * rng.random_range(0.5..1.0), size / 2.0 * rng.random_range(0.5..1.0)];
    let points: Vec<Vec3> = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi = rng.random_range(0.0..2.0 * PI);
            let rho = (1.0 - z * z).sqrt();
            let radius = rng.random_range(0.85..1.0);
            [axes[0] * radius * rho * phi.cos(), axes[1] * radius * rho * phi.sin(), axes[2] * (radius * z + 1.0)]
        })
        .collect();
    let eps = 1e-9 * size * size * size;
    let mut tris = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let normal = geometry::cross(geometry::sub(b, a), geometry::sub(c, a));
                let side = |p: &Vec3| geometry::dot(normal, geometry::sub(*p, a));
                let above = points.iter().filter(|p| side(p) > eps).count();
                let below = points.iter().filter(|p| side(p) < -eps).count();
                if above == 0 {
                    tris.push(Triangle::new(a, b, c));
                } else if below == 0 {
                    tris.push(Triangle::new(a, c, b));
                }
            }
        }
    }
    TriangleMesh::new(tris).expect("random points span a volume")
}

fn corpus_metrics(corpus: &[CorpusModel]) -> Vec<geometry::MeshMetrics> {
    corpus
        .iter()
        .map(|m| {
            let mesh = geometry::parse_stl(&m.stl).expect("corpus meshes are valid STL");
            geometry::compute_metrics(&mesh).expect("corpus meshes are non-empty")
        })
        .collect()
}

fn sliced_grid(metrics: &geometry::MeshMetrics, axes: GridAxes) -> SliceGrid {
    let mut grid = SliceGrid::new(axes);
    let cells: Vec<_> = grid.axes().cells().collect();
    for cell in cells {
        let (r, s) = grid.axes().point(cell);
        let (time, material) = synthetic_cost(metrics, r, s);
        grid.set(cell, SlicingResult::sliced(time, material)).expect("cell from the grid's own axes");
    }
    grid
}

fn relative_error_pct(value: f64, truth: f64) -> f64 {
    100.0 * (value - truth).abs() / truth
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// For each grid size, the mean relative distance between a random target
/// and the closest cell value.
///
/// Targets are drawn once per model, uniformly between the model's smallest
/// and largest value, and reused for every grid size so sizes are compared on
/// the same constraints. Errors are averaged per model, then across models.
pub fn constraint_error_experiment(
    corpus: &[CorpusModel],
    grid_sizes: &[usize],
    n_constraints: usize,
    seed: u64,
) -> Vec<ExperimentReport> {
    assert!(grid_sizes.iter().all(|&n| n >= 2), "grid sizes must be at least 2");
    let metrics = corpus_metrics(corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<(Vec<f64>, Vec<f64>)> = metrics
        .iter()
        .map(|m| {
            let corners = sliced_grid(m, grid::build_axes(2, 2).expect("2 levels"));
            let bounds = grid::default_bounds(&corners).expect("grid is populated");
            let (t_lo, t_hi) = (bounds.time_lo_s.unwrap_or(0.0), bounds.time_hi_s.unwrap_or(0.0));
            let (m_lo, m_hi) = (bounds.material_lo.unwrap_or(0.0), bounds.material_hi.unwrap_or(0.0));
            let time = (0..n_constraints).map(|_| rng.random_range(t_lo..=t_hi)).collect();
            let material = (0..n_constraints).map(|_| rng.random_range(m_lo..=m_hi)).collect();
            (time, material)
        })
        .collect();

    grid_sizes
        .iter()
        .map(|&n| {
            let axes = grid::build_axes(n, n).expect("size checked above");
            let mut per_model_time = Vec::with_capacity(metrics.len());
            let mut per_model_material = Vec::with_capacity(metrics.len());
            for (m, (time_targets, material_targets)) in metrics.iter().zip(&targets) {
                let grid = sliced_grid(m, axes.clone());
                let values: Vec<&SlicingResult> = grid.populated().map(|(_, r)| r).collect();
                let closest = |target: f64, pick: fn(&SlicingResult) -> f64| {
                    values.iter().map(|r| relative_error_pct(pick(r), target)).fold(f64::INFINITY, f64::min)
                };
                let t: Vec<f64> = time_targets.iter().map(|&x| closest(x, |r| r.print_time_s)).collect();
                let mm: Vec<f64> = material_targets.iter().map(|&x| closest(x, |r| r.material_mm3)).collect();
                per_model_time.push(mean(&t));
                per_model_material.push(mean(&mm));
            }
            ExperimentReport {
                condition: format!("{n}x{n}"),
                size: n,
                mean_relative_error_time_pct: mean(&per_model_time),
                mean_relative_error_material_pct: mean(&per_model_material),
                n_models: metrics.len(),
                n_points: metrics.len() * n_constraints,
                seed,
            }
        })
        .collect()
}

/// For each `k`, slices a `k × k` sub-lattice of the default 16×16 grid, fits
/// the surface, and measures relative error on the remaining cells.
///
/// `k = 16` leaves nothing to predict and reports 0. Errors are averaged per
/// model, then across models. The experiment has no random component; `seed`
/// is carried into the reports for bookkeeping.
pub fn interpolation_error_experiment(corpus: &[CorpusModel], sublattices: &[usize], seed: u64) -> Vec<ExperimentReport> {
    let axes = GridAxes::default_grid();
    let (rows, cols) = (axes.rows(), axes.cols());
    assert!(sublattices.iter().all(|&k| (2..=rows.min(cols)).contains(&k)), "sub-lattice sizes must be within 2..={rows}");
    let metrics = corpus_metrics(corpus);
    let truths: Vec<SliceGrid> = metrics.iter().map(|m| sliced_grid(m, axes.clone())).collect();

    sublattices
        .iter()
        .map(|&k| {
            let sampled = grid::lattice(rows, cols, k, k);
            let mut per_model_time = Vec::with_capacity(truths.len());
            let mut per_model_material = Vec::with_capacity(truths.len());
            let mut n_points = 0;
            for truth in &truths {
                let mut partial = SliceGrid::new(axes.clone());
                for &cell in &sampled {
                    partial.set(cell, *truth.get(cell).expect("truth grid is full")).expect("cell in range");
                }
                let fit = interpolation::fit_grid(&partial).expect("sub-lattice has at least 2x2 samples");
                let mut t = Vec::new();
                let mut m = Vec::new();
                for cell in axes.cells().filter(|c| partial.get(*c).is_none()) {
                    let real = truth.get(cell).expect("truth grid is full");
                    let (r, s) = axes.point(cell);
                    let predicted = fit.predict(r, s);
                    if real.print_time_s > 0.0 {
                        t.push(relative_error_pct(predicted.print_time_s, real.print_time_s));
                    }
                    if real.material_mm3 > 0.0 {
                        m.push(relative_error_pct(predicted.material_mm3, real.material_mm3));
                    }
                }
                n_points += t.len().max(m.len());
                per_model_time.push(mean(&t));
                per_model_material.push(mean(&m));
            }
            let interpolated_pct = 100.0 * (1.0 - sampled.len() as f64 / axes.len() as f64);
            ExperimentReport {
                condition: format!("{interpolated_pct:.1}% interpolated"),
                size: k,
                mean_relative_error_time_pct: mean(&per_model_time),
                mean_relative_error_material_pct: mean(&per_model_material),
                n_models: truths.len(),
                n_points,
                seed,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    condition: &'a str,
    metric: &'a str,
    mean_error_pct: f64,
    n_models: usize,
    n_points: usize,
    seed: u64,
}

/// Writes `condition,metric,mean_error_pct,n_models,n_points,seed`, one row
/// per report and metric (`time`, `material`).
pub fn write_csv<W: io::Write>(reports: &[ExperimentReport], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    for r in reports {
        for (metric, value) in [("time", r.mean_relative_error_time_pct), ("material", r.mean_relative_error_material_pct)] {
            writer.serialize(CsvRow {
                condition: &r.condition,
                metric,
                mean_error_pct: value,
                n_models: r.n_models,
                n_points: r.n_points,
                seed: r.seed,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}
