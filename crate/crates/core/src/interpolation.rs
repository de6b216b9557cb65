//! Quadratic surface fits over sliced results.
//!
//! Each quantity (print time, material) is fitted independently with the
//! total-degree-2 basis `1, s, r, s², s·r, r²` where `s` is the scale fraction
//! and `r` the layer height. With fewer than six samples, or a design that is
//! rank deficient, the fit falls back to the linear basis `1, s, r`.
//! Residuals are weighted by `1/|y|`, so the fit minimizes relative error,
//! the same measure the leave-one-out accuracy reports.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{CellIndex, SliceGrid};
use crate::slicer::SlicingResult;

/// Singular values below this fraction of the largest are treated as zero.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;
/// Smallest magnitude, relative to the largest sample, used when weighting residuals.
pub const RELATIVE_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpolationError {
    #[error("need at least 3 samples to fit, got {0}")]
    TooFewSamples(usize),
    #[error("sample points do not determine even a plane")]
    DegenerateDesign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub layer_height_mm: f64,
    pub scale: f64,
    pub value: f64,
}

impl Sample {
    pub fn new(layer_height_mm: f64, scale: f64, value: f64) -> Self {
        Self { layer_height_mm, scale, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Linear,
    Quadratic,
}

impl Basis {
    pub fn terms(self) -> usize {
        match self {
            Basis::Linear => 3,
            Basis::Quadratic => 6,
        }
    }

    fn row(self, u: f64, v: f64) -> [f64; 6] {
        match self {
            Basis::Linear => [1.0, u, v, 0.0, 0.0, 0.0],
            Basis::Quadratic => [1.0, u, v, u * u, u * v, v * v],
        }
    }
}

/// Affine map of both inputs onto roughly `[-1, 1]`, which keeps the design
/// matrix well conditioned. The fitted function space is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Normalization {
    scale_center: f64,
    scale_half: f64,
    layer_center: f64,
    layer_half: f64,
}

impl Normalization {
    fn from_samples(samples: &[Sample]) -> Self {
        let span = |f: fn(&Sample) -> f64| {
            let lo = samples.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            let half = (hi - lo) / 2.0;
            ((lo + hi) / 2.0, if half > 0.0 { half } else { 1.0 })
        };
        let (scale_center, scale_half) = span(|s| s.scale);
        let (layer_center, layer_half) = span(|s| s.layer_height_mm);
        Self { scale_center, scale_half, layer_center, layer_half }
    }

    fn apply(&self, layer_height_mm: f64, scale: f64) -> (f64, f64) {
        ((scale - self.scale_center) / self.scale_half, (layer_height_mm - self.layer_center) / self.layer_half)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFit {
    basis: Basis,
    normalization: Normalization,
    normalized: [f64; 6],
    n_samples: usize,
    loocv_error_pct: f64,
}

impl SurfaceFit {
    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Leave-one-out mean relative error in percent. Zero when no sample could
    /// be held out (every reduced fit was impossible or every target was 0).
    pub fn loocv_error_pct(&self) -> f64 {
        self.loocv_error_pct
    }

    /// Coefficients `[a0, a1, a2, a3, a4, a5]` of
    /// `a0 + a1·s + a2·r + a3·s² + a4·s·r + a5·r²`; the last three are zero for a linear fit.
    pub fn coefficients(&self) -> [f64; 6] {
        let n = &self.normalization;
        let (alpha, beta) = (1.0 / n.scale_half, -n.scale_center / n.scale_half);
        let (gamma, delta) = (1.0 / n.layer_half, -n.layer_center / n.layer_half);
        let [b0, b1, b2, b3, b4, b5] = self.normalized;
        [
            b0 + b1 * beta + b2 * delta + b3 * beta * beta + b4 * beta * delta + b5 * delta * delta,
            b1 * alpha + 2.0 * b3 * alpha * beta + b4 * alpha * delta,
            b2 * gamma + b4 * beta * gamma + 2.0 * b5 * gamma * delta,
            b3 * alpha * alpha,
            b4 * alpha * gamma,
            b5 * gamma * gamma,
        ]
    }

    /// Evaluates the fitted polynomial without clamping.
    pub fn evaluate(&self, layer_height_mm: f64, scale: f64) -> f64 {
        let (u, v) = self.normalization.apply(layer_height_mm, scale);
        self.basis.row(u, v).iter().zip(&self.normalized).map(|(x, c)| x * c).sum()
    }

    /// Predicted value, never negative.
    pub fn predict(&self, layer_height_mm: f64, scale: f64) -> f64 {
        self.evaluate(layer_height_mm, scale).max(0.0)
    }
}

/// Least-squares fit with the quadratic → linear fallback and a leave-one-out
/// error estimate.
pub fn fit(samples: &[Sample]) -> Result<SurfaceFit, InterpolationError> {
    let mut fitted = fit_without_cv(samples)?;
    fitted.loocv_error_pct = loocv_error_pct(samples);
    Ok(fitted)
}

fn fit_without_cv(samples: &[Sample]) -> Result<SurfaceFit, InterpolationError> {
    if samples.len() < Basis::Linear.terms() {
        return Err(InterpolationError::TooFewSamples(samples.len()));
    }
    let normalization = Normalization::from_samples(samples);
    let ladder: &[Basis] = if samples.len() >= Basis::Quadratic.terms() {
        &[Basis::Quadratic, Basis::Linear]
    } else {
        &[Basis::Linear]
    };
    for &basis in ladder {
        if let Some(normalized) = solve(samples, basis, &normalization) {
            return Ok(SurfaceFit { basis, normalization, normalized, n_samples: samples.len(), loocv_error_pct: 0.0 });
        }
    }
    Err(InterpolationError::DegenerateDesign)
}

/// Solves the least-squares problem through an SVD of the design matrix,
/// returning `None` when the design is rank deficient for this basis.
fn solve(samples: &[Sample], basis: Basis, normalization: &Normalization) -> Option<[f64; 6]> {
    let terms = basis.terms();
    let weights = relative_weights(samples);
    let design = DMatrix::from_fn(samples.len(), terms, |i, j| {
        let (u, v) = normalization.apply(samples[i].layer_height_mm, samples[i].scale);
        weights[i] * basis.row(u, v)[j]
    });
    let targets = DVector::from_iterator(samples.len(), samples.iter().zip(&weights).map(|(s, w)| w * s.value));
    let svd = design.svd(true, true);
    let largest = svd.singular_values.max();
    let eps = SINGULAR_TOLERANCE * largest;
    let rank = svd.singular_values.iter().filter(|&&sv| sv > eps).count();
    if largest <= 0.0 || rank < terms {
        return None;
    }
    let solution = svd.solve(&targets, eps).ok()?;
    let mut coefficients = [0.0; 6];
    coefficients[..terms].copy_from_slice(solution.as_slice());
    Some(coefficients)
}

/// Row weights `1/|y|`, so the fit minimizes squared relative rather than
/// absolute residuals. Values near zero are floored at a tiny fraction of the
/// largest magnitude; an all-zero target vector gets unit weights.
fn relative_weights(samples: &[Sample]) -> Vec<f64> {
    let largest = samples.iter().map(|s| s.value.abs()).fold(0.0, f64::max);
    if largest == 0.0 {
        return vec![1.0; samples.len()];
    }
    let floor = RELATIVE_WEIGHT_FLOOR * largest;
    samples.iter().map(|s| 1.0 / s.value.abs().max(floor)).collect()
}

fn loocv_error_pct(samples: &[Sample]) -> f64 {
    let mut held_out = Vec::with_capacity(samples.len().saturating_sub(1));
    let mut total = 0.0;
    let mut counted = 0usize;
    for (i, sample) in samples.iter().enumerate() {
        if sample.value == 0.0 {
            continue;
        }
        held_out.clear();
        held_out.extend(samples.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| *s));
        let Ok(reduced) = fit_without_cv(&held_out) else { continue };
        let predicted = reduced.predict(sample.layer_height_mm, sample.scale);
        total += (predicted - sample.value).abs() / sample.value.abs();
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        100.0 * total / counted as f64
    }
}

/// Independent fits for print time and material.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFit {
    pub time: SurfaceFit,
    pub material: SurfaceFit,
}

impl GridFit {
    /// Accuracy note attached to interpolated cells: the worse of the two
    /// leave-one-out errors.
    pub fn accuracy_pct(&self) -> f64 {
        self.time.loocv_error_pct().max(self.material.loocv_error_pct())
    }

    pub fn predict(&self, layer_height_mm: f64, scale: f64) -> SlicingResult {
        SlicingResult::interpolated(
            self.time.predict(layer_height_mm, scale),
            self.material.predict(layer_height_mm, scale),
            self.accuracy_pct(),
        )
    }
}

/// Fits both quantities to the sliced cells of a grid.
pub fn fit_grid(grid: &SliceGrid) -> Result<GridFit, InterpolationError> {
    let axes = grid.axes();
    let mut time = Vec::new();
    let mut material = Vec::new();
    for (cell, result) in grid.sliced() {
        let (r, s) = axes.point(cell);
        time.push(Sample::new(r, s, result.print_time_s));
        material.push(Sample::new(r, s, result.material_mm3));
    }
    Ok(GridFit { time: fit(&time)?, material: fit(&material)? })
}

/// Fills every cell that is not `Sliced` with a fresh prediction.
///
/// Previously interpolated cells are recomputed from the current sliced set;
/// sliced cells are never touched.
pub fn interpolate_grid(grid: &SliceGrid) -> Result<SliceGrid, InterpolationError> {
    let mut out = grid.clone();
    let pending: Vec<CellIndex> = grid.iter().filter(|(_, r)| !r.is_some_and(|r| r.is_sliced())).map(|(c, _)| c).collect();
    if pending.is_empty() {
        return Ok(out);
    }
    let model = fit_grid(grid)?;
    for cell in pending {
        let (r, s) = grid.axes().point(cell);
        out.set(cell, model.predict(r, s)).expect("cell comes from the same axes");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_axes, lattice, GridAxes};
    use proptest::prelude::*;

    fn quadratic(c: [f64; 6]) -> impl Fn(f64, f64) -> f64 {
        move |r, s| c[0] + c[1] * s + c[2] * r + c[3] * s * s + c[4] * s * r + c[5] * r * r
    }

    fn samples_on(axes: &GridAxes, cells: &[CellIndex], f: &impl Fn(f64, f64) -> f64) -> Vec<Sample> {
        cells
            .iter()
            .map(|&c| {
                let (r, s) = axes.point(c);
                Sample::new(r, s, f(r, s))
            })
            .collect()
    }

    #[test]
    fn recovers_exact_quadratic() {
        let f = quadratic([2.0, 3.0, 1.0, 1.0, 0.0, 0.0]);
        let axes = GridAxes::default_grid();
        let cells = lattice(16, 16, 3, 4);
        let fitted = fit(&samples_on(&axes, &cells, &f)).unwrap();
        assert_eq!(fitted.basis(), Basis::Quadratic);
        let coef = fitted.coefficients();
        for (got, want) in coef.iter().zip([2.0, 3.0, 1.0, 1.0, 0.0, 0.0]) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{coef:?}");
        }
        for cell in axes.cells() {
            let (r, s) = axes.point(cell);
            assert!((fitted.predict(r, s) - f(r, s)).abs() <= 1e-9 * f(r, s));
        }
        assert!(fitted.loocv_error_pct() < 1e-7);
    }

    #[test]
    fn too_few_samples() {
        let s = [Sample::new(0.1, 0.5, 1.0), Sample::new(0.2, 0.5, 2.0)];
        assert_eq!(fit(&s), Err(InterpolationError::TooFewSamples(2)));
        assert_eq!(fit(&[]), Err(InterpolationError::TooFewSamples(0)));
    }

    #[test]
    fn four_corners_degrade_to_linear() {
        let axes = GridAxes::default_grid();
        let f = |r: f64, s: f64| 10.0 + 5.0 * s - 20.0 * r;
        let fitted = fit(&samples_on(&axes, &lattice(16, 16, 2, 2), &f)).unwrap();
        assert_eq!(fitted.basis(), Basis::Linear);
        assert_eq!(fitted.coefficients()[3..], [0.0; 3]);
        assert!((fitted.predict(0.13, 0.55) - f(0.13, 0.55)).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_fall_back_then_fail() {
        // six points on one line in (r, s): quadratic and linear designs are both rank deficient
        let line: Vec<Sample> = (0..6).map(|i| Sample::new(0.06 + 0.02 * i as f64, 0.1 + 0.1 * i as f64, 5.0 + i as f64)).collect();
        assert_eq!(fit(&line), Err(InterpolationError::DegenerateDesign));

        // a single row of layer heights with many scales: quadratic rank deficient, plane too
        let row: Vec<Sample> = (0..8).map(|i| Sample::new(0.1, 0.1 + 0.1 * i as f64, i as f64 + 1.0)).collect();
        assert_eq!(fit(&row), Err(InterpolationError::DegenerateDesign));

        // two rows: r takes two values so r² is dependent on 1 and r, but the plane is fine
        let two_rows: Vec<Sample> = (0..8)
            .map(|i| Sample::new(if i % 2 == 0 { 0.06 } else { 0.2 }, 0.1 + 0.1 * i as f64, 3.0 + i as f64))
            .collect();
        assert_eq!(fit(&two_rows).unwrap().basis(), Basis::Linear);
    }

    #[test]
    fn negative_predictions_clamp_to_zero() {
        let axes = GridAxes::default_grid();
        let f = |r: f64, s: f64| 1.0 + 10.0 * s - 40.0 * r;
        let fitted = fit(&samples_on(&axes, &lattice(16, 16, 3, 3), &f)).unwrap();
        assert!(fitted.evaluate(0.2, 0.1) < 0.0);
        assert_eq!(fitted.predict(0.2, 0.1), 0.0);
    }

    #[test]
    fn loocv_skips_zero_targets() {
        let pts = [(0.06, 1.0), (0.2, 1.0), (0.06, 0.1), (0.2, 0.1), (0.13, 0.55)];
        let mut samples: Vec<Sample> = pts.iter().map(|&(r, s)| Sample::new(r, s, 1.0 + s + r)).collect();
        samples.push(Sample::new(0.1, 0.3, 0.0));
        let fitted = fit(&samples).unwrap();
        assert!(fitted.loocv_error_pct().is_finite());
    }

    #[test]
    fn loocv_matches_hand_computation() {
        // y = 1 + s except one perturbed sample; compute the held-out errors by brute force
        let pts = [(0.06, 1.0), (0.2, 1.0), (0.06, 0.1), (0.2, 0.1)];
        let values = [2.0, 2.0, 1.1, 1.5];
        let samples: Vec<Sample> = pts.iter().zip(values).map(|(&(r, s), y)| Sample::new(r, s, y)).collect();
        let fitted = fit(&samples).unwrap();
        // any 3 of these 4 points determine a plane exactly; predict the 4th by hand
        let plane_through = |a: [f64; 3], b: [f64; 3], c: [f64; 3], r: f64, s: f64| {
            // solve z = p + q*s + w*r with Cramer's rule
            let m = [[1.0, a[1], a[0]], [1.0, b[1], b[0]], [1.0, c[1], c[0]]];
            let det = |m: [[f64; 3]; 3]| {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            };
            let d = det(m);
            let z = [a[2], b[2], c[2]];
            let mut coef = [0.0; 3];
            for k in 0..3 {
                let mut mk = m;
                for row in 0..3 {
                    mk[row][k] = z[row];
                }
                coef[k] = det(mk) / d;
            }
            coef[0] + coef[1] * s + coef[2] * r
        };
        let pts3: Vec<[f64; 3]> = samples.iter().map(|s| [s.layer_height_mm, s.scale, s.value]).collect();
        let mut total = 0.0;
        for i in 0..4 {
            let rest: Vec<[f64; 3]> = (0..4).filter(|&j| j != i).map(|j| pts3[j]).collect();
            let pred = plane_through(rest[0], rest[1], rest[2], pts3[i][0], pts3[i][1]).max(0.0);
            total += (pred - pts3[i][2]).abs() / pts3[i][2];
        }
        let expected = 100.0 * total / 4.0;
        assert!((fitted.loocv_error_pct() - expected).abs() < 1e-9, "{} vs {expected}", fitted.loocv_error_pct());
    }

    fn filled_grid(axes: GridAxes, f: impl Fn(f64, f64) -> (f64, f64), cells: &[CellIndex]) -> SliceGrid {
        let mut grid = SliceGrid::new(axes);
        for &c in cells {
            let (r, s) = grid.axes().point(c);
            let (t, m) = f(r, s);
            grid.set(c, SlicingResult::sliced(t, m)).unwrap();
        }
        grid
    }

    #[test]
    fn interpolate_fills_the_rest() {
        let f = |r: f64, s: f64| (100.0 + 500.0 * s * s / r, 20.0 + 300.0 * s * s);
        let grid = filled_grid(GridAxes::default_grid(), f, &lattice(16, 16, 5, 5));
        let full = interpolate_grid(&grid).unwrap();
        assert_eq!(full.sliced_count(), 25);
        assert_eq!(full.interpolated_count(), 231);
        assert_eq!(full.empty_count(), 0);
        for (c, r) in grid.sliced() {
            assert_eq!(full.get(c), Some(r));
        }
        for (_, r) in full.populated().filter(|(_, r)| !r.is_sliced()) {
            assert!(r.accuracy_pct.is_some());
        }
    }

    #[test]
    fn interpolate_corners_only() {
        let f = |r: f64, s: f64| (50.0 + 100.0 * s - 100.0 * r, 10.0 + 30.0 * s);
        let grid = filled_grid(GridAxes::default_grid(), f, &lattice(16, 16, 2, 2));
        let full = interpolate_grid(&grid).unwrap();
        assert_eq!(full.interpolated_count(), 252);
    }

    #[test]
    fn denser_sub_lattice_predicts_better() {
        use crate::geometry::{compute_metrics, cube};
        use crate::slicer::synthetic_cost;
        let metrics = compute_metrics(&cube(20.0)).unwrap();
        let axes = GridAxes::default_grid();
        let truth = |r: f64, s: f64| synthetic_cost(&metrics, r, s).0;
        let error = |k: usize| {
            let sampled = lattice(16, 16, k, k);
            let fitted = fit(&samples_on(&axes, &sampled, &truth)).unwrap();
            let rest: Vec<f64> = axes
                .cells()
                .filter(|c| !sampled.contains(c))
                .map(|c| {
                    let (r, s) = axes.point(c);
                    (fitted.predict(r, s) - truth(r, s)).abs() / truth(r, s)
                })
                .collect();
            rest.iter().sum::<f64>() / rest.len() as f64
        };
        assert!(error(5) < error(3));
    }

    #[test]
    fn weights_are_relative() {
        let samples = [Sample::new(0.1, 0.5, 4.0), Sample::new(0.2, 0.5, -2.0), Sample::new(0.1, 1.0, 0.0)];
        let w = relative_weights(&samples);
        assert_eq!(w[0], 0.25);
        assert_eq!(w[1], 0.5);
        assert_eq!(w[2], 1.0 / (RELATIVE_WEIGHT_FLOOR * 4.0));
        assert_eq!(relative_weights(&[Sample::new(0.1, 0.5, 0.0)]), vec![1.0]);
    }

    #[test]
    fn full_grid_is_unchanged() {
        let axes = build_axes(4, 4).unwrap();
        let cells: Vec<CellIndex> = axes.cells().collect();
        let grid = filled_grid(axes, |r, s| (r + s, r * s), &cells);
        assert_eq!(interpolate_grid(&grid).unwrap(), grid);
    }

    #[test]
    fn too_few_sliced_cells() {
        let grid = filled_grid(build_axes(4, 4).unwrap(), |_, _| (1.0, 1.0), &[CellIndex::new(0, 0), CellIndex::new(3, 3)]);
        assert_eq!(interpolate_grid(&grid), Err(InterpolationError::TooFewSamples(2)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_for_any_quadratic(c in prop::array::uniform6(0.1f64..100.0), k in 3usize..17) {
            let f = quadratic(c);
            let axes = GridAxes::default_grid();
            let fitted = fit(&samples_on(&axes, &lattice(16, 16, k, k), &f)).unwrap();
            for cell in axes.cells() {
                let (r, s) = axes.point(cell);
                let want = f(r, s);
                prop_assert!((fitted.predict(r, s) - want).abs() <= 1e-9 * want);
            }
        }

        #[test]
        fn predictions_scale_with_values(
            vals in prop::collection::vec(1.0f64..1000.0, 9),
            c in prop::sample::select(vec![0.25, 0.5, 2.0, 8.0]),
        ) {
            let axes = GridAxes::default_grid();
            let cells = lattice(16, 16, 3, 3);
            let base: Vec<Sample> = cells.iter().zip(&vals).map(|(&cell, &v)| {
                let (r, s) = axes.point(cell);
                Sample::new(r, s, v)
            }).collect();
            let scaled: Vec<Sample> = base.iter().map(|s| Sample { value: s.value * c, ..*s }).collect();
            let a = fit(&base).unwrap();
            let b = fit(&scaled).unwrap();
            for cell in axes.cells() {
                let (r, s) = axes.point(cell);
                prop_assert_eq!(b.predict(r, s), a.predict(r, s) * c);
            }
        }
    }
}
