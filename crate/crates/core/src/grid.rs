//! The resolution × scale configuration grid.
//!
//! Rows are layer heights from finest (0.06 mm) to coarsest (0.2 mm); columns
//! are model scales from 100% down to 10%. Cell `(0, 0)` is therefore the
//! slowest, largest configuration and the last cell the fastest, smallest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::SlicingResult;

pub const FINEST_LAYER_MM: f64 = 0.06;
pub const COARSEST_LAYER_MM: f64 = 0.2;
pub const LARGEST_SCALE: f64 = 1.0;
pub const SMALLEST_SCALE: f64 = 0.1;
pub const DEFAULT_LEVELS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("an axis needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("sample fraction {0} selects fewer than the 4 corner cells")]
    FractionTooSmall(f64),
    #[error("lower bound {lo} exceeds upper bound {hi} for {quantity}")]
    InvertedBound { quantity: &'static str, lo: f64, hi: f64 },
    #[error("grid has no populated cells")]
    EmptyGrid,
    #[error("cell ({r}, {s}) is outside a {rows}x{cols} grid")]
    IndexOutOfRange { r: usize, s: usize, rows: usize, cols: usize },
    #[error("axis values must be strictly monotone")]
    NonMonotoneAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    /// Layer heights in mm, finest first.
    pub resolutions: Vec<f64>,
    /// Scale fractions, largest first.
    pub scales: Vec<f64>,
}

impl GridAxes {
    pub fn new(resolutions: Vec<f64>, scales: Vec<f64>) -> Result<Self, GridError> {
        let increasing = resolutions.windows(2).all(|w| w[0] < w[1]);
        let decreasing = scales.windows(2).all(|w| w[0] > w[1]);
        if !increasing || !decreasing {
            return Err(GridError::NonMonotoneAxis);
        }
        Ok(Self { resolutions, scales })
    }

    pub fn default_grid() -> Self {
        build_axes(DEFAULT_LEVELS, DEFAULT_LEVELS).expect("default grid size is valid")
    }

    pub fn rows(&self) -> usize {
        self.resolutions.len()
    }

    pub fn cols(&self) -> usize {
        self.scales.len()
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.rows()).flat_map(move |r| (0..self.cols()).map(move |s| CellIndex::new(r, s)))
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.r < self.rows() && cell.s < self.cols()
    }

    pub fn check(&self, cell: CellIndex) -> Result<(), GridError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(GridError::IndexOutOfRange { r: cell.r, s: cell.s, rows: self.rows(), cols: self.cols() })
        }
    }

    /// `(layer_height_mm, scale)` of a cell.
    pub fn point(&self, cell: CellIndex) -> (f64, f64) {
        (self.resolutions[cell.r], self.scales[cell.s])
    }

    /// The cell whose coordinates are closest to `(layer_height_mm, scale)`, per axis.
    pub fn nearest(&self, layer_height_mm: f64, scale: f64) -> Option<CellIndex> {
        let r = nearest_index(&self.resolutions, layer_height_mm)?;
        let s = nearest_index(&self.scales, scale)?;
        Some(CellIndex::new(r, s))
    }
}

fn nearest_index(values: &[f64], target: f64) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    /// Resolution (row) index.
    pub r: usize,
    /// Scale (column) index.
    pub s: usize,
}

impl CellIndex {
    pub const fn new(r: usize, s: usize) -> Self {
        Self { r, s }
    }
}

/// Builds axes with the given number of levels between the fixed endpoints.
///
/// Sizes reachable by repeated midpoint insertion from 2 (3, 5, 9, 17, 33, ...)
/// are built by literally inserting midpoints; other sizes are spaced uniformly.
pub fn build_axes(n_resolutions: usize, n_scales: usize) -> Result<GridAxes, GridError> {
    Ok(GridAxes {
        resolutions: axis_levels(FINEST_LAYER_MM, COARSEST_LAYER_MM, n_resolutions)?,
        scales: axis_levels(LARGEST_SCALE, SMALLEST_SCALE, n_scales)?,
    })
}

fn axis_levels(first: f64, last: f64, n: usize) -> Result<Vec<f64>, GridError> {
    if n < 2 {
        return Err(GridError::TooFewLevels(n));
    }
    if is_midpoint_size(n) {
        let mut levels = vec![first, last];
        while levels.len() < n {
            let mut refined = Vec::with_capacity(levels.len() * 2 - 1);
            for pair in levels.windows(2) {
                refined.push(pair[0]);
                refined.push((pair[0] + pair[1]) / 2.0);
            }
            refined.push(last);
            levels = refined;
        }
        Ok(levels)
    } else {
        let step = (last - first) / (n - 1) as f64;
        let mut levels: Vec<f64> = (0..n).map(|i| first + step * i as f64).collect();
        levels[n - 1] = last;
        Ok(levels)
    }
}

/// `n = 2^k + 1`.
fn is_midpoint_size(n: usize) -> bool {
    n >= 2 && (n - 1).is_power_of_two()
}

/// `k` indices spread uniformly over `0..n`, always including both ends.
///
/// Positions are rounded to the nearest index. The second half mirrors the
/// first so the selection is symmetric under axis reversal whenever that is
/// achievable.
pub fn sublattice_indices(n: usize, k: usize) -> Vec<usize> {
    assert!(n >= 1 && k >= 1 && k <= n, "need 1 <= k <= n (k={k}, n={n})");
    if k == 1 {
        return vec![0];
    }
    let span = (n - 1) as f64;
    let position = |i: usize| (i as f64 * span / (k - 1) as f64).round() as usize;
    (0..k)
        .map(|i| if 2 * i <= k - 1 { position(i) } else { n - 1 - position(k - 1 - i) })
        .collect()
}

/// Chooses the cells to slice for a requested fraction of the grid.
///
/// The result is a `kr × ks` sub-lattice with both `k ≥ 2` (so all four corners
/// are present), whose size is the largest not exceeding `fraction · cells`.
/// Ties prefer the lattice whose per-axis fractions are most balanced.
pub fn place_samples(axes: &GridAxes, fraction: f64) -> Result<Vec<CellIndex>, GridError> {
    let (rows, cols) = (axes.rows(), axes.cols());
    if rows < 2 || cols < 2 {
        return Err(GridError::TooFewLevels(rows.min(cols)));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GridError::FractionTooSmall(fraction));
    }
    let budget = fraction * (rows * cols) as f64 + 1e-9;
    let mut best: Option<(usize, usize)> = None;
    for kr in 2..=rows {
        for ks in 2..=cols {
            if (kr * ks) as f64 > budget {
                continue;
            }
            let imbalance = |(a, b): (usize, usize)| (a as f64 / rows as f64 - b as f64 / cols as f64).abs();
            best = match best {
                None => Some((kr, ks)),
                Some(cur) => {
                    let (cur_n, new_n) = (cur.0 * cur.1, kr * ks);
                    if new_n > cur_n || (new_n == cur_n && imbalance((kr, ks)) < imbalance(cur)) {
                        Some((kr, ks))
                    } else {
                        Some(cur)
                    }
                }
            };
        }
    }
    let (kr, ks) = best.ok_or(GridError::FractionTooSmall(fraction))?;
    Ok(lattice(rows, cols, kr, ks))
}

/// All cells of the `kr × ks` uniform sub-lattice of a `rows × cols` grid.
pub fn lattice(rows: usize, cols: usize, kr: usize, ks: usize) -> Vec<CellIndex> {
    let ri = sublattice_indices(rows, kr);
    let si = sublattice_indices(cols, ks);
    ri.iter().flat_map(|&r| si.iter().map(move |&s| CellIndex::new(r, s))).collect()
}

/// Dense row-major grid of optional results.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGrid {
    axes: GridAxes,
    cells: Vec<Option<SlicingResult>>,
}

impl SliceGrid {
    pub fn new(axes: GridAxes) -> Self {
        let cells = vec![None; axes.len()];
        Self { axes, cells }
    }

    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    fn offset(&self, cell: CellIndex) -> usize {
        cell.r * self.axes.cols() + cell.s
    }

    pub fn get(&self, cell: CellIndex) -> Option<&SlicingResult> {
        if !self.axes.contains(cell) {
            return None;
        }
        self.cells[self.offset(cell)].as_ref()
    }

    pub fn set(&mut self, cell: CellIndex, result: SlicingResult) -> Result<(), GridError> {
        self.axes.check(cell)?;
        let at = self.offset(cell);
        self.cells[at] = Some(result);
        Ok(())
    }

    pub fn clear(&mut self, cell: CellIndex) {
        if self.axes.contains(cell) {
            let at = self.offset(cell);
            self.cells[at] = None;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, Option<&SlicingResult>)> + '_ {
        self.axes.cells().zip(self.cells.iter().map(Option::as_ref))
    }

    pub fn populated(&self) -> impl Iterator<Item = (CellIndex, &SlicingResult)> + '_ {
        self.iter().filter_map(|(c, r)| r.map(|r| (c, r)))
    }

    pub fn sliced(&self) -> impl Iterator<Item = (CellIndex, &SlicingResult)> + '_ {
        self.populated().filter(|(_, r)| r.is_sliced())
    }

    pub fn sliced_count(&self) -> usize {
        self.sliced().count()
    }

    pub fn interpolated_count(&self) -> usize {
        self.populated().filter(|(_, r)| !r.is_sliced()).count()
    }

    pub fn empty_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn is_fully_sliced(&self) -> bool {
        self.cells.iter().all(|c| matches!(c, Some(r) if r.is_sliced()))
    }
}

/// Inclusive bounds on print time and material; absent bounds are unconstrained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub time_lo_s: Option<f64>,
    pub time_hi_s: Option<f64>,
    pub material_lo: Option<f64>,
    pub material_hi: Option<f64>,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), GridError> {
        if let (Some(lo), Some(hi)) = (self.time_lo_s, self.time_hi_s) {
            if lo > hi {
                return Err(GridError::InvertedBound { quantity: "print time", lo, hi });
            }
        }
        if let (Some(lo), Some(hi)) = (self.material_lo, self.material_hi) {
            if lo > hi {
                return Err(GridError::InvertedBound { quantity: "material", lo, hi });
            }
        }
        Ok(())
    }

    pub fn admits(&self, result: &SlicingResult) -> bool {
        within(result.print_time_s, self.time_lo_s, self.time_hi_s)
            && within(result.material_mm3, self.material_lo, self.material_hi)
    }
}

fn within(value: f64, lo: Option<f64>, hi: Option<f64>) -> bool {
    lo.is_none_or(|lo| value >= lo) && hi.is_none_or(|hi| value <= hi)
}

/// Populated cells satisfying every present bound, in row-major order.
pub fn filter(grid: &SliceGrid, constraints: &ConstraintSet) -> Result<Vec<CellIndex>, GridError> {
    constraints.validate()?;
    Ok(grid.populated().filter(|(_, r)| constraints.admits(r)).map(|(c, _)| c).collect())
}

/// Min/max print time and material across all populated cells.
pub fn default_bounds(grid: &SliceGrid) -> Result<ConstraintSet, GridError> {
    let mut cells = grid.populated().map(|(_, r)| r).peekable();
    if cells.peek().is_none() {
        return Err(GridError::EmptyGrid);
    }
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in cells {
        bounds.0 = bounds.0.min(r.print_time_s);
        bounds.1 = bounds.1.max(r.print_time_s);
        bounds.2 = bounds.2.min(r.material_mm3);
        bounds.3 = bounds.3.max(r.material_mm3);
    }
    Ok(ConstraintSet {
        time_lo_s: Some(bounds.0),
        time_hi_s: Some(bounds.1),
        material_lo: Some(bounds.2),
        material_hi: Some(bounds.3),
    })
}
