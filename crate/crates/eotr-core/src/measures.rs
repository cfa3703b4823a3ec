//! Discretized probability measures: weighted point clouds built from
//! box-supported densities by midpoint quadrature, or from segments embedded
//! in the plane by equal-arclength division.
//!
//! Weights always sum to one, atoms are pairwise distinct, and zero-weight
//! atoms are dropped at construction so entropy sums never meet `0·log 0`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("points and weights lengths differ: {points} vs {weights}")]
    LengthMismatch { points: usize, weights: usize },
    #[error("weights sum to {sum}, expected 1 within 1e-12")]
    NotNormalized { sum: f64 },
    #[error("negative weight {value} at atom {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("duplicate atom at indices {first} and {second}")]
    DuplicateAtom { first: usize, second: usize },
    #[error("no atoms with positive weight")]
    Empty,
    #[error("density spec invalid: {0}")]
    BadSpec(String),
    #[error("need n >= 2 grid cells per axis, got {0}")]
    TooFewCells(usize),
    #[error("segment endpoints coincide")]
    DegenerateSegment,
}

/// Axis-aligned box given by per-axis `[lo, hi]` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Box {
    pub intervals: Vec<(f64, f64)>,
}

impl Box {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        if intervals.is_empty() {
            return Err(MeasureError::BadSpec("box needs at least one axis".into()));
        }
        for &(lo, hi) in &intervals {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(MeasureError::BadSpec(format!(
                    "box interval [{lo}, {hi}] is not a bounded nonempty interval"
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    /// Diameter in the max-norm: the largest edge length.
    pub fn diameter(&self) -> f64 {
        self.intervals
            .iter()
            .map(|&(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }
}

/// Density shape on a box support.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    /// Constant density.
    Uniform,
    /// Density proportional to the distance from the lower face along `axis`.
    AffineRamp { axis: usize },
    /// Product of smooth bumps `exp(-1/(1-t^2))` per axis, vanishing at the
    /// boundary, truncated to the box.
    TruncatedBump,
}

/// A bounded, normalizable density on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpec {
    pub kind: DensityKind,
    pub support: Box,
}

impl DensitySpec {
    pub fn uniform(support: Box) -> Self {
        Self { kind: DensityKind::Uniform, support }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        if let DensityKind::AffineRamp { axis } = self.kind {
            if axis >= self.support.dim() {
                return Err(MeasureError::BadSpec(format!(
                    "ramp axis {axis} out of range for dim {}",
                    self.support.dim()
                )));
            }
        }
        Ok(())
    }

    /// Unnormalized density value at a point inside the support.
    fn raw_density(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::Uniform => 1.0,
            DensityKind::AffineRamp { axis } => {
                let (lo, _) = self.support.intervals[*axis];
                x[*axis] - lo
            }
            DensityKind::TruncatedBump => {
                let mut v = 1.0;
                for (xi, &(lo, hi)) in x.iter().zip(&self.support.intervals) {
                    let t = 2.0 * (xi - lo) / (hi - lo) - 1.0;
                    if t.abs() >= 1.0 {
                        return 0.0;
                    }
                    v *= (-1.0 / (1.0 - t * t)).exp();
                }
                v
            }
        }
    }
}

/// A finitely supported probability measure on `R^d`.
///
/// `cell_width` records the grid spacing when the measure was built on a
/// grid (largest cell edge); target windows for epsilon ladders are derived
/// from it.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    ambient_dim: usize,
    cell_width: Option<f64>,
}

/// Diagnostics from [`DiscreteMeasure::validate`] / [`validate`]; flags are
/// reported, never thrown.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureDiagnostics {
    pub weight_sum_error: f64,
    pub min_weight: f64,
    pub support_diameter: f64,
    pub flags: Vec<String>,
}

impl MeasureDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

impl DiscreteMeasure {
    /// Checked constructor: drops zero-weight atoms, then enforces the
    /// invariants (normalization, positivity, distinct atoms).
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if points.len() != weights.len() {
            return Err(MeasureError::LengthMismatch {
                points: points.len(),
                weights: weights.len(),
            });
        }
        let mut kept_points = Vec::with_capacity(points.len());
        let mut kept_weights = Vec::with_capacity(weights.len());
        for (i, (p, &w)) in points.into_iter().zip(&weights).enumerate() {
            if w < 0.0 {
                return Err(MeasureError::NegativeWeight { index: i, value: w });
            }
            if w > 0.0 {
                kept_points.push(p);
                kept_weights.push(w);
            }
        }
        if kept_points.is_empty() {
            return Err(MeasureError::Empty);
        }
        let sum: f64 = kept_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MeasureError::NotNormalized { sum });
        }
        let dim = kept_points[0].len();
        for p in &kept_points {
            if p.len() != dim {
                return Err(MeasureError::BadSpec("mixed point dimensions".into()));
            }
        }
        if let Some((a, b)) = find_duplicate(&kept_points) {
            return Err(MeasureError::DuplicateAtom { first: a, second: b });
        }
        Ok(Self {
            points: kept_points,
            weights: kept_weights,
            ambient_dim: dim,
            cell_width: None,
        })
    }

    /// Unchecked constructor for diagnostics and tests; invariants may be
    /// violated and will show up as flags in [`validate`].
    pub fn from_parts_unchecked(
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        ambient_dim: usize,
        cell_width: Option<f64>,
    ) -> Self {
        Self { points, weights, ambient_dim, cell_width }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn cell_width(&self) -> Option<f64> {
        self.cell_width
    }

    fn with_cell_width(mut self, h: f64) -> Self {
        self.cell_width = Some(h);
        self
    }

    /// Support diameter in the max-norm.
    pub fn support_diameter(&self) -> f64 {
        let mut diam: f64 = 0.0;
        for a in 0..self.points.len() {
            for b in a + 1..self.points.len() {
                diam = diam.max(max_norm_dist(&self.points[a], &self.points[b]));
            }
        }
        diam
    }

    pub fn validate(&self) -> MeasureDiagnostics {
        validate(self)
    }
}

fn max_norm_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn find_duplicate(points: &[Vec<f64>]) -> Option<(usize, usize)> {
    // Sort indices lexicographically so duplicates land adjacent; O(n log n).
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for w in idx.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Some((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    None
}

/// Midpoint-rule discretization of a density on a box: one atom per grid
/// cell center, weight proportional to the density there, renormalized.
///
/// `cell_width` is recorded as the largest box edge divided by `n_per_axis`.
pub fn grid_measure(spec: &DensitySpec, n_per_axis: usize) -> Result<DiscreteMeasure, MeasureError> {
    if n_per_axis < 2 {
        return Err(MeasureError::TooFewCells(n_per_axis));
    }
    spec.validate()?;
    let d = spec.support.dim();
    let n_cells = n_per_axis.pow(d as u32);
    let mut points = Vec::with_capacity(n_cells);
    let mut weights = Vec::with_capacity(n_cells);
    let mut index = vec![0usize; d];
    loop {
        let x: Vec<f64> = index
            .iter()
            .zip(&spec.support.intervals)
            .map(|(&k, &(lo, hi))| lo + (k as f64 + 0.5) * (hi - lo) / n_per_axis as f64)
            .collect();
        let w = spec.raw_density(&x);
        if w < 0.0 || !w.is_finite() {
            return Err(MeasureError::BadSpec(format!(
                "density is {w} at {x:?}; must be finite and nonnegative"
            )));
        }
        points.push(x);
        weights.push(w);
        // Odometer over the d-dimensional index.
        let mut carry = true;
        for ax in (0..d).rev() {
            if carry {
                index[ax] += 1;
                if index[ax] == n_per_axis {
                    index[ax] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(MeasureError::BadSpec("density vanishes on all cell centers".into()));
    }
    for w in &mut weights {
        *w /= total;
    }
    // Exact renormalization of uniform weights to dodge accumulated rounding.
    fixup_sum(&mut weights);
    let h = spec
        .support
        .intervals
        .iter()
        .map(|&(lo, hi)| (hi - lo) / n_per_axis as f64)
        .fold(0.0, f64::max);
    Ok(DiscreteMeasure::new(points, weights)?.with_cell_width(h))
}

/// `n` equally spaced atoms of weight `1/n` along a segment in the plane.
pub fn segment_measure(
    endpoints: ([f64; 2], [f64; 2]),
    n: usize,
) -> Result<DiscreteMeasure, MeasureError> {
    let (a, b) = endpoints;
    if n == 0 {
        return Err(MeasureError::TooFewCells(0));
    }
    if a == b {
        return Err(MeasureError::DegenerateSegment);
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) / n as f64;
            vec![a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect();
    let weights = vec![1.0 / n as f64; n];
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    Ok(DiscreteMeasure::new(points, weights)?.with_cell_width(len / n as f64))
}

/// Report invariant violations as flags rather than errors.
pub fn validate(mu: &DiscreteMeasure) -> MeasureDiagnostics {
    let mut flags = Vec::new();
    let sum: f64 = mu.weights.iter().sum();
    let weight_sum_error = (sum - 1.0).abs();
    if weight_sum_error > 1e-12 {
        flags.push(format!("weight sum off by {weight_sum_error:.3e}"));
    }
    if mu.points.len() != mu.weights.len() {
        flags.push(format!(
            "length mismatch: {} points vs {} weights",
            mu.points.len(),
            mu.weights.len()
        ));
    }
    let min_weight = mu.weights.iter().copied().fold(f64::INFINITY, f64::min);
    if mu.weights.iter().any(|&w| w <= 0.0) {
        flags.push("nonpositive weight present".into());
    }
    if let Some((a, b)) = find_duplicate(&mu.points) {
        flags.push(format!("duplicate atoms at {a} and {b}"));
    }
    MeasureDiagnostics {
        weight_sum_error,
        min_weight,
        support_diameter: mu.support_diameter(),
        flags,
    }
}

/// Nudge the largest weight so the total is exactly 1.0 in f64.
fn fixup_sum(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    let err = 1.0 - sum;
    if err != 0.0 {
        if let Some((imax, _)) = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        {
            weights[imax] += err;
        }
    }
}
