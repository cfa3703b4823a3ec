//! Cost models `c(x, y)` with analytic derivatives and the certified
//! constants the rate analysis needs: a Lipschitz bound, a semiconcavity
//! bound (gradient Lipschitz constant), and a sampled twist margin
//! `min |det ∇²xy c|`.
//!
//! Sampled constants are inflated by 5% so they behave as upper bounds;
//! analytic values are exact. The `abs` kind exposes value and Lipschitz
//! constant only — every operation needing two derivatives rejects it.

use crate::measures::{Box, DiscreteMeasure};
use crate::numerics::{det_small, sym_spectral_norm};
use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

/// Inflation applied to sampled suprema so they act as upper bounds.
const SAMPLED_INFLATION: f64 = 1.05;
/// Default tensor-grid resolution for sampled constants.
const SAMPLES_PER_AXIS: usize = 33;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("dimension mismatch: cost dim {cost_dim}, measure dim {measure_dim}")]
    DimensionMismatch { cost_dim: usize, measure_dim: usize },
    #[error("operation requires a C^2 cost kind; `{0}` is not")]
    NotTwiceDifferentiable(String),
    #[error("invalid cost parameters: {0}")]
    BadParameters(String),
}

/// Supported cost families.
#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `c(x, y) = |x - y|^2 / 2`
    Quadratic,
    /// `c(x, y) = |x - y|`
    Abs,
    /// `c(x, y) = |x - y|^p`, `p >= 1`; twice differentiable when `p >= 2`
    PNormPower { p: f64 },
    /// `c(x, y) = -x · y`
    Bilinear,
    /// One-dimensional polynomial `c(x, y) = Σ_ab coeffs[a][b] x^a y^b`
    PolynomialCustom { coeffs: Vec<Vec<f64>> },
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            CostKind::Quadratic => "quadratic",
            CostKind::Abs => "abs",
            CostKind::PNormPower { .. } => "p-norm-power",
            CostKind::Bilinear => "bilinear",
            CostKind::PolynomialCustom { .. } => "polynomial-custom",
        }
    }
}

/// A cost model on `R^d x R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub kind: CostKind,
    pub dim: usize,
}

/// Constants entering the rate bounds; see [`check_twist`],
/// [`lipschitz_estimate`], [`semiconcavity_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConstants {
    pub lipschitz: f64,
    pub lambda: f64,
    pub twist_margin: f64,
}

/// Result of the sampled twist check: the smallest `|det ∇²xy c|` over the
/// tensor grid and where it was attained.
#[derive(Debug, Clone)]
pub struct TwistReport {
    pub twist_margin: f64,
    pub argmin_x: Vec<f64>,
    pub argmin_y: Vec<f64>,
}

impl CostModel {
    pub fn new(kind: CostKind, dim: usize) -> Result<Self, CostError> {
        match &kind {
            CostKind::PNormPower { p } if *p < 1.0 => {
                return Err(CostError::BadParameters(format!("p = {p} < 1")))
            }
            CostKind::PolynomialCustom { coeffs } => {
                if dim != 1 {
                    return Err(CostError::BadParameters(
                        "polynomial-custom costs are one-dimensional".into(),
                    ));
                }
                if coeffs.is_empty() || coeffs.iter().any(|row| row.is_empty()) {
                    return Err(CostError::BadParameters("empty coefficient table".into()));
                }
            }
            _ => {}
        }
        if dim == 0 {
            return Err(CostError::BadParameters("dim must be positive".into()));
        }
        Ok(Self { kind, dim })
    }

    pub fn quadratic(dim: usize) -> Self {
        Self { kind: CostKind::Quadratic, dim }
    }

    pub fn abs(dim: usize) -> Self {
        Self { kind: CostKind::Abs, dim }
    }

    pub fn bilinear(dim: usize) -> Self {
        Self { kind: CostKind::Bilinear, dim }
    }

    /// Whether analytic second derivatives exist everywhere on bounded boxes.
    pub fn is_c2(&self) -> bool {
        match &self.kind {
            CostKind::Quadratic | CostKind::Bilinear | CostKind::PolynomialCustom { .. } => true,
            CostKind::PNormPower { p } => *p >= 2.0,
            CostKind::Abs => false,
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        match &self.kind {
            CostKind::Quadratic => 0.5 * sq_dist(x, y),
            CostKind::Abs => sq_dist(x, y).sqrt(),
            CostKind::PNormPower { p } => sq_dist(x, y).sqrt().powf(*p),
            CostKind::Bilinear => -dot(x, y),
            CostKind::PolynomialCustom { coeffs } => poly_eval(coeffs, x[0], y[0], 0, 0),
        }
    }

    /// Gradient in the first argument. Not defined for `abs` on the diagonal;
    /// callers gate on [`is_c2`] where that matters.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match &self.kind {
            CostKind::Quadratic => x.iter().zip(y).map(|(a, b)| a - b).collect(),
            CostKind::Abs => {
                let r = sq_dist(x, y).sqrt().max(1e-300);
                x.iter().zip(y).map(|(a, b)| (a - b) / r).collect()
            }
            CostKind::PNormPower { p } => {
                let r = sq_dist(x, y).sqrt();
                if r == 0.0 {
                    return vec![0.0; self.dim];
                }
                let f = p * r.powf(p - 2.0);
                x.iter().zip(y).map(|(a, b)| f * (a - b)).collect()
            }
            CostKind::Bilinear => y.iter().map(|b| -b).collect(),
            CostKind::PolynomialCustom { coeffs } => vec![poly_eval(coeffs, x[0], y[0], 1, 0)],
        }
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match &self.kind {
            CostKind::Quadratic => x.iter().zip(y).map(|(a, b)| b - a).collect(),
            CostKind::Abs => {
                let r = sq_dist(x, y).sqrt().max(1e-300);
                x.iter().zip(y).map(|(a, b)| (b - a) / r).collect()
            }
            CostKind::PNormPower { p } => {
                let r = sq_dist(x, y).sqrt();
                if r == 0.0 {
                    return vec![0.0; self.dim];
                }
                let f = p * r.powf(p - 2.0);
                x.iter().zip(y).map(|(a, b)| f * (b - a)).collect()
            }
            CostKind::Bilinear => x.iter().map(|a| -a).collect(),
            CostKind::PolynomialCustom { coeffs } => vec![poly_eval(coeffs, x[0], y[0], 0, 1)],
        }
    }

    /// Mixed second derivative `(∂²c/∂x_i∂y_j)_{ij}`, row-major `d x d`.
    pub fn cross_hessian(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CostError> {
        if !self.is_c2() {
            return Err(CostError::NotTwiceDifferentiable(self.kind.name().into()));
        }
        let d = self.dim;
        Ok(match &self.kind {
            CostKind::Quadratic => neg_identity(d, 1.0),
            CostKind::Bilinear => neg_identity(d, 1.0),
            CostKind::PNormPower { p } => {
                if (*p - 2.0).abs() < 1e-14 {
                    neg_identity(d, 2.0)
                } else {
                    let r2 = sq_dist(x, y);
                    let r = r2.sqrt();
                    let mut m = vec![0.0; d * d];
                    if r > 0.0 {
                        let f1 = p * r.powf(p - 2.0);
                        let f2 = p * (p - 2.0) * r.powf(p - 4.0);
                        for i in 0..d {
                            for j in 0..d {
                                let mut v = -f2 * (x[i] - y[i]) * (x[j] - y[j]);
                                if i == j {
                                    v -= f1;
                                }
                                m[i * d + j] = v;
                            }
                        }
                    }
                    m
                }
            }
            CostKind::PolynomialCustom { coeffs } => vec![poly_eval(coeffs, x[0], y[0], 1, 1)],
            CostKind::Abs => unreachable!(),
        })
    }

    /// Full Hessian in the joint variable `(x, y)`, row-major `2d x 2d`.
    pub fn full_hessian(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CostError> {
        if !self.is_c2() {
            return Err(CostError::NotTwiceDifferentiable(self.kind.name().into()));
        }
        let d = self.dim;
        let n = 2 * d;
        let mut h = vec![0.0; n * n];
        match &self.kind {
            CostKind::Quadratic => {
                for i in 0..d {
                    h[i * n + i] = 1.0;
                    h[(d + i) * n + (d + i)] = 1.0;
                    h[i * n + (d + i)] = -1.0;
                    h[(d + i) * n + i] = -1.0;
                }
            }
            CostKind::Bilinear => {
                for i in 0..d {
                    h[i * n + (d + i)] = -1.0;
                    h[(d + i) * n + i] = -1.0;
                }
            }
            CostKind::PNormPower { p } => {
                let r2 = sq_dist(x, y);
                let r = r2.sqrt();
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                // Hessian of r^p in the difference variable t = x - y,
                // then lifted by the chain rule: H_xx = H_tt, H_xy = -H_tt.
                let mut htt = vec![0.0; d * d];
                if r > 0.0 {
                    let f1 = p * r.powf(p - 2.0);
                    let f2 = p * (p - 2.0) * r.powf(p - 4.0);
                    for i in 0..d {
                        for j in 0..d {
                            let mut v = f2 * diff[i] * diff[j];
                            if i == j {
                                v += f1;
                            }
                            htt[i * d + j] = v;
                        }
                    }
                } else if (*p - 2.0).abs() < 1e-14 {
                    for i in 0..d {
                        htt[i * d + i] = 2.0;
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        let v = htt[i * d + j];
                        h[i * n + j] = v;
                        h[(d + i) * n + (d + j)] = v;
                        h[i * n + (d + j)] = -v;
                        h[(d + i) * n + j] = -v;
                    }
                }
            }
            CostKind::PolynomialCustom { coeffs } => {
                h[0] = poly_eval(coeffs, x[0], y[0], 2, 0);
                h[1] = poly_eval(coeffs, x[0], y[0], 1, 1);
                h[2] = h[1];
                h[3] = poly_eval(coeffs, x[0], y[0], 0, 2);
            }
            CostKind::Abs => unreachable!(),
        }
        Ok(h)
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn neg_identity(d: usize, scale: f64) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = -scale;
    }
    m
}

/// Evaluate `∂^dx_x ∂^dy_y` of the polynomial table at `(x, y)`.
fn poly_eval(coeffs: &[Vec<f64>], x: f64, y: f64, dx: u32, dy: u32) -> f64 {
    let mut v = 0.0;
    for (a, row) in coeffs.iter().enumerate() {
        for (b, &k) in row.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let (a, b) = (a as u32, b as u32);
            if a < dx || b < dy {
                continue;
            }
            let fx = falling(a, dx) * x.powi((a - dx) as i32);
            let fy = falling(b, dy) * y.powi((b - dy) as i32);
            v += k * fx * fy;
        }
    }
    v
}

fn falling(n: u32, k: u32) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

/// Dense cost matrix: entry `(i, j) = c(x_i, y_j)`.
pub fn cost_matrix(
    c: &CostModel,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
) -> Result<Array2<f64>, CostError> {
    for m in [mu_minus, mu_plus] {
        if m.ambient_dim() != c.dim {
            return Err(CostError::DimensionMismatch {
                cost_dim: c.dim,
                measure_dim: m.ambient_dim(),
            });
        }
    }
    let (n, m) = (mu_minus.len(), mu_plus.len());
    // Row-parallel fill: each row is written by exactly one task, so the
    // result is identical for any thread count.
    let mut flat = vec![0.0; n * m];
    flat.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let xi = mu_minus.point(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = c.value(xi, mu_plus.point(j));
        }
    });
    Ok(Array2::from_shape_vec((n, m), flat).expect("n*m entries"))
}

fn tensor_grid(b: &Box, samples_per_axis: usize) -> Vec<Vec<f64>> {
    let d = b.dim();
    let s = samples_per_axis.max(2);
    let mut pts = Vec::with_capacity(s.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        pts.push(
            idx.iter()
                .zip(&b.intervals)
                .map(|(&k, &(lo, hi))| lo + (hi - lo) * k as f64 / (s - 1) as f64)
                .collect(),
        );
        let mut carry = true;
        for ax in (0..d).rev() {
            if carry {
                idx[ax] += 1;
                if idx[ax] == s {
                    idx[ax] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            return pts;
        }
    }
}

/// Sampled infinitesimal-twist margin: `min |det ∇²xy c|` over a tensor grid,
/// with the argmin point. A strictly positive margin certifies the sampled
/// twist condition.
pub fn check_twist(
    c: &CostModel,
    box_minus: &Box,
    box_plus: &Box,
    samples_per_axis: usize,
) -> Result<TwistReport, CostError> {
    if !c.is_c2() {
        return Err(CostError::NotTwiceDifferentiable(c.kind.name().into()));
    }
    let xs = tensor_grid(box_minus, samples_per_axis);
    let ys = tensor_grid(box_plus, samples_per_axis);
    let mut best = f64::INFINITY;
    let mut arg = (0, 0);
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            let h = c.cross_hessian(x, y)?;
            let dv = det_small(&h, c.dim).abs();
            if dv < best {
                best = dv;
                arg = (i, j);
            }
        }
    }
    Ok(TwistReport {
        twist_margin: best,
        argmin_x: xs[arg.0].clone(),
        argmin_y: ys[arg.1].clone(),
    })
}

/// Upper bound on the per-variable Lipschitz constant of `c` on the boxes:
/// analytic for the closed-form kinds, otherwise a sampled supremum of the
/// gradient norms inflated by 5%.
pub fn lipschitz_estimate(c: &CostModel, box_minus: &Box, box_plus: &Box) -> f64 {
    match &c.kind {
        CostKind::Abs => 1.0,
        CostKind::Quadratic => sup_distance(box_minus, box_plus),
        CostKind::PNormPower { p } => {
            let dmax = sup_distance(box_minus, box_plus);
            p * dmax.powf(p - 1.0)
        }
        CostKind::Bilinear => sup_norm(box_plus).max(sup_norm(box_minus)),
        CostKind::PolynomialCustom { .. } => {
            let mut sup: f64 = 0.0;
            for x in tensor_grid(box_minus, SAMPLES_PER_AXIS) {
                for y in tensor_grid(box_plus, SAMPLES_PER_AXIS) {
                    let gx = c.grad_x(&x, &y);
                    let gy = c.grad_y(&x, &y);
                    sup = sup.max(norm(&gx)).max(norm(&gy));
                }
            }
            sup * SAMPLED_INFLATION
        }
    }
}

/// Upper bound on the semiconcavity constant (Lipschitz constant of the full
/// gradient): analytic where the Hessian is constant, sampled otherwise.
pub fn semiconcavity_estimate(
    c: &CostModel,
    box_minus: &Box,
    box_plus: &Box,
) -> Result<f64, CostError> {
    if !c.is_c2() {
        return Err(CostError::NotTwiceDifferentiable(c.kind.name().into()));
    }
    Ok(match &c.kind {
        CostKind::Quadratic => 2.0,
        CostKind::Bilinear => 1.0,
        CostKind::PNormPower { p } if (*p - 2.0).abs() < 1e-14 => 4.0,
        _ => {
            let mut sup: f64 = 0.0;
            for x in tensor_grid(box_minus, SAMPLES_PER_AXIS) {
                for y in tensor_grid(box_plus, SAMPLES_PER_AXIS) {
                    let h = c.full_hessian(&x, &y)?;
                    sup = sup.max(sym_spectral_norm(&h, 2 * c.dim));
                }
            }
            sup * SAMPLED_INFLATION
        }
    })
}

/// `sup |x - y|` over the two boxes (Euclidean), attained at corners.
fn sup_distance(box_minus: &Box, box_plus: &Box) -> f64 {
    box_minus
        .intervals
        .iter()
        .zip(&box_plus.intervals)
        .map(|(&(alo, ahi), &(blo, bhi))| {
            let m = (ahi - blo).abs().max((bhi - alo).abs());
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

/// `sup |x|` over a box (Euclidean).
fn sup_norm(b: &Box) -> f64 {
    b.intervals
        .iter()
        .map(|&(lo, hi)| lo.abs().max(hi.abs()).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{grid_measure, DensitySpec};
    use approx::assert_abs_diff_eq;

    fn unit_box(d: usize) -> Box {
        Box::new(vec![(0.0, 1.0); d]).unwrap()
    }

    fn two_point_measure(a: f64, b: f64) -> DiscreteMeasure {
        DiscreteMeasure::new(vec![vec![a], vec![b]], vec![0.5, 0.5]).unwrap()
    }

    fn x2y2() -> CostModel {
        // c(x, y) = x^2 y^2
        CostModel::new(
            CostKind::PolynomialCustom {
                coeffs: vec![vec![0.0, 0.0, 0.0], vec![0.0; 3], vec![0.0, 0.0, 1.0]],
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn cost_matrix_small_cases() {
        let mu = two_point_measure(0.0, 1.0);
        let q = cost_matrix(&CostModel::quadratic(1), &mu, &mu).unwrap();
        assert_eq!(q[[0, 0]], 0.0);
        assert_abs_diff_eq!(q[[0, 1]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q[[1, 0]], 0.5, epsilon = 1e-15);

        let a = cost_matrix(&CostModel::abs(1), &mu, &mu).unwrap();
        assert_eq!(a[[0, 1]], 1.0);
        assert_eq!(a[[1, 0]], 1.0);

        let x = DiscreteMeasure::new(vec![vec![1.0]], vec![1.0]).unwrap();
        let y = DiscreteMeasure::new(vec![vec![2.0]], vec![1.0]).unwrap();
        let b = cost_matrix(&CostModel::bilinear(1), &x, &y).unwrap();
        assert_eq!(b[[0, 0]], -2.0);
    }

    #[test]
    fn cost_matrix_symmetric_for_symmetric_costs_on_shared_support() {
        let mu = grid_measure(&DensitySpec::uniform(unit_box(1)), 6).unwrap();
        for c in [CostModel::quadratic(1), CostModel::abs(1)] {
            let m = cost_matrix(&c, &mu, &mu).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    assert_abs_diff_eq!(m[[i, j]], m[[j, i]], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn cost_matrix_rejects_dim_mismatch() {
        let mu1 = two_point_measure(0.0, 1.0);
        assert!(cost_matrix(&CostModel::quadratic(2), &mu1, &mu1).is_err());
    }

    #[test]
    fn cross_hessians_of_closed_forms() {
        let q = CostModel::quadratic(2);
        let h = q.cross_hessian(&[0.3, -0.7], &[1.0, 0.2]).unwrap();
        assert_eq!(h, vec![-1.0, 0.0, 0.0, -1.0]);

        let b = CostModel::bilinear(2);
        let h = b.cross_hessian(&[0.1, 0.5], &[0.9, -0.4]).unwrap();
        assert_eq!(h, vec![-1.0, 0.0, 0.0, -1.0]);

        let h = x2y2().cross_hessian(&[1.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(h[0], 4.0, epsilon = 1e-12);

        assert!(CostModel::abs(1).cross_hessian(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn finite_differences_confirm_cross_hessians() {
        // Central mixed difference, step 1e-5, over a coarse grid of
        // [-1, 1]^{2d}; agreement within 1e-6 absolute.
        let h = 1e-5;
        let models = vec![
            CostModel::quadratic(2),
            CostModel::bilinear(2),
            CostModel::new(CostKind::PNormPower { p: 3.0 }, 2).unwrap(),
            x2y2(),
        ];
        for c in models {
            let d = c.dim;
            let grid: Vec<f64> = vec![-0.9, -0.3, 0.4, 0.8];
            let mut pts: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
            if d == 1 {
                for &x in &grid {
                    for &y in &grid {
                        pts.push((vec![x], vec![y]));
                    }
                }
            } else {
                for &x0 in &grid {
                    for &y1 in &grid {
                        pts.push((vec![x0, 0.21], vec![-0.35, y1]));
                    }
                }
            }
            for (x, y) in pts {
                let analytic = c.cross_hessian(&x, &y).unwrap();
                for i in 0..d {
                    for j in 0..d {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[i] += h;
                        xm[i] -= h;
                        let mut yp = y.clone();
                        let mut ym = y.clone();
                        yp[j] += h;
                        ym[j] -= h;
                        let fd = (c.value(&xp, &yp) - c.value(&xp, &ym) - c.value(&xm, &yp)
                            + c.value(&xm, &ym))
                            / (4.0 * h * h);
                        assert!(
                            (fd - analytic[i * d + j]).abs() < 1e-6,
                            "{} at ({x:?},{y:?})[{i}{j}]: fd {fd} vs {}",
                            c.kind.name(),
                            analytic[i * d + j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn twist_margins() {
        let r = check_twist(&CostModel::quadratic(2), &unit_box(2), &unit_box(2), 5).unwrap();
        assert_abs_diff_eq!(r.twist_margin, 1.0, epsilon = 1e-14);

        let sym = Box::new(vec![(-1.0, 1.0)]).unwrap();
        let r = check_twist(&x2y2(), &sym, &sym, 5).unwrap();
        assert_eq!(r.twist_margin, 0.0);
        assert!(r.argmin_x[0] == 0.0 || r.argmin_y[0] == 0.0);

        let half = Box::new(vec![(0.5, 1.0)]).unwrap();
        let r = check_twist(&x2y2(), &half, &half, 5).unwrap();
        assert_abs_diff_eq!(r.twist_margin, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.argmin_x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.argmin_y[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn lipschitz_estimates() {
        let u = unit_box(1);
        assert_eq!(lipschitz_estimate(&CostModel::abs(1), &u, &u), 1.0);
        assert_abs_diff_eq!(
            lipschitz_estimate(&CostModel::quadratic(1), &u, &u),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            lipschitz_estimate(&CostModel::bilinear(1), &u, &u),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn semiconcavity_matches_eigen_oracle() {
        // Oracle: spectral norm of the analytic full Hessian, computed here
        // by an independent power iteration.
        fn power_iter_opnorm(h: &[f64], n: usize) -> f64 {
            let mut v = vec![1.0; n];
            let mut lam = 0.0;
            for _ in 0..500 {
                let mut w = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        w[i] += h[i * n + j] * v[j];
                    }
                }
                lam = w.iter().map(|t| t * t).sum::<f64>().sqrt();
                if lam == 0.0 {
                    return 0.0;
                }
                for t in &mut w {
                    *t /= lam;
                }
                v = w;
            }
            lam
        }
        let u = unit_box(1);
        let q1 = CostModel::quadratic(1);
        let oracle = power_iter_opnorm(&q1.full_hessian(&[0.3], &[0.7]).unwrap(), 2);
        assert_abs_diff_eq!(oracle, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(semiconcavity_estimate(&q1, &u, &u).unwrap(), 2.0, epsilon = 1e-12);

        let b1 = CostModel::bilinear(1);
        let oracle = power_iter_opnorm(&b1.full_hessian(&[0.3], &[0.7]).unwrap(), 2);
        assert_abs_diff_eq!(oracle, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(semiconcavity_estimate(&b1, &u, &u).unwrap(), 1.0, epsilon = 1e-12);

        let q2 = CostModel::quadratic(2);
        let u2 = unit_box(2);
        let oracle = power_iter_opnorm(&q2.full_hessian(&[0.1, 0.2], &[0.5, 0.9]).unwrap(), 4);
        assert_abs_diff_eq!(oracle, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(semiconcavity_estimate(&q2, &u2, &u2).unwrap(), 2.0, epsilon = 1e-12);

        assert!(semiconcavity_estimate(&CostModel::abs(1), &u, &u).is_err());
    }
}
