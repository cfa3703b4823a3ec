//! Duality-gap diagnostics for twisted costs: the gap field
//! `E = C - φ ⊕ ψ`, the rotated-coordinate inequality controlling its
//! quadratic detachment, the cross-Hessian oscillation `κ(r)`, Laplace
//! integrals `∫ e^{-E/ε} dμ⁻⊗μ⁺` with their scaling fits, and the 1-D
//! quadratic-cost stability metrics (monotone map, barycentric projection,
//! resolvent detachment).

use crate::costs::{CostError, CostKind, CostModel};
use crate::exact_ot::{Coupling, DualPair};
use crate::measures::{Box, DiscreteMeasure};
use crate::numerics::{frobenius_norm, golden_section_min, inv_small, line_fit};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("duals are infeasible beyond tolerance: worst violation {0:.3e}")]
    InfeasibleDuals(f64),
    #[error("cost model is not sampled-twisted (twist margin {0:.3e})")]
    NotTwisted(f64),
    #[error("operation requires 1-D measures")]
    NotOneDimensional,
    #[error("epsilon ladder must be nonempty, positive, and within (0, 0.5]")]
    BadLadder,
    #[error("row {0} of the plan carries no mass")]
    ZeroMassRow(usize),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// The duality gap `E = C - φ ⊕ ψ` tabulated on the product support, with
/// the mask of its (numerical) zero set.
#[derive(Debug, Clone)]
pub struct GapField {
    pub e: Array2<f64>,
    pub duals: DualPair,
    pub zero_mask: Array2<bool>,
    pub zero_tol: f64,
}

impl GapField {
    /// Product atoms `(i, j)` on the numerical contact set.
    pub fn zero_set(&self) -> Vec<(usize, usize)> {
        self.zero_mask
            .indexed_iter()
            .filter_map(|((i, j), &z)| z.then_some((i, j)))
            .collect()
    }
}

/// Tabulate `E = C - φ ⊕ ψ`. Entries in `[-1e-9, 0)` are clamped to zero;
/// anything below that reports the duals as infeasible.
pub fn gap_field(cost: &Array2<f64>, duals: &DualPair) -> Result<GapField, GapError> {
    let (n, m) = cost.dim();
    assert_eq!(duals.phi.len(), n);
    assert_eq!(duals.psi.len(), m);
    let cmax = cost.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let zero_tol = 1e-8 * (1.0 + cmax);
    let mut e = Array2::zeros((n, m));
    let mut worst: f64 = 0.0;
    for ((i, j), &c) in cost.indexed_iter() {
        let v = c - duals.phi[i] - duals.psi[j];
        if v < 0.0 {
            worst = worst.max(-v);
        }
        e[[i, j]] = v.max(0.0);
    }
    if worst > 1e-9 {
        return Err(GapError::InfeasibleDuals(worst));
    }
    let zero_mask = e.mapv(|v| v <= zero_tol);
    Ok(GapField { e, duals: duals.clone(), zero_mask, zero_tol })
}

/// Minty rotation anchored at a base point: `u = (x + A y)/2`,
/// `v = (x - A y)/2` with `A` the cross-Hessian at the base.
#[derive(Debug, Clone)]
pub struct MintyFrame {
    pub base_x: Vec<f64>,
    pub base_y: Vec<f64>,
    /// row-major d x d cross-Hessian at the base point
    pub a: Vec<f64>,
    pub det_a: f64,
}

impl MintyFrame {
    pub fn at(
        c: &CostModel,
        base_x: &[f64],
        base_y: &[f64],
        twist_floor: f64,
    ) -> Result<Self, GapError> {
        let a = c.cross_hessian(base_x, base_y)?;
        let det_a = crate::numerics::det_small(&a, c.dim);
        if det_a.abs() < twist_floor.max(1e-12) {
            return Err(GapError::NotTwisted(det_a.abs()));
        }
        Ok(Self {
            base_x: base_x.to_vec(),
            base_y: base_y.to_vec(),
            a,
            det_a,
        })
    }

    fn apply_a(&self, y: &[f64]) -> Vec<f64> {
        let d = y.len();
        (0..d)
            .map(|i| (0..d).map(|j| self.a[i * d + j] * y[j]).sum())
            .collect()
    }

    pub fn u(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let ay = self.apply_a(y);
        x.iter().zip(ay).map(|(xi, ai)| 0.5 * (xi + ai)).collect()
    }

    pub fn v(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let ay = self.apply_a(y);
        x.iter().zip(ay).map(|(xi, ai)| 0.5 * (xi - ai)).collect()
    }
}

fn tensor_grid(b: &Box, samples: usize) -> Vec<Vec<f64>> {
    let d = b.dim();
    let s = samples.max(2);
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

fn clamp_into(p: &mut [f64], b: &Box) {
    for (v, &(lo, hi)) in p.iter_mut().zip(&b.intervals) {
        *v = v.clamp(lo, hi);
    }
}

/// Sampled oscillation of the normalized cross-Hessian within max-norm
/// radius `r`: `sup ‖(∇²xy c(p'))⁻¹ ∇²xy c(p) - id‖_F` over ordered pairs
/// at distance at most `r`, inflated by 5%.
pub fn kappa(
    c: &CostModel,
    box_minus: &Box,
    box_plus: &Box,
    r: f64,
    samples: usize,
) -> Result<f64, GapError> {
    let twist = crate::costs::check_twist(c, box_minus, box_plus, samples)?;
    if twist.twist_margin <= 0.0 {
        return Err(GapError::NotTwisted(twist.twist_margin));
    }
    let d = c.dim;
    let xs = tensor_grid(box_minus, samples);
    let ys = tensor_grid(box_plus, samples);
    // Displacements: stay on the sphere of radius r (and r/2) in each
    // component, normalized so the pair max-norm distance is at most r.
    let mut offsets: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let dirs = signed_directions(d);
    for dx in &dirs {
        for dy in &dirs {
            for scale in [1.0, 0.5] {
                offsets.push((
                    dx.iter().map(|t| t * r * scale).collect(),
                    dy.iter().map(|t| t * r * scale).collect(),
                ));
            }
        }
    }
    let mut sup: f64 = 0.0;
    for x in &xs {
        for y in &ys {
            let a = c.cross_hessian(x, y)?;
            let a_inv = inv_small(&a, d).ok_or(GapError::NotTwisted(0.0))?;
            for (dx, dy) in &offsets {
                let mut xp: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + b).collect();
                let mut yp: Vec<f64> = y.iter().zip(dy).map(|(a, b)| a + b).collect();
                clamp_into(&mut xp, box_minus);
                clamp_into(&mut yp, box_plus);
                let b = c.cross_hessian(&xp, &yp)?;
                let b_inv = inv_small(&b, d).ok_or(GapError::NotTwisted(0.0))?;
                sup = sup.max(dev_from_identity(&b_inv, &a, d));
                sup = sup.max(dev_from_identity(&a_inv, &b, d));
            }
        }
    }
    Ok(sup * 1.05)
}

/// Unit directions (normalized to Euclidean length 1) with entries in
/// {-1, 0, 1}, zero included.
fn signed_directions(d: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; d]; // 0 -> -1, 1 -> 0, 2 -> +1
    loop {
        let v: Vec<f64> = idx.iter().map(|&k| k as f64 - 1.0).collect();
        let norm: f64 = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            out.push(v);
        } else {
            out.push(v.iter().map(|t| t / norm).collect());
        }
        let mut carry = true;
        for ax in (0..d).rev() {
            if carry {
                idx[ax] += 1;
                if idx[ax] == 3 {
                    idx[ax] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            return out;
        }
    }
}

/// `‖ M N - id ‖_F` for row-major d x d factors.
fn dev_from_identity(m: &[f64], n: &[f64], d: usize) -> f64 {
    let mut prod = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += m[i * d + k] * n[k * d + j];
            }
            prod[i * d + j] = s - if i == j { 1.0 } else { 0.0 };
        }
    }
    frobenius_norm(&prod)
}

/// Outcome of sampling the rotated-coordinate gap inequality.
#[derive(Debug, Clone, Copy)]
pub struct GapInequalityReport {
    pub pairs_tested: usize,
    pub violations: usize,
    /// smallest observed `LHS - RHS`; nonnegative (up to 1e-9) when clean
    pub worst_margin: f64,
}

/// Sample pairs of product atoms inside the max-norm ball `B_r(base)` and
/// test `E(p') + E(p) >= |Δu|² - |Δv|² - κ(r)(|Δu|² + |Δv|²) - 1e-9`.
#[allow(clippy::too_many_arguments)]
pub fn gap_inequality_check(
    field: &GapField,
    frame: &MintyFrame,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    kappa_r: f64,
    r: f64,
    trials: usize,
    rng_seed: u64,
) -> GapInequalityReport {
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (i, x) in mu_minus.points().iter().enumerate() {
        let dx = euclid(x, &frame.base_x);
        if dx > r {
            continue;
        }
        for (j, y) in mu_plus.points().iter().enumerate() {
            if euclid(y, &frame.base_y) <= r {
                candidates.push((i, j));
            }
        }
    }
    if candidates.len() < 2 {
        return GapInequalityReport { pairs_tested: 0, violations: 0, worst_margin: f64::INFINITY };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut violations = 0usize;
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let (i0, j0) = candidates[rng.gen_range(0..candidates.len())];
        let (i1, j1) = candidates[rng.gen_range(0..candidates.len())];
        let p0 = (mu_minus.point(i0), mu_plus.point(j0));
        let p1 = (mu_minus.point(i1), mu_plus.point(j1));
        let du = sub(&frame.u(p1.0, p1.1), &frame.u(p0.0, p0.1));
        let dv = sub(&frame.v(p1.0, p1.1), &frame.v(p0.0, p0.1));
        let du2 = sq(&du);
        let dv2 = sq(&dv);
        let lhs = field.e[[i1, j1]] + field.e[[i0, j0]];
        let rhs = du2 - dv2 - kappa_r * (du2 + dv2);
        let margin = lhs - rhs;
        if margin < worst {
            worst = margin;
        }
        if margin < -1e-9 {
            violations += 1;
        }
    }
    GapInequalityReport { pairs_tested: trials, violations, worst_margin: worst }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|t| t * t).sum()
}

/// `Σ_ij exp(-E_ij/ε) μ⁻_i μ⁺_j`; lies in (0, 1] and is nondecreasing in ε.
pub fn laplace_integral(
    field: &GapField,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps: f64,
) -> f64 {
    let a = mu_minus.weights();
    let b = mu_plus.weights();
    let (n, _) = field.e.dim();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row = field.e.row(i);
            let mut s = 0.0;
            for (j, &e) in row.iter().enumerate() {
                s += (-e / eps).exp() * b[j];
            }
            s * a[i]
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Least-squares slope of `log ∫ e^{-E/ε}` against `log ε` over a ladder;
/// the intercept estimates the log of the Laplace constant.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub slope: f64,
    pub intercept: f64,
    pub epsilons: Vec<f64>,
    pub integrals: Vec<f64>,
}

pub fn laplace_slope_fit(
    field: &GapField,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps_ladder: &[f64],
) -> Result<LaplaceFit, GapError> {
    if eps_ladder.is_empty() || eps_ladder.iter().any(|&e| !(e > 0.0 && e <= 0.5)) {
        return Err(GapError::BadLadder);
    }
    let integrals: Vec<f64> = eps_ladder
        .iter()
        .map(|&e| laplace_integral(field, mu_minus, mu_plus, e))
        .collect();
    let lx: Vec<f64> = eps_ladder.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = integrals.iter().map(|v| v.max(1e-300).ln()).collect();
    let (slope, intercept) = line_fit(&lx, &ly).ok_or(GapError::BadLadder)?;
    Ok(LaplaceFit {
        slope,
        intercept,
        epsilons: eps_ladder.to_vec(),
        integrals,
    })
}

/// Validity floor for Laplace ladders: the temperature below which the
/// discrete sum saturates. `(10 h)²` for twisted C² costs (detachment
/// length `√ε`), `10 h` for the abs cost.
pub fn laplace_floor(kind: &CostKind, cell_width: f64) -> f64 {
    match kind {
        CostKind::Abs => 10.0 * cell_width,
        CostKind::PNormPower { p } if *p < 2.0 => 10.0 * cell_width,
        _ => (10.0 * cell_width).powi(2),
    }
}

/// Monotone rearrangement map between two 1-D measures by CDF matching
/// (right-continuous inverse). Entry `i` is `T(x_i)` in atom order.
pub fn brenier_map_1d(
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
) -> Result<Vec<f64>, GapError> {
    if mu_minus.ambient_dim() != 1 || mu_plus.ambient_dim() != 1 {
        return Err(GapError::NotOneDimensional);
    }
    let order = |mu: &DiscreteMeasure| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..mu.len()).collect();
        idx.sort_by(|&p, &q| mu.point(p)[0].partial_cmp(&mu.point(q)[0]).unwrap());
        idx
    };
    let si = order(mu_minus);
    let sj = order(mu_plus);
    // G-quantiles of the target, walked in lockstep with the source CDF.
    let mut t = vec![0.0; mu_minus.len()];
    let mut acc_g = mu_plus.weights()[sj[0]];
    let mut q = 0usize;
    let mut acc_f = 0.0;
    for &i in &si {
        acc_f += mu_minus.weights()[i];
        while acc_g < acc_f - 1e-12 && q + 1 < sj.len() {
            q += 1;
            acc_g += mu_plus.weights()[sj[q]];
        }
        t[i] = mu_plus.point(sj[q])[0];
    }
    Ok(t)
}

/// Squared deviation of a plan from a reference map, together with the
/// barycentric-projection error (always the smaller of the two).
#[derive(Debug, Clone, Copy)]
pub struct StabilityMetrics {
    /// `Σ_ij γ_ij |y_j - T(x_i)|²`
    pub map_mse: f64,
    /// `Σ_i μ⁻_i |T_ε(x_i) - T(x_i)|²` with `T_ε` the barycentric projection
    pub bary_mse: f64,
}

pub fn stability_metrics(
    plan: &Coupling,
    t_map: &[f64],
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
) -> Result<StabilityMetrics, GapError> {
    if mu_minus.ambient_dim() != 1 || mu_plus.ambient_dim() != 1 {
        return Err(GapError::NotOneDimensional);
    }
    let (n, m) = plan.matrix().dim();
    assert_eq!(t_map.len(), n);
    let mut map_mse = 0.0;
    let mut bary_mse = 0.0;
    for i in 0..n {
        let row = plan.matrix().row(i);
        let wi = mu_minus.weights()[i];
        let mut row_mass = 0.0;
        let mut row_mean = 0.0;
        for j in 0..m {
            let g = row[j];
            if g > 0.0 {
                let y = mu_plus.point(j)[0];
                map_mse += g * (y - t_map[i]).powi(2);
                row_mass += g;
                row_mean += g * y;
            }
        }
        if row_mass <= 0.0 {
            return Err(GapError::ZeroMassRow(i));
        }
        let t_eps = row_mean / wi;
        bary_mse += wi * (t_eps - t_map[i]).powi(2);
    }
    Ok(StabilityMetrics { map_mse, bary_mse })
}

/// Outcome of sampling the quadratic detachment bound through the resolvent.
#[derive(Debug, Clone, Copy)]
pub struct ResolventReport {
    pub checked: usize,
    pub violations: usize,
    /// smallest observed `E - |x - z*|²`
    pub worst_margin: f64,
}

/// For the 1-D quadratic cost with c-conjugate duals, check
/// `E(x, y) >= |x - (id + ∂f)⁻¹(x + y)|² - 1e-6` at sampled product atoms,
/// where `f(x) = x²/2 - φ(x)` extends off the atoms through the c-transform
/// as a max-affine function and the resolvent is evaluated as its prox.
pub fn resolvent_detachment_check(
    field: &GapField,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    samples: usize,
    rng_seed: u64,
) -> Result<ResolventReport, GapError> {
    if mu_minus.ambient_dim() != 1 || mu_plus.ambient_dim() != 1 {
        return Err(GapError::NotOneDimensional);
    }
    let ys: Vec<f64> = mu_plus.points().iter().map(|p| p[0]).collect();
    let psi = &field.duals.psi;
    // f(w) = max_j (w y_j - y_j²/2 + ψ_j), the Legendre transform of
    // f*(y_j) = y_j²/2 - ψ_j restricted to the target atoms.
    let f_hat = |w: f64| -> f64 {
        ys.iter()
            .zip(psi)
            .map(|(&y, &q)| w * y - 0.5 * y * y + q)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let y_lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let prox = |z: f64| -> f64 {
        // prox point lies in [z - y_hi, z - y_lo]; the objective is strictly
        // convex, so a coarse scan plus golden section is reliable.
        let obj = |w: f64| 0.5 * (w - z).powi(2) + f_hat(w);
        let (lo, hi) = (z - y_hi - 1e-9, z - y_lo + 1e-9);
        let mut best_w = lo;
        let mut best = f64::INFINITY;
        let scans = 128;
        for k in 0..=scans {
            let w = lo + (hi - lo) * k as f64 / scans as f64;
            let v = obj(w);
            if v < best {
                best = v;
                best_w = w;
            }
        }
        let pad = (hi - lo) / scans as f64;
        let (w, _) = golden_section_min(obj, best_w - pad, best_w + pad, 1e-11);
        w
    };

    let (n, m) = field.e.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut violations = 0usize;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..m);
        let x = mu_minus.point(i)[0];
        let y = mu_plus.point(j)[0];
        let z_star = prox(x + y);
        let margin = field.e[[i, j]] - (x - z_star).powi(2);
        if margin < worst {
            worst = margin;
        }
        if margin < -1e-6 {
            violations += 1;
        }
    }
    Ok(ResolventReport { checked: samples, violations, worst_margin: worst })
}
