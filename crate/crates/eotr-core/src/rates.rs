//! Epsilon sweeps and the two-basis rate fit
//! `v_eps - v0 ≈ a·ε·log(1/ε) + b·ε`.
//!
//! The no-intercept regression is deliberate: `v_eps - v0` vanishes at
//! `ε = 0`, so an intercept would only absorb discretization bias that the
//! residual column is supposed to surface.

use crate::costs::{cost_matrix, CostError, CostKind, CostModel};
use crate::exact_ot::{self, ExactOtError};
use crate::measures::DiscreteMeasure;
use crate::numerics::lstsq2;
use crate::sinkhorn::{self, SinkhornConfig, SinkhornError};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RatesError {
    #[error("ladder minimum {min:.3e} is below the discreteness floor {floor:.3e}; pass force=true to override")]
    BelowFloor { min: f64, floor: f64 },
    #[error("need at least {need} usable rows in the window, found {found}")]
    TooFewRows { need: usize, found: usize },
    #[error("rank-deficient design (ladder too short or collinear)")]
    RankDeficient,
    #[error("window must satisfy 0 < lo < hi")]
    BadWindow,
    #[error(transparent)]
    Solver(#[from] SinkhornError),
    #[error(transparent)]
    Exact(#[from] ExactOtError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// One ladder point of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub epsilon: f64,
    pub v_eps: f64,
    pub v0: f64,
    pub entropy: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Sweep output: per-ε rows plus the exact transport cost they share.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub v0: f64,
}

/// Least-squares coefficients of `y ≈ a·ε log(1/ε) + b·ε` over a window.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub a: f64,
    pub b: f64,
    /// uncentered R² (no-intercept model)
    pub r_squared: f64,
    pub window: (f64, f64),
    pub residual_max: f64,
    pub rows_used: usize,
}

/// Temperature below which the discrete marginals stop resolving the
/// continuum expansion: `10 h` for costs with Lipschitz kinks, `(10 h)²`
/// for twice-differentiable kinds (the detachment scale is `√ε`).
pub fn discreteness_floor(kind: &CostKind, cell_width: f64) -> f64 {
    match kind {
        CostKind::Abs => 10.0 * cell_width,
        CostKind::PNormPower { p } if *p < 2.0 => 10.0 * cell_width,
        _ => (10.0 * cell_width).powi(2),
    }
}

/// Default fitting window `[max(floor, 20 h^ρ), 0.1]` with `ρ = 2` for
/// twice-differentiable kinds and `ρ = 1` otherwise.
pub fn default_window(kind: &CostKind, cell_width: f64) -> (f64, f64) {
    let rho_one = matches!(kind, CostKind::Abs) || matches!(kind, CostKind::PNormPower { p } if *p < 2.0);
    let lo = if rho_one {
        20.0 * cell_width
    } else {
        20.0 * cell_width * cell_width
    };
    (lo.max(discreteness_floor(kind, cell_width)), 0.1)
}

/// Solve the exact problem once, then walk the ε ladder with warm-started
/// entropic solves. Ladders dipping below `floor` are refused unless
/// `force` is set.
pub fn sweep(
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps_ladder: &[f64],
    cfg: &SinkhornConfig,
    floor: f64,
    force: bool,
) -> Result<SweepTable, RatesError> {
    let min = eps_ladder.iter().copied().fold(f64::INFINITY, f64::min);
    if min < floor && !force {
        return Err(RatesError::BelowFloor { min, floor });
    }
    let exact = exact_ot::solve_exact(cost, mu_minus, mu_plus)?;
    let results = sinkhorn::entropic_cost_sweep(cost, mu_minus, mu_plus, eps_ladder, cfg)?;
    let rows = results
        .iter()
        .map(|r| SweepRow {
            epsilon: r.epsilon,
            v_eps: r.v_eps,
            v0: exact.v0,
            entropy: r.entropy,
            iterations: r.iterations,
            residual: r.residual,
            converged: r.converged,
        })
        .collect();
    Ok(SweepTable { rows, v0: exact.v0 })
}

/// Fit `v_eps - v0` on the basis `{ε log(1/ε), ε}` over converged rows
/// inside the window. Needs at least 4 rows.
pub fn fit_rate(table: &SweepTable, window: (f64, f64)) -> Result<RateFit, RatesError> {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| (r.epsilon, r.v_eps - r.v0))
        .collect();
    fit_rate_values(&pts, window)
}

/// [`fit_rate`] on raw `(ε, y)` pairs.
pub fn fit_rate_values(points: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit, RatesError> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(RatesError::BadWindow);
    }
    let slack = 1e-12;
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(e, _)| e >= lo * (1.0 - slack) && e <= hi * (1.0 + slack))
        .collect();
    if kept.len() < 4 {
        return Err(RatesError::TooFewRows { need: 4, found: kept.len() });
    }
    let u: Vec<f64> = kept.iter().map(|&(e, _)| e * (1.0 / e).ln()).collect();
    let w: Vec<f64> = kept.iter().map(|&(e, _)| e).collect();
    let y: Vec<f64> = kept.iter().map(|&(_, v)| v).collect();
    let (a, b) = lstsq2(&u, &w, &y).ok_or(RatesError::RankDeficient)?;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut residual_max = 0.0f64;
    for k in 0..y.len() {
        let pred = a * u[k] + b * w[k];
        let r = y[k] - pred;
        ss_res += r * r;
        ss_tot += y[k] * y[k];
        residual_max = residual_max.max(r.abs());
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        a,
        b,
        r_squared,
        window,
        residual_max,
        rows_used: kept.len(),
    })
}

/// One ladder point of a debiased sweep.
#[derive(Debug, Clone, Copy)]
pub struct DebiasedRow {
    pub epsilon: f64,
    /// debiased cost `OT_ε`
    pub ot_eps: f64,
    pub v0: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Sweep the Sinkhorn divergence down the ladder (three warm-started solve
/// chains) and fit `OT_ε - v0` on the rate basis.
pub fn debiased_fit(
    c: &CostModel,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps_ladder: &[f64],
    cfg: &SinkhornConfig,
    window: (f64, f64),
) -> Result<(RateFit, Vec<DebiasedRow>), RatesError> {
    let c_cross = cost_matrix(c, mu_minus, mu_plus)?;
    let c_left = cost_matrix(c, mu_minus, mu_minus)?;
    let c_right = cost_matrix(c, mu_plus, mu_plus)?;
    let v0 = exact_ot::solve_exact(&c_cross, mu_minus, mu_plus)?.v0;
    let cross = sinkhorn::entropic_cost_sweep(&c_cross, mu_minus, mu_plus, eps_ladder, cfg)?;
    let left = sinkhorn::entropic_cost_sweep(&c_left, mu_minus, mu_minus, eps_ladder, cfg)?;
    let right = sinkhorn::entropic_cost_sweep(&c_right, mu_plus, mu_plus, eps_ladder, cfg)?;
    let rows: Vec<DebiasedRow> = cross
        .iter()
        .zip(&left)
        .zip(&right)
        .map(|((x, l), r)| DebiasedRow {
            epsilon: x.epsilon,
            ot_eps: x.v_eps - 0.5 * (l.v_eps + r.v_eps),
            v0,
            iterations: x.iterations + l.iterations + r.iterations,
            residual: x.residual.max(l.residual).max(r.residual),
            converged: x.converged && l.converged && r.converged,
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| (r.epsilon, r.ot_eps - r.v0))
        .collect();
    let fit = fit_rate_values(&pts, window)?;
    Ok((fit, rows))
}

/// Monotonicity/concavity summary of a computed ladder.
#[derive(Debug, Clone, Copy)]
pub struct ShapeReport {
    pub monotone_ok: bool,
    pub concave_ok: bool,
    /// largest second divided difference (should be <= 1e-8)
    pub worst_second_difference: f64,
    /// largest violation of monotonicity (should be <= 1e-9)
    pub worst_monotone_violation: f64,
}

/// Check that `ε -> v_eps` is non-decreasing and concave along a ladder,
/// up to solver noise.
pub fn qualitative_shape(rows: &[SweepRow]) -> ShapeReport {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon, r.v_eps)).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut worst_mono = 0.0f64;
    for w in pts.windows(2) {
        worst_mono = worst_mono.max(w[0].1 - w[1].1);
    }
    let mut worst_dd = f64::NEG_INFINITY;
    for w in pts.windows(3) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let (x2, y2) = w[2];
        let dd = ((y2 - y1) / (x2 - x1) - (y1 - y0) / (x1 - x0)) / (x2 - x0);
        worst_dd = worst_dd.max(dd);
    }
    if !worst_dd.is_finite() {
        worst_dd = 0.0;
    }
    ShapeReport {
        monotone_ok: worst_mono <= 1e-9,
        concave_ok: worst_dd <= 1e-8,
        worst_second_difference: worst_dd,
        worst_monotone_violation: worst_mono,
    }
}
