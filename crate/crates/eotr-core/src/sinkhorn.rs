//! Log-domain Sinkhorn iteration for the entropy-regularized transport
//! problem, written as the alternating fixed point of the Schrödinger system
//!
//! ```text
//! φ_i = -ε log Σ_j exp((ψ_j - C_ij)/ε) μ⁺_j
//! ψ_j = -ε log Σ_i exp((φ_i - C_ij)/ε) μ⁻_i
//! ```
//!
//! Softmins are evaluated with max subtraction (ties broken by the first
//! index), so every exponential sees a nonpositive argument and reruns are
//! bit identical. Convergence is measured by the sup-norm marginal residual
//! of the implied plan: the iteration stops on a pair whose column sums are
//! exact and whose row sums are within `tol`. The reported
//! `v_eps = Σ φ μ⁻ + Σ ψ μ⁺` is the exact dual objective of that pair (the
//! log-integral term vanishes because the plan has unit mass), hence a
//! rigorous lower bound on the true entropic cost.

use crate::costs::{cost_matrix, CostError, CostModel};
use crate::exact_ot::{Coupling, DualPair, ExactOtError};
use crate::measures::DiscreteMeasure;
use crate::numerics::logsumexp_by;
use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SinkhornError {
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("eps_scaling factor must lie in (0, 1), got {0}")]
    BadScalingFactor(f64),
    #[error("cost matrix contains a non-finite entry")]
    NonFiniteCost,
    #[error("marginal weights must be strictly positive")]
    NonPositiveWeight,
    #[error("warm-start duals have lengths ({0}, {1}) for a {2}x{3} problem")]
    WarmStartShape(usize, usize, usize, usize),
    #[error("epsilon ladder must be strictly decreasing and positive")]
    BadLadder,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Coupling(#[from] ExactOtError),
}

/// Solver knobs. `tol` is the sup-norm marginal residual of the implied
/// plan. `eps_scaling`, when set, reaches the target temperature through an
/// internal geometric ladder with that factor (ignored when `warm_start` is
/// supplied, which already provides a good initial point).
#[derive(Debug, Clone)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<DualPair>,
    pub eps_scaling: Option<f64>,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            tol: 1e-9,
            max_iter: 500_000,
            warm_start: None,
            eps_scaling: None,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_warm_start(mut self, duals: DualPair) -> Self {
        self.warm_start = Some(duals);
        self
    }

    pub fn with_eps_scaling(mut self, factor: f64) -> Self {
        self.eps_scaling = Some(factor);
        self
    }

    fn validate(&self, n: usize, m: usize) -> Result<(), SinkhornError> {
        if !(self.epsilon > 0.0) {
            return Err(SinkhornError::BadEpsilon(self.epsilon));
        }
        if !(self.tol > 0.0) {
            return Err(SinkhornError::BadTolerance(self.tol));
        }
        if let Some(f) = self.eps_scaling {
            if !(f > 0.0 && f < 1.0) {
                return Err(SinkhornError::BadScalingFactor(f));
            }
        }
        if let Some(w) = &self.warm_start {
            if w.phi.len() != n || w.psi.len() != m {
                return Err(SinkhornError::WarmStartShape(w.phi.len(), w.psi.len(), n, m));
            }
        }
        Ok(())
    }
}

/// Converged (or best-effort, see `converged`) state of one solve.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub duals: DualPair,
    pub plan: Coupling,
    pub v_eps: f64,
    pub entropy: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub epsilon: f64,
}

/// Matrices below this entry count run the softmin passes sequentially;
/// thread spawn overhead dominates tiny problems.
const PARALLEL_CUTOFF: usize = 1 << 14;

/// One softmin pass: `out_i = -logsumexp_j(add_j - ce[i, j])`.
///
/// `ce` is traversed row-major; callers pass the transposed matrix to get
/// the column pass. Each output element is produced by exactly one task, so
/// the result does not depend on the rayon thread count.
fn softmin_pass(ce: &Array2<f64>, add: &[f64], out: &mut Vec<f64>) {
    let (n, m) = ce.dim();
    debug_assert_eq!(add.len(), m);
    let body = |i: usize| -> f64 {
        let row = ce.row(i);
        let row = row.as_slice().expect("row-major layout");
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            let t = add[j] - row[j];
            if t > max {
                max = t;
            }
        }
        let mut sum = 0.0;
        for j in 0..m {
            sum += (add[j] - row[j] - max).exp();
        }
        -(max + sum.ln())
    };
    if n * m >= PARALLEL_CUTOFF {
        *out = (0..n).into_par_iter().map(body).collect();
    } else {
        out.clear();
        out.extend((0..n).map(body));
    }
}

struct Scaled<'a> {
    ce: Array2<f64>,
    ce_t: Array2<f64>,
    log_a: &'a [f64],
    log_b: &'a [f64],
    a: &'a [f64],
}

/// Alternate updates at one temperature until the row residual of the
/// current pair drops below `tol` (columns are kept exact by construction).
/// Returns `(iterations, residual, converged)`.
fn run_rung(
    s: &Scaled,
    alpha: &mut Vec<f64>,
    beta: &mut Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (usize, f64, bool) {
    let n = alpha.len();
    let mut add: Vec<f64> = alpha.iter().zip(s.log_a).map(|(x, l)| x + l).collect();
    softmin_pass(&s.ce_t, &add, beta);
    let mut alpha_new = vec![0.0; n];
    let mut iterations = 0usize;
    loop {
        add.clear();
        add.extend(beta.iter().zip(s.log_b).map(|(x, l)| x + l));
        softmin_pass(&s.ce, &add, &mut alpha_new);
        // Row sums of the plan implied by (alpha, beta) are
        // a_i * exp(alpha_i - alpha_new_i); columns are exact.
        let mut res = 0.0f64;
        for i in 0..n {
            let r = s.a[i] * ((alpha[i] - alpha_new[i]).exp() - 1.0).abs();
            if r > res {
                res = r;
            }
        }
        if res <= tol {
            return (iterations, res, true);
        }
        if iterations >= max_iter {
            return (iterations, res, false);
        }
        std::mem::swap(alpha, &mut alpha_new);
        add.clear();
        add.extend(alpha.iter().zip(s.log_a).map(|(x, l)| x + l));
        softmin_pass(&s.ce_t, &add, beta);
        iterations += 1;
    }
}

/// Solve the entropic problem at `cfg.epsilon`.
///
/// Non-convergence within `max_iter` is not an error: the best iterate is
/// returned with `converged = false`.
pub fn solve_sinkhorn(
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult, SinkhornError> {
    let (n, m) = cost.dim();
    cfg.validate(n, m)?;
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(SinkhornError::NonFiniteCost);
    }
    let a = mu_minus.weights();
    let b = mu_plus.weights();
    assert_eq!(a.len(), n, "cost rows must match mu_minus atoms");
    assert_eq!(b.len(), m, "cost columns must match mu_plus atoms");
    if a.iter().chain(b).any(|&w| w <= 0.0) {
        return Err(SinkhornError::NonPositiveWeight);
    }
    let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| w.ln()).collect();

    let rungs = temperature_ladder(cost, cfg);
    let (mut alpha, mut beta) = match &cfg.warm_start {
        Some(w) => (
            w.phi.iter().map(|p| p / rungs[0]).collect::<Vec<f64>>(),
            w.psi.iter().map(|q| q / rungs[0]).collect::<Vec<f64>>(),
        ),
        None => (vec![0.0; n], vec![0.0; m]),
    };

    let mut iterations = 0usize;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut prev_eps = rungs[0];
    let last = rungs.len() - 1;
    for (k, &eps) in rungs.iter().enumerate() {
        if k > 0 {
            // Duals carry over across temperatures; the scaled variables
            // alpha = phi / eps must be re-based.
            let ratio = prev_eps / eps;
            for v in alpha.iter_mut().chain(beta.iter_mut()) {
                *v *= ratio;
            }
            prev_eps = eps;
        }
        let ce = cost.mapv(|v| v / eps);
        let ce_t = ce.t().to_owned();
        let s = Scaled { ce, ce_t, log_a: &log_a, log_b: &log_b, a };
        let (it, res, ok) = run_rung(&s, &mut alpha, &mut beta, cfg.tol, cfg.max_iter);
        iterations += it;
        if k == last {
            residual = res;
            converged = ok;
        }
    }
    let eps = cfg.epsilon;

    // Normalization Σ φ μ⁻ = 0 (shift alpha down, beta up).
    let lambda: f64 = alpha.iter().zip(a).map(|(al, w)| al * w).sum();
    for al in alpha.iter_mut() {
        *al -= lambda;
    }
    for be in beta.iter_mut() {
        *be += lambda;
    }

    let ce = cost.mapv(|v| v / eps);
    let mut plan = Array2::zeros((n, m));
    let mut entropy = 0.0;
    for i in 0..n {
        for j in 0..m {
            let log_ratio = alpha[i] + beta[j] - ce[[i, j]];
            let p = (log_ratio + log_a[i] + log_b[j]).exp();
            plan[[i, j]] = p;
            if p > 0.0 {
                entropy += p * log_ratio;
            }
        }
    }
    let entropy = entropy.max(0.0);
    let duals = DualPair {
        phi: alpha.iter().map(|al| al * eps).collect(),
        psi: beta.iter().map(|be| be * eps).collect(),
    };
    let v_eps = duals.objective(a, b);
    let marginal_tol = (2.0 * residual.max(cfg.tol)).max(1e-9);
    let plan = Coupling::with_tolerance(plan, a.to_vec(), b.to_vec(), marginal_tol)?;
    Ok(SinkhornResult {
        duals,
        plan,
        v_eps,
        entropy,
        iterations,
        residual,
        converged,
        epsilon: eps,
    })
}

fn temperature_ladder(cost: &Array2<f64>, cfg: &SinkhornConfig) -> Vec<f64> {
    if let (Some(f), None) = (cfg.eps_scaling, &cfg.warm_start) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in cost {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let osc = hi - lo;
        let mut e = 0.5 * osc;
        let mut ladder = Vec::new();
        while e > cfg.epsilon * (1.0 + 1e-12) {
            ladder.push(e);
            e *= f;
        }
        ladder.push(cfg.epsilon);
        ladder
    } else {
        vec![cfg.epsilon]
    }
}

/// Warm-started solves down a strictly decreasing epsilon ladder.
pub fn entropic_cost_sweep(
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps_ladder: &[f64],
    cfg: &SinkhornConfig,
) -> Result<Vec<SinkhornResult>, SinkhornError> {
    if eps_ladder.is_empty()
        || eps_ladder.iter().any(|&e| e <= 0.0)
        || eps_ladder.windows(2).any(|w| w[0] <= w[1])
    {
        return Err(SinkhornError::BadLadder);
    }
    let mut out = Vec::with_capacity(eps_ladder.len());
    let mut warm: Option<DualPair> = cfg.warm_start.clone();
    for (k, &eps) in eps_ladder.iter().enumerate() {
        let rung_cfg = SinkhornConfig {
            epsilon: eps,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            warm_start: warm.take(),
            eps_scaling: if k == 0 { cfg.eps_scaling } else { None },
        };
        let res = solve_sinkhorn(cost, mu_minus, mu_plus, &rung_cfg)?;
        warm = Some(res.duals.clone());
        out.push(res);
    }
    Ok(out)
}

/// Central-difference check of the derivative identity
/// `dv/dε = Ent(γ_ε | μ⁻ ⊗ μ⁺)`.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheck {
    /// `(v_{ε+h} - v_{ε-h}) / (2h)`
    pub fd: f64,
    /// plan entropy at ε
    pub ent: f64,
    /// `|fd - ent|`
    pub gap: f64,
}

pub fn derivative_check(
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps: f64,
    h: f64,
) -> Result<DerivativeCheck, SinkhornError> {
    if !(eps - h > 0.0) {
        return Err(SinkhornError::BadEpsilon(eps - h));
    }
    let tight = |e: f64, warm: Option<DualPair>| SinkhornConfig {
        epsilon: e,
        tol: 1e-12,
        max_iter: 2_000_000,
        warm_start: warm,
        eps_scaling: None,
    };
    let hi = solve_sinkhorn(cost, mu_minus, mu_plus, &tight(eps + h, None))?;
    let mid = solve_sinkhorn(cost, mu_minus, mu_plus, &tight(eps, Some(hi.duals.clone())))?;
    let lo = solve_sinkhorn(cost, mu_minus, mu_plus, &tight(eps - h, Some(mid.duals.clone())))?;
    let fd = (hi.v_eps - lo.v_eps) / (2.0 * h);
    let ent = mid.entropy;
    Ok(DerivativeCheck { fd, ent, gap: (fd - ent).abs() })
}

/// Debiased entropic cost from three solves sharing one configuration.
#[derive(Debug, Clone, Copy)]
pub struct DivergenceResult {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// `OT_ε = v_ε(μ⁻, μ⁺) - ½ (v_ε(μ⁻, μ⁻) + v_ε(μ⁺, μ⁺))`.
pub fn sinkhorn_divergence(
    c: &CostModel,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    eps: f64,
    cfg: &SinkhornConfig,
) -> Result<DivergenceResult, SinkhornError> {
    let base = SinkhornConfig {
        epsilon: eps,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        warm_start: None,
        eps_scaling: cfg.eps_scaling,
    };
    let cross = solve_sinkhorn(&cost_matrix(c, mu_minus, mu_plus)?, mu_minus, mu_plus, &base)?;
    let left = solve_sinkhorn(&cost_matrix(c, mu_minus, mu_minus)?, mu_minus, mu_minus, &base)?;
    let right = solve_sinkhorn(&cost_matrix(c, mu_plus, mu_plus)?, mu_plus, mu_plus, &base)?;
    Ok(DivergenceResult {
        value: cross.v_eps - 0.5 * (left.v_eps + right.v_eps),
        converged: cross.converged && left.converged && right.converged,
        iterations: cross.iterations + left.iterations + right.iterations,
        residual: cross.residual.max(left.residual).max(right.residual),
    })
}

/// Sup-norm residual of the Schrödinger system at the result's duals:
/// the larger of the two fixed-point equation defects.
pub fn schrodinger_residual(
    result: &SinkhornResult,
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
) -> f64 {
    let eps = result.epsilon;
    let (n, m) = cost.dim();
    let phi = &result.duals.phi;
    let psi = &result.duals.psi;
    let log_a: Vec<f64> = mu_minus.weights().iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = mu_plus.weights().iter().map(|w| w.ln()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let lse = logsumexp_by(m, |j| (psi[j] - cost[[i, j]]) / eps + log_b[j]);
        worst = worst.max((phi[i] + eps * lse).abs());
    }
    for j in 0..m {
        let lse = logsumexp_by(n, |i| (phi[i] - cost[[i, j]]) / eps + log_a[i]);
        worst = worst.max((psi[j] + eps * lse).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_ot::solve_exact;
    use crate::measures::DiscreteMeasure;
    use crate::numerics::golden_section_min;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_halves() -> DiscreteMeasure {
        DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap()
    }

    fn flip_cost() -> Array2<f64> {
        array![[0.0, 1.0], [1.0, 0.0]]
    }

    /// Scalar oracle for the 2x2 flip instance: plans are
    /// gamma(t) = [[t, 1/2-t], [1/2-t, t]]; minimize cost + eps * entropy
    /// over t by golden section.
    fn flip_oracle(eps: f64) -> f64 {
        let obj = |t: f64| {
            let ent = |v: f64| if v > 0.0 { v * (v / 0.25).ln() } else { 0.0 };
            (1.0 - 2.0 * t) + eps * (2.0 * ent(t) + 2.0 * ent(0.5 - t))
        };
        let (_, v) = golden_section_min(obj, 1e-12, 0.5 - 1e-12, 1e-13);
        v
    }

    fn tight(eps: f64) -> SinkhornConfig {
        SinkhornConfig::new(eps).with_tol(1e-12).with_max_iter(2_000_000)
    }

    #[test]
    fn matches_scalar_oracle_on_flip_instance() {
        let mu = uniform_halves();
        let c = flip_cost();
        for eps in [0.1, 0.5, 1.0] {
            let res = solve_sinkhorn(&c, &mu, &mu, &tight(eps)).unwrap();
            assert!(res.converged);
            let oracle = flip_oracle(eps);
            assert!(
                (res.v_eps - oracle).abs() <= 1e-6,
                "eps={eps}: {} vs oracle {}",
                res.v_eps,
                oracle
            );
            // closed-form diagonal entry t = (1 + tanh(1/(2 eps))) / 4
            let t = 0.25 * (1.0 + (1.0 / (2.0 * eps)).tanh());
            assert_abs_diff_eq!(res.plan.matrix()[[0, 0]], t, epsilon = 1e-8);
        }
    }

    #[test]
    fn large_epsilon_tends_to_product_plan() {
        let mu = uniform_halves();
        let c = flip_cost();
        let res = solve_sinkhorn(&c, &mu, &mu, &tight(1e3)).unwrap();
        let mean_cost: f64 = c.iter().sum::<f64>() / 4.0;
        for v in res.plan.matrix() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-4);
        }
        assert!(res.entropy < 1e-6);
        assert_abs_diff_eq!(res.v_eps, mean_cost, epsilon = 1e-3);
    }

    #[test]
    fn symmetric_instance_gives_equal_potentials_up_to_constant() {
        let mu = DiscreteMeasure::new(
            vec![vec![0.0], vec![0.4], vec![1.0]],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let c = crate::costs::cost_matrix(&CostModel::quadratic(1), &mu, &mu).unwrap();
        let res = solve_sinkhorn(&c, &mu, &mu, &tight(0.3)).unwrap();
        let diffs: Vec<f64> = res
            .duals
            .phi
            .iter()
            .zip(&res.duals.psi)
            .map(|(p, q)| p - q)
            .collect();
        for d in &diffs {
            assert_abs_diff_eq!(*d, diffs[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn plan_has_rigid_structure_and_value_identity() {
        let mu = uniform_halves();
        let c = flip_cost();
        let res = solve_sinkhorn(&c, &mu, &mu, &tight(0.37)).unwrap();
        let a = mu.weights();
        for ((i, j), &p) in res.plan.matrix().indexed_iter() {
            let expect = ((res.duals.phi[i] + res.duals.psi[j] - c[[i, j]]) / 0.37).exp()
                * a[i]
                * a[j];
            assert!((p - expect).abs() <= 1e-9 * expect.max(1e-300));
        }
        // primal value identity: cost + eps * entropy = v_eps
        let primal = res.plan.cost(&c) + 0.37 * res.entropy;
        assert!((primal - res.v_eps).abs() <= 1e-8 * (1.0 + res.v_eps.abs()));
        // normalization
        let phi_avg: f64 = res.duals.phi.iter().zip(a).map(|(p, w)| p * w).sum();
        assert_abs_diff_eq!(phi_avg, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_feasible_pairs_lower_bound_v_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let c = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        let atoms: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64]).collect();
        let mu = DiscreteMeasure::new(atoms, vec![0.25; n]).unwrap();
        let eps = 0.2;
        let res = solve_sinkhorn(&c, &mu, &mu, &tight(eps)).unwrap();
        // Kantorovich potentials of the unregularized problem are feasible
        // for (D); their (D_eps) objective must not exceed v_eps.
        let exact = solve_exact(&c, &mu, &mu).unwrap();
        let (phi, psi) = (&exact.duals.phi, &exact.duals.psi);
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                terms.push((phi[i] + psi[j] - c[[i, j]]) / eps + (0.25f64 * 0.25).ln());
            }
        }
        let objective = exact.duals.objective(mu.weights(), mu.weights())
            - eps * crate::numerics::logsumexp(&terms);
        assert!(objective <= res.v_eps + 1e-9);
    }

    #[test]
    fn sweep_is_monotone_concave_and_matches_single_solves() {
        let mu = uniform_halves();
        let c = flip_cost();
        let ladder = [1.0, 0.6, 0.35, 0.2, 0.1];
        let cfg = tight(1.0);
        let sweep = entropic_cost_sweep(&c, &mu, &mu, &ladder, &cfg).unwrap();
        // non-decreasing in eps means non-increasing along the decreasing ladder
        for w in sweep.windows(2) {
            assert!(w[0].v_eps >= w[1].v_eps - 1e-12);
        }
        // concavity in eps: second divided differences (in increasing eps
        // order) are nonpositive up to solver noise
        let mut pts: Vec<(f64, f64)> = sweep.iter().map(|r| (r.epsilon, r.v_eps)).collect();
        pts.reverse();
        for w in pts.windows(3) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            let (x2, y2) = w[2];
            let dd = ((y2 - y1) / (x2 - x1) - (y1 - y0) / (x1 - x0)) / (x2 - x0);
            assert!(dd <= 1e-8, "second divided difference {dd}");
        }
        // singleton ladder equals a direct solve
        let single = entropic_cost_sweep(&c, &mu, &mu, &[0.35], &cfg).unwrap();
        let direct = solve_sinkhorn(&c, &mu, &mu, &tight(0.35)).unwrap();
        assert_abs_diff_eq!(single[0].v_eps, direct.v_eps, epsilon = 1e-10);

        assert!(entropic_cost_sweep(&c, &mu, &mu, &[0.1, 0.2], &cfg).is_err());
        assert!(entropic_cost_sweep(&c, &mu, &mu, &[], &cfg).is_err());
    }

    #[test]
    fn derivative_identity_cases() {
        let mu = uniform_halves();
        let c = flip_cost();
        let chk = derivative_check(&c, &mu, &mu, 0.5, 1e-3).unwrap();
        assert!(chk.gap <= 1e-4, "gap {}", chk.gap);
        // oracle cross-check of the finite difference itself
        let fd_oracle = (flip_oracle(0.5 + 1e-3) - flip_oracle(0.5 - 1e-3)) / 2e-3;
        assert_abs_diff_eq!(chk.fd, fd_oracle, epsilon = 1e-6);

        // all-zero cost: v identically zero, entropy zero
        let z = Array2::zeros((2, 2));
        let chk = derivative_check(&z, &mu, &mu, 0.5, 1e-3).unwrap();
        assert_abs_diff_eq!(chk.fd, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chk.ent, 0.0, epsilon = 1e-12);

        // Richardson: the gap decays ~ h^2
        let g1 = derivative_check(&c, &mu, &mu, 0.5, 2e-2).unwrap().gap;
        let g2 = derivative_check(&c, &mu, &mu, 0.5, 1e-2).unwrap().gap;
        let rate = g1 / g2.max(1e-300);
        assert!(
            (2.5..6.0).contains(&rate),
            "expected ~4x gap reduction per h halving, got {rate} ({g1} -> {g2})"
        );
    }

    #[test]
    fn divergence_vanishes_on_identical_marginals() {
        let mu = uniform_halves();
        let c = CostModel::quadratic(1);
        let d = sinkhorn_divergence(&c, &mu, &mu, 0.3, &tight(0.3)).unwrap();
        assert_eq!(d.value, 0.0); // exact cancellation of identical solves
        assert!(d.converged);
    }

    #[test]
    fn schrodinger_residual_behaves() {
        let mu = uniform_halves();
        let c = flip_cost();
        let res = solve_sinkhorn(&c, &mu, &mu, &tight(0.4)).unwrap();
        assert!(schrodinger_residual(&res, &c, &mu, &mu) <= 1e-7);

        // perturbing one potential by delta raises the residual to >= delta/2
        let mut bumped = res.clone();
        bumped.duals.phi[0] += 1e-3;
        assert!(schrodinger_residual(&bumped, &c, &mu, &mu) >= 5e-4);

        // enormous eps: row/column averages of C nearly solve the system
        let res = solve_sinkhorn(&c, &mu, &mu, &tight(1e3)).unwrap();
        let mut flat = res.clone();
        let avg = 0.5; // row averages of the flip cost
        flat.duals.phi = vec![avg / 2.0; 2];
        flat.duals.psi = vec![avg / 2.0; 2];
        // the exact large-eps expansion keeps the residual small but nonzero
        assert!(schrodinger_residual(&flat, &c, &mu, &mu) <= 1e-3);
    }

    #[test]
    fn cold_start_at_small_epsilon_stays_finite_and_converges() {
        let mu = uniform_halves();
        let c = flip_cost();
        let cfg = SinkhornConfig::new(1e-4).with_tol(1e-11).with_max_iter(5_000_000);
        let res = solve_sinkhorn(&c, &mu, &mu, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.v_eps.is_finite());
        // at tiny eps the plan is numerically the optimal diagonal
        assert_abs_diff_eq!(res.plan.matrix()[[0, 0]], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(res.v_eps, 1e-4 * (2.0f64).ln(), epsilon = 1e-6);
    }

    #[test]
    fn max_iter_exceeded_flags_but_returns() {
        let mu = uniform_halves();
        let c = flip_cost();
        let cfg = SinkhornConfig::new(0.01).with_tol(1e-13).with_max_iter(1);
        let res = solve_sinkhorn(&c, &mu, &mu, &cfg).unwrap();
        assert!(!res.converged);
        assert!(res.residual.is_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mu = uniform_halves();
        let c = flip_cost();
        assert!(solve_sinkhorn(&c, &mu, &mu, &SinkhornConfig::new(-1.0)).is_err());
        assert!(solve_sinkhorn(&c, &mu, &mu, &SinkhornConfig::new(0.5).with_tol(0.0)).is_err());
        let mut bad = SinkhornConfig::new(0.5);
        bad.eps_scaling = Some(1.5);
        assert!(solve_sinkhorn(&c, &mu, &mu, &bad).is_err());
        let nan = array![[f64::NAN, 0.0], [0.0, 0.0]];
        assert!(solve_sinkhorn(&nan, &mu, &mu, &SinkhornConfig::new(0.5)).is_err());
    }

    #[test]
    fn eps_scaling_reaches_the_same_fixed_point() {
        let mu = uniform_halves();
        let c = flip_cost();
        let direct = solve_sinkhorn(&c, &mu, &mu, &tight(0.02)).unwrap();
        let scaled_cfg = tight(0.02).with_eps_scaling(0.5);
        let scaled = solve_sinkhorn(&c, &mu, &mu, &scaled_cfg).unwrap();
        assert_abs_diff_eq!(direct.v_eps, scaled.v_eps, epsilon = 1e-9);
    }
}
