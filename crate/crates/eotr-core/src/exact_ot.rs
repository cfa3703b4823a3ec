//! Exact discrete optimal transport: dense transportation simplex with
//! deterministic anti-cycling, Kantorovich potentials canonicalized to a
//! c-conjugate pair, a brute-force permutation oracle, the 1-D monotone
//! (quantile) coupling, and the minimal-entropy optimal plan obtained as the
//! small-temperature limit of Sinkhorn plans.

use crate::measures::DiscreteMeasure;
use crate::sinkhorn::{self, SinkhornConfig};
use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExactOtError {
    #[error("marginal weights must be positive and sum to 1 (got sum {0})")]
    BadMarginals(f64),
    #[error("coupling shape {rows}x{cols} does not match marginals {n}x{m}")]
    ShapeMismatch { rows: usize, cols: usize, n: usize, m: usize },
    #[error("coupling row {index} sums to {got}, expected {want} within 1e-9")]
    RowMarginalViolated { index: usize, got: f64, want: f64 },
    #[error("coupling column {index} sums to {got}, expected {want} within 1e-9")]
    ColMarginalViolated { index: usize, got: f64, want: f64 },
    #[error("negative coupling entry {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("simplex did not converge within {pivots} pivots (basis size {basis})")]
    PivotCapExceeded { pivots: usize, basis: usize },
    #[error("brute-force oracle limited to square uniform instances with n <= 7, got {0}x{1}")]
    OracleCapExceeded(usize, usize),
    #[error("monotone coupling requires a 1-D convex-in-difference cost, got `{0}`")]
    NonConvexKind(String),
    #[error("epsilon ladder exhausted before entropy stabilized; trace: {trace:?}")]
    LadderExhausted { trace: Vec<(f64, f64)> },
}

/// A nonnegative matrix with prescribed marginals.
#[derive(Debug, Clone)]
pub struct Coupling {
    matrix: Array2<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl Coupling {
    /// Checked constructor: marginals must match row/column sums within 1e-9
    /// and entries must be nonnegative (tiny negative rounding is clamped).
    pub fn new(
        matrix: Array2<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
    ) -> Result<Self, ExactOtError> {
        Self::with_tolerance(matrix, row_marginal, col_marginal, 1e-9)
    }

    /// [`Coupling::new`] with an explicit marginal tolerance, for plans whose
    /// marginals are only certified to a solver residual.
    pub fn with_tolerance(
        mut matrix: Array2<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
        tol: f64,
    ) -> Result<Self, ExactOtError> {
        let (rows, cols) = matrix.dim();
        if rows != row_marginal.len() || cols != col_marginal.len() {
            return Err(ExactOtError::ShapeMismatch {
                rows,
                cols,
                n: row_marginal.len(),
                m: col_marginal.len(),
            });
        }
        for ((i, j), v) in matrix.indexed_iter_mut() {
            if *v < 0.0 {
                if *v < -1e-12 {
                    return Err(ExactOtError::NegativeEntry { i, j, value: *v });
                }
                *v = 0.0;
            }
        }
        for i in 0..rows {
            let got: f64 = matrix.row(i).sum();
            if (got - row_marginal[i]).abs() > tol {
                return Err(ExactOtError::RowMarginalViolated { index: i, got, want: row_marginal[i] });
            }
        }
        for j in 0..cols {
            let got: f64 = matrix.column(j).sum();
            if (got - col_marginal[j]).abs() > tol {
                return Err(ExactOtError::ColMarginalViolated { index: j, got, want: col_marginal[j] });
            }
        }
        Ok(Self { matrix, row_marginal, col_marginal })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    /// Transport cost `Σ C_ij γ_ij`.
    pub fn cost(&self, cost: &Array2<f64>) -> f64 {
        self.matrix
            .indexed_iter()
            .map(|((i, j), &g)| if g > 0.0 { g * cost[[i, j]] } else { 0.0 })
            .sum()
    }

    /// Relative entropy `Ent(γ | μ⁻ ⊗ μ⁺)` with `0·log 0 = 0`.
    pub fn relative_entropy(&self) -> f64 {
        let mut ent = 0.0;
        for ((i, j), &g) in self.matrix.indexed_iter() {
            if g > 0.0 {
                ent += g * (g / (self.row_marginal[i] * self.col_marginal[j])).ln();
            }
        }
        ent
    }
}

/// Dual potentials on the two supports, normalized so `Σ φ_i μ⁻_i = 0`.
#[derive(Debug, Clone)]
pub struct DualPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPair {
    /// Shift so the φ-average against `mu_minus` vanishes, preserving φ ⊕ ψ.
    pub fn normalize(&mut self, mu_minus_weights: &[f64]) {
        let lambda: f64 = self
            .phi
            .iter()
            .zip(mu_minus_weights)
            .map(|(p, w)| p * w)
            .sum();
        for p in &mut self.phi {
            *p -= lambda;
        }
        for q in &mut self.psi {
            *q += lambda;
        }
    }

    /// Dual objective `Σ φ μ⁻ + Σ ψ μ⁺`.
    pub fn objective(&self, mu_minus_weights: &[f64], mu_plus_weights: &[f64]) -> f64 {
        let a: f64 = self.phi.iter().zip(mu_minus_weights).map(|(p, w)| p * w).sum();
        let b: f64 = self.psi.iter().zip(mu_plus_weights).map(|(q, w)| q * w).sum();
        a + b
    }

    /// Largest violation of `φ_i + ψ_j <= C_ij` (0 when feasible).
    pub fn feasibility_violation(&self, cost: &Array2<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for ((i, j), &c) in cost.indexed_iter() {
            worst = worst.max(self.phi[i] + self.psi[j] - c);
        }
        worst
    }

    /// Replace by the c-conjugate pair: `φ_i ← min_j (C_ij - ψ_j)` then
    /// `ψ_j ← min_i (C_ij - φ_i)`. Preserves feasibility and optimality.
    pub fn conjugate(&mut self, cost: &Array2<f64>) {
        let (n, m) = cost.dim();
        for i in 0..n {
            let mut best = f64::INFINITY;
            for j in 0..m {
                best = best.min(cost[[i, j]] - self.psi[j]);
            }
            self.phi[i] = best;
        }
        for j in 0..m {
            let mut best = f64::INFINITY;
            for i in 0..n {
                best = best.min(cost[[i, j]] - self.phi[i]);
            }
            self.psi[j] = best;
        }
    }
}

/// Output of [`solve_exact`].
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub coupling: Coupling,
    pub duals: DualPair,
    pub v0: f64,
    pub pivots: usize,
    /// `|primal - dual|`; zero up to rounding by complementary slackness.
    pub duality_gap: f64,
}

const PIVOT_STALL_SWITCH: usize = 64;

fn check_marginals(w: &[f64]) -> Result<(), ExactOtError> {
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || w.iter().any(|&x| x <= 0.0) {
        return Err(ExactOtError::BadMarginals(sum));
    }
    Ok(())
}

/// Primal-dual solve of the discrete transport problem by the dense
/// transportation simplex (MODI), northwest-corner start, most-negative
/// entering rule with a lexicographic Bland fallback after degenerate stalls.
///
/// Potentials are canonicalized to a c-conjugate pair and normalized to
/// `Σ φ μ⁻ = 0`.
pub fn solve_exact(
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
) -> Result<ExactSolution, ExactOtError> {
    solve_exact_weights(cost, mu_minus.weights(), mu_plus.weights())
}

/// [`solve_exact`] on raw weight vectors.
pub fn solve_exact_weights(
    cost: &Array2<f64>,
    a: &[f64],
    b: &[f64],
) -> Result<ExactSolution, ExactOtError> {
    check_marginals(a)?;
    check_marginals(b)?;
    let (n, m) = cost.dim();
    assert_eq!(n, a.len());
    assert_eq!(m, b.len());

    let mut tree = BasisTree::northwest(a, b);
    let cmax = cost.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let rc_tol = 1e-11 * (1.0 + cmax);
    let pivot_cap = 10_000 + 8 * (n + m);

    let mut pivots = 0usize;
    let mut degenerate_streak = 0usize;
    loop {
        let (u, v) = tree.duals(cost);
        let entering = if degenerate_streak < PIVOT_STALL_SWITCH {
            entering_most_negative(cost, &u, &v, &tree.in_basis, rc_tol)
        } else {
            entering_bland(cost, &u, &v, &tree.in_basis, rc_tol)
        };
        let Some((ei, ej)) = entering else {
            break; // optimal
        };
        if pivots >= pivot_cap {
            return Err(ExactOtError::PivotCapExceeded { pivots, basis: n + m - 1 });
        }
        let theta = tree.pivot(ei, ej);
        pivots += 1;
        if theta <= 1e-15 {
            degenerate_streak += 1;
        } else {
            degenerate_streak = 0;
        }
    }

    let (u, v) = tree.duals(cost);
    let mut duals = DualPair { phi: u, psi: v };
    duals.conjugate(cost);
    duals.normalize(a);

    let mut gamma = Array2::zeros((n, m));
    for (&(i, j), &f) in tree.arcs.iter().zip(&tree.flows) {
        gamma[[i, j]] += f;
    }
    let coupling = Coupling::new(gamma, a.to_vec(), b.to_vec())?;
    let v0 = coupling.cost(cost);
    let duality_gap = (v0 - duals.objective(a, b)).abs();
    Ok(ExactSolution { coupling, duals, v0, pivots, duality_gap })
}

/// Spanning-tree basis over the bipartite nodes (rows `0..n`, columns
/// `n..n+m`), with flows attached to the basis arcs.
struct BasisTree {
    n: usize,
    m: usize,
    arcs: Vec<(usize, usize)>,
    flows: Vec<f64>,
    in_basis: Vec<bool>, // n*m bitmap
}

impl BasisTree {
    /// Northwest-corner start; produces exactly `n + m - 1` arcs, including
    /// degenerate zero allocations on ties.
    fn northwest(a: &[f64], b: &[f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut arcs = Vec::with_capacity(n + m - 1);
        let mut flows = Vec::with_capacity(n + m - 1);
        let mut in_basis = vec![false; n * m];
        let (mut i, mut j) = (0usize, 0usize);
        let mut ra = a[0];
        let mut rb = b[0];
        loop {
            let t = ra.min(rb).max(0.0);
            arcs.push((i, j));
            flows.push(t);
            in_basis[i * m + j] = true;
            if i == n - 1 && j == m - 1 {
                break;
            }
            ra -= t;
            rb -= t;
            // Column exhausted first: move right; row exhausted first: move
            // down. Ties move right, leaving a degenerate zero cell next.
            if (rb <= ra || i == n - 1) && j < m - 1 {
                j += 1;
                rb = b[j];
            } else {
                i += 1;
                ra = a[i];
            }
        }
        Self { n, m, arcs, flows, in_basis }
    }

    /// Node adjacency (arc ids) for the current basis.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (id, &(i, j)) in self.arcs.iter().enumerate() {
            adj[i].push(id);
            adj[self.n + j].push(id);
        }
        adj
    }

    /// Potentials from `u_i + v_j = C_ij` on basis arcs, rooted at `u_0 = 0`.
    fn duals(&self, cost: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &id in &adj[node] {
                let (i, j) = self.arcs[id];
                if node < self.n {
                    if v[j].is_nan() {
                        v[j] = cost[[i, j]] - u[i];
                        stack.push(self.n + j);
                    }
                } else if u[i].is_nan() {
                    u[i] = cost[[i, j]] - v[j];
                    stack.push(i);
                }
            }
        }
        (u, v)
    }

    /// Path of arc ids from row node `i` to column node `n + j` in the tree.
    fn path(&self, from_row: usize, to_col: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let total = self.n + self.m;
        let target = self.n + to_col;
        let mut prev_arc = vec![usize::MAX; total];
        let mut prev_node = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        seen[from_row] = true;
        let mut queue = std::collections::VecDeque::from([from_row]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &id in &adj[node] {
                let (i, j) = self.arcs[id];
                let other = if node < self.n { self.n + j } else { i };
                if !seen[other] {
                    seen[other] = true;
                    prev_arc[other] = id;
                    prev_node[other] = node;
                    queue.push_back(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != from_row {
            path.push(prev_arc[node]);
            node = prev_node[node];
        }
        path.reverse();
        path
    }

    /// Pivot on the entering arc `(ei, ej)`: push `θ` around the unique
    /// cycle, drop the lexicographically smallest arc whose flow hits zero.
    /// Returns `θ`.
    fn pivot(&mut self, ei: usize, ej: usize) -> f64 {
        let path = self.path(ei, ej);
        // Walking from row `ei` towards column `n+ej`, arcs traversed
        // row→col gain -θ... sign bookkeeping: the entering arc carries +θ
        // from row ei to col ej; traversing the tree path from ei to ej,
        // alternate signs starting with -θ on arcs leaving a row node.
        let mut signs = Vec::with_capacity(path.len());
        let mut at_row = true; // path starts at a row node
        for &id in &path {
            // Arc (i, j) traversed from a row node goes row→col and gets -θ;
            // traversed from a column node it goes col→row and gets +θ.
            signs.push(if at_row { -1.0 } else { 1.0 });
            let _ = id;
            at_row = !at_row;
        }
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for (&id, &s) in path.iter().zip(&signs) {
            if s < 0.0 {
                let f = self.flows[id];
                let better = match leave {
                    None => true,
                    Some(cur) => {
                        f < theta - 1e-18
                            || (f <= theta + 1e-18 && self.arcs[id] < self.arcs[cur])
                    }
                };
                if better {
                    theta = f;
                    leave = Some(id);
                }
            }
        }
        let theta = theta.max(0.0);
        let leave = leave.expect("cycle has at least one giving arc");
        for (&id, &s) in path.iter().zip(&signs) {
            self.flows[id] = (self.flows[id] + s * theta).max(0.0);
        }
        // Replace the leaving arc with the entering one.
        let (li, lj) = self.arcs[leave];
        self.in_basis[li * self.m + lj] = false;
        self.arcs[leave] = (ei, ej);
        self.flows[leave] = theta;
        self.in_basis[ei * self.m + ej] = true;
        theta
    }
}

/// Most negative reduced cost; ties and scan order are lexicographic so the
/// pivot sequence is reproducible. Row-parallel scan with a sequential
/// reduction over rows.
fn entering_most_negative(
    cost: &Array2<f64>,
    u: &[f64],
    v: &[f64],
    in_basis: &[bool],
    tol: f64,
) -> Option<(usize, usize)> {
    let (n, m) = cost.dim();
    let per_row: Vec<Option<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best: Option<(f64, usize)> = None;
            let row = cost.row(i);
            for j in 0..m {
                if in_basis[i * m + j] {
                    continue;
                }
                let rc = row[j] - u[i] - v[j];
                if rc < -tol && best.map_or(true, |(b, _)| rc < b) {
                    best = Some((rc, j));
                }
            }
            best
        })
        .collect();
    let mut global: Option<(f64, usize, usize)> = None;
    for (i, cand) in per_row.iter().enumerate() {
        if let Some((rc, j)) = cand {
            if global.map_or(true, |(g, _, _)| *rc < g) {
                global = Some((*rc, i, *j));
            }
        }
    }
    global.map(|(_, i, j)| (i, j))
}

/// First improving arc in lexicographic order (Bland's rule).
fn entering_bland(
    cost: &Array2<f64>,
    u: &[f64],
    v: &[f64],
    in_basis: &[bool],
    tol: f64,
) -> Option<(usize, usize)> {
    let (n, m) = cost.dim();
    for i in 0..n {
        for j in 0..m {
            if !in_basis[i * m + j] && cost[[i, j]] - u[i] - v[j] < -tol {
                return Some((i, j));
            }
        }
    }
    None
}

/// Minimum over all permutation couplings of `(1/n) Σ C_{i,σ(i)}`; limited
/// to square uniform instances with `n <= 7`.
pub fn brute_force_oracle(cost: &Array2<f64>) -> Result<f64, ExactOtError> {
    let (n, m) = cost.dim();
    if n != m || n > 7 || n == 0 {
        return Err(ExactOtError::OracleCapExceeded(n, m));
    }
    let mut used = vec![false; n];
    fn go(cost: &Array2<f64>, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let n = used.len();
        if row == n {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[[row, j]], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut used, 0.0, &mut best);
    Ok(best / n as f64)
}

/// Monotone (quantile) coupling of two 1-D measures for costs
/// `c(x, y) = h(x - y)` with `h` convex. Returns the coupling and its cost.
pub fn monotone_1d(
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    c: &crate::costs::CostModel,
) -> Result<(Coupling, f64), ExactOtError> {
    use crate::costs::CostKind;
    let convex = matches!(
        c.kind,
        CostKind::Quadratic | CostKind::Abs | CostKind::PNormPower { .. }
    );
    if c.dim != 1 || mu_minus.ambient_dim() != 1 || mu_plus.ambient_dim() != 1 || !convex {
        return Err(ExactOtError::NonConvexKind(c.kind.name().into()));
    }
    let order = |mu: &DiscreteMeasure| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..mu.len()).collect();
        idx.sort_by(|&p, &q| mu.point(p)[0].partial_cmp(&mu.point(q)[0]).unwrap());
        idx
    };
    let si = order(mu_minus);
    let sj = order(mu_plus);
    let a = mu_minus.weights();
    let b = mu_plus.weights();
    let mut gamma = Array2::zeros((mu_minus.len(), mu_plus.len()));
    let mut cost_total = 0.0;
    let (mut p, mut q) = (0usize, 0usize);
    let mut ra = a[si[0]];
    let mut rb = b[sj[0]];
    loop {
        let t = ra.min(rb);
        if t > 0.0 {
            gamma[[si[p], sj[q]]] += t;
            cost_total += t * c.value(mu_minus.point(si[p]), mu_plus.point(sj[q]));
        }
        ra -= t;
        rb -= t;
        if ra <= rb {
            p += 1;
            if p == si.len() {
                break;
            }
            ra = a[si[p]];
        } else {
            q += 1;
            if q == sj.len() {
                break;
            }
            rb = b[sj[q]];
        }
    }
    let coupling = Coupling::new(gamma, a.to_vec(), b.to_vec())?;
    Ok((coupling, cost_total))
}

/// Approximate the minimal-entropy optimal plan `γ*` by warm-started
/// Sinkhorn solves down a geometric epsilon ladder, stopping once the plan
/// entropy has stabilized within `tol` and the plan cost is within `tol`
/// of the exact transport cost.
pub fn min_entropy_optimal_plan(
    cost: &Array2<f64>,
    mu_minus: &DiscreteMeasure,
    mu_plus: &DiscreteMeasure,
    tol: f64,
) -> Result<Coupling, ExactOtError> {
    let exact = solve_exact(cost, mu_minus, mu_plus)?;
    let v0 = exact.v0;
    let mut trace = Vec::new();
    let mut warm: Option<DualPair> = None;
    let mut prev_ent: Option<f64> = None;
    let mut eps = 0.25;
    while eps > 1e-7 {
        let cfg = SinkhornConfig {
            epsilon: eps,
            tol: 1e-11,
            max_iter: 5_000_000,
            warm_start: warm.take(),
            eps_scaling: None,
        };
        let res = sinkhorn::solve_sinkhorn(cost, mu_minus, mu_plus, &cfg)
            .expect("valid inputs for sinkhorn");
        trace.push((eps, res.entropy));
        let cost_gap = res.plan.cost(cost) - v0;
        if let Some(pe) = prev_ent {
            if (res.entropy - pe).abs() <= tol && cost_gap.abs() <= tol {
                return Ok(res.plan);
            }
        }
        prev_ent = Some(res.entropy);
        warm = Some(res.duals);
        eps *= 0.5;
    }
    Err(ExactOtError::LadderExhausted { trace })
}
