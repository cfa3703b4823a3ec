//! Small numerical building blocks shared across the crate: stabilized
//! log-sum-exp, golden-section minimization, dense least squares for one and
//! two basis columns, and tiny dense linear algebra for `d x d` blocks.

/// Log of the sum of exponentials, stabilized by max subtraction.
///
/// Ties in the maximum are broken by the first index so reruns are
/// bit-for-bit identical. Returns `-inf` on an empty or all `-inf` input.
pub fn logsumexp(terms: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &t in terms {
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &t in terms {
        sum += (t - max).exp();
    }
    max + sum.ln()
}

/// `logsumexp` over `f(j)` for `j in 0..len` without materializing the slice.
pub fn logsumexp_by<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for j in 0..len {
        let t = f(j);
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for j in 0..len {
        sum += (f(j) - max).exp();
    }
    max + sum.ln()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
///
/// Runs until the bracket shrinks below `xtol` (or 200 iterations) and
/// returns `(argmin, min)`.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a <= xtol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Ordinary least squares for `y ≈ a·u + b·w` (two columns, no intercept).
///
/// Returns `(a, b)`. Uses the 2x2 normal equations, which are exact for the
/// well-conditioned design matrices arising from log-spaced ladders.
pub fn lstsq2(u: &[f64], w: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(u.len(), w.len());
    assert_eq!(u.len(), y.len());
    let (mut suu, mut suw, mut sww, mut suy, mut swy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..u.len() {
        suu += u[i] * u[i];
        suw += u[i] * w[i];
        sww += w[i] * w[i];
        suy += u[i] * y[i];
        swy += w[i] * y[i];
    }
    let det = suu * sww - suw * suw;
    if det.abs() <= 1e-14 * suu.max(sww).max(1e-300).powi(2) {
        return None;
    }
    let a = (suy * sww - swy * suw) / det;
    let b = (swy * suu - suy * suw) / det;
    Some((a, b))
}

/// Least-squares line `y ≈ slope·x + intercept`. Returns `(slope, intercept)`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    if det.abs() <= 1e-14 * (n * sxx).abs().max(1.0) {
        return None;
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    Some((slope, intercept))
}

/// Determinant of a small dense matrix (row-major `d x d`) by Gaussian
/// elimination with partial pivoting.
pub fn det_small(a: &[f64], d: usize) -> f64 {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if m[r * d + col].abs() > m[piv * d + col].abs() {
                piv = r;
            }
        }
        if m[piv * d + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..d {
                m.swap(col * d + c, piv * d + c);
            }
            det = -det;
        }
        det *= m[col * d + col];
        for r in col + 1..d {
            let f = m[r * d + col] / m[col * d + col];
            for c in col..d {
                m[r * d + c] -= f * m[col * d + c];
            }
        }
    }
    det
}

/// Inverse of a small dense matrix (row-major `d x d`); `None` if singular.
pub fn inv_small(a: &[f64], d: usize) -> Option<Vec<f64>> {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if m[r * d + col].abs() > m[piv * d + col].abs() {
                piv = r;
            }
        }
        if m[piv * d + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..d {
                m.swap(col * d + c, piv * d + c);
                inv.swap(col * d + c, piv * d + c);
            }
        }
        let p = m[col * d + col];
        for c in 0..d {
            m[col * d + c] /= p;
            inv[col * d + c] /= p;
        }
        for r in 0..d {
            if r != col {
                let f = m[r * d + col];
                if f != 0.0 {
                    for c in 0..d {
                        m[r * d + c] -= f * m[col * d + c];
                        inv[r * d + c] -= f * inv[col * d + c];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Largest absolute eigenvalue of a symmetric matrix (row-major `n x n`),
/// computed by cyclic Jacobi rotations. Used as a spectral/operator norm.
pub fn sym_spectral_norm(a: &[f64], n: usize) -> f64 {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i].abs()).fold(0.0, f64::max)
}

/// Frobenius norm of a row-major matrix.
pub fn frobenius_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Logarithmically spaced ladder from `hi` down to `lo` (inclusive),
/// strictly decreasing.
pub fn log_ladder(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (lhi + (llo - lhi) * i as f64 / (count - 1) as f64).exp())
        .collect()
}
