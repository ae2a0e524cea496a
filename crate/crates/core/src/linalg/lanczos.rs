use crate::scalar::Real;

use super::cg::LinearOperator;

/// Number of eigenvalues of the symmetric tridiagonal matrix `(a, b)` below `x`.
fn sturm_count(a: &[f64], b: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..a.len() {
        let off = if i == 0 { 0.0 } else { b[i - 1] * b[i - 1] };
        q = a[i] - x - if i == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = f64::EPSILON * (a[i].abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// `k`-th smallest eigenvalue (0-based) of a symmetric tridiagonal matrix.
fn tridiagonal_eigenvalue(a: &[f64], b: &[f64], k: usize) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..a.len() {
        let r = if i > 0 { b[i - 1].abs() } else { 0.0 } + if i < b.len() { b[i].abs() } else { 0.0 };
        lo = lo.min(a[i] - r);
        hi = hi.max(a[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(a, b, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Estimates the spectral condition number of an SPD operator as the ratio
/// of the extreme Ritz values after `steps` Lanczos iterations with full
/// reorthogonalization. Only order-of-magnitude accuracy should be expected
/// when `steps` is much smaller than the dimension.
pub fn condition_estimate<T: Real>(m: &impl LinearOperator<T>, steps: usize) -> f64 {
    let n = m.dim();
    if n == 0 {
        return 1.0;
    }
    let steps = steps.clamp(1, n);
    // Deterministic start vector with components of every frequency.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut y = vec![T::zero(); n];
    for k in 0..steps {
        let vt: Vec<T> = v.iter().map(|&x| T::from_f64(x)).collect();
        m.apply(&vt, &mut y);
        let mut w: Vec<f64> = y.iter().map(|x| x.to_f64()).collect();
        let a: f64 = w.iter().zip(&v).map(|(p, q)| p * q).sum();
        alpha.push(a);
        basis.push(v.clone());
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = w.iter().zip(q).map(|(p, r)| p * r).sum();
                w.iter_mut().zip(q).for_each(|(p, r)| *p -= c * r);
            }
        }
        let b = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if k + 1 == steps || b <= 1e-14 * a.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(b);
        v = w.into_iter().map(|x| x / b).collect();
    }
    let k = alpha.len();
    let b = &beta[..k - 1];
    let lmin = tridiagonal_eigenvalue(&alpha, b, 0);
    let lmax = tridiagonal_eigenvalue(&alpha, b, k - 1);
    if lmin <= 0.0 {
        f64::INFINITY
    } else {
        lmax / lmin
    }
}
