//! Gauss–Legendre rules and L²-normalized shifted Legendre polynomials on
//! the unit interval.

use crate::scalar::Real;

/// Legendre polynomial `P_n` and its derivative at `x ∈ [-1, 1]`.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let one = T::one();
    let mut p0 = one;
    let mut p1 = x;
    if n == 0 {
        return (one, T::zero());
    }
    for k in 2..=n {
        let kt = T::from_usize(k);
        let p2 = ((T::from_usize(2 * k - 1)) * x * p1 - (kt - one) * p0) / kt;
        p0 = p1;
        p1 = p2;
    }
    let nt = T::from_usize(n);
    let dp = nt * (x * p1 - p0) / (x * x - one);
    (p1, dp)
}

/// `n`-point Gauss–Legendre rule mapped to `[0, 1]` (weights sum to 1).
/// Exact for polynomials of degree `2n − 1`.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "a quadrature rule needs at least one point");
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let half = T::from_f64(0.5);
    for i in 0..n.div_ceil(2) {
        let guess = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut x = T::from_f64(guess);
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= T::epsilon() * T::from_f64(4.0) {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = T::from_f64(2.0) / ((T::one() - x * x) * dp * dp);
        // Node x on [-1, 1] maps to (1 + x) / 2; weights halve.
        nodes[i] = half * (T::one() - x);
        nodes[n - 1 - i] = half * (T::one() + x);
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = half;
    }
    (nodes, weights)
}

/// Values of `L_0..=L_p` at `s ∈ [0, 1]`, where `L_k(s) = √(2k+1) P_k(2s − 1)`
/// so that `∫₀¹ L_j L_k = δ_jk`.
pub fn shifted_legendre<T: Real>(p: usize, s: T) -> Vec<T> {
    let x = T::from_f64(2.0) * s - T::one();
    let mut vals = Vec::with_capacity(p + 1);
    let mut p0 = T::one();
    let mut p1 = x;
    for k in 0..=p {
        let pk = match k {
            0 => T::one(),
            1 => x,
            _ => {
                let kt = T::from_usize(k);
                let p2 = (T::from_usize(2 * k - 1) * x * p1 - (kt - T::one()) * p0) / kt;
                p0 = p1;
                p1 = p2;
                p2
            }
        };
        vals.push(T::from_usize(2 * k + 1).sqrt() * pk);
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::DoubleDouble;

    #[test]
    fn integrates_monomials_exactly() {
        for n in 1..=8 {
            let (x, w) = gauss_legendre::<f64>(n);
            for k in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn extended_rule_is_accurate_beyond_double() {
        let (x, w) = gauss_legendre::<DoubleDouble>(6);
        let mut q = DoubleDouble::zero();
        for (xi, wi) in x.iter().zip(&w) {
            q += *wi * *xi * *xi * *xi * *xi * *xi * *xi * *xi;
        }
        let err = q - DoubleDouble::one() / DoubleDouble::from_f64(8.0);
        assert!(err.abs().to_f64() < 1e-30, "{err:?}");
    }

    #[test]
    fn shifted_legendre_is_orthonormal() {
        let p = 5;
        let (x, w) = gauss_legendre::<f64>(p + 1);
        for j in 0..=p {
            for k in 0..=p {
                let g: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(&s, &wi)| {
                        let v = shifted_legendre(p, s);
                        wi * v[j] * v[k]
                    })
                    .sum();
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((g - expected).abs() < 1e-13);
            }
        }
    }
}
