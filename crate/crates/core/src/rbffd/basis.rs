//! Polyharmonic splines and the monomial augmentation basis.

use crate::scalar::Real;

/// `phi(r) = r^k`.
#[inline]
pub fn phs<T: Real>(r: T, k: i32) -> T {
    r.powi(k)
}

/// Analytic Laplacian of `r^k` in `d` dimensions: `k (k + d - 2) r^(k - 2)`.
#[inline]
pub fn phs_laplacian<T: Real>(r: T, k: i32, d: usize) -> T {
    debug_assert!(k + d as i32 > 2);
    T::lit((k * (k + d as i32 - 2)) as f64) * r.powi(k - 2)
}

/// Derivative of `phi(||x - x_j||)` along `dir`, evaluated at `x` with
/// `offset = x - x_j`.
#[inline]
pub fn phs_directional<T: Real>(offset: &[T], dir: &[T], k: i32) -> T {
    let r2: T = offset.iter().map(|&v| v * v).sum();
    let dot: T = offset.iter().zip(dir).map(|(&a, &b)| a * b).sum();
    // k r^(k-2) (x - x_j).dir ; r^(k-2) = (r^2)^((k-2)/2) with k odd
    T::lit(k as f64) * r2.sqrt().powi(k - 2) * dot
}

/// `C(m + d, d)`, the number of monomials of total degree `<= m` in `d`
/// variables.
pub fn monomial_count(m: usize, d: usize) -> usize {
    // C(m+d, d) built incrementally; every partial product is an integer.
    (1..=d).fold(1usize, |acc, i| acc * (m + i) / i)
}

/// Exponent tuples of all monomials of total degree `<= m`, graded by degree.
pub fn monomial_exponents(m: usize, d: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(monomial_count(m, d));
    for deg in 0..=m {
        let mut cur = vec![0u32; d];
        push_degree(&mut out, &mut cur, 0, deg as u32);
    }
    out
}

fn push_degree(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, axis: usize, left: u32) {
    if axis + 1 == cur.len() {
        cur[axis] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[axis] = e;
        push_degree(out, cur, axis + 1, left - e);
    }
}

#[inline]
pub fn monomial_value<T: Real>(exps: &[u32], y: &[T]) -> T {
    exps.iter()
        .zip(y)
        .fold(T::one(), |acc, (&e, &v)| acc * v.powi(e as i32))
}

/// Laplacian of `y^alpha` at the origin: 2 for `y_i^2`, zero otherwise.
pub fn monomial_laplacian_at_origin<T: Real>(exps: &[u32]) -> T {
    let total: u32 = exps.iter().sum();
    if total == 2 && exps.contains(&2) {
        T::lit(2.0)
    } else {
        T::zero()
    }
}

/// Directional derivative of `y^alpha` at the origin: `dir_i` for `y_i`.
pub fn monomial_directional_at_origin<T: Real>(exps: &[u32], dir: &[T]) -> T {
    let total: u32 = exps.iter().sum();
    if total != 1 {
        return T::zero();
    }
    let axis = exps
        .iter()
        .position(|&e| e == 1)
        .expect("degree-one monomial");
    dir[axis]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phs_values() {
        assert_eq!(phs(0.0f64, 3), 0.0);
        assert_eq!(phs(2.0f64, 3), 8.0);
        assert_eq!(phs(1.0f64, 3), 1.0);
    }

    /// Central second differences of r^k summed over axes.
    fn fd_laplacian(p: &[f64], k: i32) -> f64 {
        let f = |q: &[f64]| q.iter().map(|v| v * v).sum::<f64>().sqrt().powi(k);
        let e = 1e-4;
        let mut lap = 0.0;
        for a in 0..p.len() {
            let mut plus = p.to_vec();
            let mut minus = p.to_vec();
            plus[a] += e;
            minus[a] -= e;
            lap += (f(&plus) - 2.0 * f(p) + f(&minus)) / (e * e);
        }
        lap
    }

    #[test]
    fn phs_laplacian_matches_finite_differences() {
        // frozen values: fd_laplacian([0.6, 0.8], 3) ~ 9, fd_laplacian([0, 1.2, 1.6], 3) ~ 24
        let fd2 = fd_laplacian(&[0.6, 0.8], 3);
        assert!((fd2 - 9.0).abs() < 1e-6 * 9.0 + 1e-5, "{fd2}");
        assert_eq!(phs_laplacian(1.0f64, 3, 2), 9.0);
        let fd3 = fd_laplacian(&[0.0, 1.2, 1.6], 3);
        assert!((fd3 - 24.0).abs() < 1e-5, "{fd3}");
        assert_eq!(phs_laplacian(2.0f64, 3, 3), 24.0);
        assert_eq!(phs_laplacian(0.0f64, 3, 2), 0.0);
        let fd5 = fd_laplacian(&[0.3, -0.4, 0.5], 5);
        assert!((fd5 - phs_laplacian(50f64.sqrt() / 10.0, 5, 3)).abs() < 1e-5);
    }

    #[test]
    fn counts() {
        assert_eq!(monomial_count(2, 2), 6);
        assert_eq!(monomial_count(4, 2), 15);
        assert_eq!(monomial_count(6, 2), 28);
        assert_eq!(monomial_count(0, 3), 1);
        assert_eq!(monomial_count(2, 3), 10);
        for (m, d) in [(0, 1), (3, 1), (2, 2), (6, 2), (4, 3)] {
            assert_eq!(monomial_exponents(m, d).len(), monomial_count(m, d));
        }
    }

    #[test]
    fn exponents_are_distinct_and_graded() {
        let e = monomial_exponents(3, 3);
        let mut sorted = e.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), e.len());
        let degs: Vec<u32> = e.iter().map(|v| v.iter().sum()).collect();
        assert!(degs.windows(2).all(|w| w[0] <= w[1]));
    }
}
