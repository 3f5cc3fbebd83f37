//! Row-pivoted LU for the small dense saddle systems, plus a 1-norm condition
//! estimate.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular;

/// `P A = L U` stored in place, row-major.
#[derive(Clone, Debug)]
pub struct Lu<T: Real> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(mut a: Vec<T>, n: usize) -> Result<Self, Singular> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].abs();
            for r in k + 1..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Singular);
            }
            if piv != k {
                for c in 0..n {
                    a.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
            }
            let inv = a[k * n + k].recip();
            for r in k + 1..n {
                let f = a[r * n + k] * inv;
                if f == T::zero() {
                    continue;
                }
                a[r * n + k] = f;
                for c in k + 1..n {
                    let u = a[k * n + c];
                    a[r * n + c] -= f * u;
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut s = x[r];
            for c in 0..r {
                s -= self.lu[r * n + c] * x[c];
            }
            x[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= self.lu[r * n + c] * x[c];
            }
            x[r] = s / self.lu[r * n + r];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        // A^T = U^T L^T P, so U^T z = b, L^T y = z, x = P^T y.
        let mut z = b.to_vec();
        for r in 0..n {
            let mut s = z[r];
            for c in 0..r {
                s -= self.lu[c * n + r] * z[c];
            }
            z[r] = s / self.lu[r * n + r];
        }
        for r in (0..n).rev() {
            let mut s = z[r];
            for c in r + 1..n {
                s -= self.lu[c * n + r] * z[c];
            }
            z[r] = s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// Hager/Higham estimate of `||A^-1||_1`.
    pub fn inverse_norm1_estimate(&self) -> T {
        let n = self.n;
        let nt = T::from_usize_lossy(n);
        let norm1 = |v: &[T]| v.iter().map(|x| x.abs()).sum::<T>();
        let mut x = vec![nt.recip(); n];
        let mut est = T::zero();
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = est.max(norm1(&y));
            let sign: Vec<T> = y
                .iter()
                .map(|&v| if v >= T::zero() { T::one() } else { -T::one() })
                .collect();
            let z = self.solve_transpose(&sign);
            let (j, zmax) = z.iter().enumerate().fold((0, T::zero()), |acc, (i, &v)| {
                if v.abs() > acc.1 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            let ztx: T = z.iter().zip(&x).map(|(&a, &b)| a * b).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x.iter_mut().for_each(|v| *v = T::zero());
            x[j] = T::one();
        }
        // alternating test vector guards against the estimator's blind spots
        if n > 1 {
            let alt: Vec<T> = (0..n)
                .map(|i| {
                    let s = if i % 2 == 0 { T::one() } else { -T::one() };
                    s * (T::one() + T::from_usize_lossy(i) / T::from_usize_lossy(n - 1))
                })
                .collect();
            let y = self.solve(&alt);
            est = est.max(T::lit(2.0) * norm1(&y) / (T::lit(3.0) * nt));
        }
        est
    }
}

/// Maximum absolute column sum.
pub fn norm1<T: Real>(a: &[T], n: usize) -> T {
    (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].abs()).sum::<T>())
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_transposes() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let x = lu.solve(&[3.0, 2.0, 4.0]);
        for r in 0..3 {
            let s: f64 = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
            assert!((s - [3.0, 2.0, 4.0][r]).abs() < 1e-14);
        }
        let xt = lu.solve_transpose(&[1.0, -1.0, 2.0]);
        for c in 0..3 {
            let s: f64 = (0..3).map(|r| a[r * 3 + c] * xt[r]).sum();
            assert!((s - [1.0, -1.0, 2.0][c]).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_is_reported() {
        assert_eq!(
            Lu::factor(vec![1.0, 2.0, 2.0, 4.0], 2).unwrap_err(),
            Singular
        );
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let a: Vec<f64> = vec![1.0, 0.0, 0.0, 0.0, 1e-3, 0.0, 0.0, 0.0, 4.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let cond = norm1(&a, 3) * lu.inverse_norm1_estimate();
        assert!((cond - 4e3).abs() < 1e-9, "{cond}");
    }
}
