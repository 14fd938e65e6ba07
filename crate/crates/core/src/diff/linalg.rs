//! Small-matrix SVD and Moore-Penrose pseudo-inverse.
//!
//! One-sided Jacobi (Hestenes) SVD: right-rotations orthogonalize the
//! columns of `A`, giving `A V = U diag(sigma)`. Accurate and simple, and
//! the kernels we invert are at most 16x16, so no blocking or iteration
//! tricks are needed.

use super::tensor::{Scalar, Tensor};

/// Relative singular-value cutoff used by [`pinv`]: singular values below
/// `PINV_CUTOFF * sigma_max` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-8;

/// Thin SVD of a square matrix: `a == u * diag(sigma) * v^T`.
#[derive(Debug, Clone)]
pub struct Svd<S> {
    pub u: Tensor<S>,
    pub sigma: Vec<S>,
    pub v: Tensor<S>,
}

/// One-sided Jacobi SVD for an `n x n` matrix.
pub fn svd_jacobi<S: Scalar>(a: &Tensor<S>) -> Svd<S> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "svd_jacobi expects a square matrix");
    // b holds A with rotations applied from the right; v accumulates them.
    let mut b = a.clone();
    let mut v = Tensor::<S>::eye(n);
    let eps = S::from_f64_lit(1e-30);
    let tol = S::from_f64_lit(1e-14);

    for _sweep in 0..60 {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                // Gram entries of columns p and q.
                let mut app = S::zero();
                let mut aqq = S::zero();
                let mut apq = S::zero();
                for i in 0..n {
                    let bp = b.at(i, p);
                    let bq = b.at(i, q);
                    app = app + bp * bp;
                    aqq = aqq + bq * bq;
                    apq = apq + bp * bq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() + eps {
                    continue;
                }
                off = off.max(apq.abs());
                // Jacobi rotation zeroing the (p,q) Gram entry.
                let two = S::from_f64_lit(2.0);
                let tau = (aqq - app) / (two * apq);
                let t = {
                    let sign = if tau >= S::zero() { S::one() } else { -S::one() };
                    sign / (tau.abs() + (S::one() + tau * tau).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let bp = b.at(i, p);
                    let bq = b.at(i, q);
                    *b.at_mut(i, p) = c * bp - s * bq;
                    *b.at_mut(i, q) = s * bp + c * bq;
                    let vp = v.at(i, p);
                    let vq = v.at(i, q);
                    *v.at_mut(i, p) = c * vp - s * vq;
                    *v.at_mut(i, q) = s * vp + c * vq;
                }
            }
        }
        if off == S::zero() {
            break;
        }
    }

    // Column norms are the singular values; normalized columns form U.
    let mut sigma = vec![S::zero(); n];
    let mut u = Tensor::<S>::zeros(vec![n, n]);
    for j in 0..n {
        let mut norm = S::zero();
        for i in 0..n {
            let bij = b.at(i, j);
            norm = norm + bij * bij;
        }
        let norm = norm.sqrt();
        sigma[j] = norm;
        if norm > S::zero() {
            for i in 0..n {
                *u.at_mut(i, j) = b.at(i, j) / norm;
            }
        }
    }

    // Sort descending by singular value so the cutoff logic reads naturally.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let mut us = Tensor::<S>::zeros(vec![n, n]);
    let mut vs = Tensor::<S>::zeros(vec![n, n]);
    let mut ss = vec![S::zero(); n];
    for (new, &old) in order.iter().enumerate() {
        ss[new] = sigma[old];
        for i in 0..n {
            *us.at_mut(i, new) = u.at(i, old);
            *vs.at_mut(i, new) = v.at(i, old);
        }
    }
    Svd {
        u: us,
        sigma: ss,
        v: vs,
    }
}

/// Moore-Penrose pseudo-inverse of a square matrix via [`svd_jacobi`],
/// zeroing singular values below `PINV_CUTOFF * sigma_max`.
pub fn pinv<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let n = a.rows();
    let Svd { u, sigma, v } = svd_jacobi(a);
    let cutoff = S::from_f64_lit(PINV_CUTOFF) * sigma.first().copied().unwrap_or(S::zero());
    // pinv = V * diag(1/sigma) * U^T
    let mut out = Tensor::<S>::zeros(vec![n, n]);
    for k in 0..n {
        if sigma[k] <= cutoff || sigma[k] == S::zero() {
            continue;
        }
        let inv = S::one() / sigma[k];
        for i in 0..n {
            let vik = v.at(i, k) * inv;
            if vik == S::zero() {
                continue;
            }
            for j in 0..n {
                *out.at_mut(i, j) = out.at(i, j) + vik * u.at(j, k);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::tensor::matmul;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(n: usize, rng: &mut StdRng) -> Tensor<f64> {
        Tensor::matrix(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = StdRng::seed_from_u64(7);
        for n in [1usize, 2, 3, 5, 8, 13] {
            let a = random_matrix(n, &mut rng);
            let Svd { u, sigma, v } = svd_jacobi(&a);
            let mut us = u.clone();
            for i in 0..n {
                for j in 0..n {
                    *us.at_mut(i, j) = u.at(i, j) * sigma[j];
                }
            }
            let rec = matmul(&us, &crate::diff::tensor::transpose(&v));
            assert!(max_abs_diff(&rec, &a) < 1e-10, "n={n}");
            // U, V orthogonal
            let utu = matmul(&crate::diff::tensor::transpose(&u), &u);
            assert!(max_abs_diff(&utu, &Tensor::eye(n)) < 1e-10);
        }
    }

    #[test]
    fn pinv_satisfies_moore_penrose() {
        let mut rng = StdRng::seed_from_u64(11);
        for n in [2usize, 4, 9] {
            let a = random_matrix(n, &mut rng);
            let z = pinv(&a);
            let aza = matmul(&matmul(&a, &z), &a);
            let zaz = matmul(&matmul(&z, &a), &z);
            assert!(max_abs_diff(&aza, &a) < 1e-9);
            assert!(max_abs_diff(&zaz, &z) < 1e-9);
        }
    }

    #[test]
    fn pinv_matches_nalgebra() {
        let mut rng = StdRng::seed_from_u64(3);
        for n in [2usize, 5, 8] {
            let a = random_matrix(n, &mut rng);
            let z = pinv(&a);
            let na = nalgebra::DMatrix::from_row_slice(n, n, a.data());
            let nz = na.pseudo_inverse(1e-12).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((z.at(i, j) - nz[(i, j)]).abs() < 1e-8, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn pinv_rank_deficient() {
        // rank-1 matrix: pinv well-defined, cutoff suppresses the null space
        let a = Tensor::matrix(2, 2, vec![2.0, 4.0, 1.0, 2.0]);
        let z = pinv(&a);
        let aza = matmul(&matmul(&a, &z), &a);
        assert!(max_abs_diff(&aza, &a) < 1e-12);
    }
}
