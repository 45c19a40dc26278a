//! One-sided (Hestenes) Jacobi SVD.
//!
//! Column pairs of a working copy are rotated until mutually orthogonal; the
//! column norms are then the singular values. Slow for large matrices but
//! accurate to working precision relative to the largest singular value,
//! which is what the invariance checks need.

use ndarray::{Array1, Array2, ArrayView2};

use crate::scalar::Real;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `a = u diag(s) vᵀ` with `s` descending.
///
/// `u` is `m × k`, `v` is `n × k`, `k = min(m, n)`. Columns of `u` belonging
/// to zero singular values are left zero.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Array2<T>,
    pub s: Array1<T>,
    pub v: Array2<T>,
}

pub fn jacobi_svd<T: Real>(a: &ArrayView2<'_, T>) -> Svd<T> {
    let (m, n) = a.dim();
    if m < n {
        let t = jacobi_svd(&a.t());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    // Work on columns stored contiguously: g[j] is column j.
    let mut g: Vec<Vec<T>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            e
        })
        .collect();
    let eps = T::epsilon();
    let tiny = T::min_positive_value();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (gp, gq) = (&g[p], &g[q]);
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = T::zero();
                    for i in 0..m {
                        alpha += gp[i] * gp[i];
                        beta += gq[i] * gq[i];
                        gamma += gp[i] * gq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma.abs() < tiny {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<T> = g
        .iter()
        .map(|col| col.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal singular values keep column order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = Array2::<T>::zeros((m, n));
    let mut vv = Array2::<T>::zeros((n, n));
    let mut s = Array1::<T>::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        if norms[j] > T::zero() {
            for i in 0..m {
                u[[i, k]] = g[j][i] / norms[j];
            }
        }
        for i in 0..n {
            vv[[i, k]] = v[j][i];
        }
    }
    Svd { u, s, v: vv }
}

#[inline]
fn rotate<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian;
    use crate::rng::Stream;

    fn reconstruct(svd: &Svd<f64>) -> Array2<f64> {
        let k = svd.s.len();
        let mut us = svd.u.clone();
        for j in 0..k {
            us.column_mut(j).mapv_inplace(|x| x * svd.s[j]);
        }
        us.dot(&svd.v.t())
    }

    #[test]
    fn reconstructs_tall_and_wide() {
        let mut st = Stream::new(2);
        for &(m, n) in &[(7usize, 4usize), (4, 7), (5, 5), (1, 3)] {
            let a = gaussian::<f64>(m, n, 1.0, &mut st);
            let svd = jacobi_svd(&a.view());
            let back = reconstruct(&svd);
            assert!((&back - &a).iter().all(|x| x.abs() < 1e-12), "{m}x{n}");
            assert!(svd.s.windows(2).into_iter().all(|w| w[0] >= w[1]));
            let vtv = svd.v.t().dot(&svd.v);
            assert!((&vtv - &Array2::<f64>::eye(vtv.nrows())).iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn rank_deficient_has_zero_tail() {
        let mut st = Stream::new(3);
        let a = gaussian::<f64>(6, 2, 1.0, &mut st);
        let b = gaussian::<f64>(2, 6, 1.0, &mut st);
        let m = a.dot(&b);
        let svd = jacobi_svd(&m.view());
        assert!(svd.s[1] > 1e-3);
        for k in 2..6 {
            assert!(svd.s[k] < 1e-13 * svd.s[0]);
        }
    }
}
