//! Small dense helpers on top of `ndarray`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Real;

pub fn frobenius_norm<T: Real>(a: &ArrayView2<'_, T>) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Root-mean-square of the entries; zero for an empty matrix.
pub fn rms<T: Real>(a: &ArrayView2<'_, T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    (a.iter().map(|&x| x * x).sum::<T>() / T::from_usize_lossy(a.len())).sqrt()
}

pub fn all_finite<T: Real>(a: &ArrayView2<'_, T>) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn ensure_finite<T: Real>(a: &ArrayView2<'_, T>, what: &str) -> Result<()> {
    if all_finite(a) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Matrix filled row-major from standard normal draws scaled by `scale`.
pub fn gaussian<T: Real>(rows: usize, cols: usize, scale: f64, stream: &mut Stream) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::lit(scale * stream.normal()))
}

/// Householder QR of a square matrix, `a = q r`, with the signs fixed so
/// that `diag(r) >= 0`.
pub fn qr_square<T: Real>(a: &ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "qr_square expects a square matrix");
    let mut r = a.to_owned();
    let mut q = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for k in 0..n.saturating_sub(1) {
        let mut v: Vec<T> = (k..n).map(|i| r[[i, k]]).collect();
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if v[0] > T::zero() { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|&x| x * x).sum::<T>();
        if vnorm2 == T::zero() {
            continue;
        }
        // r <- (I - 2 v v^T / v^T v) r
        for j in 0..n {
            let dot = (k..n).map(|i| v[i - k] * r[[i, j]]).sum::<T>();
            let f = two * dot / vnorm2;
            for i in k..n {
                r[[i, j]] -= f * v[i - k];
            }
        }
        // q <- q (I - 2 v v^T / v^T v)
        for i in 0..n {
            let dot = (k..n).map(|j| q[[i, j]] * v[j - k]).sum::<T>();
            let f = two * dot / vnorm2;
            for j in k..n {
                q[[i, j]] -= f * v[j - k];
            }
        }
    }
    for k in 0..n {
        if r[[k, k]] < T::zero() {
            r.row_mut(k).mapv_inplace(|x| -x);
            q.column_mut(k).mapv_inplace(|x| -x);
        }
    }
    (q, r)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of `R` made positive.
pub fn random_orthogonal<T: Real>(n: usize, stream: &mut Stream) -> Array2<T> {
    let g = gaussian::<T>(n, n, 1.0, stream);
    qr_square(&g.view()).0
}

/// Rows of `a` picked by `rows`, in the given order.
pub fn select_rows<T: Real>(a: &ArrayView2<'_, T>, rows: &[usize]) -> Array2<T> {
    a.select(Axis(0), rows)
}

pub fn select_cols<T: Real>(a: &ArrayView2<'_, T>, cols: &[usize]) -> Array2<T> {
    a.select(Axis(1), cols)
}

/// Complement of a sorted index set within `0..n`.
pub fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    let mut keep = Vec::with_capacity(n.saturating_sub(removed.len()));
    let mut it = removed.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            keep.push(i);
        }
    }
    keep
}
