//! Dense spectral kernels: singular values, eigenvalue magnitudes, spectral
//! norm and eigenbasis conditioning, plus the first-order sensitivities the
//! spectral-gradient attack needs.
//!
//! Complex arithmetic stays inside this module. Callers only see sorted real
//! vectors and real gradient matrices.

mod eigen;
mod svd;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

pub use eigen::{complex_inverse, EigenDecomposition, ITERATIONS_PER_DIM};
pub use svd::Svd;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Singular,
    EigenMagnitude,
}

/// Nonnegative values sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumVector<T> {
    values: Vec<T>,
    kind: SpectrumKind,
}

impl<T: Real> SpectrumVector<T> {
    fn sorted(mut values: Vec<T>, kind: SpectrumKind) -> Self {
        // Stable sort on value only.
        values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        SpectrumVector { values, kind }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest value, zero when empty.
    pub fn max(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }
}

fn check_input<T: Real>(m: &ArrayView2<'_, T>, what: &str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: empty matrix")));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn check_square<T: Real>(m: &ArrayView2<'_, T>, what: &str) -> Result<()> {
    check_input(m, what)?;
    if m.nrows() != m.ncols() {
        return Err(Error::dim(what, "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Thin SVD with descending singular values.
pub fn svd<T: Real>(m: &ArrayView2<'_, T>) -> Result<Svd<T>> {
    check_input(m, "svd input")?;
    Ok(svd::jacobi_svd(m))
}

/// The `min(rows, cols)` singular values of `m`, descending.
pub fn singular_values<T: Real>(m: &ArrayView2<'_, T>) -> Result<SpectrumVector<T>> {
    let s = svd(m)?.s.to_vec();
    Ok(SpectrumVector::sorted(s, SpectrumKind::Singular))
}

pub fn spectral_norm<T: Real>(m: &ArrayView2<'_, T>) -> Result<T> {
    Ok(singular_values(m)?.max())
}

pub fn eigen_decomposition<T: Real>(n: &ArrayView2<'_, T>) -> Result<EigenDecomposition<T>> {
    check_square(n, "eigen input")?;
    eigen::decompose(n)
}

/// Eigenvalues in solver order (conjugate pairs adjacent).
pub fn eigenvalues<T: Real>(n: &ArrayView2<'_, T>) -> Result<Vec<Complex<T>>> {
    Ok(eigen_decomposition(n)?.values)
}

/// `|λ_i|` for every eigenvalue, descending. Conjugate pairs contribute two
/// equal entries.
pub fn eigen_magnitudes<T: Real>(n: &ArrayView2<'_, T>) -> Result<SpectrumVector<T>> {
    let mags = eigenvalues(n)?.iter().map(|z| z.norm()).collect();
    Ok(SpectrumVector::sorted(mags, SpectrumKind::EigenMagnitude))
}

/// Outcome of [`eigenbasis_condition`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conditioning<T> {
    /// `κ(Q) = ‖Q‖₂ ‖Q⁻¹‖₂` for the unit-column eigenvector matrix `Q`.
    Diagonalizable(T),
    /// Smallest singular value of `Q` is below `1e-12` of the largest.
    Defective,
}

impl<T: Copy> Conditioning<T> {
    pub fn value(&self) -> Option<T> {
        match *self {
            Conditioning::Diagonalizable(k) => Some(k),
            Conditioning::Defective => None,
        }
    }
}

pub const DEFECTIVE_THRESHOLD: f64 = 1e-12;

pub fn eigenbasis_condition<T: Real>(n: &ArrayView2<'_, T>) -> Result<Conditioning<T>> {
    let dec = eigen_decomposition(n)?;
    let q = &dec.vectors;
    let k = q.nrows();
    // Singular values of a complex matrix A + iB are those of the real
    // embedding [[A, -B], [B, A]], each repeated twice.
    let mut emb = Array2::<T>::zeros((2 * k, 2 * k));
    for i in 0..k {
        for j in 0..k {
            let z = q[[i, j]];
            emb[[i, j]] = z.re;
            emb[[i + k, j + k]] = z.re;
            emb[[i, j + k]] = -z.im;
            emb[[i + k, j]] = z.im;
        }
    }
    let s = svd::jacobi_svd(&emb.view()).s;
    let (smax, smin) = (s[0], s[s.len() - 1]);
    if smin <= T::lit(DEFECTIVE_THRESHOLD) * smax {
        Ok(Conditioning::Defective)
    } else {
        Ok(Conditioning::Diagonalizable(smax / smin))
    }
}

/// A spectral value together with its gradient `∂value/∂M`.
#[derive(Debug, Clone)]
pub struct Sensitivity<T> {
    pub value: T,
    pub gradient: Array2<T>,
}

/// Relative gap below which spectra are treated as degenerate when
/// differentiating.
pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-10;

/// Gradients of the `k` largest singular values: `∂σ_i/∂M = u_i v_iᵀ`.
///
/// Fails when any of the leading `k + 1` values are closer than
/// `gap_tol · σ_max` or a requested value is (numerically) zero.
pub fn singular_value_sensitivities<T: Real>(
    m: &ArrayView2<'_, T>,
    k: usize,
    gap_tol: T,
) -> Result<Vec<Sensitivity<T>>> {
    let dec = svd(m)?;
    let s = &dec.s;
    if k > s.len() {
        return Err(Error::InvalidArgument(format!("requested {k} of {} singular values", s.len())));
    }
    let scale = s[0];
    for i in 0..k {
        if s[i] <= gap_tol * scale {
            return Err(Error::Degenerate(format!("singular value {i} is zero")));
        }
        if i + 1 < s.len() && s[i] - s[i + 1] <= gap_tol * scale {
            return Err(Error::Degenerate(format!("singular values {i} and {} coincide", i + 1)));
        }
    }
    Ok((0..k)
        .map(|i| {
            let u = dec.u.column(i);
            let v = dec.v.column(i);
            let g = Array2::from_shape_fn((u.len(), v.len()), |(a, b)| u[a] * v[b]);
            Sensitivity {
                value: s[i],
                gradient: g,
            }
        })
        .collect())
}

/// Gradients of the `k` largest eigenvalue magnitudes:
/// `∂|λ|/∂N_ab = Re(conj(λ)/|λ| · y_a x_b)` where `x` is the right
/// eigenvector and `y` the matching row of `X⁻¹` (so `y x = 1`).
///
/// Fails on repeated or zero eigenvalues (relative to `gap_tol · max|λ|`)
/// and on a numerically singular eigenvector matrix.
pub fn eigen_magnitude_sensitivities<T: Real>(
    n: &ArrayView2<'_, T>,
    k: usize,
    gap_tol: T,
) -> Result<Vec<Sensitivity<T>>> {
    let dec = eigen_decomposition(n)?;
    let vals = &dec.values;
    let dim = vals.len();
    if k > dim {
        return Err(Error::InvalidArgument(format!("requested {k} of {dim} eigenvalues")));
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        vals[j]
            .norm()
            .partial_cmp(&vals[i].norm())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let scale = vals[order[0]].norm();
    for &i in order.iter().take(k) {
        if vals[i].norm() <= gap_tol * scale {
            return Err(Error::Degenerate(format!("eigenvalue {i} is zero")));
        }
        for j in 0..dim {
            if j != i && (vals[i] - vals[j]).norm() <= gap_tol * scale {
                return Err(Error::Degenerate(format!("eigenvalues {i} and {j} coincide")));
            }
        }
    }
    let left = complex_inverse(&dec.vectors, T::lit(DEFECTIVE_THRESHOLD))
        .ok_or_else(|| Error::Degenerate("eigenvector matrix is singular".into()))?;
    Ok(order
        .iter()
        .take(k)
        .map(|&i| {
            let lambda = vals[i];
            let phase = lambda.conj() / lambda.norm();
            let g = Array2::from_shape_fn((dim, dim), |(a, b)| (phase * left[[i, a]] * dec.vectors[[b, i]]).re);
            Sensitivity {
                value: lambda.norm(),
                gradient: g,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian;
    use crate::rng::Stream;
    use ndarray::array;

    #[test]
    fn documented_singular_cases() {
        let id = Array2::<f64>::eye(3);
        assert_eq!(singular_values(&id.view()).unwrap().values(), &[1.0, 1.0, 1.0]);
        let a = array![[0.0_f64, 2.0], [0.0, 0.0]];
        let s = singular_values(&a.view()).unwrap();
        assert!((s.values()[0] - 2.0).abs() < 1e-15 && s.values()[1].abs() < 1e-15);
        assert_eq!(s.kind(), SpectrumKind::Singular);
    }

    #[test]
    fn documented_eigen_cases() {
        let a = array![[2.0_f64, 1.0], [0.0, 3.0]];
        let m = eigen_magnitudes(&a.view()).unwrap();
        assert!((m.values()[0] - 3.0).abs() < 1e-14 && (m.values()[1] - 2.0).abs() < 1e-14);
        let r = array![[0.0_f64, -1.0], [1.0, 0.0]];
        let m = eigen_magnitudes(&r.view()).unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&Array2::<f64>::eye(4).view()).unwrap(), 1.0);
        let two = Array2::<f64>::eye(4) * 2.0;
        assert_eq!(spectral_norm(&two.view()).unwrap(), 2.0);
        let mut st = Stream::new(8);
        let g = gaussian::<f64>(5, 3, 1.0, &mut st);
        assert_eq!(spectral_norm(&g.view()).unwrap(), singular_values(&g.view()).unwrap().values()[0]);
    }

    #[test]
    fn conditioning_cases() {
        let sym = array![[2.0_f64, 1.0], [1.0, 2.0]];
        let k = eigenbasis_condition(&sym.view()).unwrap().value().unwrap();
        assert!((k - 1.0).abs() < 1e-8);
        let k = eigenbasis_condition(&Array2::<f64>::eye(3).view()).unwrap().value().unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        let jordan = array![[1.0_f64, 1.0], [0.0, 1.0]];
        assert_eq!(eigenbasis_condition(&jordan.view()).unwrap(), Conditioning::Defective);
    }

    #[test]
    fn errors_on_bad_input() {
        let nan = array![[f64::NAN]];
        assert!(matches!(singular_values(&nan.view()), Err(Error::NonFinite(_))));
        assert!(matches!(eigen_magnitudes(&nan.view()), Err(Error::NonFinite(_))));
        let rect = Array2::<f64>::zeros((2, 3));
        assert!(matches!(eigen_magnitudes(&rect.view()), Err(Error::Dimension { .. })));
        let empty = Array2::<f64>::zeros((0, 0));
        assert!(singular_values(&empty.view()).is_err());
    }

    fn fd_check(
        f: impl Fn(&Array2<f64>) -> f64,
        grad: &Array2<f64>,
        at: &Array2<f64>,
        dir: &Array2<f64>,
    ) -> f64 {
        let h = 1e-6;
        let fd = (f(&(at + &(dir * h))) - f(&(at - &(dir * h)))) / (2.0 * h);
        let an = (grad * dir).sum();
        (fd - an).abs() / fd.abs().max(1e-12)
    }

    #[test]
    fn singular_sensitivities_match_finite_differences() {
        let mut st = Stream::new(21);
        let m = gaussian::<f64>(6, 4, 1.0, &mut st);
        let dir = gaussian::<f64>(6, 4, 1.0, &mut st);
        let sens = singular_value_sensitivities(&m.view(), 3, 1e-10).unwrap();
        for (i, s) in sens.iter().enumerate() {
            let err = fd_check(|x| singular_values(&x.view()).unwrap().values()[i], &s.gradient, &m, &dir);
            assert!(err < 1e-6, "sigma_{i}: {err}");
        }
    }

    #[test]
    fn eigen_sensitivities_match_finite_differences() {
        let mut st = Stream::new(22);
        let m = gaussian::<f64>(6, 6, 1.0, &mut st);
        let dir = gaussian::<f64>(6, 6, 1.0, &mut st);
        let sens = eigen_magnitude_sensitivities(&m.view(), 6, 1e-10).unwrap();
        for (i, s) in sens.iter().enumerate() {
            let err = fd_check(|x| eigen_magnitudes(&x.view()).unwrap().values()[i], &s.gradient, &m, &dir);
            assert!(err < 1e-5, "|lambda_{i}|: {err}");
        }
    }

    #[test]
    fn sensitivities_reject_degenerate_spectra() {
        let id = Array2::<f64>::eye(3);
        assert!(matches!(
            singular_value_sensitivities(&id.view(), 2, 1e-10),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            eigen_magnitude_sensitivities(&id.view(), 1, 1e-10),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let a = array![[3.0_f32, 0.0], [4.0, 5.0]];
        let s = singular_values(&a.view()).unwrap();
        assert!((s.values()[0] - 45f32.sqrt()).abs() < 1e-5);
        assert!((s.values()[1] - 5f32.sqrt()).abs() < 1e-5);
        let e = eigen_magnitudes(&array![[2.0_f32, 1.0], [0.0, 3.0]].view()).unwrap();
        assert!((e.values()[0] - 3.0).abs() < 1e-6);
    }
}
