//! General real eigenproblem: Householder reduction to upper Hessenberg form
//! followed by Francis double-shift QR and back-substitution for the
//! eigenvectors (the EISPACK `orthes`/`hqr2` pair).

use std::ops::{Index, IndexMut};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Iteration budget per unit of dimension before giving up.
pub const ITERATIONS_PER_DIM: usize = 100;

#[derive(Debug, Clone)]
pub struct EigenDecomposition<T: Real> {
    /// Eigenvalues in solver order; conjugate pairs are adjacent, positive
    /// imaginary part first.
    pub values: Vec<Complex<T>>,
    /// Right eigenvectors as columns, each scaled to unit 2-norm.
    pub vectors: Array2<Complex<T>>,
}

struct Sq<T> {
    n: usize,
    data: Vec<T>,
}

impl<T> Index<(isize, isize)> for Sq<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (isize, isize)) -> &T {
        &self.data[i as usize * self.n + j as usize]
    }
}

impl<T> IndexMut<(isize, isize)> for Sq<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (isize, isize)) -> &mut T {
        &mut self.data[i as usize * self.n + j as usize]
    }
}

pub fn decompose<T: Real>(a: &ArrayView2<'_, T>) -> Result<EigenDecomposition<T>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::dim("eigen input", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("eigen input".into()));
    }
    let mut h = Sq {
        n,
        data: a.iter().copied().collect(),
    };
    let mut v = Sq {
        n,
        data: vec![T::zero(); n * n],
    };
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    orthes(&mut h, &mut v);
    hqr2(&mut h, &mut v, &mut d, &mut e)?;

    let values: Vec<Complex<T>> = d.iter().zip(&e).map(|(&re, &im)| Complex::new(re, im)).collect();
    let mut vectors = Array2::<Complex<T>>::zeros((n, n));
    let mut j = 0;
    while j < n {
        if e[j] == T::zero() {
            for i in 0..n {
                vectors[[i, j]] = Complex::new(v[(i as isize, j as isize)], T::zero());
            }
            j += 1;
        } else {
            for i in 0..n {
                let re = v[(i as isize, j as isize)];
                let im = v[(i as isize, j as isize + 1)];
                vectors[[i, j]] = Complex::new(re, im);
                vectors[[i, j + 1]] = Complex::new(re, -im);
            }
            j += 2;
        }
    }
    for mut col in vectors.columns_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        if norm > T::zero() {
            col.mapv_inplace(|z| z / norm);
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

fn orthes<T: Real>(h: &mut Sq<T>, v: &mut Sq<T>) {
    let n = h.n as isize;
    let low: isize = 0;
    let high: isize = n - 1;
    let mut ort = vec![T::zero(); h.n];

    let mut m = low + 1;
    while m < high {
        let mut scale = T::zero();
        for i in m..=high {
            scale += h[(i, m - 1)].abs();
        }
        if scale != T::zero() {
            let mut hh = T::zero();
            for i in (m..=high).rev() {
                ort[i as usize] = h[(i, m - 1)] / scale;
                hh += ort[i as usize] * ort[i as usize];
            }
            let mut g = hh.sqrt();
            if ort[m as usize] > T::zero() {
                g = -g;
            }
            hh -= ort[m as usize] * g;
            ort[m as usize] -= g;

            for j in m..n {
                let mut f = T::zero();
                for i in (m..=high).rev() {
                    f += ort[i as usize] * h[(i, j)];
                }
                f /= hh;
                for i in m..=high {
                    h[(i, j)] -= f * ort[i as usize];
                }
            }
            for i in 0..=high {
                let mut f = T::zero();
                for j in (m..=high).rev() {
                    f += ort[j as usize] * h[(i, j)];
                }
                f /= hh;
                for j in m..=high {
                    h[(i, j)] -= f * ort[j as usize];
                }
            }
            ort[m as usize] = scale * ort[m as usize];
            h[(m, m - 1)] = scale * g;
        }
        m += 1;
    }

    for i in 0..n {
        for j in 0..n {
            v[(i, j)] = if i == j { T::one() } else { T::zero() };
        }
    }
    let mut m = high - 1;
    while m > low {
        if h[(m, m - 1)] != T::zero() {
            for i in (m + 1)..=high {
                ort[i as usize] = h[(i, m - 1)];
            }
            for j in m..=high {
                let mut g = T::zero();
                for i in m..=high {
                    g += ort[i as usize] * v[(i, j)];
                }
                // Double division avoids possible underflow.
                g = (g / ort[m as usize]) / h[(m, m - 1)];
                for i in m..=high {
                    v[(i, j)] += g * ort[i as usize];
                }
            }
        }
        m -= 1;
    }
}

#[inline]
fn cdiv<T: Real>(xr: T, xi: T, yr: T, yi: T) -> (T, T) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

#[allow(clippy::many_single_char_names)]
fn hqr2<T: Real>(h: &mut Sq<T>, v: &mut Sq<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let nn = h.n as isize;
    let mut n = nn - 1;
    let low: isize = 0;
    let high = nn - 1;
    let eps = T::epsilon();
    let zero = T::zero();
    let two = T::lit(2.0);
    let mut exshift = zero;
    let (mut p, mut q, mut r, mut s, mut z) = (zero, zero, zero, zero, zero);
    let (mut t, mut w, mut x, mut y);

    let mut norm = zero;
    for i in 0..nn {
        for j in (i - 1).max(0)..nn {
            norm += h[(i, j)].abs();
        }
    }

    let budget = ITERATIONS_PER_DIM * h.n;
    let mut total_iter = 0usize;
    let mut iter = 0usize;
    while n >= low {
        // Look for a single small subdiagonal element.
        let mut l = n;
        while l > low {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == zero {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            // One root.
            h[(n, n)] += exshift;
            d[n as usize] = h[(n, n)];
            e[n as usize] = zero;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            // Two roots.
            w = h[(n, n - 1)] * h[(n - 1, n)];
            p = (h[(n - 1, n - 1)] - h[(n, n)]) / two;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(n, n)] += exshift;
            h[(n - 1, n - 1)] += exshift;
            x = h[(n, n)];

            if q >= zero {
                z = if p >= zero { p + z } else { p - z };
                d[(n - 1) as usize] = x + z;
                d[n as usize] = d[(n - 1) as usize];
                if z != zero {
                    d[n as usize] = x - w / z;
                }
                e[(n - 1) as usize] = zero;
                e[n as usize] = zero;
                x = h[(n, n - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;

                for j in (n - 1)..nn {
                    z = h[(n - 1, j)];
                    h[(n - 1, j)] = q * z + p * h[(n, j)];
                    h[(n, j)] = q * h[(n, j)] - p * z;
                }
                for i in 0..=n {
                    z = h[(i, n - 1)];
                    h[(i, n - 1)] = q * z + p * h[(i, n)];
                    h[(i, n)] = q * h[(i, n)] - p * z;
                }
                for i in low..=high {
                    z = v[(i, n - 1)];
                    v[(i, n - 1)] = q * z + p * v[(i, n)];
                    v[(i, n)] = q * v[(i, n)] - p * z;
                }
            } else {
                d[(n - 1) as usize] = x + p;
                d[n as usize] = x + p;
                e[(n - 1) as usize] = z;
                e[n as usize] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet; form the shift.
            x = h[(n, n)];
            y = zero;
            w = zero;
            if l < n {
                y = h[(n - 1, n - 1)];
                w = h[(n, n - 1)] * h[(n - 1, n)];
            }

            // Wilkinson's ad hoc exceptional shift.
            if iter == 10 {
                exshift += x;
                for i in low..=n {
                    h[(i, i)] -= x;
                }
                s = h[(n, n - 1)].abs() + h[(n - 1, n - 2)].abs();
                x = T::lit(0.75) * s;
                y = x;
                w = T::lit(-0.4375) * s * s;
            }

            // MATLAB's exceptional shift.
            if iter == 30 {
                s = (y - x) / two;
                s = s * s + w;
                if s > zero {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / two + s);
                    for i in low..=n {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = T::lit(0.964);
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            total_iter += 1;
            if total_iter > budget {
                return Err(Error::NonConvergence {
                    n: h.n,
                    iterations: budget,
                });
            }

            // Look for two consecutive small subdiagonal elements.
            let mut m = n - 2;
            while m >= l {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in (m + 2)..=n {
                h[(i, i - 2)] = zero;
                if i > m + 2 {
                    h[(i, i - 3)] = zero;
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            let mut k = m;
            while k < n {
                let notlast = k != n - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { zero };
                    x = p.abs() + q.abs() + r.abs();
                    if x == zero {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < zero {
                    s = -s;
                }
                if s != zero {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=n.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                    for i in low..=high {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
                k += 1;
            }
        }
    }

    // Back-substitute to find vectors of the upper triangular form.
    if norm == zero {
        return Ok(());
    }

    let mut n = nn - 1;
    while n >= 0 {
        p = d[n as usize];
        q = e[n as usize];

        if q == zero {
            // Real vector.
            let mut l = n;
            h[(n, n)] = T::one();
            let mut i = n - 1;
            while i >= 0 {
                w = h[(i, i)] - p;
                r = zero;
                for j in l..=n {
                    r += h[(i, j)] * h[(j, n)];
                }
                if e[i as usize] < zero {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i as usize] == zero {
                        h[(i, n)] = if w != zero { -r / w } else { -r / (eps * norm) };
                    } else {
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        q = (d[i as usize] - p) * (d[i as usize] - p) + e[i as usize] * e[i as usize];
                        t = (x * s - z * r) / q;
                        h[(i, n)] = t;
                        h[(i + 1, n)] = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    // Overflow control.
                    t = h[(i, n)].abs();
                    if (eps * t) * t > T::one() {
                        for j in i..=n {
                            h[(j, n)] /= t;
                        }
                    }
                }
                i -= 1;
            }
        } else if q < zero {
            // Complex vector; last component imaginary so the block is
            // triangular.
            let mut l = n - 1;
            if h[(n, n - 1)].abs() > h[(n - 1, n)].abs() {
                h[(n - 1, n - 1)] = q / h[(n, n - 1)];
                h[(n - 1, n)] = -(h[(n, n)] - p) / h[(n, n - 1)];
            } else {
                let (cr, ci) = cdiv(zero, -h[(n - 1, n)], h[(n - 1, n - 1)] - p, q);
                h[(n - 1, n - 1)] = cr;
                h[(n - 1, n)] = ci;
            }
            h[(n, n - 1)] = zero;
            h[(n, n)] = T::one();
            let mut i = n - 2;
            while i >= 0 {
                let mut ra = zero;
                let mut sa = zero;
                for j in l..=n {
                    ra += h[(i, j)] * h[(j, n - 1)];
                    sa += h[(i, j)] * h[(j, n)];
                }
                w = h[(i, i)] - p;

                if e[i as usize] < zero {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i as usize] == zero {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h[(i, n - 1)] = cr;
                        h[(i, n)] = ci;
                    } else {
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        let di = d[i as usize] - p;
                        let mut vr = di * di + e[i as usize] * e[i as usize] - q * q;
                        let vi = di * two * q;
                        if vr == zero && vi == zero {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) = cdiv(
                            x * r - z * ra + q * sa,
                            x * s - z * sa - q * ra,
                            vr,
                            vi,
                        );
                        h[(i, n - 1)] = cr;
                        h[(i, n)] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h[(i + 1, n - 1)] = (-ra - w * h[(i, n - 1)] + q * h[(i, n)]) / x;
                            h[(i + 1, n)] = (-sa - w * h[(i, n)] - q * h[(i, n - 1)]) / x;
                        } else {
                            let (cr, ci) = cdiv(-r - y * h[(i, n - 1)], -s - y * h[(i, n)], z, q);
                            h[(i + 1, n - 1)] = cr;
                            h[(i + 1, n)] = ci;
                        }
                    }
                    // Overflow control.
                    t = h[(i, n - 1)].abs().max(h[(i, n)].abs());
                    if (eps * t) * t > T::one() {
                        for j in i..=n {
                            h[(j, n - 1)] /= t;
                            h[(j, n)] /= t;
                        }
                    }
                }
                i -= 1;
            }
        }
        n -= 1;
    }

    // Back transformation to eigenvectors of the original matrix.
    let mut j = nn - 1;
    while j >= low {
        for i in low..=high {
            z = zero;
            for k in low..=j.min(high) {
                z += v[(i, k)] * h[(k, j)];
            }
            v[(i, j)] = z;
        }
        j -= 1;
    }
    Ok(())
}

/// Inverse of a complex matrix by LU with partial pivoting. Fails when a
/// pivot falls below `rel_tol` times the largest entry.
pub fn complex_inverse<T: Real>(a: &Array2<Complex<T>>, rel_tol: T) -> Option<Array2<Complex<T>>> {
    let n = a.nrows();
    let scale = a.iter().map(|z| z.norm()).fold(T::zero(), T::max);
    if scale == T::zero() {
        return None;
    }
    let mut lu = a.clone();
    let mut inv = Array2::<Complex<T>>::zeros((n, n));
    for i in 0..n {
        inv[[i, i]] = Complex::new(T::one(), T::zero());
    }
    for k in 0..n {
        let (piv, mag) = (k..n)
            .map(|i| (i, lu[[i, k]].norm()))
            .fold((k, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if mag <= rel_tol * scale {
            return None;
        }
        if piv != k {
            for j in 0..n {
                lu.swap([k, j], [piv, j]);
                inv.swap([k, j], [piv, j]);
            }
        }
        let pivot = lu[[k, k]];
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = lu[[i, k]] / pivot;
            if f == Complex::new(T::zero(), T::zero()) {
                continue;
            }
            for j in 0..n {
                let (ukj, ikj) = (lu[[k, j]], inv[[k, j]]);
                lu[[i, j]] -= f * ukj;
                inv[[i, j]] -= f * ikj;
            }
        }
    }
    for i in 0..n {
        let pivot = lu[[i, i]];
        for j in 0..n {
            inv[[i, j]] /= pivot;
        }
    }
    Some(inv)
}
