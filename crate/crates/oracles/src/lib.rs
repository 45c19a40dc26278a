//! Deliberately naive reference computations on `Vec<Vec<f64>>`.
//!
//! Nothing here shares code with the main crates: loops are written out,
//! no linear-algebra library is used. Tests compare the optimized paths
//! against these.

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let mut out = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            out[j][i] = x;
        }
    }
    out
}

/// Eigenvalues of the symmetric 2×2 `[[a, b], [b, c]]`, descending.
pub fn sym2_eigenvalues(a: f64, b: f64, c: f64) -> [f64; 2] {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    [mean + rad, mean - rad]
}

/// Singular values of a 2×2 matrix through the eigenvalues of `MᵀM`.
pub fn singular_values_2x2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let c = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let [l1, l2] = sym2_eigenvalues(a, b, c);
    [l1.max(0.0).sqrt(), l2.max(0.0).sqrt()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C64 {
    pub re: f64,
    pub im: f64,
}

impl C64 {
    pub fn new(re: f64, im: f64) -> Self {
        C64 { re, im }
    }
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: C64) -> C64 {
        C64::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    fn div(self, o: C64) -> C64 {
        let d = o.re * o.re + o.im * o.im;
        C64::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Coefficients `c[0..=n]` of `det(λI − A) = Σ c_k λ^(n−k)` (so `c[0] = 1`)
/// by the Faddeev–LeVerrier recursion.
pub fn characteristic_polynomial(a: &Mat) -> Vec<f64> {
    let n = a.len();
    let mut c = vec![1.0];
    let mut m = zeros(n, n);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = matmul(a, &m);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] += c[k - 1];
        }
        m = next;
        let am = matmul(a, &m);
        let trace: f64 = (0..n).map(|i| am[i][i]).sum();
        c.push(-trace / k as f64);
    }
    c
}

/// All complex roots of the monic polynomial `Σ c_k x^(n−k)` by
/// Durand–Kerner iteration.
pub fn polynomial_roots(c: &[f64]) -> Vec<C64> {
    let n = c.len() - 1;
    let eval = |x: C64| {
        let mut acc = C64::new(1.0, 0.0);
        for &ck in &c[1..] {
            acc = acc.mul(x).add(C64::new(ck, 0.0));
        }
        acc
    };
    let bound = 1.0 + c[1..].iter().map(|x| x.abs()).fold(0.0, f64::max);
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..n)
        .map(|k| {
            let mut z = C64::new(bound, 0.0);
            for _ in 0..k {
                z = z.mul(seed);
            }
            z
        })
        .collect();
    for _ in 0..5000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom = denom.mul(roots[i].sub(roots[j]));
                }
            }
            let step = eval(roots[i]).div(denom);
            roots[i] = roots[i].sub(step);
            delta = delta.max(step.abs());
        }
        if delta < 1e-15 * bound {
            break;
        }
    }
    roots
}

/// `|λ|` of every eigenvalue of a small matrix, descending, via the
/// characteristic polynomial.
pub fn eigen_magnitudes_via_charpoly(a: &Mat) -> Vec<f64> {
    let mut m: Vec<f64> = polynomial_roots(&characteristic_polynomial(a)).iter().map(|z| z.abs()).collect();
    m.sort_by(|x, y| y.partial_cmp(x).unwrap());
    m
}

/// `softmax((H W_Q)(H W_K)ᵀ / √d) (H W_V) W_O`, one loop at a time.
pub fn attention(h: &Mat, w_q: &Mat, w_k: &Mat, w_v: &Mat, w_o: &Mat) -> Mat {
    let q = matmul(h, w_q);
    let k = matmul(h, w_k);
    let v = matmul(h, w_v);
    let d = w_q[0].len() as f64;
    let n = h.len();
    let mut a = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..q[0].len() {
                s += q[i][t] * k[j][t];
            }
            a[i][j] = s / d.sqrt();
        }
        let max = a[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            a[i][j] = (a[i][j] - max).exp();
            total += a[i][j];
        }
        for j in 0..n {
            a[i][j] /= total;
        }
    }
    matmul(&matmul(&a, &v), w_o)
}

/// Square convolution kernel `[out][in][ky][kx]`, zero padding `k/2`.
pub struct ConvSpec {
    pub weight: Vec<Vec<Mat>>,
    pub stride: usize,
}

pub struct BnSpec {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct BlockSpec {
    pub conv1: ConvSpec,
    pub bn1: BnSpec,
    pub conv2: ConvSpec,
    pub bn2: BnSpec,
    pub shortcut: Option<(ConvSpec, BnSpec)>,
}

pub struct NetSpec {
    pub conv1: ConvSpec,
    pub bn1: BnSpec,
    pub blocks: Vec<BlockSpec>,
    pub fc_weight: Vec<f64>,
    pub fc_bias: f64,
}

fn conv2d(x: &[Mat], c: &ConvSpec) -> Vec<Mat> {
    let k = c.weight[0][0].len();
    let pad = (k / 2) as isize;
    let (h, w) = (x[0].len(), x[0][0].len());
    let ho = (h + 2 * (k / 2) - k) / c.stride + 1;
    let wo = (w + 2 * (k / 2) - k) / c.stride + 1;
    let mut out = Vec::new();
    for kernel in &c.weight {
        let mut y = zeros(ho, wo);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for (ci, plane) in kernel.iter().enumerate() {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * c.stride + ky) as isize - pad;
                            let ix = (ox * c.stride + kx) as isize - pad;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += plane[ky][kx] * x[ci][iy as usize][ix as usize];
                            }
                        }
                    }
                }
                y[oy][ox] = acc;
            }
        }
        out.push(y);
    }
    out
}

fn batch_norm(x: &mut [Mat], bn: &BnSpec) {
    for (c, plane) in x.iter_mut().enumerate() {
        let scale = bn.gamma[c] / (bn.var[c] + 1e-5).sqrt();
        for v in plane.iter_mut().flatten() {
            *v = (*v - bn.mean[c]) * scale + bn.beta[c];
        }
    }
}

fn relu(x: &mut [Mat]) {
    for v in x.iter_mut().flatten().flatten() {
        *v = v.max(0.0);
    }
}

/// Eval-mode score of the residual similarity network, computed by direct
/// convolution over nested vectors.
pub fn simnet_eval(net: &NetSpec, input: &Mat) -> f64 {
    let mut x = conv2d(std::slice::from_ref(input), &net.conv1);
    batch_norm(&mut x, &net.bn1);
    relu(&mut x);
    for b in &net.blocks {
        let mut y = conv2d(&x, &b.conv1);
        batch_norm(&mut y, &b.bn1);
        relu(&mut y);
        let mut y = conv2d(&y, &b.conv2);
        batch_norm(&mut y, &b.bn2);
        let skip = match &b.shortcut {
            Some((c, bn)) => {
                let mut s = conv2d(&x, c);
                batch_norm(&mut s, bn);
                s
            }
            None => x.clone(),
        };
        for (yc, sc) in y.iter_mut().zip(&skip) {
            for (yr, sr) in yc.iter_mut().zip(sc) {
                for (v, s) in yr.iter_mut().zip(sr) {
                    *v += s;
                }
            }
        }
        relu(&mut y);
        x = y;
    }
    let mut z = net.fc_bias;
    for (c, plane) in x.iter().enumerate() {
        let n = (plane.len() * plane[0].len()) as f64;
        let mean: f64 = plane.iter().flatten().sum::<f64>() / n;
        z += net.fc_weight[c] * mean;
    }
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charpoly_of_known_matrix() {
        // [[2,1],[0,3]]: (λ-2)(λ-3) = λ² - 5λ + 6
        let c = characteristic_polynomial(&vec![vec![2.0, 1.0], vec![0.0, 3.0]]);
        assert_eq!(c, vec![1.0, -5.0, 6.0]);
    }

    #[test]
    fn roots_of_rotation() {
        let m = eigen_magnitudes_via_charpoly(&vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_2x2() {
        let s = singular_values_2x2([[3.0, 0.0], [4.0, 5.0]]);
        assert!((s[0] - 45f64.sqrt()).abs() < 1e-12);
        assert!((s[1] - 5f64.sqrt()).abs() < 1e-12);
    }
}
