//! Convolution, batch normalization and ReLU over channel-major activations.
//!
//! An activation is a `(C, B·H·W)` matrix; column `b·H·W + y·W + x` holds
//! sample `b` at spatial position `(y, x)`. Convolution lowers to one matrix
//! product per call via im2col, with patch rows ordered `(c_in, ky, kx)`.

use ndarray::{Array1, Array2, Axis};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub data: Array2<f64>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Act {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn with_data(&self, data: Array2<f64>) -> Act {
        Act { data, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization.
    Train,
    /// Running statistics; deterministic and batch-size independent.
    Eval,
}

/// Square convolution without bias. `weight` is `(C_out, C_in·k·k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Array2<f64>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    input: (usize, usize, usize, usize),
}

impl Conv {
    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, x: &Act) -> (Act, ConvCache) {
        let (ho, wo) = (self.out_size(x.height), self.out_size(x.width));
        let cols = self.im2col(x, ho, wo);
        let out = Act {
            data: self.weight.dot(&cols),
            batch: x.batch,
            height: ho,
            width: wo,
        };
        let cache = ConvCache {
            cols,
            input: (x.channels(), x.batch, x.height, x.width),
        };
        (out, cache)
    }

    /// Returns (∂L/∂weight, ∂L/∂input).
    pub fn backward(&self, cache: &ConvCache, dy: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let dw = dy.dot(&cache.cols.t());
        let dcols = self.weight.t().dot(dy);
        (dw, self.col2im(&dcols, cache.input))
    }

    fn im2col(&self, x: &Act, ho: usize, wo: usize) -> Array2<f64> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (c, b, h, w) = (x.channels(), x.batch, x.height, x.width);
        let mut cols = Array2::zeros((c * k * k, b * ho * wo));
        for ci in 0..c {
            let src = x.data.row(ci);
            let src = src.as_slice().expect("standard layout");
            for ky in 0..k {
                for kx in 0..k {
                    let mut row = cols.row_mut((ci * k + ky) * k + kx);
                    let dst = row.as_slice_mut().expect("standard layout");
                    for bi in 0..b {
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = bi * h * w + iy as usize * w;
                            let dst_row = (bi * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[dst_row + ox] = src[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, (c, b, h, w): (usize, usize, usize, usize)) -> Array2<f64> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let mut dx = Array2::zeros((c, b * h * w));
        for ci in 0..c {
            let mut dst = dx.row_mut(ci);
            let dst = dst.as_slice_mut().expect("standard layout");
            for ky in 0..k {
                for kx in 0..k {
                    let row = dcols.row((ci * k + ky) * k + kx);
                    let src = row.as_slice().expect("standard layout");
                    for bi in 0..b {
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = bi * h * w + iy as usize * w;
                            let src_row = (bi * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[dst_row + ix as usize] += src[src_row + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Per-channel batch mean and biased variance over `count` values.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn forward(&self, x: &Act, mode: Mode) -> (Act, BnCache, Option<BatchStats>) {
        let n = x.data.ncols();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mean = x.data.sum_axis(Axis(1)) / n as f64;
                let centered = &x.data - &mean.view().insert_axis(Axis(1));
                let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n as f64;
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: n,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (&x.data - &mean.view().insert_axis(Axis(1))) * inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma.view().insert_axis(Axis(1)) + self.beta.view().insert_axis(Axis(1));
        (x.with_data(y), BnCache { xhat, inv_std, mode }, stats)
    }

    /// Returns (∂L/∂γ, ∂L/∂β, ∂L/∂x).
    pub fn backward(&self, cache: &BnCache, dy: &Array2<f64>) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(1));
        let dbeta = dy.sum_axis(Axis(1));
        let scale = (&self.gamma * &cache.inv_std).insert_axis(Axis(1));
        let dx = match cache.mode {
            Mode::Eval => dy * &scale,
            Mode::Train => {
                // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                let n = dy.ncols() as f64;
                let mean_dy = (&dbeta / n).insert_axis(Axis(1));
                let mean_dy_xhat = (&dgamma / n).insert_axis(Axis(1));
                (dy - &mean_dy - &cache.xhat * &mean_dy_xhat) * &scale
            }
        };
        (dgamma, dbeta, dx)
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &stats.mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &stats.var * (BN_MOMENTUM * unbias);
    }
}

pub fn relu(x: &Act) -> Act {
    x.with_data(x.data.mapv(|v| v.max(0.0)))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Act, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(&out.data, |d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn im2col_identity_kernel() {
        let conv = Conv {
            weight: array![[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]],
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let x = Act {
            data: array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]],
            batch: 1,
            height: 2,
            width: 3,
        };
        let (y, _) = conv.forward(&x);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn stride_two_halves_rounding_up() {
        let conv = Conv {
            weight: Array2::ones((1, 9)),
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x = Act {
            data: Array2::ones((1, 2 * 5 * 3)),
            batch: 2,
            height: 5,
            width: 3,
        };
        let (y, _) = conv.forward(&x);
        assert_eq!((y.height, y.width), (3, 2));
        // top-left output sees the 2×2 in-bounds corner
        assert_eq!(y.data[[0, 0]], 4.0);
    }

    #[test]
    fn running_update_uses_unbiased_variance() {
        let mut bn = BatchNorm::new(1);
        bn.update_running(&BatchStats {
            mean: array![2.0],
            var: array![1.0],
            count: 4,
        });
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-15);
    }
}
