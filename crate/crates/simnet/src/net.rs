//! Parameters, forward pass and reverse-mode gradients of the residual
//! similarity network.
//!
//! Layout: `unsqueeze → conv3×3 + BN + ReLU → 5 stages × 2 basic blocks →
//! global average pool → affine → sigmoid`. A basic block is
//! `conv3×3(stride) + BN + ReLU → conv3×3 + BN`, added to the identity or to a
//! `conv1×1(stride) + BN` projection when the shape changes, then ReLU.

use ndarray::{Array1, Array2, Axis};

use attnprint_core::rng::{purpose, Stream};

use crate::arch::{Architecture, BLOCKS_PER_STAGE, STAGE_STRIDES};
use crate::error::{Error, Result};
use crate::layers::{relu, relu_backward, Act, BatchNorm, BatchStats, BnCache, Conv, ConvCache, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub conv: Conv,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub shortcut: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimNetParams {
    pub arch: Architecture,
    pub conv1: Conv,
    pub bn1: BatchNorm,
    /// `stages[s][j]` is block `j` of stage `s`.
    pub stages: Vec<Vec<ResidualBlock>>,
    pub fc_weight: Array1<f64>,
    pub fc_bias: f64,
}

/// Uniform on `[-1/√fan_in, 1/√fan_in]`.
fn fan_in_uniform(rows: usize, fan_in: usize, stream: &mut Stream) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, fan_in), || (2.0 * stream.uniform() - 1.0) * bound)
}

fn conv(c_in: usize, c_out: usize, kernel: usize, stride: usize, stream: &mut Stream) -> Conv {
    Conv {
        weight: fan_in_uniform(c_out, c_in * kernel * kernel, stream),
        kernel,
        stride,
        padding: kernel / 2,
    }
}

impl SimNetParams {
    /// Convolution and affine weights are uniform with bound `1/√fan_in`,
    /// drawn in traversal order (stem, then each block's conv1, conv2,
    /// projection, then fc); BN scales are one, every offset is zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut s = Stream::keyed(seed, purpose::SIMNET_INIT);
        let w = arch.widths;
        let conv1 = conv(1, w[0], 3, 1, &mut s);
        let mut stages = Vec::with_capacity(STAGE_STRIDES.len());
        let mut c_in = w[0];
        for (i, &stride) in STAGE_STRIDES.iter().enumerate() {
            let c_out = w[i + 1];
            let mut blocks = Vec::with_capacity(BLOCKS_PER_STAGE);
            for j in 0..BLOCKS_PER_STAGE {
                let (bi, bs) = if j == 0 { (c_in, stride) } else { (c_out, 1) };
                let conv1 = conv(bi, c_out, 3, bs, &mut s);
                let conv2 = conv(c_out, c_out, 3, 1, &mut s);
                let shortcut = (bs != 1 || bi != c_out).then(|| Projection {
                    conv: conv(bi, c_out, 1, bs, &mut s),
                    bn: BatchNorm::new(c_out),
                });
                blocks.push(ResidualBlock {
                    conv1,
                    bn1: BatchNorm::new(c_out),
                    conv2,
                    bn2: BatchNorm::new(c_out),
                    shortcut,
                });
            }
            stages.push(blocks);
            c_in = c_out;
        }
        let fc_weight = fan_in_uniform(1, c_in, &mut s).remove_axis(Axis(0));
        Ok(SimNetParams {
            arch,
            conv1,
            bn1: BatchNorm::new(w[0]),
            stages,
            fc_weight,
            fc_bias: 0.0,
        })
    }

    /// A copy with every tensor zeroed; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.learnable_mut() {
            t.fill(0.0);
        }
        for bn in z.batch_norms_mut() {
            bn.running_mean.fill(0.0);
            bn.running_var.fill(0.0);
        }
        z
    }

    /// Batch norms in forward order: stem, then per block bn1, bn2,
    /// projection.
    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut out = vec![&self.bn1];
        for block in self.stages.iter().flatten() {
            out.push(&block.bn1);
            out.push(&block.bn2);
            if let Some(p) = &block.shortcut {
                out.push(&p.bn);
            }
        }
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut out = vec![&mut self.bn1];
        for block in self.stages.iter_mut().flatten() {
            out.push(&mut block.bn1);
            out.push(&mut block.bn2);
            if let Some(p) = &mut block.shortcut {
                out.push(&mut p.bn);
            }
        }
        out
    }

    /// Trainable tensors as flat slices, in a fixed order shared by
    /// [`SimNetParams::learnable_mut`].
    pub fn learnable(&self) -> Vec<&[f64]> {
        fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = vec![slice(&self.conv1.weight), slice(&self.bn1.gamma), slice(&self.bn1.beta)];
        for block in self.stages.iter().flatten() {
            out.extend([
                slice(&block.conv1.weight),
                slice(&block.bn1.gamma),
                slice(&block.bn1.beta),
                slice(&block.conv2.weight),
                slice(&block.bn2.gamma),
                slice(&block.bn2.beta),
            ]);
            if let Some(p) = &block.shortcut {
                out.extend([slice(&p.conv.weight), slice(&p.bn.gamma), slice(&p.bn.beta)]);
            }
        }
        out.push(slice(&self.fc_weight));
        out.push(std::slice::from_ref(&self.fc_bias));
        out
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        fn slice<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![
            slice(&mut self.conv1.weight),
            slice(&mut self.bn1.gamma),
            slice(&mut self.bn1.beta),
        ];
        for block in self.stages.iter_mut().flatten() {
            out.extend([
                slice(&mut block.conv1.weight),
                slice(&mut block.bn1.gamma),
                slice(&mut block.bn1.beta),
                slice(&mut block.conv2.weight),
                slice(&mut block.bn2.gamma),
                slice(&mut block.bn2.beta),
            ]);
            if let Some(p) = &mut block.shortcut {
                out.extend([slice(&mut p.conv.weight), slice(&mut p.bn.gamma), slice(&mut p.bn.beta)]);
            }
        }
        out.push(slice(&mut self.fc_weight));
        out.push(std::slice::from_mut(&mut self.fc_bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.learnable().iter().map(|t| t.len()).sum()
    }

    /// Finite parameters and nonnegative running variances.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !self.learnable().iter().all(|t| t.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidArgument("non-finite network parameter".into()));
        }
        for bn in self.batch_norms() {
            let ok = bn.running_mean.iter().all(|x| x.is_finite())
                && bn.running_var.iter().all(|&x| x.is_finite() && x >= 0.0);
            if !ok {
                return Err(Error::InvalidArgument("invalid batch-norm running statistics".into()));
            }
        }
        Ok(())
    }

    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        for (bn, s) in self.batch_norms_mut().into_iter().zip(stats) {
            bn.update_running(s);
        }
    }

    /// Stacks inputs into a one-channel activation after checking shapes.
    fn input_act(&self, inputs: &[Array2<f64>]) -> Result<Act> {
        let expected = self.arch.input_shape();
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut data = Vec::with_capacity(inputs.len() * expected.0 * expected.1);
        for x in inputs {
            if x.dim() != expected {
                return Err(Error::Shape {
                    expected,
                    found: x.dim(),
                });
            }
            data.extend(x.iter().copied());
        }
        Ok(Act {
            data: Array2::from_shape_vec((1, data.len()), data).expect("sized above"),
            batch: inputs.len(),
            height: expected.0,
            width: expected.1,
        })
    }
}

struct BlockCache {
    conv1: ConvCache,
    bn1: BnCache,
    hidden: Act,
    conv2: ConvCache,
    bn2: BnCache,
    shortcut: Option<(ConvCache, BnCache)>,
    out: Act,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    stem_conv: ConvCache,
    stem_bn: BnCache,
    stem_out: Act,
    blocks: Vec<BlockCache>,
    pooled: Array2<f64>,
    spatial: usize,
    final_shape: (usize, usize, usize),
    pub logits: Array1<f64>,
    pub batch_stats: Vec<BatchStats>,
}

impl ResidualBlock {
    fn forward(&self, x: &Act, mode: Mode, stats: &mut Vec<BatchStats>) -> (Act, BlockCache) {
        let (c1, conv1) = self.conv1.forward(x);
        let (b1, bn1, s1) = self.bn1.forward(&c1, mode);
        let hidden = relu(&b1);
        let (c2, conv2) = self.conv2.forward(&hidden);
        let (b2, bn2, s2) = self.bn2.forward(&c2, mode);
        stats.extend(s1);
        stats.extend(s2);
        let (skip, shortcut) = match &self.shortcut {
            Some(p) => {
                let (c, cc) = p.conv.forward(x);
                let (b, bc, s) = p.bn.forward(&c, mode);
                stats.extend(s);
                (b.data, Some((cc, bc)))
            }
            None => (x.data.clone(), None),
        };
        let out = relu(&b2.with_data(b2.data.clone() + skip));
        let cache = BlockCache {
            conv1,
            bn1,
            hidden,
            conv2,
            bn2,
            shortcut,
            out: out.clone(),
        };
        (out, cache)
    }

    fn backward(&self, cache: &BlockCache, dout: &Array2<f64>, grad: &mut ResidualBlock) -> Array2<f64> {
        let d = relu_backward(&cache.out, dout);
        let (dg2, db2, dc2) = self.bn2.backward(&cache.bn2, &d);
        let (dw2, dhidden) = self.conv2.backward(&cache.conv2, &dc2);
        let dhidden = relu_backward(&cache.hidden, &dhidden);
        let (dg1, db1, dc1) = self.bn1.backward(&cache.bn1, &dhidden);
        let (dw1, mut dx) = self.conv1.backward(&cache.conv1, &dc1);
        grad.conv2.weight += &dw2;
        grad.bn2.gamma += &dg2;
        grad.bn2.beta += &db2;
        grad.conv1.weight += &dw1;
        grad.bn1.gamma += &dg1;
        grad.bn1.beta += &db1;
        match (&self.shortcut, &cache.shortcut, &mut grad.shortcut) {
            (Some(p), Some((cc, bc)), Some(gp)) => {
                let (dg, db, dc) = p.bn.backward(bc, &d);
                let (dw, dskip) = p.conv.backward(cc, &dc);
                gp.conv.weight += &dw;
                gp.bn.gamma += &dg;
                gp.bn.beta += &db;
                dx += &dskip;
            }
            _ => dx += &d,
        }
        dx
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SimNetParams {
    /// Logits plus the cache for [`SimNetParams::backward`]. Running
    /// statistics are not touched; train-mode batch statistics are returned in
    /// the cache for the caller to apply.
    pub fn forward_cached(&self, inputs: &[Array2<f64>], mode: Mode) -> Result<ForwardCache> {
        let x = self.input_act(inputs)?;
        let mut stats = Vec::new();
        let (c, stem_conv) = self.conv1.forward(&x);
        let (b, stem_bn, s) = self.bn1.forward(&c, mode);
        stats.extend(s);
        let stem_out = relu(&b);
        let mut act = stem_out.clone();
        let mut blocks = Vec::new();
        for block in self.stages.iter().flatten() {
            let (next, cache) = block.forward(&act, mode, &mut stats);
            blocks.push(cache);
            act = next;
        }
        let spatial = act.height * act.width;
        let pooled = act
            .data
            .to_shape((act.channels(), act.batch, spatial))
            .expect("contiguous")
            .mean_axis(Axis(2))
            .expect("nonempty");
        let logits = self.fc_weight.dot(&pooled) + self.fc_bias;
        Ok(ForwardCache {
            stem_conv,
            stem_bn,
            stem_out,
            blocks,
            pooled,
            spatial,
            final_shape: (act.channels(), act.height, act.width),
            logits,
            batch_stats: stats,
        })
    }

    /// Gradients of `Σ_b dlogits[b]·logit_b` with respect to every trainable
    /// tensor and to each input.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array1<f64>) -> (SimNetParams, Vec<Array2<f64>>) {
        let mut grad = self.zeros_like();
        grad.fc_weight = cache.pooled.dot(dlogits);
        grad.fc_bias = dlogits.sum();
        let (channels, _, _) = cache.final_shape;
        let batch = dlogits.len();
        let dpooled = self.fc_weight.view().insert_axis(Axis(1)).dot(&dlogits.view().insert_axis(Axis(0)));
        let mut d = Array2::zeros((channels, batch * cache.spatial));
        for ch in 0..channels {
            for b in 0..batch {
                let g = dpooled[[ch, b]] / cache.spatial as f64;
                for i in 0..cache.spatial {
                    d[[ch, b * cache.spatial + i]] = g;
                }
            }
        }
        let blocks: Vec<&ResidualBlock> = self.stages.iter().flatten().collect();
        let mut grad_blocks: Vec<&mut ResidualBlock> = grad.stages.iter_mut().flatten().collect();
        for ((block, bc), gb) in blocks.iter().zip(&cache.blocks).zip(grad_blocks.iter_mut()).rev() {
            d = block.backward(bc, &d, gb);
        }
        let d = relu_backward(&cache.stem_out, &d);
        let (dg, db, dc) = self.bn1.backward(&cache.stem_bn, &d);
        let (dw, dx) = self.conv1.backward(&cache.stem_conv, &dc);
        grad.conv1.weight = dw;
        grad.bn1.gamma = dg;
        grad.bn1.beta = db;

        let (rows, cols) = self.arch.input_shape();
        let per = rows * cols;
        let dx = dx.as_slice().expect("standard layout");
        let inputs = (0..batch)
            .map(|b| Array2::from_shape_vec((rows, cols), dx[b * per..(b + 1) * per].to_vec()).expect("sized"))
            .collect();
        (grad, inputs)
    }

    /// Scores in `[0, 1]`, one per input; pure in both modes.
    pub fn forward(&self, inputs: &[Array2<f64>], mode: Mode) -> Result<Vec<f64>> {
        Ok(self.forward_cached(inputs, mode)?.logits.iter().map(|&z| sigmoid(z)).collect())
    }

    /// Eval-mode score of one fingerprint matrix.
    pub fn score(&self, input: &Array2<f64>) -> Result<f64> {
        Ok(self.forward(std::slice::from_ref(input), Mode::Eval)?[0])
    }
}

pub const SCORE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy against the smoothed target `y(1−η) + (1−y)η`, with
/// the score clamped to `[1e-12, 1 − 1e-12]`.
pub fn smoothed_bce(score: f64, label: u8, eta: f64) -> f64 {
    let y = smoothed_target(label, eta);
    let s = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

pub fn smoothed_target(label: u8, eta: f64) -> f64 {
    let y = if label == 1 { 1.0 } else { 0.0 };
    y * (1.0 - eta) + (1.0 - y) * eta
}

/// Mean smoothed BCE over a batch with its gradients.
pub struct LossGradients {
    pub loss: f64,
    pub scores: Vec<f64>,
    pub params: SimNetParams,
    pub inputs: Vec<Array2<f64>>,
    pub batch_stats: Vec<BatchStats>,
}

impl SimNetParams {
    pub fn loss_and_gradients(
        &self,
        inputs: &[Array2<f64>],
        labels: &[u8],
        eta: f64,
        mode: Mode,
    ) -> Result<LossGradients> {
        if inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let cache = self.forward_cached(inputs, mode)?;
        let n = inputs.len() as f64;
        let scores: Vec<f64> = cache.logits.iter().map(|&z| sigmoid(z)).collect();
        let loss = scores.iter().zip(labels).map(|(&s, &y)| smoothed_bce(s, y, eta)).sum::<f64>() / n;
        // d/dz of the smoothed BCE through the sigmoid is s − y'.
        let dlogits: Array1<f64> = scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| (s - smoothed_target(y, eta)) / n)
            .collect();
        let (params, input_grads) = self.backward(&cache, &dlogits);
        Ok(LossGradients {
            loss,
            scores,
            params,
            inputs: input_grads,
            batch_stats: cache.batch_stats,
        })
    }
}
