//! Gradient-descent fine-tuning that pushes a model's fingerprint away from
//! a target while an optional data term keeps attention outputs in place.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use attnprint_core::fingerprint::{extract_fingerprint, fingerprint_distance};
use attnprint_core::linalg::gaussian;
use attnprint_core::model::{broadcast_gqa, AttentionWeights, ModelWeights};
use attnprint_core::rng::{purpose, Stream};
use attnprint_core::transforms::{attention_forward, softmax_rows};
use attnprint_core::Fingerprint;

use crate::error::{Error, Result};
use crate::gradient::{attack_loss, fingerprint_gradient, GradientMethod};

/// Which attention layers the attack may modify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScope {
    /// Only the layers the fingerprint reads.
    #[default]
    FingerprintLayers,
    /// Every layer; deeper layers only receive the data-loss gradient.
    AllLayers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneAttackConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Weight of the attack loss.
    pub l1: f64,
    /// Weight of the data loss.
    pub l2: f64,
    pub use_data_loss: bool,
    pub seed: u64,
    pub scope: UpdateScope,
    /// Probe sequences per layer for the data loss.
    pub probe_count: usize,
    pub probe_length: usize,
}

impl Default for FinetuneAttackConfig {
    fn default() -> Self {
        FinetuneAttackConfig {
            steps: 100,
            learning_rate: 5e-3,
            epsilon: 1e-9,
            l1: 0.1,
            l2: 1.0,
            use_data_loss: true,
            seed: 0,
            scope: UpdateScope::default(),
            probe_count: 4,
            probe_length: 8,
        }
    }
}

impl FinetuneAttackConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("finetune config: {what}")));
        if !nonneg(self.learning_rate) {
            return bad("learning_rate must be nonnegative");
        }
        if !positive(self.epsilon) {
            return bad("epsilon must be positive");
        }
        if !nonneg(self.l1) || !nonneg(self.l2) {
            return bad("loss weights must be nonnegative");
        }
        if self.use_data_loss && (self.probe_count == 0 || self.probe_length == 0) {
            return bad("data loss needs at least one probe of positive length");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub distance: f64,
    pub attack_loss: f64,
    /// Zero when the data loss is disabled.
    pub data_loss: f64,
}

/// Fixed probe inputs and the unattacked outputs they must reproduce.
struct DataTerm {
    /// Per layer: (probe, reference output) pairs.
    probes: Vec<Vec<(Array2<f64>, Array2<f64>)>>,
}

impl DataTerm {
    fn new(reference: &ModelWeights<f64>, layers: usize, cfg: &FinetuneAttackConfig) -> Result<Self> {
        let root = Stream::keyed(cfg.seed, purpose::PROBES);
        let probes = (0..layers)
            .map(|l| {
                let mut stream = root.fork(l as u64);
                (0..cfg.probe_count)
                    .map(|_| {
                        let x: Array2<f64> = gaussian(cfg.probe_length, reference.d_model, 1.0, &mut stream);
                        let y = attention_forward(&x.view(), &reference.layers[l])?;
                        Ok((x, y))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DataTerm { probes })
    }

    /// Mean squared output error over every probe and layer, with its
    /// gradient per layer (in the broadcast head layout).
    fn loss_and_gradient(&self, wide: &ModelWeights<f64>) -> (f64, Vec<AttentionWeights<f64>>) {
        let total: usize = self.probes.iter().flatten().map(|(_, y)| y.len()).sum();
        let scale = 1.0 / total as f64;
        let mut loss = 0.0;
        let grads = self
            .probes
            .iter()
            .enumerate()
            .map(|(l, probes)| {
                let layer = &wide.layers[l];
                let mut acc = layer.zeros_like();
                for (x, y) in probes {
                    let pass = AttentionPass::forward(&x.view(), layer);
                    let diff = &pass.out - y;
                    loss += scale * diff.mapv(|v| v * v).sum();
                    let g = pass.backward(&x.view(), layer, &(diff * (2.0 * scale)));
                    for (a, b) in acc.matrices_mut().into_iter().zip(g.matrices()) {
                        *a += b;
                    }
                }
                acc
            })
            .collect();
        (loss, grads)
    }
}

/// Intermediates of [`attention_forward`] needed for its backward pass.
struct AttentionPass {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    z: Array2<f64>,
    out: Array2<f64>,
    scale: f64,
}

impl AttentionPass {
    fn forward(x: &ArrayView2<'_, f64>, layer: &AttentionWeights<f64>) -> Self {
        let q = x.dot(&layer.w_q);
        let k = x.dot(&layer.w_k);
        let v = x.dot(&layer.w_v);
        let scale = 1.0 / (layer.w_q.ncols() as f64).sqrt();
        let mut attn = q.dot(&k.t()) * scale;
        softmax_rows(&mut attn);
        let z = attn.dot(&v);
        let out = z.dot(&layer.w_o);
        AttentionPass { q, k, v, attn, z, out, scale }
    }

    fn backward(&self, x: &ArrayView2<'_, f64>, layer: &AttentionWeights<f64>, d_out: &Array2<f64>) -> AttentionWeights<f64> {
        let d_z = d_out.dot(&layer.w_o.t());
        let d_attn = d_z.dot(&self.v.t());
        let d_v = self.attn.t().dot(&d_z);
        // softmax: dS = A ⊙ (dA − rowsum(dA ⊙ A))
        let row_sums = (&d_attn * &self.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_s = &self.attn * &(&d_attn - &row_sums);
        let d_q = d_s.dot(&self.k) * self.scale;
        let d_k = d_s.t().dot(&self.q) * self.scale;
        AttentionWeights {
            w_q: x.t().dot(&d_q),
            w_k: x.t().dot(&d_k),
            w_v: x.t().dot(&d_v),
            w_o: self.z.t().dot(d_out),
        }
    }
}

fn fold_heads(grad: AttentionWeights<f64>, model: &ModelWeights<f64>) -> AttentionWeights<f64> {
    if !model.is_gqa() {
        return grad;
    }
    crate::gradient::fold_gqa(grad, model)
}

/// Runs `cfg.steps` steps of `W ← W − lr·(l1·∇L_attack + l2·∇L_data)`.
///
/// The trajectory holds one point per step, measured after the update. The
/// data loss regresses each updated layer's attention output on fixed
/// Gaussian probes against the unattacked model's output.
pub fn finetune_attack(
    model: &ModelWeights<f64>,
    f_t: &Fingerprint,
    cfg: &FinetuneAttackConfig,
) -> Result<(ModelWeights<f64>, Vec<TrajectoryPoint>)> {
    cfg.validate()?;
    model.validate()?;
    let (n_f, h) = (f_t.n_layers_used, f_t.top_k);
    if n_f > model.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "target fingerprint covers {n_f} layers but model has {}",
            model.layers.len()
        )));
    }
    let updated = match cfg.scope {
        UpdateScope::FingerprintLayers => n_f,
        UpdateScope::AllLayers => model.layers.len(),
    };
    let data = if cfg.use_data_loss {
        Some(DataTerm::new(&broadcast_gqa(model)?, updated, cfg)?)
    } else {
        None
    };

    let mut current = model.clone();
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let wrap = |e: Error| Error::Step { step, source: Box::new(e) };
        let attack = fingerprint_gradient(&current, f_t, n_f, h, cfg.epsilon, GradientMethod::Analytic).map_err(wrap)?;
        let data_grads = match &data {
            Some(term) => Some(term.loss_and_gradient(&broadcast_gqa(&current).map_err(|e| wrap(e.into()))?).1),
            None => None,
        };
        for l in 0..updated {
            let mut step_grad = match attack.layers.get(l) {
                Some(g) => g.map(|m| m * cfg.l1),
                None => current.layers[l].zeros_like(),
            };
            if let Some(grads) = &data_grads {
                let g = fold_heads(grads[l].clone(), &current);
                for (a, b) in step_grad.matrices_mut().into_iter().zip(g.matrices()) {
                    a.scaled_add(cfg.l2, b);
                }
            }
            for (w, g) in current.layers[l].matrices_mut().into_iter().zip(step_grad.matrices()) {
                w.scaled_add(-cfg.learning_rate, g);
            }
        }
        let f_m = extract_fingerprint(&current, n_f, h).map_err(|e| wrap(e.into()))?;
        let distance = fingerprint_distance(&f_m, f_t).map_err(|e| wrap(e.into()))?;
        let data_loss = match &data {
            Some(term) => term.loss_and_gradient(&broadcast_gqa(&current).map_err(|e| wrap(e.into()))?).0,
            None => 0.0,
        };
        let point = TrajectoryPoint {
            step: step + 1,
            distance,
            attack_loss: attack_loss(&f_m, f_t, cfg.epsilon).map_err(wrap)?,
            data_loss,
        };
        log::debug!("finetune step {}: distance {:.6} data {:.3e}", point.step, distance, data_loss);
        trajectory.push(point);
    }
    Ok((current, trajectory))
}

/// Data loss of `model` against `reference` on the probes `cfg` selects.
pub fn data_loss(model: &ModelWeights<f64>, reference: &ModelWeights<f64>, layers: usize, cfg: &FinetuneAttackConfig) -> Result<f64> {
    let term = DataTerm::new(&broadcast_gqa(reference)?, layers, cfg)?;
    Ok(term.loss_and_gradient(&broadcast_gqa(model)?).0)
}

/// Gradient of [`data_loss`] with respect to the first `layers` layers,
/// shaped like `model`'s own matrices.
pub fn data_loss_gradient(
    model: &ModelWeights<f64>,
    reference: &ModelWeights<f64>,
    layers: usize,
    cfg: &FinetuneAttackConfig,
) -> Result<Vec<AttentionWeights<f64>>> {
    let term = DataTerm::new(&broadcast_gqa(reference)?, layers, cfg)?;
    let (_, grads) = term.loss_and_gradient(&broadcast_gqa(model)?);
    Ok(grads.into_iter().map(|g| fold_heads(g, model)).collect())
}

pub fn write_trajectory_csv(points: &[TrajectoryPoint], path: &Path) -> Result<()> {
    crate::write_csv(points, path)
}
