use ndarray::Array2;
use serde::{Deserialize, Serialize};

use attnprint_core::augment::LabeledFingerprints;
use attnprint_core::rng::{purpose, Stream};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::net::SimNetParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    pub scheduler_step: usize,
    pub scheduler_gamma: f64,
    pub label_smoothing: f64,
    /// Sign-gradient input perturbation size.
    pub adversarial_epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains on the whole corpus as one batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            scheduler_step: 100,
            scheduler_gamma: 0.8,
            label_smoothing: 0.01,
            adversarial_epsilon: 1e-5,
            epochs: 1000,
            seed: 42,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.scheduler_step == 0 {
            return bad("scheduler_step must be positive");
        }
        if !(self.scheduler_gamma > 0.0 && self.scheduler_gamma <= 1.0) {
            return bad("scheduler_gamma must lie in (0, 1]");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 0.5)");
        }
        if !(self.adversarial_epsilon >= 0.0 && self.adversarial_epsilon.is_finite()) {
            return bad("adversarial_epsilon must be nonnegative");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    /// `lr·γ^⌊epoch/step⌋`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.scheduler_gamma.powi((epoch / self.scheduler_step) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the clean and perturbed losses, averaged over batches.
    pub loss: f64,
    /// Fraction of clean train-mode scores on the right side of 0.5.
    pub accuracy: f64,
    pub learning_rate: f64,
}

/// AdamW with decoupled weight decay: `θ ← θ(1 − lr·wd)` before the Adam
/// step. β = (0.9, 0.999), ε = 1e-8.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    pub weight_decay: f64,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(params: &SimNetParams, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.learnable().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut SimNetParams, grads: &SimNetParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params
            .learnable_mut()
            .into_iter()
            .zip(grads.learnable())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                p[i] = p[i] * decay - lr * update;
            }
        }
    }
}

fn add_scaled(acc: &mut SimNetParams, g: &SimNetParams, scale: f64) {
    for (a, b) in acc.learnable_mut().into_iter().zip(g.learnable()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

/// Trains in place of `params` and returns the result with per-epoch
/// statistics.
///
/// Each batch runs a clean train-mode pass, perturbs the inputs by
/// `ε·sign(∂loss/∂input)`, runs a second pass on the perturbed inputs, and
/// steps on the mean of both gradients. Batch-norm running statistics are
/// updated after both passes, clean first. Batches are drawn from a per-epoch
/// shuffle keyed by `cfg.seed`.
pub fn train(
    mut params: SimNetParams,
    corpus: &LabeledFingerprints<f64>,
    cfg: &TrainConfig,
) -> Result<(SimNetParams, Vec<EpochStats>)> {
    cfg.validate()?;
    params.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    let labels: Vec<u8> = corpus.items.iter().map(|i| i.label).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument("training corpus must contain both labels".into()));
    }
    let inputs: Vec<Array2<f64>> = corpus.items.iter().map(|i| i.fingerprint.data.clone()).collect();
    let batch_size = cfg.batch_size.unwrap_or(inputs.len()).min(inputs.len());
    let root = Stream::keyed(cfg.seed, purpose::SIMNET_TRAIN);
    let mut optimizer = AdamW::new(&params, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        root.fork(epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(batch_size) {
            let x: Vec<Array2<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let clean = params.loss_and_gradients(&x, &y, cfg.label_smoothing, Mode::Train)?;
            let perturbed: Vec<Array2<f64>> = x
                .iter()
                .zip(&clean.inputs)
                .map(|(xi, gi)| xi + &gi.mapv(|g| cfg.adversarial_epsilon * sign(g)))
                .collect();
            let adv = params.loss_and_gradients(&perturbed, &y, cfg.label_smoothing, Mode::Train)?;
            let loss = 0.5 * (clean.loss + adv.loss);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let mut grads = params.zeros_like();
            add_scaled(&mut grads, &clean.params, 0.5);
            add_scaled(&mut grads, &adv.params, 0.5);
            params.apply_batch_stats(&clean.batch_stats);
            params.apply_batch_stats(&adv.batch_stats);
            optimizer.step(&mut params, &grads, lr);

            loss_sum += loss;
            batches += 1;
            correct += clean
                .scores
                .iter()
                .zip(&y)
                .filter(|(&s, &l)| (s > 0.5) == (l == 1))
                .count();
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / inputs.len() as f64,
            learning_rate: lr,
        };
        log::debug!("epoch {epoch}: loss {:.6} accuracy {:.3}", stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok((params, history))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_exact() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-4);
        assert_eq!(cfg.learning_rate_at(99), 1e-4);
        assert_eq!(cfg.learning_rate_at(100), 1e-4 * 0.8);
        assert_eq!(cfg.learning_rate_at(250), 1e-4 * 0.8 * 0.8);
    }

    #[test]
    fn config_bounds() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                label_smoothing: 0.5,
                ..Default::default()
            },
            TrainConfig {
                scheduler_gamma: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: Some(0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
