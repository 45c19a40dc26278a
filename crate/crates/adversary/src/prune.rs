use attnprint_core::linalg::{complement, select_cols, select_rows};
use attnprint_core::model::{AttentionWeights, ModelWeights};
use attnprint_core::rng::{purpose, Stream};

use crate::error::{Error, Result};

/// Indices of the `⌊ratio·d_model⌋` residual dimensions that pruning drops,
/// ascending.
pub fn prune_indices(d_model: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("prune ratio must lie in [0, 1), got {ratio}")));
    }
    let k = (ratio * d_model as f64).floor() as usize;
    Ok(Stream::keyed(seed, purpose::PRUNE).sample_indices(d_model, k))
}

/// Removes the same randomly chosen residual dimensions from every layer:
/// rows of `W_Q`, `W_K`, `W_V`, columns of `W_O` and of the embedding.
pub fn structured_prune(model: &ModelWeights<f64>, ratio: f64, seed: u64) -> Result<ModelWeights<f64>> {
    model.validate()?;
    let removed = prune_indices(model.d_model, ratio, seed)?;
    let keep = complement(model.d_model, &removed);
    let mut out = model.clone();
    out.d_model = keep.len();
    out.layers = model
        .layers
        .iter()
        .map(|l| AttentionWeights {
            w_q: select_rows(&l.w_q.view(), &keep),
            w_k: select_rows(&l.w_k.view(), &keep),
            w_v: select_rows(&l.w_v.view(), &keep),
            w_o: select_cols(&l.w_o.view(), &keep),
        })
        .collect();
    out.embedding = model.embedding.as_ref().map(|e| select_cols(&e.view(), &keep));
    Ok(out)
}

/// As [`structured_prune`], but refuses to leave fewer than `h` residual
/// dimensions, which would make the `h`-wide `X_λ`/`Y_λ` spectra short.
pub fn structured_prune_strict(model: &ModelWeights<f64>, ratio: f64, seed: u64, h: usize) -> Result<ModelWeights<f64>> {
    let out = structured_prune(model, ratio, seed)?;
    if out.d_model < h {
        return Err(Error::InvalidArgument(format!(
            "pruning to d_model {} leaves fewer than h = {h} dimensions",
            out.d_model
        )));
    }
    Ok(out)
}
