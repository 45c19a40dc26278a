//! Weight-space augmentations and the labeled fingerprint corpus used to
//! train the similarity network.
//!
//! Every augmentation touches only the attention matrices of the first
//! `n_f` layers. Deletions change `d_model` or `d` for those layers, so
//! their output keeps only the first `n_f` layers (deeper layers could no
//! longer share the model's dimensions); row deletion also drops the
//! embedding.

use std::fs;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{extract_fingerprint, load_fingerprint, save_fingerprint, Fingerprint, ROW_ORDER};
use crate::linalg::complement;
use crate::model::{broadcast_gqa, ModelWeights};
use crate::rng::{purpose, Stream};
use crate::scalar::Real;

fn check_scope<T: Real>(model: &ModelWeights<T>, n_f: usize) -> Result<()> {
    if n_f == 0 || n_f > model.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "n_f = {n_f} outside 1..={}",
            model.layers.len()
        )));
    }
    Ok(())
}

/// `W + α N` with fresh standard normal `N` for every matrix. Draws run
/// layer by layer, Q, K, V, O, row-major.
pub fn gaussian_noise<T: Real>(model: &ModelWeights<T>, alpha: f64, n_f: usize, seed: u64) -> Result<ModelWeights<T>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be nonnegative")));
    }
    check_scope(model, n_f)?;
    let mut out = model.clone();
    let mut stream = Stream::keyed(seed, purpose::NOISE);
    for layer in out.layers.iter_mut().take(n_f) {
        for m in layer.matrices_mut() {
            m.mapv_inplace(|x| x + T::lit(alpha * stream.normal()));
        }
    }
    Ok(out)
}

/// Removes `n_r` hidden dimensions per layer: the same row indices from
/// `W_Q`, `W_K`, `W_V` and the matching columns of `W_O`. Each layer draws
/// its own index set.
pub fn delete_rows<T: Real>(model: &ModelWeights<T>, n_r: usize, n_f: usize, seed: u64) -> Result<ModelWeights<T>> {
    check_scope(model, n_f)?;
    if n_r >= model.d_model {
        return Err(Error::InvalidArgument(format!("n_r = {n_r} must be below d_model = {}", model.d_model)));
    }
    if n_r == 0 {
        return Ok(model.clone());
    }
    let mut stream = Stream::keyed(seed, purpose::ROW_DELETION);
    let mut out = model.clone();
    out.layers.truncate(n_f);
    for layer in &mut out.layers {
        let keep = complement(model.d_model, &stream.sample_indices(model.d_model, n_r));
        layer.w_q = layer.w_q.select(ndarray::Axis(0), &keep);
        layer.w_k = layer.w_k.select(ndarray::Axis(0), &keep);
        layer.w_v = layer.w_v.select(ndarray::Axis(0), &keep);
        layer.w_o = layer.w_o.select(ndarray::Axis(1), &keep);
    }
    out.n_layers = n_f;
    out.d_model -= n_r;
    out.embedding = None;
    out.vocab_size = 0;
    Ok(out)
}

/// Removes `n_c` head dimensions per layer: the same column indices from
/// `W_Q`, `W_K`, `W_V` and the matching rows of `W_O`. Grouped-query
/// models are broadcast first.
pub fn delete_cols<T: Real>(model: &ModelWeights<T>, n_c: usize, n_f: usize, seed: u64) -> Result<ModelWeights<T>> {
    check_scope(model, n_f)?;
    if n_c >= model.d {
        return Err(Error::InvalidArgument(format!("n_c = {n_c} must be below d = {}", model.d)));
    }
    if n_c == 0 {
        return Ok(model.clone());
    }
    let mut out = broadcast_gqa(model)?;
    let mut stream = Stream::keyed(seed, purpose::COL_DELETION);
    out.layers.truncate(n_f);
    for layer in &mut out.layers {
        let keep = complement(model.d, &stream.sample_indices(model.d, n_c));
        layer.w_q = layer.w_q.select(ndarray::Axis(1), &keep);
        layer.w_k = layer.w_k.select(ndarray::Axis(1), &keep);
        layer.w_v = layer.w_v.select(ndarray::Axis(1), &keep);
        layer.w_o = layer.w_o.select(ndarray::Axis(0), &keep);
    }
    out.n_layers = n_f;
    out.d -= n_c;
    Ok(out)
}

/// Zeroes each entry whose uniform draw falls below `r` (keeps it when the
/// draw is `≥ r`). Fields are drawn row-major as `d_model × d_cols` for
/// Q, K, V and as `d_model × d` for O, which is then read transposed.
pub fn random_mask<T: Real>(model: &ModelWeights<T>, r: f64, n_f: usize, seed: u64) -> Result<ModelWeights<T>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("mask rate {r} outside [0, 1]")));
    }
    check_scope(model, n_f)?;
    let mut out = model.clone();
    let mut stream = Stream::keyed(seed, purpose::MASK);
    for layer in out.layers.iter_mut().take(n_f) {
        for m in [&mut layer.w_q, &mut layer.w_k, &mut layer.w_v] {
            m.mapv_inplace(|x| if stream.uniform() < r { T::zero() } else { x });
        }
        let (d, dm) = layer.w_o.dim();
        let field = Array2::from_shape_simple_fn((dm, d), || stream.uniform());
        ndarray::Zip::from(&mut layer.w_o)
            .and(&field.t())
            .for_each(|x, &u| {
                if u < r {
                    *x = T::zero();
                }
            });
    }
    Ok(out)
}

/// One augmentation with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Augmentation {
    Noise { alpha: f64 },
    DeleteRows { n_r: usize },
    DeleteCols { n_c: usize },
    Mask { rate: f64 },
}

impl Augmentation {
    pub fn apply<T: Real>(&self, model: &ModelWeights<T>, n_f: usize, seed: u64) -> Result<ModelWeights<T>> {
        match *self {
            Augmentation::Noise { alpha } => gaussian_noise(model, alpha, n_f, seed),
            Augmentation::DeleteRows { n_r } => delete_rows(model, n_r, n_f, seed),
            Augmentation::DeleteCols { n_c } => delete_cols(model, n_c, n_f, seed),
            Augmentation::Mask { rate } => random_mask(model, rate, n_f, seed),
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            Augmentation::Noise { alpha } => format!("noise(alpha={alpha})"),
            Augmentation::DeleteRows { n_r } => format!("delete_rows(n_r={n_r})"),
            Augmentation::DeleteCols { n_c } => format!("delete_cols(n_c={n_c})"),
            Augmentation::Mask { rate } => format!("mask(r={rate})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub noise_alphas: Vec<f64>,
    pub row_deletions: Vec<usize>,
    pub col_deletions: Vec<usize>,
    pub mask_rates: Vec<f64>,
    pub seed: u64,
}

impl AugmentPlan {
    /// Parameters sized for `d_model = 32`, `d = 16`, entry scale `0.02`.
    /// Row deletions reach a quarter of `d_model` so pruned offspring fall
    /// inside the augmented range; column deletions stay small because each
    /// removed head dimension moves every spectrum.
    pub fn desk(seed: u64) -> Self {
        AugmentPlan {
            noise_alphas: vec![0.0005, 0.001, 0.002],
            row_deletions: vec![2, 4, 8],
            col_deletions: vec![1, 2, 3],
            mask_rates: vec![0.01, 0.02, 0.05],
            seed,
        }
    }

    /// Parameters for billion-parameter checkpoints.
    pub fn paper(seed: u64) -> Self {
        AugmentPlan {
            noise_alphas: vec![0.1, 1.0, 10.0],
            row_deletions: vec![10, 100, 1000],
            col_deletions: vec![10, 100, 1000],
            mask_rates: vec![0.1, 0.25, 0.5],
            seed,
        }
    }

    pub fn empty(seed: u64) -> Self {
        AugmentPlan {
            noise_alphas: Vec::new(),
            row_deletions: Vec::new(),
            col_deletions: Vec::new(),
            mask_rates: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self, d_model: usize, d: usize) -> Result<()> {
        if let Some(a) = self.noise_alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidArgument(format!("noise alpha {a} must be nonnegative")));
        }
        if let Some(r) = self.mask_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!("mask rate {r} outside [0, 1]")));
        }
        if let Some(n) = self.row_deletions.iter().find(|&&n| n >= d_model) {
            return Err(Error::InvalidArgument(format!("row deletion {n} must be below d_model = {d_model}")));
        }
        if let Some(n) = self.col_deletions.iter().find(|&&n| n >= d) {
            return Err(Error::InvalidArgument(format!("column deletion {n} must be below d = {d}")));
        }
        Ok(())
    }

    /// All cells in corpus order: noise, row deletion, column deletion, mask.
    pub fn cells(&self) -> Vec<Augmentation> {
        let noise = self.noise_alphas.iter().map(|&alpha| Augmentation::Noise { alpha });
        let rows = self.row_deletions.iter().map(|&n_r| Augmentation::DeleteRows { n_r });
        let cols = self.col_deletions.iter().map(|&n_c| Augmentation::DeleteCols { n_c });
        let mask = self.mask_rates.iter().map(|&rate| Augmentation::Mask { rate });
        noise.chain(rows).chain(cols).chain(mask).collect()
    }

    /// Seed for cell `cell` of base model `model`.
    pub fn cell_seed(&self, model: usize, cell: usize) -> u64 {
        Stream::keyed(self.seed, purpose::CORPUS).at(((model as u64) << 32) | cell as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem<T> {
    pub fingerprint: Fingerprint<T>,
    /// 1 when derived from the target, else 0.
    pub label: u8,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFingerprints<T> {
    pub items: Vec<LabeledItem<T>>,
    pub warnings: Vec<String>,
}

impl<T: Real> LabeledFingerprints<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Common `(n_f, h)`; errors when items disagree.
    pub fn shape(&self) -> Result<Option<(usize, usize)>> {
        let mut shape = None;
        for item in &self.items {
            let s = (item.fingerprint.n_layers_used, item.fingerprint.top_k);
            match shape {
                None => shape = Some(s),
                Some(prev) if prev != s => {
                    return Err(Error::dim(
                        format!("corpus item {}", item.provenance),
                        format!("n_f={} h={}", prev.0, prev.1),
                        format!("n_f={} h={}", s.0, s.1),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(shape)
    }

    pub fn push(&mut self, item: LabeledItem<T>) -> Result<()> {
        if let Some((n_f, h)) = self.shape()? {
            if (item.fingerprint.n_layers_used, item.fingerprint.top_k) != (n_f, h) {
                return Err(Error::dim(
                    format!("corpus item {}", item.provenance),
                    format!("n_f={n_f} h={h}"),
                    format!("n_f={} h={}", item.fingerprint.n_layers_used, item.fingerprint.top_k),
                ));
            }
        }
        self.items.push(item);
        Ok(())
    }
}

/// Base fingerprints of the target (label 1), related models (label 1) and
/// unrelated models (label 0), followed by one augmented fingerprint per
/// `(model, cell)` in that model order. Cells whose result cannot support
/// `h` are skipped with a warning.
pub fn build_training_set<T: Real>(
    target: &ModelWeights<T>,
    related: &[ModelWeights<T>],
    unrelated: &[ModelWeights<T>],
    plan: &AugmentPlan,
    n_f: usize,
    h: usize,
) -> Result<LabeledFingerprints<T>> {
    let mut bases: Vec<(&ModelWeights<T>, u8, String)> = vec![(target, 1, "target".to_string())];
    bases.extend(related.iter().enumerate().map(|(i, m)| (m, 1, format!("related[{i}]"))));
    bases.extend(unrelated.iter().enumerate().map(|(i, m)| (m, 0, format!("unrelated[{i}]"))));

    let mut corpus = LabeledFingerprints::default();
    for (model, label, tag) in &bases {
        plan.validate(model.d_model, model.d)?;
        corpus.push(LabeledItem {
            fingerprint: extract_fingerprint(model, n_f, h)?,
            label: *label,
            provenance: tag.clone(),
        })?;
    }
    let cells = plan.cells();
    for (mi, (model, label, tag)) in bases.iter().enumerate() {
        for (ci, cell) in cells.iter().enumerate() {
            let provenance = format!("{tag}+{}", cell.tag());
            let augmented = cell.apply(model, n_f, plan.cell_seed(mi, ci))?;
            match extract_fingerprint(&augmented, n_f, h) {
                Ok(fingerprint) => corpus.push(LabeledItem {
                    fingerprint,
                    label: *label,
                    provenance,
                })?,
                Err(e @ Error::InvalidArgument(_)) => {
                    let msg = format!("skipped {provenance}: {e}");
                    warn!("{msg}");
                    corpus.warnings.push(msg);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(corpus)
}

pub const CORPUS_INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusIndexEntry {
    pub file: String,
    pub label: u8,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub format_version: u32,
    pub n_f: usize,
    pub h: usize,
    pub row_order: String,
    pub items: Vec<CorpusIndexEntry>,
}

pub fn save_corpus<T: Real>(corpus: &LabeledFingerprints<T>, dir: &Path) -> Result<()> {
    let (n_f, h) = corpus
        .shape()?
        .ok_or_else(|| Error::InvalidArgument("cannot save an empty corpus".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (i, item) in corpus.items.iter().enumerate() {
        let file = format!("item{i:04}.fp");
        save_fingerprint(&item.fingerprint, &dir.join(&file), "augment")?;
        entries.push(CorpusIndexEntry {
            file,
            label: item.label,
            provenance: item.provenance.clone(),
        });
    }
    let index = CorpusIndex {
        format_version: 1,
        n_f,
        h,
        row_order: ROW_ORDER.to_string(),
        items: entries,
    };
    let path = dir.join(CORPUS_INDEX);
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_corpus<T: Real>(dir: &Path) -> Result<LabeledFingerprints<T>> {
    let path = dir.join(CORPUS_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: CorpusIndex = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if index.row_order != ROW_ORDER {
        return Err(Error::format(&path, format!("unsupported row_order {:?}", index.row_order)));
    }
    let mut corpus = LabeledFingerprints::default();
    for entry in index.items {
        if entry.label > 1 {
            return Err(Error::format(&path, format!("label {} is not 0 or 1", entry.label)));
        }
        let fingerprint: Fingerprint<T> = load_fingerprint(&dir.join(&entry.file))?;
        if (fingerprint.n_layers_used, fingerprint.top_k) != (index.n_f, index.h) {
            return Err(Error::dim(entry.file, format!("n_f={} h={}", index.n_f, index.h), format!(
                "n_f={} h={}",
                fingerprint.n_layers_used, fingerprint.top_k
            )));
        }
        corpus.push(LabeledItem {
            fingerprint,
            label: entry.label,
            provenance: entry.provenance,
        })?;
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_toy_model, ToyModelConfig};

    fn cfg() -> ToyModelConfig {
        ToyModelConfig {
            d_model: 10,
            d: 8,
            n_heads: 2,
            n_kv_heads: 2,
            n_layers: 3,
            vocab_size: 4,
            init_scale: 1.0,
        }
    }

    #[test]
    fn zero_parameters_are_identity() {
        let m: ModelWeights<f64> = generate_toy_model(&cfg(), 1).unwrap();
        assert_eq!(gaussian_noise(&m, 0.0, 2, 5).unwrap(), m);
        assert_eq!(delete_rows(&m, 0, 2, 5).unwrap(), m);
        assert_eq!(delete_cols(&m, 0, 2, 5).unwrap(), m);
        assert_eq!(random_mask(&m, 0.0, 2, 5).unwrap(), m);
    }

    #[test]
    fn deletion_shapes() {
        let m: ModelWeights<f64> = generate_toy_model(&cfg(), 1).unwrap();
        let r = delete_rows(&m, 3, 2, 5).unwrap();
        assert_eq!(r.d_model, 7);
        assert_eq!(r.layers.len(), 2);
        r.validate().unwrap();
        let c = delete_cols(&m, 2, 2, 5).unwrap();
        assert_eq!(c.d, 6);
        assert_eq!(c.layers[1].w_o.dim(), (6, 10));
        c.validate().unwrap();
        assert!(delete_rows(&m, 10, 2, 5).is_err());
        assert!(delete_cols(&m, 8, 2, 5).is_err());
    }

    #[test]
    fn full_mask_zeroes_scope_only() {
        let m: ModelWeights<f64> = generate_toy_model(&cfg(), 1).unwrap();
        let z = random_mask(&m, 1.0, 2, 5).unwrap();
        assert!(z.layers[..2].iter().all(|l| l.matrices().iter().all(|w| w.iter().all(|&x| x == 0.0))));
        assert_eq!(z.layers[2], m.layers[2]);
        assert!(random_mask(&m, 1.5, 2, 5).is_err());
    }

    #[test]
    fn plan_cells_order() {
        let p = AugmentPlan::desk(0);
        let cells = p.cells();
        assert_eq!(cells.len(), 12);
        assert!(matches!(cells[0], Augmentation::Noise { .. }));
        assert!(matches!(cells[11], Augmentation::Mask { .. }));
        assert_ne!(p.cell_seed(0, 1), p.cell_seed(1, 0));
    }
}
