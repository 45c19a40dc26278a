//! Attention weights, model bundles on disk, toy model synthesis and GQA
//! broadcasting.
//!
//! Head layout is "contiguous-blocks": head `j` owns columns
//! `j*head_dim..(j+1)*head_dim` of `W_Q`/`W_K`/`W_V` and the same row block
//! of `W_O`. Grouped-query models store `n_kv_heads * head_dim` columns in
//! `W_K`/`W_V`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, gaussian, random_orthogonal, rms};
use crate::matfile::{read_matrix, write_matrix};
use crate::rng::{purpose, Stream};
use crate::scalar::Real;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
pub const HEAD_LAYOUT: &str = "contiguous-blocks";
pub const EMBEDDING_FILE: &str = "embedding.sfmt";

/// Query/key/value/output projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    /// `d_model × d`
    pub w_q: Array2<T>,
    /// `d_model × d_kv`
    pub w_k: Array2<T>,
    /// `d_model × d_kv`
    pub w_v: Array2<T>,
    /// `d × d_model`
    pub w_o: Array2<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn d_model(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn d(&self) -> usize {
        self.w_q.ncols()
    }

    /// Checks the four shapes against `(d_model, d, d_kv)` and finiteness.
    pub fn validate(&self, d_model: usize, d: usize, d_kv: usize, layer: usize) -> Result<()> {
        let expect = [
            ("w_q", &self.w_q, (d_model, d)),
            ("w_k", &self.w_k, (d_model, d_kv)),
            ("w_v", &self.w_v, (d_model, d_kv)),
            ("w_o", &self.w_o, (d, d_model)),
        ];
        for (name, m, shape) in expect {
            if m.dim() != shape {
                return Err(Error::dim(
                    format!("layer {layer} {name}"),
                    format!("{}x{}", shape.0, shape.1),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            if !all_finite(&m.view()) {
                return Err(Error::NonFinite(format!("layer {layer} {name}")));
            }
        }
        Ok(())
    }

    pub fn matrices(&self) -> [&Array2<T>; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }

    pub fn matrices_mut(&mut self) -> [&mut Array2<T>; 4] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }

    pub fn map(&self, mut f: impl FnMut(&Array2<T>) -> Array2<T>) -> Self {
        AttentionWeights {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|m| Array2::zeros(m.dim()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub model_id: String,
    pub d_model: usize,
    pub d: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub n_layers: usize,
    pub layers: Vec<AttentionWeights<T>>,
    /// `vocab_size × d_model`
    pub embedding: Option<Array2<T>>,
    pub vocab_size: usize,
}

impl<T: Real> ModelWeights<T> {
    /// Column count of `W_K`/`W_V` under the contiguous-block layout.
    pub fn d_kv(&self) -> usize {
        self.d * self.n_kv_heads / self.n_heads
    }

    pub fn is_gqa(&self) -> bool {
        self.n_kv_heads != self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d == 0 || self.n_heads == 0 || self.n_kv_heads == 0 || self.n_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}: dimensions must be positive",
                self.model_id
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::InvalidArgument(format!(
                "n_kv_heads {} does not divide n_heads {}",
                self.n_kv_heads, self.n_heads
            )));
        }
        if self.is_gqa() && !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d {} not divisible by n_heads {}",
                self.d, self.n_heads
            )));
        }
        if self.layers.len() != self.n_layers {
            return Err(Error::dim("layer count", self.n_layers, self.layers.len()));
        }
        let d_kv = self.d_kv();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(self.d_model, self.d, d_kv, i)?;
        }
        match &self.embedding {
            Some(e) => {
                if e.ncols() != self.d_model {
                    return Err(Error::dim("embedding columns", self.d_model, e.ncols()));
                }
                if e.nrows() != self.vocab_size {
                    return Err(Error::dim("embedding rows", self.vocab_size, e.nrows()));
                }
                if !all_finite(&e.view()) {
                    return Err(Error::NonFinite("embedding".into()));
                }
            }
            None if self.vocab_size != 0 => {
                return Err(Error::InvalidArgument("vocab_size set but no embedding".into()));
            }
            None => {}
        }
        Ok(())
    }

    /// Sum of squares over every attention matrix, square-rooted.
    pub fn attention_norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.matrices())
            .map(|m| m.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let c = |m: &Array2<T>| m.mapv(|x| U::lit(x.as_f64()));
        ModelWeights {
            model_id: self.model_id.clone(),
            d_model: self.d_model,
            d: self.d,
            n_heads: self.n_heads,
            n_kv_heads: self.n_kv_heads,
            n_layers: self.n_layers,
            layers: self
                .layers
                .iter()
                .map(|l| AttentionWeights {
                    w_q: c(&l.w_q),
                    w_k: c(&l.w_k),
                    w_v: c(&l.w_v),
                    w_o: c(&l.w_o),
                })
                .collect(),
            embedding: self.embedding.as_ref().map(c),
            vocab_size: self.vocab_size,
        }
    }
}

/// On-disk `manifest.json` of a model bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_id: String,
    pub d_model: usize,
    pub d: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub n_layers: usize,
    pub vocab_size: usize,
    pub head_layout: String,
    pub matrices: Vec<String>,
}

pub fn matrix_file_name(layer: usize, which: char) -> String {
    format!("layer{layer:03}_{which}.sfmt")
}

pub fn save_model<T: Real>(model: &ModelWeights<T>, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(4 * model.n_layers + 1);
    for (i, layer) in model.layers.iter().enumerate() {
        for (which, m) in ['q', 'k', 'v', 'o'].into_iter().zip(layer.matrices()) {
            let name = matrix_file_name(i, which);
            write_matrix(&dir.join(&name), &m.view())?;
            names.push(name);
        }
    }
    if let Some(e) = &model.embedding {
        write_matrix(&dir.join(EMBEDDING_FILE), &e.view())?;
        names.push(EMBEDDING_FILE.to_string());
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_id: model.model_id.clone(),
        d_model: model.d_model,
        d: model.d,
        n_heads: model.n_heads,
        n_kv_heads: model.n_kv_heads,
        n_layers: model.n_layers,
        vocab_size: model.vocab_size,
        head_layout: HEAD_LAYOUT.to_string(),
        matrices: names,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_model<T: Real>(dir: &Path) -> Result<ModelWeights<T>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported format_version {}", manifest.format_version)));
    }
    if manifest.head_layout != HEAD_LAYOUT {
        return Err(Error::format(&path, format!("unsupported head_layout {:?}", manifest.head_layout)));
    }
    let with_embedding = manifest.matrices.len() == 4 * manifest.n_layers + 1;
    if manifest.matrices.len() != 4 * manifest.n_layers && !with_embedding {
        return Err(Error::format(
            &path,
            format!("expected {} matrix entries for {} layers", 4 * manifest.n_layers, manifest.n_layers),
        ));
    }
    if manifest.n_heads == 0 || manifest.n_kv_heads == 0 || !manifest.n_heads.is_multiple_of(manifest.n_kv_heads) {
        return Err(Error::format(&path, "n_kv_heads must divide n_heads"));
    }
    let d_kv = manifest.d * manifest.n_kv_heads / manifest.n_heads;

    let read = |name: &str, rows: usize, cols: usize| -> Result<Array2<T>> {
        let file = dir.join(name);
        let m: Array2<T> = read_matrix(&file)?;
        if m.dim() != (rows, cols) {
            return Err(Error::dim(
                file.display().to_string(),
                format!("{rows}x{cols}"),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        Ok(m)
    };
    let (dm, d) = (manifest.d_model, manifest.d);
    let mut layers = Vec::with_capacity(manifest.n_layers);
    for chunk in manifest.matrices[..4 * manifest.n_layers].chunks_exact(4) {
        layers.push(AttentionWeights {
            w_q: read(&chunk[0], dm, d)?,
            w_k: read(&chunk[1], dm, d_kv)?,
            w_v: read(&chunk[2], dm, d_kv)?,
            w_o: read(&chunk[3], d, dm)?,
        });
    }
    let embedding = if with_embedding {
        Some(read(&manifest.matrices[4 * manifest.n_layers], manifest.vocab_size, dm)?)
    } else {
        None
    };
    let model = ModelWeights {
        model_id: manifest.model_id,
        d_model: dm,
        d,
        n_heads: manifest.n_heads,
        n_kv_heads: manifest.n_kv_heads,
        n_layers: manifest.n_layers,
        layers,
        embedding,
        vocab_size: manifest.vocab_size,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub d_model: usize,
    pub d: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub n_layers: usize,
    /// Zero means no embedding matrix.
    pub vocab_size: usize,
    /// Standard deviation of every generated entry.
    pub init_scale: f64,
}

impl ToyModelConfig {
    /// The desk-scale family used throughout the tests and the `toy` profile.
    pub fn desk() -> Self {
        ToyModelConfig {
            d_model: 32,
            d: 16,
            n_heads: 4,
            n_kv_heads: 4,
            n_layers: 8,
            vocab_size: 64,
            init_scale: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d == 0 || self.n_layers == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return Err(Error::InvalidArgument("toy config dimensions must be positive".into()));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::InvalidArgument("n_kv_heads must divide n_heads".into()));
        }
        if self.n_kv_heads != self.n_heads && !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument("d must be divisible by n_heads for GQA".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidArgument("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Synthesizes a model with i.i.d. `N(0, init_scale²)` entries.
///
/// One stream (`purpose::GENERATE`) fills, in order: for each layer `W_Q`,
/// `W_K`, `W_V`, `W_O` row-major; then the embedding row-major.
pub fn generate_toy_model<T: Real>(config: &ToyModelConfig, seed: u64) -> Result<ModelWeights<T>> {
    config.validate()?;
    let mut stream = Stream::keyed(seed, purpose::GENERATE);
    let s = config.init_scale;
    let d_kv = config.d * config.n_kv_heads / config.n_heads;
    let layers = (0..config.n_layers)
        .map(|_| AttentionWeights {
            w_q: gaussian(config.d_model, config.d, s, &mut stream),
            w_k: gaussian(config.d_model, d_kv, s, &mut stream),
            w_v: gaussian(config.d_model, d_kv, s, &mut stream),
            w_o: gaussian(config.d, config.d_model, s, &mut stream),
        })
        .collect();
    let embedding = (config.vocab_size > 0).then(|| gaussian(config.vocab_size, config.d_model, s, &mut stream));
    Ok(ModelWeights {
        model_id: format!("toy-{seed}"),
        d_model: config.d_model,
        d: config.d,
        n_heads: config.n_heads,
        n_kv_heads: config.n_kv_heads,
        n_layers: config.n_layers,
        layers,
        embedding,
        vocab_size: config.vocab_size,
    })
}

/// Shape of the singular spectra drawn by [`generate_structured_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// Per-model decay rate `β` is uniform in `[decay_min, decay_max]`.
    pub decay_min: f64,
    pub decay_max: f64,
    /// Log-normal jitter applied to each singular value.
    pub jitter: f64,
    /// Isotropic Gaussian floor, relative to `init_scale`.
    pub noise_floor: f64,
    /// Log-normal spread of each matrix's own decay rate around the model's
    /// `β`. Zero gives every matrix the model rate.
    #[serde(default)]
    pub decay_spread: f64,
}

impl Default for SpectralProfile {
    fn default() -> Self {
        SpectralProfile {
            decay_min: 0.15,
            decay_max: 0.6,
            jitter: 0.3,
            noise_floor: 0.05,
            decay_spread: 0.0,
        }
    }
}

fn decaying_spectrum(n: usize, beta: f64, jitter: f64, stream: &mut Stream) -> Vec<f64> {
    let mut s: Vec<f64> = (0..n)
        .map(|j| (-beta * j as f64 + jitter * stream.normal()).exp())
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    s
}

/// `scale · U[:, ..k] diag(s) Vᵀ` with `V` a fresh `k × k` orthogonal matrix.
fn low_rank_factor<T: Real>(u: &Array2<T>, k: usize, s: &[f64], scale: f64, stream: &mut Stream) -> Array2<T> {
    let v: Array2<T> = random_orthogonal(k, stream);
    let mut left = u.slice(ndarray::s![.., ..k]).to_owned();
    for (mut col, &sv) in left.axis_iter_mut(ndarray::Axis(1)).zip(s) {
        col.mapv_inplace(|x| x * T::lit(scale * sv));
    }
    left.dot(&v.t())
}

/// Synthesizes a model whose attention matrices have structured spectra,
/// closer to trained weights than i.i.d. entries.
///
/// Each model draws one decay rate `β`. Per layer, `W_Q` and `W_K` share a
/// left singular basis `U` (`d_model × d_model` orthogonal), as do `W_V`
/// and `W_Oᵀ`; each matrix gets its own spectrum
/// `exp(-β j + jitter·z_j)` sorted descending, scaled by
/// `init_scale · √d_model`, plus `noise_floor · init_scale` i.i.d. noise.
/// Draw order on the `purpose::STRUCTURED` stream: `β`; then per layer
/// `U_qk`, `U_vo`, and for Q, K, V, O in turn the decay draw (only when
/// `decay_spread > 0`), the spectrum and the right basis;
/// then the noise for Q, K, V, O row-major; finally the embedding.
/// Requires `d ≤ d_model`.
pub fn generate_structured_model<T: Real>(
    config: &ToyModelConfig,
    profile: &SpectralProfile,
    seed: u64,
) -> Result<ModelWeights<T>> {
    config.validate()?;
    if config.d > config.d_model {
        return Err(Error::InvalidArgument(format!(
            "structured models need d ({}) <= d_model ({})",
            config.d, config.d_model
        )));
    }
    if !(profile.decay_min >= 0.0 && profile.decay_max >= profile.decay_min && profile.jitter >= 0.0 && profile.noise_floor >= 0.0 && profile.decay_spread >= 0.0) {
        return Err(Error::InvalidArgument("invalid spectral profile".into()));
    }
    let mut stream = Stream::keyed(seed, purpose::STRUCTURED);
    let beta = profile.decay_min + (profile.decay_max - profile.decay_min) * stream.uniform();
    let (dm, d) = (config.d_model, config.d);
    let d_kv = d * config.n_kv_heads / config.n_heads;
    let scale = config.init_scale * (dm as f64).sqrt();
    let floor = profile.noise_floor * config.init_scale;
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let u_qk: Array2<T> = random_orthogonal(dm, &mut stream);
        let u_vo: Array2<T> = random_orthogonal(dm, &mut stream);
        let mut factor = |u: &Array2<T>, k: usize| {
            let rate = if profile.decay_spread > 0.0 {
                beta * (profile.decay_spread * stream.normal()).exp()
            } else {
                beta
            };
            let s = decaying_spectrum(k, rate, profile.jitter, &mut stream);
            low_rank_factor(u, k, &s, scale, &mut stream)
        };
        let w_q = factor(&u_qk, d);
        let w_k = factor(&u_qk, d_kv);
        let w_v = factor(&u_vo, d_kv);
        let w_o = factor(&u_vo, d).t().to_owned();
        let mut layer = AttentionWeights { w_q, w_k, w_v, w_o };
        for m in layer.matrices_mut() {
            m.mapv_inplace(|x| x + T::lit(floor * stream.normal()));
        }
        layers.push(layer);
    }
    let embedding = (config.vocab_size > 0).then(|| gaussian(config.vocab_size, dm, config.init_scale, &mut stream));
    Ok(ModelWeights {
        model_id: format!("structured-{seed}"),
        d_model: dm,
        d,
        n_heads: config.n_heads,
        n_kv_heads: config.n_kv_heads,
        n_layers: config.n_layers,
        layers,
        embedding,
        vocab_size: config.vocab_size,
    })
}

fn perturb_relative<T: Real>(m: &Array2<T>, scale: f64, stream: &mut Stream) -> Array2<T> {
    let sd = scale * rms(&m.view()).as_f64();
    let mut out = m.clone();
    out.mapv_inplace(|x| x + T::lit(sd * stream.normal()));
    out
}

/// Stand-in for a fine-tuned offspring: every attention matrix gets i.i.d.
/// normal noise with standard deviation `perturbation_scale × rms(matrix)`.
/// The embedding is left untouched.
pub fn derive_related_model<T: Real>(base: &ModelWeights<T>, perturbation_scale: f64, seed: u64) -> Result<ModelWeights<T>> {
    derive_with_depth_profile(base, |_| perturbation_scale, seed)
        .map(|m| ModelWeights {
            model_id: format!("{}/related(scale={perturbation_scale},seed={seed})", base.model_id),
            ..m
        })
}

/// Like [`derive_related_model`] but with the relative noise growing
/// geometrically with depth: layer `i` uses `base_scale · growth^i`.
///
/// Mimics fine-tunes where lower layers stay close to the parent and upper
/// layers drift, the regime the layer-window ablation probes.
pub fn derive_finetuned_model<T: Real>(
    base: &ModelWeights<T>,
    base_scale: f64,
    growth: f64,
    seed: u64,
) -> Result<ModelWeights<T>> {
    if !(growth.is_finite() && growth >= 0.0) {
        return Err(Error::InvalidArgument("growth must be nonnegative".into()));
    }
    derive_with_depth_profile(base, |i| base_scale * growth.powi(i as i32), seed).map(|m| ModelWeights {
        model_id: format!("{}/finetuned(scale={base_scale},growth={growth},seed={seed})", base.model_id),
        ..m
    })
}

fn derive_with_depth_profile<T: Real>(
    base: &ModelWeights<T>,
    scale_at: impl Fn(usize) -> f64,
    seed: u64,
) -> Result<ModelWeights<T>> {
    let mut stream = Stream::keyed(seed, purpose::DERIVE);
    let mut out = base.clone();
    for (i, layer) in out.layers.iter_mut().enumerate() {
        let scale = scale_at(i);
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("perturbation scale {scale} must be nonnegative")));
        }
        for m in layer.matrices_mut() {
            *m = perturb_relative(m, scale, &mut stream);
        }
    }
    Ok(out)
}

/// Replicates shared K/V heads so every query head has its own block.
///
/// Output block `j` of `W_K`/`W_V` is a copy of input block
/// `j mod n_kv_heads`, i.e. the shared blocks are tiled across the full
/// width. Models without grouping are returned unchanged.
pub fn broadcast_gqa<T: Real>(model: &ModelWeights<T>) -> Result<ModelWeights<T>> {
    if model.n_kv_heads == 0 || !model.n_heads.is_multiple_of(model.n_kv_heads) {
        return Err(Error::InvalidArgument(format!(
            "n_kv_heads {} does not divide n_heads {}",
            model.n_kv_heads, model.n_heads
        )));
    }
    if !model.is_gqa() {
        return Ok(model.clone());
    }
    if !model.d.is_multiple_of(model.n_heads) {
        return Err(Error::InvalidArgument(format!(
            "d {} not divisible by n_heads {}",
            model.d, model.n_heads
        )));
    }
    let head_dim = model.d / model.n_heads;
    let cols: Vec<usize> = (0..model.n_heads)
        .flat_map(|j| {
            let src = j % model.n_kv_heads;
            (src * head_dim)..((src + 1) * head_dim)
        })
        .collect();
    let mut out = model.clone();
    for layer in &mut out.layers {
        if layer.w_k.ncols() != model.d_kv() {
            return Err(Error::dim("GQA key width", model.d_kv(), layer.w_k.ncols()));
        }
        layer.w_k = layer.w_k.select(ndarray::Axis(1), &cols);
        layer.w_v = layer.w_v.select(ndarray::Axis(1), &cols);
    }
    out.n_kv_heads = model.n_heads;
    Ok(out)
}

/// Entrywise maximum absolute difference over all attention matrices and
/// the embedding; `None` when shapes differ.
pub fn max_abs_difference<T: Real>(a: &ModelWeights<T>, b: &ModelWeights<T>) -> Option<T> {
    if a.layers.len() != b.layers.len() {
        return None;
    }
    let mut worst = T::zero();
    let mut pairs: Vec<(&Array2<T>, &Array2<T>)> = Vec::new();
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        pairs.extend(la.matrices().into_iter().zip(lb.matrices()));
    }
    match (&a.embedding, &b.embedding) {
        (Some(x), Some(y)) => pairs.push((x, y)),
        (None, None) => {}
        _ => return None,
    }
    for (x, y) in pairs {
        if x.dim() != y.dim() {
            return None;
        }
        Zip::from(x).and(y).for_each(|&p, &q| worst = worst.max((p - q).abs()));
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::singular_values;
    use ndarray::array;

    fn small_config() -> ToyModelConfig {
        ToyModelConfig {
            d_model: 8,
            d: 4,
            n_heads: 2,
            n_kv_heads: 2,
            n_layers: 2,
            vocab_size: 5,
            init_scale: 0.5,
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let c = small_config();
        let a: ModelWeights<f64> = generate_toy_model(&c, 1).unwrap();
        let b: ModelWeights<f64> = generate_toy_model(&c, 1).unwrap();
        let other: ModelWeights<f64> = generate_toy_model(&c, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers[0].w_q, other.layers[0].w_q);
        assert_eq!(a.layers[0].w_q.dim(), (8, 4));
        assert_eq!(a.layers[0].w_o.dim(), (4, 8));
        a.validate().unwrap();
    }

    #[test]
    fn generation_fill_order_is_row_major_q_first() {
        let c = small_config();
        let m: ModelWeights<f64> = generate_toy_model(&c, 3).unwrap();
        let mut s = Stream::keyed(3, purpose::GENERATE);
        assert_eq!(m.layers[0].w_q[[0, 0]], 0.5 * s.normal());
        assert_eq!(m.layers[0].w_q[[0, 1]], 0.5 * s.normal());
    }

    #[test]
    fn derive_zero_scale_is_identity() {
        let base: ModelWeights<f64> = generate_toy_model(&small_config(), 4).unwrap();
        let d = derive_related_model(&base, 0.0, 9).unwrap();
        assert_eq!(max_abs_difference(&base, &d), Some(0.0));
        let again = derive_related_model(&base, 0.3, 9).unwrap();
        assert_eq!(again, derive_related_model(&base, 0.3, 9).unwrap());
        assert!(again.model_id.starts_with("toy-4/related"));
    }

    #[test]
    fn derive_noise_has_relative_scale() {
        let cfg = ToyModelConfig {
            d_model: 64,
            d: 32,
            n_layers: 1,
            ..small_config()
        };
        let base: ModelWeights<f64> = generate_toy_model(&cfg, 4).unwrap();
        let d = derive_related_model(&base, 0.1, 1).unwrap();
        let diff = &d.layers[0].w_q - &base.layers[0].w_q;
        let ratio = rms(&diff.view()) / rms(&base.layers[0].w_q.view());
        assert!((ratio - 0.1).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn broadcast_identity_without_grouping() {
        let m: ModelWeights<f64> = generate_toy_model(&small_config(), 5).unwrap();
        assert_eq!(broadcast_gqa(&m).unwrap(), m);
    }

    #[test]
    fn broadcast_tiles_shared_blocks() {
        let cfg = ToyModelConfig {
            d_model: 6,
            d: 8,
            n_heads: 4,
            n_kv_heads: 2,
            n_layers: 1,
            vocab_size: 0,
            init_scale: 1.0,
        };
        let m: ModelWeights<f64> = generate_toy_model(&cfg, 6).unwrap();
        assert_eq!(m.layers[0].w_k.ncols(), 4);
        let b = broadcast_gqa(&m).unwrap();
        assert_eq!(b.layers[0].w_k.ncols(), 8);
        assert_eq!(b.n_kv_heads, 4);
        for c in 0..2 {
            assert_eq!(b.layers[0].w_k.column(c), m.layers[0].w_k.column(c));
            assert_eq!(b.layers[0].w_k.column(c + 4), m.layers[0].w_k.column(c));
            assert_eq!(b.layers[0].w_v.column(c + 4), m.layers[0].w_v.column(c));
        }
        assert_eq!(b.layers[0].w_q, m.layers[0].w_q);
        assert_eq!(b.layers[0].w_o, m.layers[0].w_o);
        b.validate().unwrap();
        // idempotent
        assert_eq!(broadcast_gqa(&b).unwrap(), b);
    }

    #[test]
    fn broadcast_scales_singular_values() {
        let cfg = ToyModelConfig {
            d_model: 6,
            d: 8,
            n_heads: 4,
            n_kv_heads: 2,
            n_layers: 1,
            vocab_size: 0,
            init_scale: 1.0,
        };
        let m: ModelWeights<f64> = generate_toy_model(&cfg, 7).unwrap();
        let b = broadcast_gqa(&m).unwrap();
        let before = singular_values(&m.layers[0].w_k.view()).unwrap();
        let after = singular_values(&b.layers[0].w_k.view()).unwrap();
        let factor = 2f64.sqrt();
        for (x, y) in before.values().iter().zip(after.values()) {
            assert!((x * factor - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!(after.values()[4..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut m: ModelWeights<f64> = generate_toy_model(&small_config(), 8).unwrap();
        m.layers[1].w_o = array![[1.0]];
        assert!(matches!(m.validate(), Err(Error::Dimension { .. })));
    }
}
