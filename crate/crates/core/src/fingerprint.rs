//! Invariant matrices, per-layer spectra and stacked model fingerprints.
//!
//! For one attention block the four invariant matrices are
//!
//! - `X_σ = W_Q W_Kᵀ` and `Y_σ = W_V W_O` (`d_model × d_model`), whose
//!   singular values survive `W ↦ P W C` style reparameterizations, and
//! - `X_λ = W_Qᵀ W_K` and `Y_λ = W_O W_V` (`d × d`), which are only changed
//!   by similarity transforms, so their eigenvalues survive.
//!
//! A fingerprint stacks the normalized top-`h` spectra of the first `n_f`
//! layers as `4·n_f` rows: every σ_QK row, then λ_QK, σ_VO, λ_VO.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfile::{read_matrix, write_matrix};
use crate::model::{broadcast_gqa, AttentionWeights, ModelWeights};
use crate::scalar::Real;
use crate::spectra::{eigen_magnitudes, singular_values};

pub const ROW_ORDER: &str = "sQK,lQK,sVO,lVO";
pub const FINGERPRINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMatrices<T> {
    pub x_sigma: Array2<T>,
    pub y_sigma: Array2<T>,
    pub x_lambda: Array2<T>,
    pub y_lambda: Array2<T>,
}

pub fn invariant_matrices<T: Real>(layer: &AttentionWeights<T>) -> Result<InvariantMatrices<T>> {
    let (dm, d) = layer.w_q.dim();
    if layer.w_k.dim() != (dm, d) {
        return Err(Error::dim("w_k", format!("{dm}x{d}"), format!("{:?}", layer.w_k.dim())));
    }
    if layer.w_v.dim() != (dm, d) {
        return Err(Error::dim("w_v", format!("{dm}x{d}"), format!("{:?}", layer.w_v.dim())));
    }
    if layer.w_o.dim() != (d, dm) {
        return Err(Error::dim("w_o", format!("{d}x{dm}"), format!("{:?}", layer.w_o.dim())));
    }
    Ok(InvariantMatrices {
        x_sigma: layer.w_q.dot(&layer.w_k.t()),
        y_sigma: layer.w_v.dot(&layer.w_o),
        x_lambda: layer.w_q.t().dot(&layer.w_k),
        y_lambda: layer.w_o.dot(&layer.w_v),
    })
}

/// One of the four row groups of a fingerprint, in stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowBlock {
    SigmaQk,
    LambdaQk,
    SigmaVo,
    LambdaVo,
}

impl RowBlock {
    pub const ALL: [RowBlock; 4] = [RowBlock::SigmaQk, RowBlock::LambdaQk, RowBlock::SigmaVo, RowBlock::LambdaVo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_qk(self) -> bool {
        matches!(self, RowBlock::SigmaQk | RowBlock::LambdaQk)
    }

    pub fn is_singular(self) -> bool {
        matches!(self, RowBlock::SigmaQk | RowBlock::SigmaVo)
    }

    /// Row of layer `layer` (relative to the window) within a fingerprint
    /// covering `n_f` layers.
    pub fn row(self, layer: usize, n_f: usize) -> usize {
        self.index() * n_f + layer
    }
}

/// How to treat `h` larger than the available spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HPolicy {
    /// Error naming the short dimension.
    #[default]
    Strict,
    /// Append zeros before normalizing.
    ZeroPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractOptions {
    /// First layer of the window (0 = from the bottom).
    pub layer_start: usize,
    pub h_policy: HPolicy,
}

/// Rows of one layer plus any degeneracy warnings.
#[derive(Debug, Clone)]
pub struct LayerSpectra<T> {
    pub rows: Array2<T>,
    pub warnings: Vec<String>,
}

fn top_normalized<T: Real>(
    mut values: Vec<T>,
    h: usize,
    policy: HPolicy,
    label: &str,
    dim_name: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<T>> {
    if values.len() < h {
        match policy {
            HPolicy::Strict => {
                return Err(Error::InvalidArgument(format!(
                    "h = {h} exceeds {dim_name} = {} available for {label}",
                    values.len()
                )))
            }
            HPolicy::ZeroPad => values.resize(h, T::zero()),
        }
    }
    values.truncate(h);
    let norm = values.iter().map(|&v| v * v).sum::<T>().sqrt();
    if norm == T::zero() {
        let msg = format!("{label}: all-zero spectrum, row left at zero");
        warn!("{msg}");
        warnings.push(msg);
        return Ok(values);
    }
    Ok(values.into_iter().map(|v| v / norm).collect())
}

/// The `4 × h` block for one layer: σ(X_σ), |λ|(X_λ), σ(Y_σ), |λ|(Y_λ),
/// each descending and scaled to unit L2 norm.
pub fn layer_fingerprint<T: Real>(layer: &AttentionWeights<T>, h: usize) -> Result<Array2<T>> {
    Ok(layer_spectra(layer, h, HPolicy::Strict, "layer")?.rows)
}

pub fn layer_spectra<T: Real>(
    layer: &AttentionWeights<T>,
    h: usize,
    policy: HPolicy,
    label: &str,
) -> Result<LayerSpectra<T>> {
    if h == 0 {
        return Err(Error::InvalidArgument("h must be positive".into()));
    }
    let inv = invariant_matrices(layer)?;
    let mut warnings = Vec::new();
    let (dm, d) = layer.w_q.dim();
    // X_σ and Y_σ have d_model singular values but rank ≤ d, so strict mode
    // also requires h ≤ d for them.
    let sigma_len = dm.min(d);
    let sigma = |m: &Array2<T>| -> Result<Vec<T>> {
        let mut v = singular_values(&m.view())?.into_values();
        if policy == HPolicy::Strict && h > sigma_len {
            let short = if d < dm { "d" } else { "d_model" };
            return Err(Error::InvalidArgument(format!(
                "h = {h} exceeds {short} = {sigma_len}"
            )));
        }
        v.truncate(sigma_len);
        Ok(v)
    };
    let rows = [
        top_normalized(sigma(&inv.x_sigma)?, h, policy, &format!("{label} sigma_QK"), "d_model", &mut warnings)?,
        top_normalized(
            eigen_magnitudes(&inv.x_lambda.view())?.into_values(),
            h,
            policy,
            &format!("{label} lambda_QK"),
            "d",
            &mut warnings,
        )?,
        top_normalized(sigma(&inv.y_sigma)?, h, policy, &format!("{label} sigma_VO"), "d_model", &mut warnings)?,
        top_normalized(
            eigen_magnitudes(&inv.y_lambda.view())?.into_values(),
            h,
            policy,
            &format!("{label} lambda_VO"),
            "d",
            &mut warnings,
        )?,
    ];
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Ok(LayerSpectra {
        rows: Array2::from_shape_vec((4, h), flat).expect("4 rows of h"),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint<T> {
    /// `4·n_f × h`, rows in [`ROW_ORDER`].
    pub data: Array2<T>,
    pub n_layers_used: usize,
    pub top_k: usize,
    pub model_id: String,
    /// First source layer of the window.
    pub layer_start: usize,
    pub warnings: Vec<String>,
}

impl<T: Real> Fingerprint<T> {
    pub fn row(&self, block: RowBlock, layer: usize) -> ArrayView1<'_, T> {
        self.data.row(block.row(layer, self.n_layers_used))
    }

    pub fn cast<U: Real>(&self) -> Fingerprint<U> {
        Fingerprint {
            data: self.data.mapv(|x| U::lit(x.as_f64())),
            n_layers_used: self.n_layers_used,
            top_k: self.top_k,
            model_id: self.model_id.clone(),
            layer_start: self.layer_start,
            warnings: self.warnings.clone(),
        }
    }

    /// Wraps raw stacked rows; checks the shape against `(n_f, h)`.
    pub fn from_data(data: Array2<T>, n_f: usize, h: usize, model_id: impl Into<String>) -> Result<Self> {
        if data.dim() != (4 * n_f, h) {
            return Err(Error::dim("fingerprint data", format!("{}x{h}", 4 * n_f), format!("{:?}", data.dim())));
        }
        Ok(Fingerprint {
            data,
            n_layers_used: n_f,
            top_k: h,
            model_id: model_id.into(),
            layer_start: 0,
            warnings: Vec::new(),
        })
    }
}

pub fn extract_fingerprint<T: Real>(model: &ModelWeights<T>, n_f: usize, h: usize) -> Result<Fingerprint<T>> {
    extract_fingerprint_with(model, n_f, h, ExtractOptions::default())
}

/// Stacks layers `layer_start .. layer_start + n_f`. Grouped-query models
/// are broadcast first.
pub fn extract_fingerprint_with<T: Real>(
    model: &ModelWeights<T>,
    n_f: usize,
    h: usize,
    options: ExtractOptions,
) -> Result<Fingerprint<T>> {
    if n_f == 0 {
        return Err(Error::InvalidArgument("n_f must be positive".into()));
    }
    if options.layer_start + n_f > model.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "layers {}..{} requested but model has {}",
            options.layer_start,
            options.layer_start + n_f,
            model.layers.len()
        )));
    }
    let broadcast;
    let model = if model.is_gqa() {
        broadcast = broadcast_gqa(model)?;
        &broadcast
    } else {
        model
    };
    let mut data = Array2::zeros((4 * n_f, h));
    let mut warnings = Vec::new();
    for i in 0..n_f {
        let src = options.layer_start + i;
        let spectra = layer_spectra(&model.layers[src], h, options.h_policy, &format!("layer {src}"))?;
        for block in RowBlock::ALL {
            data.row_mut(block.row(i, n_f)).assign(&spectra.rows.row(block.index()));
        }
        warnings.extend(spectra.warnings);
    }
    Ok(Fingerprint {
        data,
        n_layers_used: n_f,
        top_k: h,
        model_id: model.model_id.clone(),
        layer_start: options.layer_start,
        warnings,
    })
}

fn check_compatible<T: Real>(a: &Fingerprint<T>, b: &Fingerprint<T>) -> Result<()> {
    if a.n_layers_used != b.n_layers_used || a.top_k != b.top_k || a.data.dim() != b.data.dim() {
        return Err(Error::dim(
            "fingerprint shape",
            format!("n_f={} h={}", a.n_layers_used, a.top_k),
            format!("n_f={} h={}", b.n_layers_used, b.top_k),
        ));
    }
    Ok(())
}

/// Frobenius norm of the difference of the stacked matrices.
pub fn fingerprint_distance<T: Real>(a: &Fingerprint<T>, b: &Fingerprint<T>) -> Result<T> {
    check_compatible(a, b)?;
    Ok(a.data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSubset {
    Qk,
    Vo,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Singular,
    Eigen,
    Both,
}

/// Selects the fingerprint rows that enter a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowSelection {
    pub subset: WeightSubset,
    pub kind: ValueKind,
}

impl RowSelection {
    pub const ALL: RowSelection = RowSelection {
        subset: WeightSubset::Both,
        kind: ValueKind::Both,
    };

    pub fn includes(&self, block: RowBlock) -> bool {
        let subset_ok = match self.subset {
            WeightSubset::Qk => block.is_qk(),
            WeightSubset::Vo => !block.is_qk(),
            WeightSubset::Both => true,
        };
        let kind_ok = match self.kind {
            ValueKind::Singular => block.is_singular(),
            ValueKind::Eigen => !block.is_singular(),
            ValueKind::Both => true,
        };
        subset_ok && kind_ok
    }

    pub fn rows(&self, n_f: usize) -> Vec<usize> {
        RowBlock::ALL
            .into_iter()
            .filter(|&b| self.includes(b))
            .flat_map(|b| (0..n_f).map(move |l| b.row(l, n_f)))
            .collect()
    }
}

/// [`fingerprint_distance`] restricted to the selected rows.
pub fn selected_distance<T: Real>(a: &Fingerprint<T>, b: &Fingerprint<T>, selection: RowSelection) -> Result<T> {
    check_compatible(a, b)?;
    let mut acc = T::zero();
    for r in selection.rows(a.n_layers_used) {
        for (&x, &y) in a.data.row(r).iter().zip(b.data.row(r).iter()) {
            acc += (x - y) * (x - y);
        }
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport<T> {
    pub max_related_distance: T,
    pub min_unrelated_distance: T,
    pub margin: T,
}

pub fn fingerprint_margin<T: Real>(related: &[T], unrelated: &[T]) -> Result<MarginReport<T>> {
    if related.is_empty() || unrelated.is_empty() {
        return Err(Error::InvalidArgument("margin needs related and unrelated distances".into()));
    }
    let max_related = related.iter().copied().fold(T::neg_infinity(), T::max);
    let min_unrelated = unrelated.iter().copied().fold(T::infinity(), T::min);
    Ok(MarginReport {
        max_related_distance: max_related,
        min_unrelated_distance: min_unrelated,
        margin: min_unrelated - max_related,
    })
}

/// JSON sidecar written next to a fingerprint matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintSidecar {
    pub format_version: u32,
    pub model_id: String,
    pub n_f: usize,
    pub h: usize,
    pub row_order: String,
    pub created_by: String,
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_fingerprint<T: Real>(fp: &Fingerprint<T>, path: &Path, created_by: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_matrix(path, &fp.data.view())?;
    let side = FingerprintSidecar {
        format_version: FINGERPRINT_FORMAT_VERSION,
        model_id: fp.model_id.clone(),
        n_f: fp.n_layers_used,
        h: fp.top_k,
        row_order: ROW_ORDER.to_string(),
        created_by: created_by.to_string(),
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Json {
        path: sp.clone(),
        source: e,
    })?;
    fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))
}

pub fn load_fingerprint<T: Real>(path: &Path) -> Result<Fingerprint<T>> {
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: FingerprintSidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: sp.clone(),
        source: e,
    })?;
    if side.format_version != FINGERPRINT_FORMAT_VERSION {
        return Err(Error::format(&sp, format!("unsupported format_version {}", side.format_version)));
    }
    if side.row_order != ROW_ORDER {
        return Err(Error::format(&sp, format!("unsupported row_order {:?}", side.row_order)));
    }
    let data: Array2<T> = read_matrix(path)?;
    if data.dim() != (4 * side.n_f, side.h) {
        return Err(Error::dim(
            path.display().to_string(),
            format!("{}x{}", 4 * side.n_f, side.h),
            format!("{}x{}", data.nrows(), data.ncols()),
        ));
    }
    Ok(Fingerprint {
        data,
        n_layers_used: side.n_f,
        top_k: side.h,
        model_id: side.model_id,
        layer_start: 0,
        warnings: Vec::new(),
    })
}
