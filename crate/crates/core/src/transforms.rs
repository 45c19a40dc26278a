//! Function-preserving reparameterizations of attention weights and the
//! single-head attention oracle used to certify them.
//!
//! With a permutation `P` (`d_model × d_model`) and invertible `C₁`, `C₂`
//! (`d × d`) the attacked weights are
//!
//! ```text
//! Ŵ_Q = P W_Q C₁    Ŵ_K = P W_K C₁⁻ᵀ    Ŵ_V = P W_V C₂    Ŵ_O = C₂⁻¹ W_O Pᵀ
//! ```
//!
//! Permutations are stored as index vectors: `perm[i]` is the source row of
//! row `i` in `P·W`, so `(P W)[i, :] = W[perm[i], :]` and
//! `(M Pᵀ)[:, i] = M[:, perm[i]]`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::random_orthogonal;
use crate::model::{broadcast_gqa, ModelWeights};
use crate::rng::{purpose, Stream};
use crate::scalar::Real;

/// `softmax((H W_Q)(H W_K)ᵀ / √d) (H W_V) W_O` with a row-wise softmax.
pub fn attention_forward<T: Real>(h_in: &ArrayView2<'_, T>, layer: &crate::model::AttentionWeights<T>) -> Result<Array2<T>> {
    let dm = h_in.ncols();
    if layer.w_q.nrows() != dm || layer.w_k.nrows() != dm || layer.w_v.nrows() != dm {
        return Err(Error::dim("attention input width", layer.w_q.nrows(), dm));
    }
    if layer.w_q.ncols() != layer.w_k.ncols() {
        return Err(Error::dim("w_k columns", layer.w_q.ncols(), layer.w_k.ncols()));
    }
    if layer.w_v.ncols() != layer.w_o.nrows() {
        return Err(Error::dim("w_o rows", layer.w_v.ncols(), layer.w_o.nrows()));
    }
    let q = h_in.dot(&layer.w_q);
    let k = h_in.dot(&layer.w_k);
    let v = h_in.dot(&layer.w_v);
    let scale = T::one() / T::from_usize_lossy(layer.w_q.ncols()).sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    softmax_rows(&mut scores);
    Ok(scores.dot(&v).dot(&layer.w_o))
}

/// Numerically stable in-place softmax of every row.
pub fn softmax_rows<T: Real>(m: &mut Array2<T>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// `P·W`: row `i` of the result is row `perm[i]` of `w`.
pub fn permute_rows<T: Real>(w: &ArrayView2<'_, T>, perm: &[usize]) -> Array2<T> {
    w.select(Axis(0), perm)
}

/// `M·Pᵀ`: column `i` of the result is column `perm[i]` of `m`.
pub fn permute_cols<T: Real>(m: &ArrayView2<'_, T>, perm: &[usize]) -> Array2<T> {
    m.select(Axis(1), perm)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
}

/// `C = Q₁ diag(D) Q₂` with Haar-orthogonal `Q₁`, `Q₂` and `D` uniform in
/// `[0.5, 2]`, so `κ(C) ≤ 4`. Inverses come from the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibleMap<T> {
    pub q1: Array2<T>,
    pub diag: Array1<T>,
    pub q2: Array2<T>,
}

impl<T: Real> InvertibleMap<T> {
    pub fn random(n: usize, stream: &mut Stream) -> Self {
        let q1 = random_orthogonal(n, stream);
        let diag = Array1::from_iter((0..n).map(|_| T::lit(0.5 + 1.5 * stream.uniform())));
        let q2 = random_orthogonal(n, stream);
        InvertibleMap { q1, diag, q2 }
    }

    pub fn identity(n: usize) -> Self {
        InvertibleMap {
            q1: Array2::eye(n),
            diag: Array1::ones(n),
            q2: Array2::eye(n),
        }
    }

    fn scaled(&self, inverse: bool) -> Array2<T> {
        let mut m = self.q1.clone();
        for (mut col, &d) in m.axis_iter_mut(Axis(1)).zip(self.diag.iter()) {
            col.mapv_inplace(|x| if inverse { x / d } else { x * d });
        }
        m
    }

    /// `C`
    pub fn matrix(&self) -> Array2<T> {
        self.scaled(false).dot(&self.q2)
    }

    /// `C⁻¹ = Q₂ᵀ D⁻¹ Q₁ᵀ`
    pub fn inverse(&self) -> Array2<T> {
        self.inverse_transpose().t().to_owned()
    }

    /// `C⁻ᵀ = Q₁ D⁻¹ Q₂`
    pub fn inverse_transpose(&self) -> Array2<T> {
        self.scaled(true).dot(&self.q2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Permutation,
    LinearMap,
    Combined,
}

/// Everything needed to replay an attack. Absent components are identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub kind: AttackKind,
    pub permutation: Option<Vec<usize>>,
    pub c1_seed: Option<u64>,
    pub c2_seed: Option<u64>,
    /// Fresh `C₁`, `C₂` per layer instead of one pair shared by all layers.
    pub per_layer: bool,
}

impl AttackRecord {
    pub fn validate(&self, d_model: usize) -> Result<()> {
        if let Some(p) = &self.permutation {
            if p.len() != d_model {
                return Err(Error::dim("permutation length", d_model, p.len()));
            }
            if !is_permutation(p) {
                return Err(Error::InvalidArgument("permutation is not a bijection".into()));
            }
        }
        Ok(())
    }

    /// `(C₁, C₂)` for `layer`.
    pub fn maps<T: Real>(&self, layer: usize, d: usize) -> (InvertibleMap<T>, InvertibleMap<T>) {
        let slot = if self.per_layer { layer as u64 } else { 0 };
        let make = |seed: Option<u64>, which: u64| match seed {
            Some(s) => InvertibleMap::random(d, &mut Stream::keyed(s, purpose::LINEAR_MAP).fork(2 * slot + which)),
            None => InvertibleMap::identity(d),
        };
        (make(self.c1_seed, 0), make(self.c2_seed, 1))
    }
}

fn prepared<T: Real>(model: &ModelWeights<T>) -> Result<ModelWeights<T>> {
    model.validate()?;
    broadcast_gqa(model)
}

/// Applies `record` to `model` (broadcast first if grouped-query).
/// Embeddings, when present, are mapped to `E Pᵀ` so token inputs keep
/// feeding the permuted hidden basis.
pub fn apply_attack<T: Real>(model: &ModelWeights<T>, record: &AttackRecord) -> Result<ModelWeights<T>> {
    let mut out = prepared(model)?;
    record.validate(out.d_model)?;
    let d = out.d;
    for (i, layer) in out.layers.iter_mut().enumerate() {
        if let Some(p) = &record.permutation {
            layer.w_q = permute_rows(&layer.w_q.view(), p);
            layer.w_k = permute_rows(&layer.w_k.view(), p);
            layer.w_v = permute_rows(&layer.w_v.view(), p);
            layer.w_o = permute_cols(&layer.w_o.view(), p);
        }
        if record.c1_seed.is_some() || record.c2_seed.is_some() {
            let (c1, c2) = record.maps::<T>(i, d);
            layer.w_q = layer.w_q.dot(&c1.matrix());
            layer.w_k = layer.w_k.dot(&c1.inverse_transpose());
            layer.w_v = layer.w_v.dot(&c2.matrix());
            layer.w_o = c2.inverse().dot(&layer.w_o);
        }
    }
    if let (Some(p), Some(e)) = (&record.permutation, out.embedding.as_mut()) {
        *e = permute_cols(&e.view(), p);
    }
    out.model_id = format!("{}/{}", model.model_id, kind_tag(record.kind));
    Ok(out)
}

/// Undoes [`apply_attack`]: `W_Q = Pᵀ Ŵ_Q C₁⁻¹`, `W_K = Pᵀ Ŵ_K C₁ᵀ`,
/// `W_V = Pᵀ Ŵ_V C₂⁻¹`, `W_O = C₂ Ŵ_O P`.
pub fn invert_attack<T: Real>(attacked: &ModelWeights<T>, record: &AttackRecord) -> Result<ModelWeights<T>> {
    let mut out = prepared(attacked)?;
    record.validate(out.d_model)?;
    let d = out.d;
    let inv_perm = record.permutation.as_deref().map(inverse_permutation);
    for (i, layer) in out.layers.iter_mut().enumerate() {
        if record.c1_seed.is_some() || record.c2_seed.is_some() {
            let (c1, c2) = record.maps::<T>(i, d);
            layer.w_q = layer.w_q.dot(&c1.inverse());
            layer.w_k = layer.w_k.dot(&c1.matrix().t());
            layer.w_v = layer.w_v.dot(&c2.inverse());
            layer.w_o = c2.matrix().dot(&layer.w_o);
        }
        if let Some(p) = &inv_perm {
            layer.w_q = permute_rows(&layer.w_q.view(), p);
            layer.w_k = permute_rows(&layer.w_k.view(), p);
            layer.w_v = permute_rows(&layer.w_v.view(), p);
            layer.w_o = permute_cols(&layer.w_o.view(), p);
        }
    }
    if let (Some(p), Some(e)) = (&inv_perm, out.embedding.as_mut()) {
        *e = permute_cols(&e.view(), p);
    }
    Ok(out)
}

fn kind_tag(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Permutation => "permuted",
        AttackKind::LinearMap => "linmapped",
        AttackKind::Combined => "combined",
    }
}

pub fn permutation_attack<T: Real>(model: &ModelWeights<T>, seed: u64) -> Result<(ModelWeights<T>, AttackRecord)> {
    let record = AttackRecord {
        kind: AttackKind::Permutation,
        permutation: Some(Stream::keyed(seed, purpose::PERMUTATION).permutation(model.d_model)),
        c1_seed: None,
        c2_seed: None,
        per_layer: false,
    };
    Ok((apply_attack(model, &record)?, record))
}

pub fn linear_mapping_attack<T: Real>(
    model: &ModelWeights<T>,
    seed: u64,
    per_layer: bool,
) -> Result<(ModelWeights<T>, AttackRecord)> {
    let record = AttackRecord {
        kind: AttackKind::LinearMap,
        permutation: None,
        c1_seed: Some(seed),
        c2_seed: Some(seed),
        per_layer,
    };
    Ok((apply_attack(model, &record)?, record))
}

/// One shared permutation and fresh `C₁`, `C₂` per layer.
pub fn combined_attack<T: Real>(model: &ModelWeights<T>, seed: u64) -> Result<(ModelWeights<T>, AttackRecord)> {
    let record = AttackRecord {
        kind: AttackKind::Combined,
        permutation: Some(Stream::keyed(seed, purpose::PERMUTATION).permutation(model.d_model)),
        c1_seed: Some(seed),
        c2_seed: Some(seed),
        per_layer: true,
    };
    Ok((apply_attack(model, &record)?, record))
}

/// Frobenius distance between the raw attention weights of two
/// same-shaped models.
pub fn weight_distance<T: Real>(a: &ModelWeights<T>, b: &ModelWeights<T>) -> Result<T> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::dim("layer count", a.layers.len(), b.layers.len()));
    }
    let mut acc = T::zero();
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for (x, y) in la.matrices().into_iter().zip(lb.matrices()) {
            if x.dim() != y.dim() {
                return Err(Error::dim("matrix shape", format!("{:?}", x.dim()), format!("{:?}", y.dim())));
            }
            acc += x.iter().zip(y.iter()).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>();
        }
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionWeights;
    use ndarray::array;

    #[test]
    fn single_token_identity_layer_is_identity() {
        let l = AttentionWeights {
            w_q: Array2::<f64>::eye(3),
            w_k: Array2::eye(3),
            w_v: Array2::eye(3),
            w_o: Array2::eye(3),
        };
        let h = array![[0.3, -1.0, 2.0]];
        assert_eq!(attention_forward(&h.view(), &l).unwrap(), h);
    }

    #[test]
    fn softmax_is_stable() {
        let mut m = array![[1000.0_f64, 1000.0], [-1000.0, 0.0]];
        softmax_rows(&mut m);
        assert_eq!(m[[0, 0]], 0.5);
        assert!(m[[1, 1]] > 0.999_999);
    }

    #[test]
    fn invertible_map_inverses() {
        let mut s = Stream::new(5);
        let c = InvertibleMap::<f64>::random(5, &mut s);
        let m = c.matrix();
        let err = (&m.dot(&c.inverse()) - &Array2::<f64>::eye(5)).mapv(f64::abs).sum();
        assert!(err < 1e-12);
        assert!((&c.inverse_transpose() - &c.inverse().t()).mapv(f64::abs).sum() < 1e-14);
        assert!(c.diag.iter().all(|&d| (0.5..=2.0).contains(&d)));
    }

    #[test]
    fn permutation_helpers() {
        let p = vec![2, 0, 1];
        assert!(is_permutation(&p));
        assert!(!is_permutation(&[0, 0, 1]));
        assert!(!is_permutation(&[0, 3, 1]));
        let inv = inverse_permutation(&p);
        let w = array![[1.0_f64], [2.0], [3.0]];
        assert_eq!(permute_rows(&w.view(), &p), array![[3.0], [1.0], [2.0]]);
        assert_eq!(permute_rows(&permute_rows(&w.view(), &p).view(), &inv), w);
    }

    #[test]
    fn record_json_shape() {
        let r = AttackRecord {
            kind: AttackKind::LinearMap,
            permutation: None,
            c1_seed: Some(1),
            c2_seed: Some(2),
            per_layer: true,
        };
        let j = serde_json::to_value(&r).unwrap();
        assert_eq!(j["kind"], "linear_map");
        assert_eq!(j["per_layer"], true);
        assert_eq!(serde_json::from_value::<AttackRecord>(j).unwrap(), r);
    }
}
