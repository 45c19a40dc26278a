//! The fingerprint-evasion loss `1/(‖F_M − F_T‖ + ε)` and its gradient with
//! respect to the attention weights of the fingerprinted layers.

use ndarray::{Array1, Array2};

use attnprint_core::fingerprint::{extract_fingerprint, fingerprint_distance, invariant_matrices, RowBlock};
use attnprint_core::model::{broadcast_gqa, AttentionWeights, ModelWeights};
use attnprint_core::spectra::{
    eigen_magnitude_sensitivities, singular_value_sensitivities, Sensitivity, DEFAULT_GAP_TOLERANCE,
};
use attnprint_core::Fingerprint;

use crate::error::{Error, Result};

pub fn attack_loss(f_m: &Fingerprint, f_t: &Fingerprint, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(1.0 / (fingerprint_distance(f_m, f_t)? + epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMethod {
    /// First-order spectral perturbation formulas.
    Analytic,
    /// Central differences with the given step on every weight. Slow; meant
    /// as a cross-check and for spectra the analytic route rejects.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone)]
pub struct FingerprintGradient {
    /// `∂L_attack/∂W` for each of the first `n_f` layers, shaped like the
    /// model's own (possibly grouped-query) matrices.
    pub layers: Vec<AttentionWeights<f64>>,
    pub distance: f64,
    pub loss: f64,
}

/// Gradient of [`attack_loss`] at `model` with respect to the attention
/// matrices of its first `n_f` layers.
///
/// Chain: `∂L/∂F = −(F − F_T)/(D·(D + ε)²)`; each row `F_r = v/‖v‖` pulls back
/// through `(I − F_r F_rᵀ)/‖v‖`; `∂σ_i/∂M = u_i v_iᵀ` and
/// `∂|λ_i|/∂N = Re(λ̄_i/|λ_i| · y_iᵀ x_iᵀ)`; finally the product rule for
/// `X_σ = W_Q W_Kᵀ`, `X_λ = W_Qᵀ W_K`, `Y_σ = W_V W_O`, `Y_λ = W_O W_V`.
/// At `D = 0` the gradient is zero by convention. Nearly repeated spectral
/// values (relative gap below 1e-10) are an error.
pub fn fingerprint_gradient(
    model: &ModelWeights<f64>,
    f_t: &Fingerprint,
    n_f: usize,
    h: usize,
    epsilon: f64,
    method: GradientMethod,
) -> Result<FingerprintGradient> {
    let f_m = extract_fingerprint(model, n_f, h)?;
    let distance = fingerprint_distance(&f_m, f_t)?;
    let loss = attack_loss(&f_m, f_t, epsilon)?;
    let layers = match method {
        GradientMethod::Analytic => analytic(model, &f_m, f_t, n_f, h, distance, epsilon)?,
        GradientMethod::FiniteDifference { step } => finite_difference(model, f_t, n_f, h, epsilon, step)?,
    };
    Ok(FingerprintGradient { layers, distance, loss })
}

fn analytic(
    model: &ModelWeights<f64>,
    f_m: &Fingerprint,
    f_t: &Fingerprint,
    n_f: usize,
    h: usize,
    distance: f64,
    epsilon: f64,
) -> Result<Vec<AttentionWeights<f64>>> {
    let grouped = model.is_gqa();
    let wide = if grouped { broadcast_gqa(model)? } else { model.clone() };
    if distance == 0.0 {
        return Ok(model.layers[..n_f].iter().map(AttentionWeights::zeros_like).collect());
    }
    let g_f = (&f_m.data - &f_t.data) * (-1.0 / (distance * (distance + epsilon).powi(2)));
    let tol = DEFAULT_GAP_TOLERANCE;
    let mut out = Vec::with_capacity(n_f);
    for (l, layer) in wide.layers[..n_f].iter().enumerate() {
        let inv = invariant_matrices(layer)?;
        let pull = |block: RowBlock, sens: Vec<Sensitivity<f64>>| -> Result<Array2<f64>> {
            let row = block.row(l, n_f);
            let values: Array1<f64> = sens.iter().map(|s| s.value).collect();
            let norm = values.dot(&values).sqrt();
            if norm == 0.0 {
                return Err(Error::InvalidArgument(format!("layer {l}: zero spectrum has no gradient")));
            }
            let f_r = &values / norm;
            let g_r = g_f.row(row);
            let g_v = (&g_r - &(&f_r * f_r.dot(&g_r))) / norm;
            let mut acc = Array2::zeros(sens[0].gradient.dim());
            for (s, &w) in sens.iter().zip(&g_v) {
                acc.scaled_add(w, &s.gradient);
            }
            Ok(acc)
        };
        let g_xs = pull(RowBlock::SigmaQk, singular_value_sensitivities(&inv.x_sigma.view(), h, tol)?)?;
        let g_xl = pull(RowBlock::LambdaQk, eigen_magnitude_sensitivities(&inv.x_lambda.view(), h, tol)?)?;
        let g_ys = pull(RowBlock::SigmaVo, singular_value_sensitivities(&inv.y_sigma.view(), h, tol)?)?;
        let g_yl = pull(RowBlock::LambdaVo, eigen_magnitude_sensitivities(&inv.y_lambda.view(), h, tol)?)?;
        let (wq, wk, wv, wo) = (&layer.w_q, &layer.w_k, &layer.w_v, &layer.w_o);
        let grad = AttentionWeights {
            w_q: g_xs.dot(wk) + wk.dot(&g_xl.t()),
            w_k: g_xs.t().dot(wq) + wq.dot(&g_xl),
            w_v: g_ys.dot(&wo.t()) + wo.t().dot(&g_yl),
            w_o: wv.t().dot(&g_ys) + g_yl.dot(&wv.t()),
        };
        out.push(if grouped { fold_gqa(grad, model) } else { grad });
    }
    Ok(out)
}

/// Adjoint of the grouped-query broadcast: query-head blocks that read the
/// same key/value head sum their gradients.
pub(crate) fn fold_gqa(mut grad: AttentionWeights<f64>, model: &ModelWeights<f64>) -> AttentionWeights<f64> {
    let head_dim = model.d / model.n_heads;
    let fold = |g: &Array2<f64>| {
        let mut out = Array2::zeros((g.nrows(), model.d_kv()));
        for j in 0..model.n_heads {
            let src = (j % model.n_kv_heads) * head_dim;
            for c in 0..head_dim {
                let mut dst = out.column_mut(src + c);
                dst += &g.column(j * head_dim + c);
            }
        }
        out
    };
    grad.w_k = fold(&grad.w_k);
    grad.w_v = fold(&grad.w_v);
    grad
}

fn finite_difference(
    model: &ModelWeights<f64>,
    f_t: &Fingerprint,
    n_f: usize,
    h: usize,
    epsilon: f64,
    step: f64,
) -> Result<Vec<AttentionWeights<f64>>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let loss_at = |m: &ModelWeights<f64>| -> Result<f64> { attack_loss(&extract_fingerprint(m, n_f, h)?, f_t, epsilon) };
    let mut out: Vec<AttentionWeights<f64>> = model.layers[..n_f].iter().map(AttentionWeights::zeros_like).collect();
    let mut probe = model.clone();
    for l in 0..n_f {
        for which in 0..4 {
            let len = model.layers[l].matrices()[which].len();
            for idx in 0..len {
                let original = probe.layers[l].matrices()[which].as_slice().expect("standard layout")[idx];
                let set = |p: &mut ModelWeights<f64>, v: f64| {
                    p.layers[l].matrices_mut()[which].as_slice_mut().expect("standard layout")[idx] = v;
                };
                set(&mut probe, original + step);
                let plus = loss_at(&probe)?;
                set(&mut probe, original - step);
                let minus = loss_at(&probe)?;
                set(&mut probe, original);
                out[l].matrices_mut()[which].as_slice_mut().expect("standard layout")[idx] = (plus - minus) / (2.0 * step);
            }
        }
    }
    Ok(out)
}

/// `Σ ⟨a, b⟩` over every matrix of the listed layers.
pub fn inner_product(a: &[AttentionWeights<f64>], b: &[AttentionWeights<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.matrices().into_iter().zip(y.matrices()))
        .map(|(p, q)| (p * q).sum())
        .sum()
}
