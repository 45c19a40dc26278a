use attnprint_adversary::gradient::inner_product;
use attnprint_adversary::{attack_loss, fingerprint_gradient, GradientMethod};
use attnprint_core::fingerprint::{extract_fingerprint, Fingerprint};
use attnprint_core::linalg::gaussian;
use attnprint_core::model::{
    derive_related_model, generate_structured_model, generate_toy_model, AttentionWeights, ModelWeights,
    SpectralProfile, ToyModelConfig,
};
use attnprint_core::rng::Stream;

const EPS: f64 = 1e-9;

fn structured(seed: u64) -> ModelWeights<f64> {
    generate_structured_model(&ToyModelConfig::desk(), &SpectralProfile::default(), seed).unwrap()
}

fn small(n_kv_heads: usize, seed: u64) -> ModelWeights<f64> {
    let cfg = ToyModelConfig {
        d_model: 12,
        d: 8,
        n_heads: 4,
        n_kv_heads,
        n_layers: 3,
        vocab_size: 0,
        init_scale: 0.3,
    };
    generate_toy_model(&cfg, seed).unwrap()
}

fn direction(model: &ModelWeights<f64>, n_f: usize, seed: u64) -> Vec<AttentionWeights<f64>> {
    let mut s = Stream::new(seed);
    model.layers[..n_f]
        .iter()
        .map(|l| l.map(|m| gaussian(m.nrows(), m.ncols(), 1.0, &mut s)))
        .collect()
}

fn shifted(model: &ModelWeights<f64>, dir: &[AttentionWeights<f64>], t: f64) -> ModelWeights<f64> {
    let mut out = model.clone();
    for (layer, d) in out.layers.iter_mut().zip(dir) {
        for (w, v) in layer.matrices_mut().into_iter().zip(d.matrices()) {
            w.scaled_add(t, v);
        }
    }
    out
}

fn loss(model: &ModelWeights<f64>, target: &Fingerprint<f64>, n_f: usize, h: usize) -> f64 {
    attack_loss(&extract_fingerprint(model, n_f, h).unwrap(), target, EPS).unwrap()
}

fn check_directional(model: &ModelWeights<f64>, target: &Fingerprint<f64>, n_f: usize, h: usize, seed: u64) {
    let grad = fingerprint_gradient(model, target, n_f, h, EPS, GradientMethod::Analytic).unwrap();
    let dir = direction(model, n_f, seed);
    let analytic = inner_product(&grad.layers, &dir);
    // The structured family has entries near 0.02, so the step sits well below that.
    let t = 1e-7;
    let numeric = (loss(&shifted(model, &dir, t), target, n_f, h) - loss(&shifted(model, &dir, -t), target, n_f, h)) / (2.0 * t);
    let rel = (analytic - numeric).abs() / numeric.abs().max(1e-12);
    assert!(rel < 1e-4, "analytic {analytic} numeric {numeric} rel {rel}");
}

#[test]
fn loss_values() {
    let f = extract_fingerprint(&structured(1), 2, 8).unwrap();
    assert!((attack_loss(&f, &f, 1e-9).unwrap() / 1e9 - 1.0).abs() < 1e-12);
    let mut g = f.clone();
    g.data[[0, 0]] += 1.0;
    assert!((attack_loss(&f, &g, 1e-9).unwrap() - 1.0).abs() <= 1.000001e-9);
    let mut far = f.clone();
    far.data[[0, 0]] += 2.0;
    assert!(attack_loss(&f, &g, 1e-9).unwrap() > attack_loss(&f, &far, 1e-9).unwrap());
    assert!(attack_loss(&f, &extract_fingerprint(&structured(1), 3, 8).unwrap(), 1e-9).is_err());
    assert!(attack_loss(&f, &f, 0.0).is_err());
}

#[test]
fn directional_derivative_matches_central_differences() {
    let base = structured(3);
    let target = extract_fingerprint(&derive_related_model(&base, 0.05, 9).unwrap(), 4, 8).unwrap();
    for seed in 0..3 {
        check_directional(&base, &target, 4, 8, seed);
    }
    let m = small(4, 5);
    let t = extract_fingerprint(&small(4, 6), 2, 6).unwrap();
    check_directional(&m, &t, 2, 6, 11);
}

#[test]
fn grouped_query_gradient_folds_shared_heads() {
    let m = small(2, 7);
    assert!(m.is_gqa());
    let t = extract_fingerprint(&small(2, 8), 2, 4).unwrap();
    let grad = fingerprint_gradient(&m, &t, 2, 4, EPS, GradientMethod::Analytic).unwrap();
    assert_eq!(grad.layers[0].w_k.dim(), m.layers[0].w_k.dim());
    check_directional(&m, &t, 2, 4, 3);
}

#[test]
fn analytic_agrees_with_finite_difference_route() {
    let m = small(4, 9);
    let t = extract_fingerprint(&small(4, 10), 1, 4).unwrap();
    let a = fingerprint_gradient(&m, &t, 1, 4, EPS, GradientMethod::Analytic).unwrap();
    let f = fingerprint_gradient(&m, &t, 1, 4, EPS, GradientMethod::FiniteDifference { step: 1e-6 }).unwrap();
    assert_eq!(a.distance, f.distance);
    for (x, y) in a.layers[0].matrices().into_iter().zip(f.layers[0].matrices()) {
        let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = (x - y).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-5 * scale.max(1.0), "{err} vs {scale}");
    }
}

#[test]
fn gradient_is_zero_at_the_target() {
    let m = structured(4);
    let t = extract_fingerprint(&m, 4, 8).unwrap();
    let g = fingerprint_gradient(&m, &t, 4, 8, EPS, GradientMethod::Analytic).unwrap();
    assert_eq!(g.distance, 0.0);
    assert!(g.layers.iter().all(|l| l.matrices().iter().all(|m| m.iter().all(|&v| v == 0.0))));
}

#[test]
fn layers_outside_the_window_do_not_matter() {
    let m = structured(5);
    let t = extract_fingerprint(&structured(6), 4, 8).unwrap();
    let g = fingerprint_gradient(&m, &t, 4, 8, EPS, GradientMethod::Analytic).unwrap();
    assert_eq!(g.layers.len(), 4);
    let mut moved = m.clone();
    moved.layers[4].w_q.mapv_inplace(|v| v * 3.0 + 0.1);
    let g2 = fingerprint_gradient(&moved, &t, 4, 8, EPS, GradientMethod::Analytic).unwrap();
    assert_eq!(g.loss, g2.loss);
    for (a, b) in g.layers.iter().zip(&g2.layers) {
        assert_eq!(a, b);
    }
}

#[test]
fn repeated_spectrum_is_rejected() {
    let mut m = small(4, 12);
    // W_Q = W_K = I-like block gives X_σ with a repeated singular value.
    let layer = &mut m.layers[0];
    layer.w_q.fill(0.0);
    layer.w_k.fill(0.0);
    for i in 0..8 {
        layer.w_q[[i, i]] = 1.0;
        layer.w_k[[i, i]] = 1.0;
    }
    let t = extract_fingerprint(&small(4, 13), 1, 4).unwrap();
    assert!(fingerprint_gradient(&m, &t, 1, 4, EPS, GradientMethod::Analytic).is_err());
}
