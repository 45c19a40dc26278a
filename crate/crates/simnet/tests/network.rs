use attnprint_core::rng::Stream;
use attnprint_oracles as oracle;
use attnprint_simnet::layers::{BatchNorm, Conv};
use attnprint_simnet::net::smoothed_target;
use attnprint_simnet::{smoothed_bce, Architecture, Mode, SimNetParams};
use ndarray::Array2;

fn random_input(arch: &Architecture, stream: &mut Stream) -> Array2<f64> {
    let (r, c) = arch.input_shape();
    Array2::from_shape_simple_fn((r, c), || stream.uniform())
}

/// Gives batch norms non-trivial affine and running statistics.
fn perturb_batch_norms(p: &mut SimNetParams, seed: u64) {
    let mut s = Stream::new(seed);
    for bn in p.batch_norms_mut() {
        bn.gamma.mapv_inplace(|_| 0.5 + s.uniform());
        bn.beta.mapv_inplace(|_| s.uniform() - 0.5);
        bn.running_mean.mapv_inplace(|_| 0.2 * (s.uniform() - 0.5));
        bn.running_var.mapv_inplace(|_| 0.5 + s.uniform());
    }
}

fn conv_spec(c: &Conv) -> oracle::ConvSpec {
    let k = c.kernel;
    let weight = c
        .weight
        .outer_iter()
        .map(|row| {
            (0..c.in_channels())
                .map(|ci| (0..k).map(|ky| (0..k).map(|kx| row[(ci * k + ky) * k + kx]).collect()).collect())
                .collect()
        })
        .collect();
    oracle::ConvSpec {
        weight,
        stride: c.stride,
    }
}

fn bn_spec(b: &BatchNorm) -> oracle::BnSpec {
    oracle::BnSpec {
        gamma: b.gamma.to_vec(),
        beta: b.beta.to_vec(),
        mean: b.running_mean.to_vec(),
        var: b.running_var.to_vec(),
    }
}

fn net_spec(p: &SimNetParams) -> oracle::NetSpec {
    oracle::NetSpec {
        conv1: conv_spec(&p.conv1),
        bn1: bn_spec(&p.bn1),
        blocks: p
            .stages
            .iter()
            .flatten()
            .map(|b| oracle::BlockSpec {
                conv1: conv_spec(&b.conv1),
                bn1: bn_spec(&b.bn1),
                conv2: conv_spec(&b.conv2),
                bn2: bn_spec(&b.bn2),
                shortcut: b.shortcut.as_ref().map(|s| (conv_spec(&s.conv), bn_spec(&s.bn))),
            })
            .collect(),
        fc_weight: p.fc_weight.to_vec(),
        fc_bias: p.fc_bias,
    }
}

#[test]
fn eval_forward_matches_direct_convolution_oracle() {
    let arch = Architecture::desk(2, 8).unwrap();
    assert_eq!(arch.widths, [4, 4, 8, 16, 32, 32]);
    let mut p = SimNetParams::init(arch, 3).unwrap();
    perturb_batch_norms(&mut p, 4);
    p.fc_bias = 0.3;
    let spec = net_spec(&p);
    let mut s = Stream::new(5);
    for _ in 0..4 {
        let x = random_input(&arch, &mut s);
        let got = p.score(&x).unwrap();
        let rows: oracle::Mat = x.outer_iter().map(|r| r.to_vec()).collect();
        let want = oracle::simnet_eval(&spec, &rows);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn non_square_input_matches_oracle() {
    let arch = Architecture::desk(4, 8).unwrap();
    let mut p = SimNetParams::init(arch, 6).unwrap();
    perturb_batch_norms(&mut p, 7);
    let x = random_input(&arch, &mut Stream::new(8));
    let rows: oracle::Mat = x.outer_iter().map(|r| r.to_vec()).collect();
    assert!((p.score(&x).unwrap() - oracle::simnet_eval(&net_spec(&p), &rows)).abs() < 1e-10);
}

#[test]
fn init_is_seeded_and_shape_checked() {
    let arch = Architecture::desk(2, 8).unwrap();
    let a = SimNetParams::init(arch, 1).unwrap();
    assert_eq!(a, SimNetParams::init(arch, 1).unwrap());
    assert_ne!(a, SimNetParams::init(arch, 2).unwrap());
    let bound = 1.0 / 9f64.sqrt();
    assert!(a.conv1.weight.iter().all(|w| w.abs() <= bound));
    assert!(a.batch_norms().iter().all(|bn| bn.gamma.iter().all(|&g| g == 1.0)));
    assert_eq!(a.fc_bias, 0.0);
    // Projections appear exactly where channel counts or strides change.
    let projections: Vec<bool> = a.stages.iter().flatten().map(|b| b.shortcut.is_some()).collect();
    assert_eq!(projections, [false, false, true, false, true, false, true, false, false, false]);
    assert!(a.score(&Array2::zeros((4, 8))).is_err());
}

#[test]
fn full_width_parameter_count() {
    let p = SimNetParams::init(Architecture::full(8, 256).unwrap(), 0).unwrap();
    // Basic-block ResNet with widths 64/64/128/256/512/512 and a one-channel stem.
    let conv = |i: usize, o: usize, k: usize| i * o * k * k;
    let bn = |c: usize| 2 * c;
    let block = |i: usize, o: usize| {
        conv(i, o, 3) + bn(o) + conv(o, o, 3) + bn(o) + if i != o { conv(i, o, 1) + bn(o) } else { 0 }
    };
    let widths = [64, 64, 128, 256, 512, 512];
    let mut expected = conv(1, 64, 3) + bn(64) + 512 + 1;
    for s in 0..5 {
        let stride_change = [false, true, true, true, false][s];
        let (i, o) = (widths[s], widths[s + 1]);
        expected += if stride_change && i == o {
            block(i, o) + conv(i, o, 1) + bn(o)
        } else {
            block(i, o)
        };
        expected += block(o, o);
    }
    assert_eq!(p.parameter_count(), expected);
}

#[test]
fn eval_scores_are_batch_independent() {
    let arch = Architecture::desk(2, 8).unwrap();
    let mut p = SimNetParams::init(arch, 9).unwrap();
    perturb_batch_norms(&mut p, 10);
    let mut s = Stream::new(11);
    let xs: Vec<Array2<f64>> = (0..5).map(|_| random_input(&arch, &mut s)).collect();
    let batched = p.forward(&xs, Mode::Eval).unwrap();
    for (x, b) in xs.iter().zip(&batched) {
        let single = p.score(x).unwrap();
        assert!((single - b).abs() < 1e-10);
        assert!((0.0..=1.0).contains(&single));
    }
    assert_eq!(p.forward(&xs, Mode::Eval).unwrap(), batched);
    let train = p.forward(&xs, Mode::Train).unwrap();
    assert!(train.iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn smoothed_loss_values() {
    assert!((smoothed_bce(0.5, 0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((smoothed_bce(0.5, 1, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    let direct = -(0.99 * 0.9f64.ln() + 0.01 * 0.1f64.ln());
    assert!((smoothed_bce(0.9, 1, 0.01) - direct).abs() < 1e-15);
    assert!((smoothed_bce(0.9, 1, 0.01) - 0.1273).abs() < 5e-5);
    // minimum sits at the smoothed target
    let y = smoothed_target(1, 0.01);
    let at = smoothed_bce(y, 1, 0.01);
    assert!(smoothed_bce(y + 1e-4, 1, 0.01) > at && smoothed_bce(y - 1e-4, 1, 0.01) > at);
    assert!(smoothed_bce(0.0, 1, 0.0).is_finite() && smoothed_bce(1.0, 1, 0.0) >= 0.0);
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        // both effectively zero; compare absolutely
        (a - n).abs() * 1e3
    } else {
        (a - n).abs() / scale
    }
}

fn tiny() -> (SimNetParams, Vec<Array2<f64>>, Vec<u8>) {
    let arch = Architecture::new(2, 8, [2, 2, 3, 3, 4, 4]).unwrap();
    let mut p = SimNetParams::init(arch, 12).unwrap();
    perturb_batch_norms(&mut p, 13);
    let mut s = Stream::new(14);
    let xs = (0..3).map(|_| random_input(&arch, &mut s)).collect();
    (p, xs, vec![1, 0, 1])
}

#[test]
fn parameter_gradients_match_central_differences() {
    for mode in [Mode::Train, Mode::Eval] {
        let (p, xs, ys) = tiny();
        let analytic = p.loss_and_gradients(&xs, &ys, 0.01, mode).unwrap().params;
        let loss = |q: &SimNetParams| q.loss_and_gradients(&xs, &ys, 0.01, mode).unwrap().loss;
        let grads: Vec<Vec<f64>> = analytic.learnable().iter().map(|t| t.to_vec()).collect();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for (t, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = p.clone();
                plus.learnable_mut()[t][i] += step;
                let mut minus = p.clone();
                minus.learnable_mut()[t][i] -= step;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                worst = worst.max(relative_error(g[i], numeric));
            }
        }
        assert!(worst < 1e-4, "{mode:?}: worst relative error {worst}");
    }
}

#[test]
fn input_gradients_match_central_differences() {
    let (p, xs, ys) = tiny();
    let analytic = p.loss_and_gradients(&xs, &ys, 0.01, Mode::Train).unwrap().inputs;
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for b in 0..xs.len() {
        for idx in [(0, 0), (3, 4), (7, 7), (5, 1)] {
            let shifted = |delta: f64| {
                let mut v = xs.clone();
                v[b][idx] += delta;
                p.loss_and_gradients(&v, &ys, 0.01, Mode::Train).unwrap().loss
            };
            let numeric = (shifted(step) - shifted(-step)) / (2.0 * step);
            worst = worst.max(relative_error(analytic[b][idx], numeric));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}
