use std::fs;
use std::path::Path;

use attnprint_core::fingerprint::{extract_fingerprint, fingerprint_distance};
use attnprint_core::model::{
    broadcast_gqa, derive_finetuned_model, derive_related_model, generate_structured_model, generate_toy_model,
    load_model, save_model, ModelWeights, SpectralProfile, ToyModelConfig,
};
use attnprint_core::Error;
use ndarray::array;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn small() -> ToyModelConfig {
    ToyModelConfig {
        d_model: 8,
        d: 4,
        n_heads: 2,
        n_kv_heads: 2,
        n_layers: 2,
        vocab_size: 6,
        init_scale: 0.3,
    }
}

/// Writes an SFMT file byte by byte, independent of the library writer.
fn write_sfmt(path: &Path, rows: u32, cols: u32, values: &[f64]) {
    let mut b = Vec::new();
    b.extend_from_slice(b"SFMT");
    b.extend_from_slice(&[2, 0, 0, 0]);
    b.extend_from_slice(&rows.to_le_bytes());
    b.extend_from_slice(&cols.to_le_bytes());
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, b).unwrap();
}

fn write_manifest(dir: &Path, d_model: usize, d: usize) {
    let manifest = format!(
        r#"{{"format_version":1,"model_id":"hand","d_model":{d_model},"d":{d},"n_heads":1,"n_kv_heads":1,
        "n_layers":1,"vocab_size":0,"head_layout":"contiguous-blocks",
        "matrices":["q.sfmt","k.sfmt","v.sfmt","o.sfmt"]}}"#
    );
    fs::write(dir.join("manifest.json"), manifest).unwrap();
}

#[test]
fn round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m: ModelWeights<f64> = generate_toy_model(&small(), 11).unwrap();
    save_model(&m, dir.path()).unwrap();
    let back: ModelWeights<f64> = load_model(dir.path()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn hand_written_bundle_loads_exact_constants() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), 2, 2);
    write_sfmt(&dir.path().join("q.sfmt"), 2, 2, &[1.5, -2.25, 0.125, 3.0]);
    write_sfmt(&dir.path().join("k.sfmt"), 2, 2, &[1.0, 0.0, 0.0, 1.0]);
    write_sfmt(&dir.path().join("v.sfmt"), 2, 2, &[0.5, 0.5, 0.5, 0.5]);
    write_sfmt(&dir.path().join("o.sfmt"), 2, 2, &[-1.0, 2.0, -3.0, 4.0]);
    let m: ModelWeights<f64> = load_model(dir.path()).unwrap();
    assert_eq!(m.layers[0].w_q, array![[1.5, -2.25], [0.125, 3.0]]);
    assert_eq!(m.layers[0].w_o, array![[-1.0, 2.0], [-3.0, 4.0]]);
    assert!(m.embedding.is_none());
}

#[test]
fn dimension_mismatch_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), 4, 2);
    write_sfmt(&dir.path().join("q.sfmt"), 5, 2, &[0.0; 10]);
    let err = load_model::<f64>(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }), "{err}");
    assert!(err.to_string().contains("q.sfmt"), "{err}");
}

#[test]
fn non_finite_and_missing_files_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_model::<f64>(dir.path()).unwrap_err().to_string().contains("manifest.json"));
    write_manifest(dir.path(), 1, 1);
    write_sfmt(&dir.path().join("q.sfmt"), 1, 1, &[f64::NAN]);
    let err = load_model::<f64>(dir.path()).unwrap_err();
    assert!(err.to_string().contains("q.sfmt"), "{err}");
    write_sfmt(&dir.path().join("q.sfmt"), 1, 1, &[1.0]);
    let err = load_model::<f64>(dir.path()).unwrap_err();
    assert!(err.to_string().contains("k.sfmt"), "{err}");
}

#[test]
fn repeated_saves_are_byte_identical() {
    let m: ModelWeights<f64> = generate_toy_model(&small(), 12).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_model(&m, a.path()).unwrap();
    save_model(&m, b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4 * 2 + 2);
    for name in names {
        let ha = Sha256::digest(fs::read(a.path().join(&name)).unwrap());
        let hb = Sha256::digest(fs::read(b.path().join(&name)).unwrap());
        assert_eq!(ha, hb, "{name:?}");
    }
}

#[test]
fn save_to_unwritable_location_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let m: ModelWeights<f64> = generate_toy_model(&small(), 1).unwrap();
    assert!(matches!(save_model(&m, &blocker.join("sub")), Err(Error::Io { .. })));
}

#[test]
fn save_rejects_invalid_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut m: ModelWeights<f64> = generate_toy_model(&small(), 1).unwrap();
    m.layers[0].w_q[[0, 0]] = f64::INFINITY;
    assert!(save_model(&m, dir.path()).is_err());
}

#[test]
fn related_models_are_closer_than_independent_ones() {
    let cfg = ToyModelConfig::desk();
    let base: ModelWeights<f64> = generate_toy_model(&cfg, 1).unwrap();
    let related = derive_related_model(&base, 0.01, 2).unwrap();
    let other: ModelWeights<f64> = generate_toy_model(&cfg, 3).unwrap();
    let fb = extract_fingerprint(&base, 4, 8).unwrap();
    let near = fingerprint_distance(&fb, &extract_fingerprint(&related, 4, 8).unwrap()).unwrap();
    let far = fingerprint_distance(&fb, &extract_fingerprint(&other, 4, 8).unwrap()).unwrap();
    assert!(near < far, "related {near} vs unrelated {far}");
}

#[test]
fn finetuned_drift_grows_with_depth() {
    let cfg = ToyModelConfig::desk();
    let base: ModelWeights<f64> = generate_toy_model(&cfg, 1).unwrap();
    let ft = derive_finetuned_model(&base, 0.01, 2.0, 5).unwrap();
    let rel = |i: usize| {
        let diff = &ft.layers[i].w_q - &base.layers[i].w_q;
        (diff.mapv(|x| x * x).sum() / base.layers[i].w_q.mapv(|x| x * x).sum()).sqrt()
    };
    assert!(rel(0) < rel(3) && rel(3) < rel(7));
    assert!((rel(7) / rel(0)).log2() > 5.0);
}

#[test]
fn structured_models_are_deterministic_and_valid() {
    let cfg = ToyModelConfig::desk();
    let p = SpectralProfile::default();
    let a: ModelWeights<f64> = generate_structured_model(&cfg, &p, 4).unwrap();
    a.validate().unwrap();
    assert_eq!(a, generate_structured_model(&cfg, &p, 4).unwrap());
    assert_ne!(a, generate_structured_model(&cfg, &p, 5).unwrap());
    let wide = ToyModelConfig { d: 64, ..cfg };
    assert!(generate_structured_model::<f64>(&wide, &p, 1).is_err());
}

#[test]
fn gqa_models_round_trip_and_broadcast() {
    let cfg = ToyModelConfig {
        d_model: 12,
        d: 8,
        n_heads: 4,
        n_kv_heads: 2,
        n_layers: 2,
        vocab_size: 0,
        init_scale: 1.0,
    };
    let m: ModelWeights<f64> = generate_toy_model(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    assert_eq!(load_model::<f64>(dir.path()).unwrap(), m);
    let b = broadcast_gqa(&m).unwrap();
    assert_eq!(b.layers[1].w_v.ncols(), 8);
    let bad = ModelWeights { n_kv_heads: 3, ..m };
    assert!(broadcast_gqa(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_property(seed in any::<u64>(), d_model in 1usize..7, d in 1usize..5, layers in 1usize..4) {
        let cfg = ToyModelConfig { d_model, d, n_heads: 1, n_kv_heads: 1, n_layers: layers, vocab_size: 3, init_scale: 2.0 };
        let m: ModelWeights<f64> = generate_toy_model(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(&m, dir.path()).unwrap();
        prop_assert_eq!(load_model::<f64>(dir.path()).unwrap(), m);
    }

    #[test]
    fn broadcast_is_idempotent(seed in any::<u64>(), group in 1usize..4) {
        let cfg = ToyModelConfig { d_model: 6, d: 12, n_heads: 6, n_kv_heads: 6 / [1, 2, 3][group - 1], n_layers: 1, vocab_size: 0, init_scale: 1.0 };
        let m: ModelWeights<f64> = generate_toy_model(&cfg, seed).unwrap();
        let once = broadcast_gqa(&m).unwrap();
        prop_assert_eq!(broadcast_gqa(&once).unwrap(), once);
    }
}
