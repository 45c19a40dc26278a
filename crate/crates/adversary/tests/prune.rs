use attnprint_adversary::prune::prune_indices;
use attnprint_adversary::{structured_prune, structured_prune_strict};
use attnprint_core::linalg::complement;
use attnprint_core::model::{generate_toy_model, ModelWeights, ToyModelConfig};
use proptest::prelude::*;

fn toy(seed: u64) -> ModelWeights<f64> {
    generate_toy_model(&ToyModelConfig::desk(), seed).unwrap()
}

#[test]
fn zero_ratio_is_identity() {
    let m = toy(1);
    assert_eq!(structured_prune(&m, 0.0, 3).unwrap(), m);
}

#[test]
fn quarter_of_32_leaves_24() {
    let m = toy(2);
    let p = structured_prune(&m, 0.25, 3).unwrap();
    assert_eq!(p.d_model, 24);
    p.validate().unwrap();
    assert_eq!(p.layers.len(), m.layers.len());
    assert_eq!(p.embedding.as_ref().unwrap().dim(), (64, 24));
}

#[test]
fn same_indices_in_every_matrix() {
    let m = toy(3);
    let removed = prune_indices(32, 0.3, 9).unwrap();
    assert_eq!(removed.len(), 9);
    let keep = complement(32, &removed);
    let p = structured_prune(&m, 0.3, 9).unwrap();
    for (a, b) in p.layers.iter().zip(&m.layers) {
        for (new_row, &old_row) in keep.iter().enumerate() {
            assert_eq!(a.w_q.row(new_row), b.w_q.row(old_row));
            assert_eq!(a.w_k.row(new_row), b.w_k.row(old_row));
            assert_eq!(a.w_v.row(new_row), b.w_v.row(old_row));
            assert_eq!(a.w_o.column(new_row), b.w_o.column(old_row));
        }
    }
}

#[test]
fn bad_ratios_and_strict_floor() {
    let m = toy(4);
    assert!(structured_prune(&m, 1.0, 0).is_err());
    assert!(structured_prune(&m, -0.1, 0).is_err());
    assert!(structured_prune_strict(&m, 0.5, 0, 17).is_err());
    assert_eq!(structured_prune_strict(&m, 0.5, 0, 16).unwrap().d_model, 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pruning_is_deterministic_and_sized(ratio in 0.0f64..0.95, seed in 0u64..1000) {
        let m = toy(5);
        let a = structured_prune(&m, ratio, seed).unwrap();
        prop_assert_eq!(a.d_model, 32 - (ratio * 32.0).floor() as usize);
        prop_assert_eq!(&a, &structured_prune(&m, ratio, seed).unwrap());
        let removed = prune_indices(32, ratio, seed).unwrap();
        prop_assert!(removed.windows(2).all(|w| w[0] < w[1]));
    }
}
