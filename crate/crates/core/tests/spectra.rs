use attnprint_core::linalg::gaussian;
use attnprint_core::rng::Stream;
use attnprint_core::spectra::{
    eigen_magnitudes, eigenbasis_condition, eigenvalues, singular_values, spectral_norm, Conditioning,
};
use attnprint_core::transforms::{permute_cols, permute_rows, InvertibleMap};
use attnprint_oracles as oracle;
use ndarray::{array, Array2};
use proptest::prelude::*;

fn to_rows(m: &Array2<f64>) -> oracle::Mat {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
    }
}

#[test]
fn singular_values_documented_cases() {
    let s = singular_values(&Array2::<f64>::eye(3).view()).unwrap();
    assert_close(s.values(), &[1.0, 1.0, 1.0], 1e-15);
    let s = singular_values(&array![[0.0, 2.0], [0.0, 0.0]].view()).unwrap();
    assert_close(s.values(), &[2.0, 0.0], 1e-15);
    let s = singular_values(&array![[3.0, 0.0], [4.0, 5.0]].view()).unwrap();
    let want = oracle::singular_values_2x2([[3.0, 0.0], [4.0, 5.0]]);
    assert_close(s.values(), &want, 1e-12);
    assert_close(s.values(), &[45f64.sqrt(), 5f64.sqrt()], 1e-12);
}

#[test]
fn eigen_magnitudes_documented_cases() {
    let m = eigen_magnitudes(&array![[2.0, 1.0], [0.0, 3.0]].view()).unwrap();
    assert_close(m.values(), &[3.0, 2.0], 1e-14);
    let m = eigen_magnitudes(&array![[0.0, -1.0], [1.0, 0.0]].view()).unwrap();
    assert_close(m.values(), &[1.0, 1.0], 1e-14);
}

#[test]
fn eigen_magnitudes_match_characteristic_polynomial_roots() {
    for n in 1..=4 {
        for seed in 0..25 {
            let a: Array2<f64> = gaussian(n, n, 1.0, &mut Stream::new(1000 * n as u64 + seed));
            let got = eigen_magnitudes(&a.view()).unwrap();
            let want = oracle::eigen_magnitudes_via_charpoly(&to_rows(&a));
            assert_close(got.values(), &want, 1e-8);
        }
    }
}

#[test]
fn spectral_norm_cases() {
    assert_eq!(spectral_norm(&Array2::<f64>::eye(4).view()).unwrap(), 1.0);
    assert!((spectral_norm(&(Array2::<f64>::eye(4) * 2.0).view()).unwrap() - 2.0).abs() < 1e-15);
    let m: Array2<f64> = gaussian(5, 3, 1.0, &mut Stream::new(9));
    assert_eq!(spectral_norm(&m.view()).unwrap(), singular_values(&m.view()).unwrap().values()[0]);
}

#[test]
fn condition_number_cases() {
    let k = eigenbasis_condition(&array![[2.0_f64, 1.0], [1.0, 2.0]].view()).unwrap();
    assert!((k.value().unwrap() - 1.0).abs() < 1e-8);
    let k = eigenbasis_condition(&Array2::<f64>::eye(3).view()).unwrap();
    assert!((k.value().unwrap() - 1.0).abs() < 1e-8);
    let k = eigenbasis_condition(&array![[1.0_f64, 1.0], [0.0, 1.0]].view()).unwrap();
    assert_eq!(k, Conditioning::Defective);
}

#[test]
fn non_finite_input_is_rejected() {
    assert!(singular_values(&array![[f64::NAN]].view()).is_err());
    assert!(eigen_magnitudes(&array![[1.0, f64::INFINITY], [0.0, 1.0]].view()).is_err());
    assert!(eigen_magnitudes(&Array2::<f64>::zeros((2, 3)).view()).is_err());
}

#[test]
fn singular_squares_match_gram_eigenvalues() {
    for seed in 0..100 {
        let mut s = Stream::new(seed);
        let rows = 2 + s.below(6) as usize;
        let cols = 2 + s.below(6) as usize;
        let m: Array2<f64> = gaussian(rows, cols, 1.0, &mut s);
        let sv = singular_values(&m.view()).unwrap();
        let gram = m.t().dot(&m);
        let ev = eigen_magnitudes(&gram.view()).unwrap();
        let top = sv.values()[0] * sv.values()[0];
        for (i, &x) in sv.values().iter().enumerate() {
            assert!((x * x - ev.values()[i]).abs() <= 1e-8 * top);
        }
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    any::<u64>().prop_map(move |seed| gaussian(rows, cols, 1.0, &mut Stream::new(seed)))
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..9, 1usize..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_vectors_are_sorted_and_nonnegative((r, c) in dims(), seed in any::<u64>()) {
        let m: Array2<f64> = gaussian(r, c, 1.0, &mut Stream::new(seed));
        let s = singular_values(&m.view()).unwrap();
        prop_assert_eq!(s.len(), r.min(c));
        prop_assert!(s.values().windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.values().iter().all(|&x| x >= 0.0));
        let n = r.max(c);
        let sq: Array2<f64> = gaussian(n, n, 1.0, &mut Stream::new(seed ^ 1));
        let e = eigen_magnitudes(&sq.view()).unwrap();
        prop_assert!(e.values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_values_survive_permutations(seed in any::<u64>(), (r, c) in dims()) {
        let mut s = Stream::new(seed);
        let m: Array2<f64> = gaussian(r, c, 1.0, &mut s);
        let p1 = s.permutation(r);
        let p2 = s.permutation(c);
        let pm = permute_cols(&permute_rows(&m.view(), &p1).view(), &p2);
        let a = singular_values(&m.view()).unwrap();
        let b = singular_values(&pm.view()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-10 * a.max().max(1.0));
        }
    }

    #[test]
    fn weyl_inequality(m in matrix(6, 4), dm in matrix(6, 4), scale in 1e-6f64..1.0) {
        let delta = &dm * scale;
        let a = singular_values(&m.view()).unwrap();
        let b = singular_values(&(&m + &delta).view()).unwrap();
        let bound = spectral_norm(&delta.view()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn eigen_magnitudes_survive_similarity(seed in any::<u64>(), n in 2usize..8) {
        let mut s = Stream::new(seed);
        let m: Array2<f64> = gaussian(n, n, 1.0, &mut s);
        let c = InvertibleMap::<f64>::random(n, &mut s);
        let sim = c.matrix().dot(&m).dot(&c.inverse());
        let a = eigen_magnitudes(&m.view()).unwrap();
        let b = eigen_magnitudes(&sim.view()).unwrap();
        let tol = 1e-6 * spectral_norm(&m.view()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= tol);
        }
    }

    #[test]
    fn bauer_fike(seed in any::<u64>(), n in 2usize..7, scale in 1e-8f64..1e-2) {
        let mut s = Stream::new(seed);
        let m: Array2<f64> = gaussian(n, n, 1.0, &mut s);
        let dm: Array2<f64> = gaussian(n, n, scale, &mut s);
        let Conditioning::Diagonalizable(kappa) = eigenbasis_condition(&m.view()).unwrap() else {
            return Ok(());
        };
        let radius = kappa * spectral_norm(&dm.view()).unwrap();
        let base = eigenvalues(&m.view()).unwrap();
        for z in eigenvalues(&(&m + &dm).view()).unwrap() {
            let nearest = base.iter().map(|w| (z - w).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest <= radius * (1.0 + 1e-9) + 1e-12);
        }
    }
}
