use multiaug_core::analysis::{
    nsv_entropy, spectrum_report, svd_spectrum, Centering, FeatureMatrix,
};
use multiaug_core::RandomStream;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = RandomStream::new(seed);
    FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

/// σ from the symmetric eigen-decomposition of FᵀF.
fn eigen_oracle(f: &FeatureMatrix) -> Vec<f64> {
    let m = DMatrix::from_row_slice(f.rows(), f.cols(), f.values());
    let gram = m.transpose() * &m;
    let mut s: Vec<f64> = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn matches_eigen_oracle_on_random_20x8() {
    for seed in 0..25 {
        let f = random_matrix(20, 8, seed);
        let got = svd_spectrum(&f, Centering::Raw);
        let want = eigen_oracle(&f);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-8 * b, "seed {seed}: {got:?} vs {want:?}");
        }
        let c = f.centered();
        let got = svd_spectrum(&f, Centering::Centered);
        for (a, b) in got.iter().zip(&eigen_oracle(&c)) {
            assert!((a - b).abs() <= 1e-8 * b);
        }
    }
}

#[test]
fn report_entropy_uses_full_spectrum() {
    let f = random_matrix(40, 32, 7);
    let r = spectrum_report(&f, 5, Centering::Raw).unwrap();
    let full = svd_spectrum(&f, Centering::Raw);
    assert_eq!(r.top, full[..5]);
    assert_eq!(r.entropy, nsv_entropy(&full).unwrap());
    assert!(r.top.windows(2).all(|w| w[0] > w[1]));
}

proptest! {
    #[test]
    fn entropy_bounded_and_scale_invariant(
        sigma in prop::collection::vec(0.0f64..10.0, 1..40),
        c in 1e-3f64..1e3,
    ) {
        prop_assume!(sigma.iter().sum::<f64>() > 1e-9);
        let h = nsv_entropy(&sigma).unwrap();
        prop_assert!(h >= 0.0 && h <= (sigma.len() as f64).ln() + 1e-12);
        let scaled: Vec<f64> = sigma.iter().map(|s| s * c).collect();
        prop_assert!((nsv_entropy(&scaled).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn duplicating_rows_keeps_entropy(seed in 0u64..1000, n in 8usize..20, d in 2usize..8) {
        let f = random_matrix(n, d, seed);
        let doubled = FeatureMatrix::new(2 * n, d, [f.values(), f.values()].concat()).unwrap();
        let a = svd_spectrum(&f, Centering::Raw);
        let b = svd_spectrum(&doubled, Centering::Raw);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((y - x * 2f64.sqrt()).abs() <= 1e-9 * y.max(1.0));
        }
        let ha = nsv_entropy(&a).unwrap();
        let hb = nsv_entropy(&b).unwrap();
        prop_assert!((ha - hb).abs() < 1e-8);
    }
}
