use deepsee_metrics::fid::{fid, frechet_distance, rows_to_matrix, Gaussian};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn samples(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r))
}

fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Gaussian {
    Gaussian {
        mean: DVector::from_vec(mean),
        cov,
    }
}

/// Principal square root by Denman–Beavers iteration.
fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::<f64>::identity(n, n));
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        y = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
    }
    y
}

#[test]
fn identical_sets_have_zero_distance() {
    for seed in 0..5 {
        let a = samples(seed, 40, 6);
        assert!(fid(&a, &a).unwrap().abs() < 1e-6);
    }
}

#[test]
fn closed_forms() {
    let eye4 = DMatrix::<f64>::identity(4, 4);
    let d = frechet_distance(&gaussian(vec![0.0; 4], eye4.clone()), &gaussian(vec![1.0; 4], eye4)).unwrap();
    assert!((d - 4.0).abs() < 1e-5, "{d}");

    let eye2 = DMatrix::<f64>::identity(2, 2);
    let d = frechet_distance(&gaussian(vec![0.0; 2], eye2.clone() * 4.0), &gaussian(vec![0.0; 2], eye2)).unwrap();
    assert!((d - 2.0).abs() < 1e-5, "{d}");

    // Shifting a sample set leaves its covariance unchanged.
    let a = samples(3, 30, 4);
    let b = a.map(|v| v + 1.0);
    assert!((fid(&a, &b).unwrap() - 4.0).abs() < 1e-6);
}

#[test]
fn non_commuting_covariances_match_iterative_square_root() {
    let a = Gaussian::fit(&samples(5, 50, 5)).unwrap();
    let b = Gaussian::fit(&(samples(6, 50, 5) * 1.7)).unwrap();
    let root = sqrtm(&(&a.cov * &b.cov));
    let expect = (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * root.trace();
    let got = frechet_distance(&a, &b).unwrap();
    assert!((got - expect).abs() < 1e-8 * (1.0 + expect.abs()), "{got} vs {expect}");
}

#[test]
fn singular_covariances_are_regularized() {
    // Fewer samples than dimensions: rank-deficient covariances.
    let a = samples(7, 3, 8);
    let b = samples(8, 3, 8);
    let d = fid(&a, &b).unwrap();
    assert!(d.is_finite() && d >= 0.0);
    assert!(fid(&samples(1, 1, 3), &samples(2, 5, 3)).is_err());
    assert!(fid(&samples(1, 4, 3), &samples(2, 5, 2)).is_err());
}

#[test]
fn rows_to_matrix_checks_lengths() {
    assert!(rows_to_matrix(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    let m = rows_to_matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(m[(1, 0)], 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fid_is_symmetric_and_non_negative(s1 in 0u64..1000, s2 in 0u64..1000, scale in 0.2f64..3.0) {
        let a = samples(s1, 20, 4);
        let b = samples(s2 + 5000, 25, 4) * scale;
        let (x, y) = (fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
        prop_assert!(x >= 0.0);
        prop_assert!((x - y).abs() < 1e-8 * (1.0 + x));
        prop_assert!(fid(&a, &a).unwrap().abs() < 1e-6);
    }
}
