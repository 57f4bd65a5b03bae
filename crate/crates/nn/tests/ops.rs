use candle_core::{DType, Device, Tensor};
use deepsee_nn::ops::{
    avg_pool, batch_normalize, broadcast_style, downsample_nearest, log_softmax_channels, regional_avg_pool,
    resize_mask, upsample_nearest,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn onehot(labels: &[usize], n: usize, h: usize, w: usize) -> Tensor {
    let mut v = vec![0.0f64; n * h * w];
    for (p, &l) in labels.iter().enumerate() {
        v[l * h * w + p] = 1.0;
    }
    Tensor::from_vec(v, (1, n, h, w), &Device::Cpu).unwrap()
}

fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

#[test]
fn pooling_two_by_two_example() {
    let f = Tensor::new(&[[[[1.0f64, 2.0], [3.0, 4.0]]]], &Device::Cpu).unwrap();
    let m = onehot(&[0, 1, 0, 1], 2, 2, 2);
    assert_eq!(to_vec(&regional_avg_pool(&f, &m).unwrap()), vec![2.0, 3.0]);
}

#[test]
fn pooling_matches_brute_force_and_inverts_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (n, c, h, w) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..9), rng.random_range(1..9));
        let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..n)).collect();
        let feats: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = onehot(&labels, n, h, w);
        let f = Tensor::from_vec(feats.clone(), (1, c, h, w), &Device::Cpu).unwrap();
        let pooled = to_vec(&regional_avg_pool(&f, &m).unwrap());
        for r in 0..n {
            let px: Vec<usize> = (0..h * w).filter(|&p| labels[p] == r).collect();
            for ch in 0..c {
                let expect = if px.is_empty() {
                    0.0
                } else {
                    px.iter().map(|&p| feats[ch * h * w + p]).sum::<f64>() / px.len() as f64
                };
                let got = pooled[r * c + ch];
                assert!((got - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
        let s: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let st = Tensor::from_vec(s.clone(), (1, n, c), &Device::Cpu).unwrap();
        let map = broadcast_style(&st, &m).unwrap();
        let mv = to_vec(&map);
        for p in 0..h * w {
            for ch in 0..c {
                assert_eq!(mv[ch * h * w + p], s[labels[p] * c + ch]);
            }
        }
        let back = to_vec(&regional_avg_pool(&map, &m).unwrap());
        for r in 0..n {
            if labels.contains(&r) {
                for ch in 0..c {
                    assert!((back[r * c + ch] - s[r * c + ch]).abs() < 1e-12);
                }
            } else {
                assert!(back[r * c..(r + 1) * c].iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn pooling_rejects_mismatched_sizes() {
    let f = Tensor::zeros((1, 2, 4, 4), DType::F64, &Device::Cpu).unwrap();
    let m = Tensor::zeros((1, 3, 2, 2), DType::F64, &Device::Cpu).unwrap();
    assert!(regional_avg_pool(&f, &m).is_err());
    let s = Tensor::zeros((1, 2, 5), DType::F64, &Device::Cpu).unwrap();
    assert!(broadcast_style(&s, &m).is_err());
}

#[test]
fn resampling_helpers() {
    let x = Tensor::arange(0.0f64, 16.0, &Device::Cpu).unwrap().reshape((1, 1, 4, 4)).unwrap();
    let up = upsample_nearest(&x, 2).unwrap();
    assert_eq!(up.dims(), [1, 1, 8, 8]);
    assert_eq!(to_vec(&avg_pool(&up, 2).unwrap()), to_vec(&x));
    assert_eq!(to_vec(&downsample_nearest(&up, 2).unwrap()), to_vec(&x));
    assert_eq!(to_vec(&downsample_nearest(&x, 2).unwrap()), vec![0.0, 2.0, 8.0, 10.0]);
    // Non-integer ratio uses floor(i·in/out).
    let r = resize_mask(&x, 3, 3).unwrap();
    assert_eq!(to_vec(&r), vec![0.0, 1.0, 2.0, 4.0, 5.0, 6.0, 8.0, 9.0, 10.0]);
    assert!(avg_pool(&Tensor::zeros((1, 1, 3, 3), DType::F64, &Device::Cpu).unwrap(), 2).is_err());
}

#[test]
fn batch_normalize_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..2 * 3 * 5 * 5).map(|_| rng.random_range(-4.0..9.0)).collect();
    let x = Tensor::from_vec(v, (2, 3, 5, 5), &Device::Cpu).unwrap();
    let y = batch_normalize(&x).unwrap();
    for c in 0..3 {
        let ch = to_vec(&y.narrow(1, c, 1).unwrap());
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }
    let constant = Tensor::full(3.5f64, (2, 3, 4, 4), &Device::Cpu).unwrap();
    assert!(to_vec(&batch_normalize(&constant).unwrap()).iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn log_softmax_normalizes() {
    let x = Tensor::new(&[[[[1.0f64]], [[2.0]], [[3.0]]]], &Device::Cpu).unwrap();
    let lp = to_vec(&log_softmax_channels(&x).unwrap());
    let total: f64 = lp.iter().map(|v| v.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let z = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    assert!((lp[2] - (3.0 - z)).abs() < 1e-12);
}
