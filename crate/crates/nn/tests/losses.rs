use candle_core::{DType, Device, Tensor};
use deepsee_nn::extractor::{FeatureExtractor, Lpips, Vgg, VggKind};
use deepsee_nn::losses::{
    adv_loss_d, adv_loss_g, cross_entropy, feat_match_loss, patch_accuracy, perceptual_loss, total_loss, LossWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full(v: f64, shape: &[usize]) -> Tensor {
    Tensor::full(v, shape, &Device::Cpu).unwrap()
}

fn value(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn hinge_closed_forms() {
    let s = [1, 1, 3, 3];
    assert_eq!(value(&adv_loss_d(&[full(10.0, &s)], &[full(-10.0, &s)]).unwrap()), 0.0);
    assert_eq!(value(&adv_loss_d(&[full(0.0, &s)], &[full(0.0, &s)]).unwrap()), 2.0);
    let one = [1, 1, 1, 1];
    assert_eq!(value(&adv_loss_d(&[full(0.5, &one)], &[full(-0.25, &one)]).unwrap()), 1.25);
    // Scale mean.
    let two = adv_loss_d(&[full(0.0, &s), full(10.0, &one)], &[full(0.0, &s), full(-10.0, &one)]).unwrap();
    assert_eq!(value(&two), 1.0);
    assert!(adv_loss_d(&[full(0.0, &s)], &[full(0.0, &one)]).is_err());
}

#[test]
fn generator_adversarial_closed_forms() {
    let s = [2, 1, 4, 4];
    assert_eq!(value(&adv_loss_g(&[full(0.0, &s)]).unwrap()), 0.0);
    assert_eq!(value(&adv_loss_g(&[full(-2.0, &s)]).unwrap()), 2.0);
    assert_eq!(value(&adv_loss_g(&[full(0.0, &s), full(2.0, &[1, 1, 2, 2])]).unwrap()), -1.0);
}

#[test]
fn feature_matching_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let real: Vec<Tensor> = (0..3)
        .map(|i| {
            let n = 2 * 4 * (i + 2) * (i + 2);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_vec(v, (2, 4, i + 2, i + 2), &Device::Cpu).unwrap()
        })
        .collect();
    let plus1: Vec<Tensor> = real.iter().map(|t| (t + 1.0).unwrap()).collect();
    assert_eq!(value(&feat_match_loss(&[real.clone()], &[real.clone()]).unwrap()), 0.0);
    assert!((value(&feat_match_loss(&[real.clone()], &[plus1]).unwrap()) - 1.0).abs() < 1e-12);
    let mixed = vec![(&real[0] + 2.0).unwrap(), real[1].clone()];
    assert!((value(&feat_match_loss(&[real[..2].to_vec()], &[mixed]).unwrap()) - 1.0).abs() < 1e-12);
    assert!(feat_match_loss(&[real.clone()], &[real[..2].to_vec()]).is_err());
}

#[test]
fn total_loss_is_weighted_sum() {
    let w = LossWeights::new(10.0, 10.0).unwrap();
    let t = total_loss(&full(1.0, &[]), &full(0.2, &[]), &full(0.3, &[]), w).unwrap();
    assert!((value(&t) - 6.0).abs() < 1e-12);
    let pure = total_loss(&full(1.5, &[]), &full(0.2, &[]), &full(0.3, &[]), LossWeights::new(0.0, 0.0).unwrap()).unwrap();
    assert_eq!(value(&pure), 1.5);
    assert!(LossWeights::new(-1.0, 0.0).is_err());
}

#[test]
fn patch_accuracy_counts_correct_signs() {
    let real = Tensor::new(&[[[[1.0f64, -1.0]]]], &Device::Cpu).unwrap();
    let fake = Tensor::new(&[[[[-1.0f64, -1.0]]]], &Device::Cpu).unwrap();
    assert_eq!(patch_accuracy(&[real], &[fake]).unwrap(), 0.75);
}

#[test]
fn cross_entropy_matches_manual_value() {
    let logits = Tensor::new(&[[[[0.0f64]], [[(3.0f64).ln()]]]], &Device::Cpu).unwrap();
    let target = Tensor::new(&[[[[0.0f64]], [[1.0]]]], &Device::Cpu).unwrap();
    // p(class 1) = 3/4.
    assert!((value(&cross_entropy(&logits, &target).unwrap()) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
}

fn image(rng: &mut ChaCha8Rng) -> Tensor {
    let v: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.random_range(-0.8..0.8)).collect();
    Tensor::from_vec(v, (1, 3, 32, 32), &Device::Cpu).unwrap()
}

#[test]
fn perceptual_loss_properties() {
    let vgg = Vgg::stand_in(VggKind::Vgg19, 8, 1, DType::F64).unwrap();
    assert_eq!(vgg.stages(&full(0.0, &[1, 3, 32, 32])).unwrap().len(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = image(&mut rng);
    assert_eq!(value(&perceptual_loss(&x, &x, &vgg).unwrap()), 0.0);
    let l1 = value(&perceptual_loss(&(&x + 0.01).unwrap(), &x, &vgg).unwrap());
    let l2 = value(&perceptual_loss(&(&x + 0.02).unwrap(), &x, &vgg).unwrap());
    assert!(l1 > 0.0 && l1 < l2, "{l1} {l2}");
    assert!(perceptual_loss(&x, &full(0.0, &[1, 3, 16, 16]), &vgg).is_err());
}

#[test]
fn lpips_properties() {
    let lp = Lpips::stand_in(8, 2, DType::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = image(&mut rng);
    let b = image(&mut rng);
    let d = |x: &Tensor, y: &Tensor| lp.distance(x, y).unwrap().to_vec1::<f64>().unwrap()[0];
    assert_eq!(d(&a, &a), 0.0);
    assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
    let noise = image(&mut rng);
    let amps: Vec<f64> = [0.05, 0.1, 0.2].iter().map(|&s| d(&a, &(&a + (&noise * s).unwrap()).unwrap())).collect();
    assert!(amps[0] < amps[1] && amps[1] < amps[2], "{amps:?}");
}
