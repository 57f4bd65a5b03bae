use candle_core::{DType, Device, Tensor};
use deepsee_core::{config::make_ablation_config, ModelConfig, StyleMatrix};
use deepsee_nn::encoder::EncoderPath;
use deepsee_nn::norm::{modulate, NormSpec, SeanNorm, SpadeNorm};
use deepsee_nn::ops::batch_normalize;
use deepsee_nn::{DeepSee, ParamStore, Segmenter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, b: usize, n: usize, h: usize, w: usize) -> Tensor {
    let mut v = vec![0.0f64; b * n * h * w];
    for bi in 0..b {
        for p in 0..h * w {
            let r = rng.random_range(0..n);
            v[(bi * n + r) * h * w + p] = 1.0;
        }
    }
    Tensor::from_vec(v, (b, n, h, w), &Device::Cpu).unwrap()
}

fn vals(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    vals(a).iter().zip(vals(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn zero_prefix(store: &ParamStore, prefix: &str) {
    for (_, v) in store.group(&[prefix]) {
        v.set(&v.zeros_like().unwrap()).unwrap();
    }
}

fn tiny(scale: u32, ablation: &str) -> ModelConfig {
    ModelConfig::tiny(scale).with_ablation(ablation).unwrap()
}

#[test]
fn spade_identity_and_constant_input() {
    let mut store = ParamStore::new(DType::F64, 1);
    let spade = SpadeNorm::new(&mut store.root().sub("n"), 4, 8, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = uniform(&mut rng, &[2, 3, 6, 6], -2.0, 2.0);
    let m = random_mask(&mut rng, 2, 4, 6, 6);

    // Constant per-channel x normalizes to ~0, leaving β(M).
    let c = Tensor::full(0.7f64, (2, 3, 6, 6), &Device::Cpu).unwrap();
    let (_, beta) = spade.branch.forward(&m).unwrap();
    assert!(max_abs_diff(&spade.forward(&c, &m).unwrap(), &beta) < 1e-6);

    zero_prefix(&store, "n.gamma");
    zero_prefix(&store, "n.beta");
    let y = spade.forward(&x, &m).unwrap();
    assert_eq!(y.dims(), x.dims());
    assert!(max_abs_diff(&y, &batch_normalize(&x).unwrap()) < 1e-12);
}

fn sean(store: &mut ParamStore, kernel: usize) -> SeanNorm {
    let spec = NormSpec {
        n_regions: 4,
        style_dim: 5,
        hidden: 6,
        kernel,
        use_mask: true,
        use_style: true,
    };
    SeanNorm::new(&mut store.root().sub("n"), &spec, 3).unwrap()
}

#[test]
fn sean_alpha_zero_is_spade_and_zero_style_is_mask_only() {
    let mut store = ParamStore::new(DType::F64, 2);
    let norm = sean(&mut store, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = uniform(&mut rng, &[1, 3, 5, 5], -1.0, 1.0);
    let m = random_mask(&mut rng, 1, 4, 5, 5);
    let sm = uniform(&mut rng, &[1, 5, 5, 5], -1.0, 1.0);
    let (gm, bm) = norm.mask.as_ref().unwrap().forward(&m).unwrap();
    let spade = modulate(&x, &gm, &bm).unwrap();

    let alpha = store.get("n.alpha").unwrap();
    alpha.set(&Tensor::new(&[0.0f64], &Device::Cpu).unwrap()).unwrap();
    assert!(max_abs_diff(&norm.forward(&x, Some(&m), Some(&sm)).unwrap(), &spade) < 1e-12);

    // α clamps into [0, 1].
    alpha.set(&Tensor::new(&[-3.0f64], &Device::Cpu).unwrap()).unwrap();
    assert!(max_abs_diff(&norm.forward(&x, Some(&m), Some(&sm)).unwrap(), &spade) < 1e-12);

    // Zeroed style convolutions: blend of (0, 0) and mask modulation.
    alpha.set(&Tensor::new(&[1.0f64], &Device::Cpu).unwrap()).unwrap();
    zero_prefix(&store, "n.style");
    let y = norm.forward(&x, Some(&m), Some(&sm)).unwrap();
    assert!(max_abs_diff(&y, &batch_normalize(&x).unwrap()) < 1e-12);
}

#[test]
fn sean_is_region_local_with_pointwise_style_convs() {
    let mut store = ParamStore::new(DType::F64, 3);
    let norm = sean(&mut store, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (6, 6);
    let x = uniform(&mut rng, &[1, 3, h, w], -1.0, 1.0);
    let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..4)).collect();
    let mut mv = vec![0.0; 4 * h * w];
    for (p, &l) in labels.iter().enumerate() {
        mv[l * h * w + p] = 1.0;
    }
    let m = Tensor::from_vec(mv, (1, 4, h, w), &Device::Cpu).unwrap();
    let s1 = uniform(&mut rng, &[1, 4, 5], -1.0, 1.0);
    let mut s2v = vals(&s1);
    let region = labels[0];
    for r in 0..4 {
        if r != region {
            for j in 0..5 {
                s2v[r * 5 + j] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let s2 = Tensor::from_vec(s2v, (1, 4, 5), &Device::Cpu).unwrap();
    let y1 = vals(&norm.forward(&x, Some(&m), Some(&deepsee_nn::ops::broadcast_style(&s1, &m).unwrap())).unwrap());
    let y2 = vals(&norm.forward(&x, Some(&m), Some(&deepsee_nn::ops::broadcast_style(&s2, &m).unwrap())).unwrap());
    let mut inside = 0;
    let mut outside_diff = 0;
    for c in 0..3 {
        for p in 0..h * w {
            let i = c * h * w + p;
            if labels[p] == region {
                inside += 1;
                assert!((y1[i] - y2[i]).abs() < 1e-12);
            } else if (y1[i] - y2[i]).abs() > 1e-9 {
                outside_diff += 1;
            }
        }
    }
    assert!(inside > 0 && outside_diff > 0);
}

#[test]
fn generator_shapes_across_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (scale, lr) in [(4u32, 8usize), (8, 4), (16, 2), (32, 2)] {
        let cfg = tiny(scale, "guided");
        let model = DeepSee::new(&cfg, DType::F32).unwrap();
        let hr = lr * scale as usize;
        let x = uniform(&mut rng, &[1, 3, lr, lr], -1.0, 1.0).to_dtype(DType::F32).unwrap();
        let m = random_mask(&mut rng, 1, 4, hr, hr).to_dtype(DType::F32).unwrap();
        let s = uniform(&mut rng, &[1, 4, 8], -1.0, 1.0).to_dtype(DType::F32).unwrap();
        let y = model.generate(&x, Some(&m), Some(&s)).unwrap();
        assert_eq!(y.dims(), [1, 3, hr, hr], "scale {scale}");
        assert!(vals(&y).iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
        // Wrong mask resolution is rejected.
        let bad = random_mask(&mut rng, 1, 4, hr / 2, hr / 2).to_dtype(DType::F32).unwrap();
        assert!(model.generate(&x, Some(&bad), Some(&s)).is_err());
    }
}

#[test]
fn generator_is_deterministic_and_style_responsive() {
    let cfg = tiny(4, "independent");
    let model = DeepSee::new(&cfg, DType::F32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = uniform(&mut rng, &[1, 3, 8, 8], -1.0, 1.0).to_dtype(DType::F32).unwrap();
    let m = random_mask(&mut rng, 1, 4, 32, 32).to_dtype(DType::F32).unwrap();
    let s1 = uniform(&mut rng, &[1, 4, 8], -1.0, 1.0).to_dtype(DType::F32).unwrap();
    let s2 = uniform(&mut rng, &[1, 4, 8], -1.0, 1.0).to_dtype(DType::F32).unwrap();
    let a = vals(&model.generate(&x, Some(&m), Some(&s1)).unwrap());
    let b = vals(&model.generate(&x, Some(&m), Some(&s1)).unwrap());
    assert_eq!(a, b);
    let c = vals(&model.generate(&x, Some(&m), Some(&s2)).unwrap());
    assert_ne!(a, c);
    // A second model built from the same config has identical weights.
    let again = DeepSee::new(&cfg, DType::F32).unwrap();
    assert_eq!(a, vals(&again.generate(&x, Some(&m), Some(&s1)).unwrap()));
}

#[test]
fn prior_only_ignores_mask_and_style() {
    let cfg = ModelConfig::tiny(4).with_ablation("prior-only").unwrap();
    assert_eq!(make_ablation_config("prior-only").unwrap().ablation, cfg.ablation);
    let model = DeepSee::new(&cfg, DType::F32).unwrap();
    assert!(model.encoder.is_none());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = uniform(&mut rng, &[1, 3, 8, 8], -1.0, 1.0).to_dtype(DType::F32).unwrap();
    let base = vals(&model.generate(&x, None, None).unwrap());
    for _ in 0..3 {
        let m = random_mask(&mut rng, 1, 4, 32, 32).to_dtype(DType::F32).unwrap();
        let s = uniform(&mut rng, &[1, 4, 8], -1.0, 1.0).to_dtype(DType::F32).unwrap();
        assert_eq!(base, vals(&model.generate(&x, Some(&m), Some(&s)).unwrap()));
    }
}

#[test]
fn encoder_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lr_model = DeepSee::new(&tiny(4, "independent"), DType::F64).unwrap();
    let x = uniform(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let m = random_mask(&mut rng, 2, 4, 32, 32);
    let s = lr_model.encode(&x, Some(&m), EncoderPath::Lr).unwrap();
    assert_eq!(s.dims(), [2, 4, 8]);
    assert!(vals(&s).iter().all(|v| v.abs() <= 1.0));
    assert!(lr_model.encode(&x, Some(&m), EncoderPath::Hr).is_err());
    let wrong = random_mask(&mut rng, 2, 4, 16, 16);
    assert!(lr_model.encode(&x, Some(&wrong), EncoderPath::Lr).is_err());

    let hr_model = DeepSee::new(&tiny(4, "guided"), DType::F64).unwrap();
    let g = uniform(&mut rng, &[1, 3, 32, 32], -1.0, 1.0);
    let gm = random_mask(&mut rng, 1, 4, 32, 32);
    let s = hr_model.encode(&g, Some(&gm), EncoderPath::Hr).unwrap();
    assert_eq!(s.dims(), [1, 4, 8]);

    // Style-only (no semantics): everything pooled into row 0.
    let lr_only = DeepSee::new(&tiny(4, "lr-style-only"), DType::F64).unwrap();
    let s = vals(&lr_only.encode(&x.narrow(0, 0, 1).unwrap(), None, EncoderPath::Lr).unwrap());
    assert!(s[8..].iter().all(|&v| v == 0.0));
    assert!(s[..8].iter().any(|&v| v != 0.0));
}

#[test]
fn discriminator_contracts() {
    let cfg = tiny(4, "independent");
    let model = DeepSee::new(&cfg, DType::F64).unwrap();
    let d = &model.discriminator;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = uniform(&mut rng, &[3, 3, 32, 32], -1.0, 1.0);
    let m = random_mask(&mut rng, 3, 4, 32, 32);
    let out = d.forward(&img, Some(&m)).unwrap();
    assert_eq!(out.len(), 2);
    for o in &out {
        let (_, c, h, w) = o.logits.dims4().unwrap();
        assert_eq!(c, 1);
        assert!(h * w > 1);
        assert_eq!(o.features.len(), 3);
    }
    let again = d.forward(&img, Some(&m)).unwrap();
    for (a, b) in out.iter().zip(&again) {
        assert_eq!(vals(&a.logits), vals(&b.logits));
        let shapes_a: Vec<_> = a.features.iter().map(|f| f.dims().to_vec()).collect();
        let shapes_b: Vec<_> = b.features.iter().map(|f| f.dims().to_vec()).collect();
        assert_eq!(shapes_a, shapes_b);
    }

    // Permuting the batch permutes outputs.
    let perm = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
    let pout = d
        .forward(&img.index_select(&perm, 0).unwrap(), Some(&m.index_select(&perm, 0).unwrap()))
        .unwrap();
    for (a, b) in out.iter().zip(&pout) {
        assert!(max_abs_diff(&a.logits.index_select(&perm, 0).unwrap(), &b.logits) < 1e-12);
    }

    // Single-pixel perturbation only affects logits whose receptive field covers it.
    let single = img.narrow(0, 0, 1).unwrap();
    let sm = m.narrow(0, 0, 1).unwrap();
    let base = d.forward(&single, Some(&sm)).unwrap();
    let mut pv = vals(&single);
    let (py, px) = (2usize, 3usize);
    pv[py * 32 + px] += 0.5;
    let bumped = Tensor::from_vec(pv, (1, 3, 32, 32), &Device::Cpu).unwrap();
    let after = d.forward(&bumped, Some(&sm)).unwrap();
    let (_, _, lh, lw) = base[0].logits.dims4().unwrap();
    let (b0, a0) = (vals(&base[0].logits), vals(&after[0].logits));
    // Layers: k4 pad 2 with strides (2, 2, 1) then k4 s1 pad 2 head.
    let covers = |o: usize, p: usize| {
        let mut lo = o as isize;
        let mut hi = o as isize;
        for (stride, pad) in [(1isize, 2isize), (1, 2), (2, 2), (2, 2)] {
            lo = lo * stride - pad;
            hi = hi * stride - pad + 3;
        }
        (lo..=hi).contains(&(p as isize))
    };
    let mut changed = 0;
    for y in 0..lh {
        for x in 0..lw {
            let diff = (b0[y * lw + x] - a0[y * lw + x]).abs();
            if !(covers(y, py) && covers(x, px)) {
                assert!(diff == 0.0, "logit ({y}, {x}) changed outside its receptive field");
            } else if diff > 0.0 {
                changed += 1;
            }
        }
    }
    assert!(changed > 0);

    zero_prefix(&model.store, "discriminator");
    let z = d.forward(&img, Some(&m)).unwrap();
    assert!(z.iter().all(|o| vals(&o.logits).iter().all(|&v| v == 0.0)));
}

#[test]
fn segmentation_outputs_valid_mask_at_hr() {
    let mut cfg = ModelConfig::desk(8);
    cfg.n_regions = 19;
    let seg = Segmenter::new(&cfg, DType::F32).unwrap();
    let img = deepsee_core::ImageTensor::filled(32, 32, 0.2);
    let m = seg.predict(&img).unwrap();
    assert_eq!((m.n_regions(), m.height(), m.width()), (19, 256, 256));
    assert!(deepsee_core::mask::onehot_decode_channels(m.data()).is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(4, "independent");
    let model = DeepSee::new(&cfg, DType::F32).unwrap();
    let path = dir.path().join("m.safetensors");
    model.to_checkpoint(serde_json::json!({"step": 3})).unwrap().save(&path).unwrap();
    let ck = deepsee_nn::Checkpoint::load(&path).unwrap();
    assert_eq!(ck.state["step"], 3);
    assert_eq!(ck.config, cfg);
    let loaded = DeepSee::from_checkpoint(&ck).unwrap();
    let x = deepsee_core::ImageTensor::filled(8, 8, 0.1);
    let mask = deepsee_core::SemanticMask::uniform(32, 32, 4, 1).unwrap();
    let s = StyleMatrix::zeros(4, 8);
    let a = model.super_resolve(&x, Some(&mask), Some(&s)).unwrap();
    let b = loaded.super_resolve(&x, Some(&mask), Some(&s)).unwrap();
    assert_eq!(a, b);
    assert!(deepsee_nn::Segmenter::load(&path).is_err());
}
