use candle_core::DType;
use deepsee_core::synthetic::write_dataset;
use deepsee_core::{ImageTensor, ModelConfig, Split};
use deepsee_metrics::eval::{evaluate_bicubic, evaluate_run, EvalOptions, MaskSource, Report, BICUBIC, MODEL, REPORT_VERSION};
use deepsee_metrics::{lpips, mean_pairwise_lpips};
use deepsee_nn::{DeepSee, Lpips, Vgg, VggEmbedder, VggKind};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stand_in_lpips() -> Lpips {
    Lpips::stand_in(8, 1, DType::F32).unwrap()
}

fn smooth_image(seed: u64) -> Array3<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, p): (f32, f32, f32) = (r.random_range(0.1..0.4), r.random_range(0.1..0.4), r.random_range(0.0..6.0));
    Array3::from_shape_fn((3, 32, 32), |(c, y, x)| 0.6 * (x as f32 * fx + y as f32 * fy + p + c as f32).sin())
}

#[test]
fn lpips_is_zero_symmetric_and_grows_with_noise() {
    let net = stand_in_lpips();
    let base = smooth_image(1);
    let a = ImageTensor::rgb(base.clone()).unwrap();
    assert!(lpips(&a, &a, &net).unwrap().abs() < 1e-6);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let noise = Array3::from_shape_fn((3, 32, 32), |_| r.random_range(-1.0f32..1.0));
    let noisy = |amp: f32| ImageTensor::rgb((&base + &(&noise * amp)).mapv(|v| v.clamp(-1.0, 1.0))).unwrap();
    let d: Vec<f64> = [0.05, 0.2, 0.6].iter().map(|&amp| lpips(&a, &noisy(amp), &net).unwrap()).collect();
    assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    let b = noisy(0.3);
    assert!((lpips(&a, &b, &net).unwrap() - lpips(&b, &a, &net).unwrap()).abs() < 1e-6);
    assert_eq!(mean_pairwise_lpips(&[a.clone()], &net).unwrap(), 0.0);
    assert!(mean_pairwise_lpips(&[a, b.clone(), b], &net).unwrap() > 0.0);
}

#[test]
fn evaluation_report_covers_model_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), 8, 32, 2, 4).unwrap();
    let records = manifest.split(Split::Train);
    let net = stand_in_lpips();
    let emb = VggEmbedder(Vgg::stand_in(VggKind::Vgg16, 16, 2, DType::F32).unwrap());
    let opts = EvalOptions {
        k_styles: 3,
        diversity_images: 2,
        ..EvalOptions::default()
    };
    for ablation in ["independent", "guided", "prior-only"] {
        let mut cfg = ModelConfig::tiny(4).with_ablation(ablation).unwrap();
        cfg.n_regions = 19;
        let model = DeepSee::new(&cfg, DType::F32).unwrap();
        let report = evaluate_run(&model, &records, MaskSource::GroundTruth, &net, &emb, &opts).unwrap();
        assert_eq!(report.version, REPORT_VERSION);
        assert_eq!(report.images.len(), 2 * records.len());
        let ours = report.summary_for(MODEL).unwrap();
        let base = report.summary_for(BICUBIC).unwrap();
        assert!(ours.fid.unwrap() >= 0.0 && base.fid.unwrap() >= 0.0);
        let div = report.diversity.as_ref().unwrap().mean_pairwise_lpips;
        if ablation == "prior-only" {
            assert_eq!(div, 0.0);
        } else {
            assert!(div > 0.0, "{ablation}");
        }

        // The baseline does not depend on the model.
        let rows = evaluate_bicubic(&records, 4, None, &net).unwrap();
        let from_report: Vec<_> = report.images.iter().filter(|r| r.method == BICUBIC).cloned().collect();
        assert_eq!(rows, from_report);

        let out = dir.path().join(ablation);
        report.save(&out).unwrap();
        let back: Report = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(back, report);
        let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + report.images.len() + 2);
        assert!(csv.starts_with("id,method,psnr,ssim,lpips,fid"));
    }
}

#[test]
fn bicubic_baseline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), 4, 32, 2, 5).unwrap();
    let net = stand_in_lpips();
    let recs = manifest.split(Split::Train);
    assert_eq!(evaluate_bicubic(&recs, 4, None, &net).unwrap(), evaluate_bicubic(&recs, 4, None, &net).unwrap());
}
