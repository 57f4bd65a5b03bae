#![allow(dead_code)]

use std::path::Path;

use base64::Engine;
use candle_core::DType;
use deepsee_core::synthetic::{render_face, FaceParams};
use deepsee_core::{ImageTensor, ModelConfig, SemanticMask};
use deepsee_core::resample::bicubic_resample;
use deepsee_nn::{DeepSee, Segmenter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn config(scale: u32, ablation: &str, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::tiny(scale).with_ablation(ablation).unwrap();
    c.n_regions = 19;
    c.seed = seed;
    c
}

/// Writes untrained toy checkpoints: `independent-x8`, `independent-x4`,
/// `guided-x4`, `prior-x4`, plus a segmenter per scale.
pub fn checkpoint_dir(dir: &Path) {
    let models = [
        ("independent-x8", config(8, "independent", 1)),
        ("independent-x4", config(4, "independent", 2)),
        ("guided-x4", config(4, "guided", 3)),
        ("prior-x4", config(4, "prior-only", 4)),
    ];
    for (name, cfg) in models {
        DeepSee::new(&cfg, DType::F32)
            .unwrap()
            .to_checkpoint(serde_json::Value::Null)
            .unwrap()
            .save(dir.join(format!("{name}.safetensors")))
            .unwrap();
    }
    for scale in [4, 8] {
        Segmenter::new(&config(scale, "independent", 9), DType::F32)
            .unwrap()
            .to_checkpoint(serde_json::Value::Null)
            .unwrap()
            .save(dir.join(format!("seg-x{scale}.safetensors")))
            .unwrap();
    }
}

/// A synthetic face at `hr` pixels and its label map.
pub fn face(seed: u64, hr: usize) -> (ImageTensor, SemanticMask) {
    let p = FaceParams::sample(&mut ChaCha8Rng::seed_from_u64(seed));
    let (img, labels) = render_face(&p, hr);
    (ImageTensor::from_rgb8(&img), SemanticMask::from_labels(&labels, 19).unwrap())
}

pub fn lr_face(seed: u64, lr: usize, scale: usize) -> ImageTensor {
    let (hr, _) = face(seed, lr * scale);
    bicubic_resample(&hr, lr, lr).unwrap()
}

pub fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn unb64(s: &str) -> Vec<u8> {
    base64::engine::general_purpose::STANDARD.decode(s).unwrap()
}
