//! Hinge adversarial, feature-matching and perceptual objectives.

use candle_core::{DType, Tensor};

use crate::discriminator::PatchOutput;
use crate::error::{shape_err, NnError, Result};
use crate::extractor::FeatureExtractor;

pub const PERCEPTUAL_WEIGHTS: [f64; 5] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0];

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean over scales of `mean(relu(1 − real)) + mean(relu(1 + fake))`.
pub fn adv_loss_d(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(shape_err(format!("{} real vs {} fake logit maps", real.len(), fake.len())));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        check_same(r, f, "hinge logits")?;
        let lr = r.neg()?.affine(1.0, 1.0)?.relu()?.mean_all()?;
        let lf = f.affine(1.0, 1.0)?.relu()?.mean_all()?;
        terms.push((lr + lf)?);
    }
    mean_of(&terms)
}

/// `−mean(fake)` averaged over scales.
pub fn adv_loss_g(fake: &[Tensor]) -> Result<Tensor> {
    if fake.is_empty() {
        return Err(shape_err("no logit maps"));
    }
    let terms = fake.iter().map(|f| Ok(f.mean_all()?.neg()?)).collect::<Result<Vec<_>>>()?;
    mean_of(&terms)
}

/// Mean over scales and layers of the elementwise L1 mean. `real` features
/// should be detached by the caller.
pub fn feat_match_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(shape_err(format!("{} real vs {} fake scales", real.len(), fake.len())));
    }
    let mut terms = Vec::new();
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() {
            return Err(shape_err(format!("{} real vs {} fake layers", rs.len(), fs.len())));
        }
        for (r, f) in rs.iter().zip(fs) {
            check_same(r, f, "features")?;
            terms.push((f - r)?.abs()?.mean_all()?);
        }
    }
    mean_of(&terms)
}

pub fn feat_match_outputs(real: &[PatchOutput], fake: &[PatchOutput]) -> Result<Tensor> {
    let r: Vec<Vec<Tensor>> = real
        .iter()
        .map(|o| o.features.iter().map(Tensor::detach).collect())
        .collect();
    let f: Vec<Vec<Tensor>> = fake.iter().map(|o| o.features.clone()).collect();
    feat_match_loss(&r, &f)
}

/// Weighted L1 between extractor activations at its five stages.
pub fn perceptual_loss(fake: &Tensor, real: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    check_same(fake, real, "perceptual inputs")?;
    let ff = extractor.stages(fake)?;
    let fr = extractor.stages(&real.detach())?;
    if ff.len() != PERCEPTUAL_WEIGHTS.len() {
        return Err(NnError::InvalidArgument(format!(
            "perceptual extractor has {} stages, expected {}",
            ff.len(),
            PERCEPTUAL_WEIGHTS.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for ((a, b), w) in ff.iter().zip(&fr).zip(PERCEPTUAL_WEIGHTS) {
        let t = ((a - b.detach())?.abs()?.mean_all()? * w)?;
        total = Some(match total {
            Some(acc) => (acc + t)?,
            None => t,
        });
    }
    Ok(total.expect("five stages"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_feat: f64,
    pub lambda_vgg: f64,
}

impl LossWeights {
    pub fn new(lambda_feat: f64, lambda_vgg: f64) -> Result<Self> {
        if !(lambda_feat >= 0.0 && lambda_vgg >= 0.0) {
            return Err(NnError::InvalidArgument(format!(
                "loss weights must be non-negative, got ({lambda_feat}, {lambda_vgg})"
            )));
        }
        Ok(Self { lambda_feat, lambda_vgg })
    }
}

/// `adv + λ_feat·feat + λ_vgg·vgg`.
pub fn total_loss(adv: &Tensor, feat: &Tensor, vgg: &Tensor, w: LossWeights) -> Result<Tensor> {
    Ok(((adv + (feat * w.lambda_feat)?)? + (vgg * w.lambda_vgg)?)?)
}

/// Fraction of patches classified correctly (real > 0, fake < 0) across scales.
pub fn patch_accuracy(real: &[Tensor], fake: &[Tensor]) -> Result<f64> {
    let mut correct = 0.0;
    let mut count = 0.0;
    for (r, f) in real.iter().zip(fake) {
        correct += r.gt(0.0)?.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
        correct += f.lt(0.0)?.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
        count += (r.elem_count() + f.elem_count()) as f64;
    }
    Ok(if count > 0.0 { correct / count } else { 0.0 })
}

fn mean_of(terms: &[Tensor]) -> Result<Tensor> {
    let n = terms.len() as f64;
    Ok((Tensor::stack(terms, 0)?.sum_all()? / n)?)
}

/// Per-pixel cross-entropy against one-hot targets, both (B, N, H, W).
pub fn cross_entropy(logits: &Tensor, onehot: &Tensor) -> Result<Tensor> {
    check_same(logits, onehot, "cross-entropy")?;
    let (b, _, h, w) = logits.dims4()?;
    let lp = crate::ops::log_softmax_channels(logits)?;
    let picked = (lp * onehot.to_dtype(logits.dtype())?)?.sum_all()?;
    Ok((picked.neg()? / (b * h * w) as f64)?)
}
