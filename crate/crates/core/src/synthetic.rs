//! Procedural toy faces with pixel-exact label maps.
//!
//! Used for desk-scale training and tests where the real face datasets are
//! unavailable. Each identity fixes colors and proportions; individual images
//! vary pose, expression and texture phase.

use std::path::Path;

use ::image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetRecord, Manifest, Split};
use crate::error::{CoreError, Result};
use crate::mask::{LabelMap, SemanticMask};
use crate::regions::{Region, N_REGIONS};

#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub background: [f32; 3],
    pub background2: [f32; 3],
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub lips: [f32; 3],
    pub iris: [f32; 3],
    pub cloth: [f32; 3],
    pub cx: f32,
    pub cy: f32,
    pub rx: f32,
    pub ry: f32,
    pub eye_sep: f32,
    pub eye_y: f32,
    pub eye_r: f32,
    pub mouth_y: f32,
    pub mouth_w: f32,
    pub mouth_open: f32,
    pub hair_len: f32,
    pub glasses: bool,
    pub hat: bool,
    pub hair_freq: f32,
    pub hair_phase: f32,
    pub texture_seed: u32,
}

fn color<R: Rng + ?Sized>(rng: &mut R, lo: f32, hi: f32) -> [f32; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

impl FaceParams {
    /// A fresh identity.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let tone = rng.random_range(0.35..0.9f32);
        Self {
            background: color(rng, 0.1, 0.9),
            background2: color(rng, 0.1, 0.9),
            skin: [tone, tone * rng.random_range(0.7..0.85), tone * rng.random_range(0.55..0.75)],
            hair: color(rng, 0.02, 0.7),
            lips: [rng.random_range(0.5..0.85), rng.random_range(0.15..0.35), rng.random_range(0.2..0.4)],
            iris: color(rng, 0.05, 0.6),
            cloth: color(rng, 0.05, 0.95),
            cx: 0.5,
            cy: 0.48,
            rx: rng.random_range(0.2..0.26),
            ry: rng.random_range(0.27..0.33),
            eye_sep: rng.random_range(0.08..0.11),
            eye_y: rng.random_range(-0.08..-0.03),
            eye_r: rng.random_range(0.025..0.04),
            mouth_y: rng.random_range(0.14..0.19),
            mouth_w: rng.random_range(0.06..0.1),
            mouth_open: 0.0,
            hair_len: rng.random_range(0.0..0.35),
            glasses: rng.random_bool(0.2),
            hat: rng.random_bool(0.1),
            hair_freq: rng.random_range(40.0..90.0),
            hair_phase: 0.0,
            texture_seed: rng.random(),
        }
    }

    /// Another image of the same identity.
    pub fn vary<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut p = self.clone();
        p.cx += rng.random_range(-0.03..0.03);
        p.cy += rng.random_range(-0.03..0.03);
        let zoom = rng.random_range(0.93..1.07);
        p.rx *= zoom;
        p.ry *= zoom;
        p.mouth_open = if rng.random_bool(0.4) { rng.random_range(0.01..0.025) } else { 0.0 };
        p.hair_phase = rng.random_range(0.0..std::f32::consts::TAU);
        p.texture_seed = rng.random();
        p
    }
}

fn hash_noise(seed: u32, x: u32, y: u32) -> f32 {
    let mut h = seed ^ x.wrapping_mul(0x9E37_79B1) ^ y.wrapping_mul(0x85EB_CA77);
    h ^= h >> 15;
    h = h.wrapping_mul(0x2C1B_3C6D);
    h ^= h >> 12;
    h = h.wrapping_mul(0x297A_2D39);
    h ^= h >> 15;
    (h as f32 / u32::MAX as f32) - 0.5
}

fn inside_ellipse(u: f32, v: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let (a, b) = ((u - cx) / rx, (v - cy) / ry);
    a * a + b * b <= 1.0
}

/// Renders a face into an RGB image and its label map (CelebAMask-HQ indices).
pub fn render_face(p: &FaceParams, size: usize) -> (RgbImage, LabelMap) {
    let mut labels = LabelMap::zeros((size, size));
    let mut img = RgbImage::new(size as u32, size as u32);
    let n = size as f32;
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 + 0.5) / n;
            let v = (y as f32 + 0.5) / n;
            let (region, rgb) = shade(p, u, v);
            labels[[y, x]] = region.index() as u8;
            let grain = 0.04 * hash_noise(p.texture_seed, x as u32, y as u32);
            let px = rgb.map(|c| ((c + grain).clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    (img, labels)
}

fn shade(p: &FaceParams, u: f32, v: f32) -> (Region, [f32; 3]) {
    let (dx, dy) = (u - p.cx, v - p.cy);
    let hair_tex = |base: [f32; 3]| {
        let s = 0.08 * (p.hair_freq * (u * 0.8 + v * 0.2) + p.hair_phase).sin();
        base.map(|c| c + s)
    };

    // Painter's order: later layers overwrite earlier ones.
    let bg_t = v.clamp(0.0, 1.0);
    let mut out = (
        Region::Background,
        [0, 1, 2].map(|i| p.background[i] * (1.0 - bg_t) + p.background2[i] * bg_t),
    );
    let shoulders = v > p.cy + p.ry * 1.35 && (dx.abs() < 0.45 - 0.4 * (1.0 - v));
    if shoulders {
        out = (Region::Cloth, p.cloth);
    }
    if dx.abs() < p.rx * 0.45 && v > p.cy && v < p.cy + p.ry * 1.45 {
        out = (Region::Neck, p.skin.map(|c| c * 0.85));
    }
    if p.hair_len > 0.0
        && inside_ellipse(u, v, p.cx, p.cy + p.hair_len * 0.3, p.rx * 1.25, p.ry + p.hair_len * 0.5)
        && v < p.cy + p.ry * 0.4 + p.hair_len
    {
        out = (Region::Hair, hair_tex(p.hair));
    }
    for side in [-1.0f32, 1.0] {
        if inside_ellipse(u, v, p.cx + side * p.rx, p.cy, p.rx * 0.18, p.ry * 0.22) {
            // Image-left ear is the subject's right ear.
            let r = if side < 0.0 { Region::RightEar } else { Region::LeftEar };
            out = (r, p.skin.map(|c| c * 0.92));
        }
    }
    if inside_ellipse(u, v, p.cx, p.cy, p.rx, p.ry) {
        let shade = 1.0 - 0.15 * (dx / p.rx).powi(2);
        out = (Region::Skin, p.skin.map(|c| c * shade));
        if dy < -p.ry * 0.55 + 0.02 * (dx * 30.0).sin() {
            out = (Region::Hair, hair_tex(p.hair));
        }
    }
    if p.hat && v < p.cy - p.ry * 0.6 && dx.abs() < p.rx * 1.3 && v > p.cy - p.ry * 1.3 {
        out = (Region::Hat, p.cloth.map(|c| 1.0 - c));
    }
    let ey = p.cy + p.eye_y * p.ry / 0.3;
    for side in [-1.0f32, 1.0] {
        let ex = p.cx + side * p.eye_sep * p.rx / 0.23;
        let (eye, brow) = if side < 0.0 {
            (Region::RightEye, Region::RightBrow)
        } else {
            (Region::LeftEye, Region::LeftBrow)
        };
        let bv = ey - p.eye_r * 1.9;
        if (u - ex).abs() < p.eye_r * 1.6 && (v - bv).abs() < p.eye_r * 0.35 {
            out = (brow, p.hair.map(|c| c * 0.8));
        }
        if inside_ellipse(u, v, ex, ey, p.eye_r * 1.4, p.eye_r * 0.8) {
            let d = ((u - ex).powi(2) + (v - ey).powi(2)).sqrt();
            let c = if d < p.eye_r * 0.6 { p.iris } else { [0.92, 0.92, 0.9] };
            out = (eye, c);
        }
        if p.glasses {
            let d = (((u - ex) / 1.2).powi(2) + (v - ey).powi(2)).sqrt();
            if (d - p.eye_r * 1.9).abs() < 0.006 {
                out = (Region::Eyeglasses, [0.1, 0.1, 0.1]);
            }
        }
    }
    let nose_top = ey + p.eye_r;
    let my = p.cy + p.mouth_y * p.ry / 0.3;
    if v > nose_top && v < my - 0.04 && dx.abs() < 0.012 + 0.25 * (v - nose_top) {
        out = (Region::Nose, p.skin.map(|c| c * 0.9));
    }
    let half_w = p.mouth_w;
    if dx.abs() < half_w {
        let curve = 0.012 * (1.0 - (dx / half_w).powi(2));
        let gap = p.mouth_open;
        if v > my - curve - gap - 0.012 && v <= my - gap * 0.5 {
            out = (Region::UpperLip, p.lips);
        } else if v > my - gap * 0.5 && v < my + gap * 0.5 {
            out = (Region::Mouth, [0.25, 0.05, 0.08]);
        } else if v >= my + gap * 0.5 && v < my + gap * 0.5 + curve + 0.014 {
            out = (Region::LowerLip, p.lips.map(|c| c * 0.9));
        }
    }
    out
}

/// Writes `n_images` toy faces (PNG + label PNG) and `manifest.jsonl` into `dir`.
///
/// Groups of consecutive images share an identity; every tenth identity is
/// held out as `test`.
pub fn write_dataset(
    dir: &Path,
    n_images: usize,
    size: usize,
    images_per_identity: usize,
    seed: u64,
) -> Result<Manifest> {
    if images_per_identity == 0 || size == 0 {
        return Err(CoreError::InvalidArgument(
            "size and images_per_identity must be positive".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_images);
    let mut identity = FaceParams::sample(&mut rng);
    for i in 0..n_images {
        let id_index = i / images_per_identity;
        if i > 0 && i % images_per_identity == 0 {
            identity = FaceParams::sample(&mut rng);
        }
        let (img, labels) = render_face(&identity.vary(&mut rng), size);
        let hr = dir.join(format!("{i:05}.png"));
        let lab = dir.join(format!("{i:05}_label.png"));
        img.save(&hr)?;
        SemanticMask::from_labels(&labels, N_REGIONS)?.save_png(&lab)?;
        records.push(DatasetRecord {
            id: format!("{i:05}"),
            hr_image: hr.file_name().unwrap().into(),
            label_map: Some(lab.file_name().unwrap().into()),
            identity: Some(format!("id{id_index:04}")),
            split: if id_index % 10 == 9 { Split::Test } else { Split::Train },
        });
    }
    let manifest = Manifest::new(records);
    manifest.save(dir.join("manifest.jsonl"))?;
    Manifest::load(dir.join("manifest.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_covers_major_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = FaceParams::sample(&mut rng);
        p.hair_len = 0.2;
        let (_, labels) = render_face(&p, 128);
        let mask = SemanticMask::from_labels(&labels, N_REGIONS).unwrap();
        let counts = mask.region_counts();
        for r in [Region::Background, Region::Skin, Region::Hair, Region::LeftEye, Region::RightEye, Region::Nose, Region::UpperLip] {
            assert!(counts[r.index()] > 0, "{:?} missing", r);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = FaceParams::sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(render_face(&p, 32), render_face(&p, 32));
    }

    #[test]
    fn dataset_writer() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), 12, 32, 3, 0).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(m.records[0].identity, m.records[2].identity);
        assert_ne!(m.records[2].identity, m.records[3].identity);
        assert!(m.records[0].hr_image.exists());
    }
}
