//! Per-region style matrices and the style-space algebra used for
//! exploration: noise jitter, interpolation, region mixing and sampling.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// `N×d` matrix; row `i` is the style code of region `i`. Entries lie in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMatrix {
    data: Array2<f32>,
}

impl StyleMatrix {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && v.abs() <= 1.0)) {
            return Err(CoreError::OutOfRange(format!(
                "style entry {v} outside [-1, 1]"
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(n_regions: usize, style_dim: usize) -> Self {
        Self {
            data: Array2::zeros((n_regions, style_dim)),
        }
    }

    /// Clamps every entry into `[-1, 1]`; non-finite entries are rejected.
    pub fn clamped(data: Array2<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::OutOfRange("non-finite style entry".into()));
        }
        Ok(Self {
            data: data.mapv(|v| v.clamp(-1.0, 1.0)),
        })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn n_regions(&self) -> usize {
        self.data.nrows()
    }

    pub fn style_dim(&self) -> usize {
        self.data.ncols()
    }

    /// `S' = clamp(S + U, -1, 1)` with `U_ij ~ Uniform(-delta, delta)`.
    pub fn inject_noise<R: Rng + ?Sized>(&self, delta: f32, rng: &mut R) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "noise delta must be finite and >= 0, got {delta}"
            )));
        }
        if delta == 0.0 {
            return Ok(self.clone());
        }
        let noise = uniform_noise(self.n_regions(), self.style_dim(), delta, rng);
        Ok(Self {
            data: (&self.data + &noise).mapv(|v| v.clamp(-1.0, 1.0)),
        })
    }

    /// `(1 - t) * a + t * b`, elementwise.
    pub fn interpolate(a: &Self, b: &Self, t: f32) -> Result<Self> {
        a.check_same_shape(b)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::OutOfRange(format!(
                "interpolation t = {t} outside [0, 1]"
            )));
        }
        if t == 0.0 {
            return Ok(a.clone());
        }
        if t == 1.0 {
            return Ok(b.clone());
        }
        let data = ndarray::Zip::from(&a.data)
            .and(&b.data)
            .map_collect(|&x, &y| ((1.0 - t) * x + t * y).clamp(-1.0, 1.0));
        Ok(Self { data })
    }

    /// Rows listed in `regions` come from `src`, all others from `base`.
    pub fn mix(base: &Self, src: &Self, regions: &[usize]) -> Result<Self> {
        base.check_same_shape(src)?;
        let mut data = base.data.clone();
        for &r in regions {
            if r >= base.n_regions() {
                return Err(CoreError::RegionOutOfRange {
                    index: r,
                    n_regions: base.n_regions(),
                });
            }
            data.row_mut(r).assign(&src.data.row(r));
        }
        Ok(Self { data })
    }

    /// I.i.d. `Uniform(-1, 1)` entries.
    pub fn sample<R: Rng + ?Sized>(n_regions: usize, style_dim: usize, rng: &mut R) -> Self {
        Self {
            data: uniform_noise(n_regions, style_dim, 1.0, rng),
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.data.dim() != other.data.dim() {
            return Err(CoreError::Shape(format!(
                "style shapes differ: {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        Ok(())
    }

    /// Little-endian `u32 N`, `u32 d`, then `N*d` row-major `f32`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.n_regions() as u32).to_le_bytes())?;
        w.write_all(&(self.style_dim() as u32).to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 4];
        let mut next = |r: &mut R| -> Result<[u8; 4]> {
            r.read_exact(&mut word)
                .map_err(|e| CoreError::Serde(format!("truncated style file: {e}")))?;
            Ok(word)
        };
        let n = u32::from_le_bytes(next(&mut r)?) as usize;
        let d = u32::from_le_bytes(next(&mut r)?) as usize;
        let mut vals = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            vals.push(f32::from_le_bytes(next(&mut r)?));
        }
        let data = Array2::from_shape_vec((n, d), vals)
            .map_err(|e| CoreError::Serde(e.to_string()))?;
        Self::new(data)
    }

    pub fn to_json(&self) -> StyleJson {
        StyleJson {
            n_regions: self.n_regions(),
            style_dim: self.style_dim(),
            data: self.data.iter().copied().collect(),
        }
    }

    pub fn from_json(json: &StyleJson) -> Result<Self> {
        let data = Array2::from_shape_vec((json.n_regions, json.style_dim), json.data.clone())
            .map_err(|e| CoreError::Shape(e.to_string()))?;
        Self::new(data)
    }
}

/// JSON wire form: flat row-major `f32` array plus shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleJson {
    pub n_regions: usize,
    pub style_dim: usize,
    pub data: Vec<f32>,
}

/// `rows × cols` matrix of i.i.d. `Uniform(-delta, delta)` draws, row-major order.
pub fn uniform_noise<R: Rng + ?Sized>(rows: usize, cols: usize, delta: f32, rng: &mut R) -> Array2<f32> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-delta..=delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_delta_is_identity() {
        let s = StyleMatrix::sample(19, 8, &mut rng(1));
        assert_eq!(s.inject_noise(0.0, &mut rng(2)).unwrap(), s);
        assert!(s.inject_noise(-0.1, &mut rng(2)).is_err());
    }

    #[test]
    fn noise_on_zero_style_is_bounded() {
        let s = StyleMatrix::zeros(19, 16);
        let n = s.inject_noise(0.05, &mut rng(3)).unwrap();
        assert!(n.data().iter().all(|v| v.abs() <= 0.05));
        assert!(n.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn noise_is_clamped_at_one() {
        let s = StyleMatrix::new(Array2::from_elem((4, 4), 0.99)).unwrap();
        for seed in 0..20 {
            let n = s.inject_noise(0.05, &mut rng(seed)).unwrap();
            assert!(n.data().iter().all(|&v| (0.94..=1.0).contains(&v)));
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let s = StyleMatrix::zeros(3, 3);
        let a = s.inject_noise(0.2, &mut rng(9)).unwrap();
        let b = s.inject_noise(0.2, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = StyleMatrix::sample(5, 3, &mut rng(4));
        let b = StyleMatrix::sample(5, 3, &mut rng(5));
        assert_eq!(StyleMatrix::interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(StyleMatrix::interpolate(&a, &b, 1.0).unwrap(), b);
        let mid = StyleMatrix::interpolate(&a, &b, 0.5).unwrap();
        for ((m, x), y) in mid.data().iter().zip(a.data()).zip(b.data()) {
            assert!((m - (x + y) / 2.0).abs() < 1e-7);
        }
        assert!(StyleMatrix::interpolate(&a, &b, 1.5).is_err());
        assert!(StyleMatrix::interpolate(&a, &StyleMatrix::zeros(4, 3), 0.5).is_err());
    }

    #[test]
    fn mix_copies_only_selected_rows() {
        let base = StyleMatrix::sample(19, 4, &mut rng(6));
        let src = StyleMatrix::sample(19, 4, &mut rng(7));
        assert_eq!(StyleMatrix::mix(&base, &src, &[]).unwrap(), base);
        let all: Vec<usize> = (0..19).collect();
        assert_eq!(StyleMatrix::mix(&base, &src, &all).unwrap(), src);
        let hair = crate::Region::Hair.index();
        let m = StyleMatrix::mix(&base, &src, &[hair]).unwrap();
        for r in 0..19 {
            let expect = if r == hair { src.data().row(r) } else { base.data().row(r) };
            assert_eq!(m.data().row(r), expect);
        }
        assert!(StyleMatrix::mix(&base, &src, &[19]).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_centered() {
        assert_eq!(
            StyleMatrix::sample(19, 8, &mut rng(11)),
            StyleMatrix::sample(19, 8, &mut rng(11))
        );
        // 10^5 draws of a 2x2 matrix; each entry's mean has sd ~ 0.0018.
        let mut r = rng(12);
        let mut sum = Array2::<f64>::zeros((2, 2));
        let n = 100_000;
        for _ in 0..n {
            let s = StyleMatrix::sample(2, 2, &mut r);
            assert!(s.data().iter().all(|v| v.abs() <= 1.0));
            sum += &s.data().mapv(|v| v as f64);
        }
        for m in sum.iter() {
            assert!((m / n as f64).abs() < 0.01);
        }
    }

    #[test]
    fn binary_and_json_round_trip() {
        let s = StyleMatrix::sample(19, 7, &mut rng(13));
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 19 * 7 * 4);
        assert_eq!(StyleMatrix::read_binary(&buf[..]).unwrap(), s);
        assert!(StyleMatrix::read_binary(&buf[..20]).is_err());
        let json = serde_json::to_string(&s.to_json()).unwrap();
        let back: StyleJson = serde_json::from_str(&json).unwrap();
        assert_eq!(StyleMatrix::from_json(&back).unwrap(), s);
    }

    #[test]
    fn construction_enforces_range() {
        assert!(StyleMatrix::new(Array2::from_elem((1, 1), 1.5)).is_err());
        assert!(StyleMatrix::new(Array2::from_elem((1, 1), f32::NAN)).is_err());
        let c = StyleMatrix::clamped(Array2::from_elem((1, 2), -3.0)).unwrap();
        assert_eq!(c.data()[[0, 1]], -1.0);
    }
}
