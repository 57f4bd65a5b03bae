use std::path::Path;

use ::image::{ImageBuffer, Rgb, RgbImage};
use ndarray::{s, Array3, ArrayView2};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Gray,
    /// Non-photometric data (feature maps, label planes).
    Feature,
}

/// A `C×H×W` image. Model inputs and outputs are normalized to `[-1, 1]`
/// via `x / 127.5 - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
    colorspace: ColorSpace,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>, colorspace: ColorSpace) -> Result<Self> {
        let (c, h, w) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(CoreError::Shape(format!(
                "image must be non-empty, got {c}x{h}x{w}"
            )));
        }
        match colorspace {
            ColorSpace::Rgb if c != 3 => {
                return Err(CoreError::Shape(format!("rgb image needs 3 channels, got {c}")))
            }
            ColorSpace::Gray if c != 1 => {
                return Err(CoreError::Shape(format!("gray image needs 1 channel, got {c}")))
            }
            _ => {}
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::OutOfRange(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { data, colorspace })
    }

    pub fn rgb(data: Array3<f32>) -> Result<Self> {
        Self::new(data, ColorSpace::Rgb)
    }

    /// A constant RGB image.
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            data: Array3::from_elem((3, height, width), value),
            colorspace: ColorSpace::Rgb,
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::<f32>::zeros((3, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = px[c] as f32 / 127.5 - 1.0;
            }
        }
        Self {
            data,
            colorspace: ColorSpace::Rgb,
        }
    }

    /// Quantizes back to 8 bit, clamping to the valid range first.
    pub fn to_rgb8(&self) -> RgbImage {
        let (c, h, w) = self.data.dim();
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let mut px = [0u8; 3];
            for (k, p) in px.iter_mut().enumerate() {
                let v = self.data[[k.min(c - 1), y as usize, x as usize]];
                *p = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
            }
            Rgb(px)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = ::image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    /// Decodes an in-memory PNG or JPEG.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = ::image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path.as_ref(), ::image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, ::image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn plane(&self, c: usize) -> ArrayView2<'_, f32> {
        self.data.slice(s![c, .., ..])
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn hflip(&self) -> Self {
        Self {
            data: self.data.slice(s![.., .., ..;-1]).to_owned(),
            colorspace: self.colorspace,
        }
    }

    /// Square center crop of side `min(H, W)`, offset `((H-side)/2, (W-side)/2)`.
    pub fn center_crop_square(&self) -> Self {
        let (h, w) = (self.height(), self.width());
        let side = h.min(w);
        let top = (h - side) / 2;
        let left = (w - side) / 2;
        Self {
            data: self
                .data
                .slice(s![.., top..top + side, left..left + side])
                .to_owned(),
            colorspace: self.colorspace,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trip_is_exact() {
        let img = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8 * 50, y as u8 * 60, 255]));
        let t = ImageTensor::from_rgb8(&img);
        assert!(t.is_normalized());
        assert_eq!((t.height(), t.width()), (4, 5));
        assert_eq!(t.to_rgb8(), img);
    }

    #[test]
    fn rejects_non_finite_and_bad_channels() {
        let mut d = Array3::<f32>::zeros((3, 2, 2));
        d[[1, 1, 1]] = f32::NAN;
        assert!(ImageTensor::rgb(d).is_err());
        assert!(ImageTensor::rgb(Array3::zeros((1, 2, 2))).is_err());
        assert!(ImageTensor::new(Array3::zeros((1, 2, 2)), ColorSpace::Gray).is_ok());
    }

    #[test]
    fn png_encode_decode() {
        let img = RgbImage::from_fn(3, 3, |x, y| Rgb([x as u8, y as u8, 7]));
        let t = ImageTensor::from_rgb8(&img);
        let back = ImageTensor::decode(&t.encode_png().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(ImageTensor::decode(b"not an image").is_err());
    }

    #[test]
    fn center_crop_celeba_geometry() {
        let t = ImageTensor::filled(218, 178, 0.0);
        let c = t.center_crop_square();
        assert_eq!((c.height(), c.width()), (178, 178));
    }
}
