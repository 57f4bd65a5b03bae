//! One-hot semantic layouts and the editing operations used for
//! interactive shape manipulation.

use std::collections::VecDeque;
use std::io::Cursor;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::regions::{self, PALETTE};

/// Integer label map, `H×W`, one region index per pixel.
pub type LabelMap = Array2<u8>;

/// Binary `N×H×W` layout with exactly one active channel per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    data: Array3<u8>,
    region_names: Vec<String>,
}

/// Builds the one-hot layout for `labels`. Fails on the first label that is
/// not in `[0, n_regions)`.
pub fn onehot_encode(labels: &LabelMap, n_regions: usize) -> Result<SemanticMask> {
    if n_regions == 0 || n_regions > 256 {
        return Err(CoreError::InvalidArgument(format!(
            "n_regions must be in 1..=256, got {n_regions}"
        )));
    }
    let (h, w) = labels.dim();
    let mut data = Array3::<u8>::zeros((n_regions, h, w));
    for ((row, col), &v) in labels.indexed_iter() {
        if v as usize >= n_regions {
            return Err(CoreError::LabelOutOfRange {
                row,
                col,
                value: v as u32,
                n_regions,
            });
        }
        data[[v as usize, row, col]] = 1;
    }
    Ok(SemanticMask {
        data,
        region_names: regions::region_names(n_regions),
    })
}

/// Recovers the label map from raw channels, validating binarity and the
/// one-hot property.
pub fn onehot_decode_channels(data: &Array3<u8>) -> Result<LabelMap> {
    let (n, h, w) = data.dim();
    let mut labels = LabelMap::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let mut active = 0;
            let mut label = 0usize;
            for r in 0..n {
                match data[[r, row, col]] {
                    0 => {}
                    1 => {
                        active += 1;
                        label = r;
                    }
                    _ => {
                        return Err(CoreError::NotOneHot {
                            row,
                            col,
                            active: usize::MAX,
                        })
                    }
                }
            }
            if active != 1 {
                return Err(CoreError::NotOneHot { row, col, active });
            }
            labels[[row, col]] = label as u8;
        }
    }
    Ok(labels)
}

pub fn onehot_decode(mask: &SemanticMask) -> LabelMap {
    mask.labels()
}

impl SemanticMask {
    pub fn from_channels(data: Array3<u8>) -> Result<Self> {
        onehot_decode_channels(&data)?;
        let n = data.dim().0;
        Ok(Self {
            data,
            region_names: regions::region_names(n),
        })
    }

    pub fn from_labels(labels: &LabelMap, n_regions: usize) -> Result<Self> {
        onehot_encode(labels, n_regions)
    }

    /// Every pixel assigned to `region`.
    pub fn uniform(height: usize, width: usize, n_regions: usize, region: usize) -> Result<Self> {
        if region >= n_regions {
            return Err(CoreError::RegionOutOfRange {
                index: region,
                n_regions,
            });
        }
        onehot_encode(&LabelMap::from_elem((height, width), region as u8), n_regions)
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn n_regions(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn labels(&self) -> LabelMap {
        let (n, h, w) = self.data.dim();
        let mut labels = LabelMap::zeros((h, w));
        for r in 0..n {
            let ch = self.data.index_axis(Axis(0), r);
            for ((row, col), &v) in ch.indexed_iter() {
                if v == 1 {
                    labels[[row, col]] = r as u8;
                }
            }
        }
        labels
    }

    /// Pixel count per region.
    pub fn region_counts(&self) -> Vec<usize> {
        self.data
            .axis_iter(Axis(0))
            .map(|ch| ch.iter().filter(|&&v| v == 1).count())
            .collect()
    }

    /// Nearest-neighbor resize; source index is `floor(i * in / out)`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::InvalidArgument(
                "target size must be positive".into(),
            ));
        }
        let labels = self.labels();
        let (h, w) = labels.dim();
        let out = LabelMap::from_shape_fn((height, width), |(i, j)| {
            labels[[i * h / height, j * w / width]]
        });
        onehot_encode(&out, self.n_regions())
    }

    /// Horizontal flip with left/right paired regions swapped.
    pub fn hflip_swapped(&self) -> Self {
        let labels = self.labels();
        let w = labels.dim().1;
        let n = self.n_regions();
        let flipped = LabelMap::from_shape_fn(labels.dim(), |(i, j)| {
            let l = labels[[i, w - 1 - j]] as usize;
            let m = regions::mirrored(l);
            if m < n {
                m as u8
            } else {
                l as u8
            }
        });
        onehot_encode(&flipped, n).expect("mirrored labels stay in range")
    }

    /// Stable 64-bit FNV-1a fingerprint of the label map.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for b in (self.n_regions() as u32)
            .to_le_bytes()
            .into_iter()
            .chain((self.height() as u32).to_le_bytes())
            .chain((self.width() as u32).to_le_bytes())
        {
            feed(b);
        }
        for &l in self.labels().iter() {
            feed(l);
        }
        h
    }

    pub fn edit(&self, edit: &MaskEdit) -> Result<Self> {
        edit_mask(self, edit)
    }

    /// Palette-colorized preview.
    pub fn preview_rgb(&self) -> ::image::RgbImage {
        let labels = self.labels();
        ::image::RgbImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let l = labels[[y as usize, x as usize]] as usize;
            ::image::Rgb(PALETTE[l % PALETTE.len()])
        })
    }

    /// 8-bit palette PNG; pixel value = region index.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let labels = self.labels();
        let (h, w) = labels.dim();
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            let palette: Vec<u8> = (0..self.n_regions())
                .flat_map(|r| PALETTE[r % PALETTE.len()])
                .collect();
            enc.set_palette(palette);
            let mut writer = enc
                .write_header()
                .map_err(|e| CoreError::Png(e.to_string()))?;
            let raw: Vec<u8> = labels.iter().copied().collect();
            writer
                .write_image_data(&raw)
                .map_err(|e| CoreError::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    /// Accepts palette PNGs (index = region) and 8-bit grayscale label PNGs.
    pub fn decode_png(bytes: &[u8], n_regions: usize) -> Result<Self> {
        let labels = decode_label_png(bytes)?;
        onehot_encode(&labels, n_regions)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>, n_regions: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::decode_png(&bytes, n_regions)
    }
}

pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| CoreError::Png(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CoreError::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(CoreError::Png(format!(
            "label PNG must be 8-bit, got {:?}",
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let channels = match info.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(CoreError::Png(format!(
                "label PNG must be indexed or grayscale, got {other:?}"
            )))
        }
    };
    Ok(LabelMap::from_shape_fn((h, w), |(i, j)| {
        buf[i * stride + j * channels]
    }))
}

/// A brush, rectangle or polygon in image pixel coordinates (`x` = column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaintShape {
    Rect {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    /// Round brush swept along a polyline of `[x, y]` points.
    Brush { points: Vec<[f32; 2]>, radius: f32 },
    /// Filled polygon (even-odd rule on pixel centers).
    Polygon { points: Vec<[f32; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MaskEdit {
    Paint { region: usize, shape: PaintShape },
    Grow { region: usize, radius: usize },
    Shrink { region: usize, radius: usize },
    /// Reassigns every pixel of `from` to `to`.
    Transfer { from: usize, to: usize },
}

impl MaskEdit {
    fn regions(&self) -> Vec<usize> {
        match self {
            MaskEdit::Paint { region, .. }
            | MaskEdit::Grow { region, .. }
            | MaskEdit::Shrink { region, .. } => vec![*region],
            MaskEdit::Transfer { from, to } => vec![*from, *to],
        }
    }
}

/// Applies one edit. The result is always a valid one-hot layout and only
/// pixels inside the edit's stencil change.
///
/// Shrinking erodes the region with a Euclidean disk (out-of-image pixels do
/// not erode) and hands each vacated pixel to the most frequent already
/// assigned 4-neighbor, sweeping inward from the new boundary. Ties go to
/// the lower region index.
pub fn edit_mask(mask: &SemanticMask, edit: &MaskEdit) -> Result<SemanticMask> {
    let n = mask.n_regions();
    for r in edit.regions() {
        if r >= n {
            return Err(CoreError::RegionOutOfRange {
                index: r,
                n_regions: n,
            });
        }
    }
    let mut labels = mask.labels();
    match edit {
        MaskEdit::Paint { region, shape } => paint(&mut labels, *region as u8, shape)?,
        MaskEdit::Grow { region, radius } => grow(&mut labels, *region as u8, *radius),
        MaskEdit::Shrink { region, radius } => shrink(&mut labels, *region as u8, *radius),
        MaskEdit::Transfer { from, to } => {
            labels.mapv_inplace(|l| if l as usize == *from { *to as u8 } else { l })
        }
    }
    onehot_encode(&labels, n)
}

fn paint(labels: &mut LabelMap, region: u8, shape: &PaintShape) -> Result<()> {
    let (h, w) = labels.dim();
    match shape {
        PaintShape::Rect {
            row,
            col,
            height,
            width,
        } => {
            if *height == 0 || *width == 0 || row + height > h || col + width > w {
                return Err(CoreError::OutOfRange(format!(
                    "rect {height}x{width} at ({row}, {col}) exceeds {h}x{w} mask"
                )));
            }
            labels
                .slice_mut(ndarray::s![*row..row + height, *col..col + width])
                .fill(region);
        }
        PaintShape::Brush { points, radius } => {
            check_points(points, h, w)?;
            if !(*radius > 0.0) {
                return Err(CoreError::InvalidArgument("brush radius must be > 0".into()));
            }
            let r2 = radius * radius;
            let segments: Vec<([f32; 2], [f32; 2])> = if points.len() == 1 {
                vec![(points[0], points[0])]
            } else {
                points.windows(2).map(|p| (p[0], p[1])).collect()
            };
            for i in 0..h {
                for j in 0..w {
                    let p = [j as f32 + 0.5, i as f32 + 0.5];
                    if segments.iter().any(|(a, b)| dist2_to_segment(p, *a, *b) <= r2) {
                        labels[[i, j]] = region;
                    }
                }
            }
        }
        PaintShape::Polygon { points } => {
            check_points(points, h, w)?;
            if points.len() < 3 {
                return Err(CoreError::InvalidArgument(
                    "polygon needs at least 3 points".into(),
                ));
            }
            for i in 0..h {
                for j in 0..w {
                    if point_in_polygon([j as f32 + 0.5, i as f32 + 0.5], points) {
                        labels[[i, j]] = region;
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_points(points: &[[f32; 2]], h: usize, w: usize) -> Result<()> {
    if points.is_empty() {
        return Err(CoreError::InvalidArgument("stroke has no points".into()));
    }
    for p in points {
        if !(p[0].is_finite() && p[1].is_finite())
            || p[0] < 0.0
            || p[1] < 0.0
            || p[0] > w as f32
            || p[1] > h as f32
        {
            return Err(CoreError::OutOfRange(format!(
                "stroke point ({}, {}) outside {w}x{h} mask",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

fn dist2_to_segment(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    cx * cx + cy * cy
}

fn point_in_polygon(p: [f32; 2], poly: &[[f32; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn grow(labels: &mut LabelMap, region: u8, radius: usize) {
    if radius == 0 {
        return;
    }
    let (h, w) = labels.dim();
    let offsets = disk_offsets(radius);
    let source = labels.clone();
    for ((i, j), &l) in source.indexed_iter() {
        if l != region {
            continue;
        }
        for &(dy, dx) in &offsets {
            let (y, x) = (i as isize + dy, j as isize + dx);
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                labels[[y as usize, x as usize]] = region;
            }
        }
    }
}

fn shrink(labels: &mut LabelMap, region: u8, radius: usize) {
    if radius == 0 {
        return;
    }
    let (h, w) = labels.dim();
    let offsets = disk_offsets(radius);
    let source = labels.clone();
    let mut vacated = Array2::<bool>::from_elem((h, w), false);
    for ((i, j), &l) in source.indexed_iter() {
        if l != region {
            continue;
        }
        let keeps = offsets.iter().all(|&(dy, dx)| {
            let (y, x) = (i as isize + dy, j as isize + dx);
            y < 0
                || x < 0
                || y as usize >= h
                || x as usize >= w
                || source[[y as usize, x as usize]] == region
        });
        if !keeps {
            vacated[[i, j]] = true;
        }
    }
    repair_vacated(labels, &mut vacated, region);
}

const NEIGHBORS4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Breadth-first assignment of vacated pixels from their settled
/// 4-neighbors. Pixels still owned by the shrinking region never donate.
fn repair_vacated(labels: &mut LabelMap, vacated: &mut Array2<bool>, region: u8) {
    let (h, w) = labels.dim();
    let neighbor = |i: usize, j: usize, (dy, dx): (isize, isize)| {
        let (y, x) = (i as isize + dy, j as isize + dx);
        (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w)
            .then_some((y as usize, x as usize))
    };
    let mut frontier: VecDeque<(usize, usize)> = VecDeque::new();
    for ((i, j), &v) in vacated.indexed_iter() {
        if v {
            frontier.push_back((i, j));
        }
    }
    loop {
        let mut assigned = Vec::new();
        for &(i, j) in &frontier {
            let mut votes = [0u32; 256];
            for d in NEIGHBORS4 {
                if let Some((y, x)) = neighbor(i, j, d) {
                    let l = labels[[y, x]];
                    if !vacated[[y, x]] && l != region {
                        votes[l as usize] += 1;
                    }
                }
            }
            let best = (0..256).max_by_key(|&l| (votes[l], std::cmp::Reverse(l)));
            if let Some(l) = best.filter(|&l| votes[l] > 0) {
                assigned.push((i, j, l as u8));
            }
        }
        if assigned.is_empty() {
            break;
        }
        // Commit after the sweep so one pass never chains through itself.
        for &(i, j, l) in &assigned {
            labels[[i, j]] = l;
            vacated[[i, j]] = false;
        }
        frontier.retain(|&(i, j)| vacated[[i, j]]);
    }
    // Only reachable when a vacated pixel has no settled pixel anywhere in
    // its 4-connected component. Hand it to background, or region 1 when
    // background itself is shrinking.
    let fallback = if region == 0 { 1 } else { 0 };
    for (i, j) in frontier {
        labels[[i, j]] = fallback;
    }
}
