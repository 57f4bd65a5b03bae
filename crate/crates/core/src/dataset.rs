//! Dataset manifests, LR/HR pair construction and guide selection.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;
use crate::mask::{LabelMap, SemanticMask};
use crate::regions::{N_REGIONS, REGION_NAMES};
use crate::resample::bicubic_resample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub hr_image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub split: Split,
}

/// JSON-lines manifest; one [`DatasetRecord`] per line. Relative paths are
/// resolved against the manifest's directory on load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    pub fn new(records: Vec<DatasetRecord>) -> Self {
        Self { records }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
                CoreError::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            rec.hr_image = resolve(&base, &rec.hr_image);
            rec.label_map = rec.label_map.map(|p| resolve(&base, &p));
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        for rec in &self.records {
            let line = serde_json::to_string(rec).map_err(|e| CoreError::Serde(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| CoreError::io(path, e))?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<DatasetRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// One training example. `mask` is absent on the inference path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub lr: ImageTensor,
    pub hr: ImageTensor,
    pub mask: Option<SemanticMask>,
}

impl TrainingPair {
    /// Horizontal flip of both images; the mask swaps left/right regions.
    pub fn hflip(&self) -> Self {
        Self {
            lr: self.lr.hflip(),
            hr: self.hr.hflip(),
            mask: self.mask.as_ref().map(SemanticMask::hflip_swapped),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOptions {
    pub scale: u32,
    /// Resize (after square center crop) to this side length.
    pub hr_size: Option<u32>,
    pub require_mask: bool,
    pub n_regions: usize,
}

impl PairOptions {
    pub fn training(scale: u32, hr_size: Option<u32>) -> Self {
        Self {
            scale,
            hr_size,
            require_mask: true,
            n_regions: N_REGIONS,
        }
    }

    pub fn inference(scale: u32, hr_size: Option<u32>) -> Self {
        Self {
            require_mask: false,
            ..Self::training(scale, hr_size)
        }
    }
}

/// Loads `record`, squares and resizes it, and derives the LR input by
/// bicubic downsampling.
pub fn make_pair(record: &DatasetRecord, opts: &PairOptions) -> Result<TrainingPair> {
    let hr = load_hr(&record.hr_image, opts.hr_size)?;
    let mask = match (&record.label_map, opts.require_mask) {
        (Some(path), _) => {
            let labels = crate::mask::decode_label_png(
                &std::fs::read(path).map_err(|e| CoreError::io(path, e))?,
            )?;
            Some(square_labels(&labels, hr.height())?)
        }
        (None, true) => {
            return Err(CoreError::Dataset(format!(
                "record `{}` has no label map but training requires one",
                record.id
            )))
        }
        (None, false) => None,
    };
    let mask = mask
        .map(|l| SemanticMask::from_labels(&l, opts.n_regions))
        .transpose()?;
    pair_from_hr(hr, mask, opts.scale)
}

/// Builds a pair from an in-memory HR image (and optional mask at HR resolution).
pub fn pair_from_hr(hr: ImageTensor, mask: Option<SemanticMask>, scale: u32) -> Result<TrainingPair> {
    let (h, w) = (hr.height(), hr.width());
    let s = scale as usize;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(CoreError::Shape(format!(
            "scale {scale} does not divide HR size {h}x{w}"
        )));
    }
    if let Some(m) = &mask {
        if (m.height(), m.width()) != (h, w) {
            return Err(CoreError::Shape(format!(
                "mask {}x{} does not match HR image {h}x{w}",
                m.height(),
                m.width()
            )));
        }
    }
    let lr = bicubic_resample(&hr, h / s, w / s)?;
    Ok(TrainingPair { lr, hr, mask })
}

/// Loads an HR image, center-crops it square and optionally resizes it.
pub fn load_hr(path: &Path, hr_size: Option<u32>) -> Result<ImageTensor> {
    let img = ImageTensor::load(path)?;
    let img = if img.height() != img.width() {
        img.center_crop_square()
    } else {
        img
    };
    match hr_size {
        Some(s) if s as usize != img.height() => bicubic_resample(&img, s as usize, s as usize),
        _ => Ok(img),
    }
}

/// Applies the same square crop as [`load_hr`] and a nearest resize to `side`.
fn square_labels(labels: &LabelMap, side: usize) -> Result<LabelMap> {
    let (h, w) = labels.dim();
    let s = h.min(w);
    let (top, left) = ((h - s) / 2, (w - s) / 2);
    Ok(LabelMap::from_shape_fn((side, side), |(i, j)| {
        labels[[top + i * s / side, left + j * s / side]]
    }))
}

/// Records grouped by identity, for picking guide images.
#[derive(Debug, Clone, Default)]
pub struct GuidePool {
    by_identity: BTreeMap<String, Vec<DatasetRecord>>,
}

impl GuidePool {
    pub fn new(records: &[DatasetRecord]) -> Self {
        let mut by_identity: BTreeMap<String, Vec<DatasetRecord>> = BTreeMap::new();
        for r in records {
            if let Some(id) = &r.identity {
                by_identity.entry(id.clone()).or_default().push(r.clone());
            }
        }
        Self { by_identity }
    }

    pub fn is_empty(&self) -> bool {
        self.by_identity.is_empty()
    }

    pub fn members(&self, identity: &str) -> Option<&[DatasetRecord]> {
        self.by_identity.get(identity).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuideChoice {
    pub record: DatasetRecord,
    /// The target had no other image of its identity and guides itself.
    pub self_guide: bool,
}

/// Picks a different image of the same identity uniformly at random, or the
/// target itself when it is the identity's only image.
pub fn sample_guide<R: Rng + ?Sized>(
    record: &DatasetRecord,
    pool: &GuidePool,
    rng: &mut R,
) -> Result<GuideChoice> {
    if pool.is_empty() {
        return Err(CoreError::Dataset("guide pool is empty".into()));
    }
    let identity = record.identity.as_deref().ok_or_else(|| {
        CoreError::Dataset(format!("record `{}` has no identity", record.id))
    })?;
    let members = pool
        .members(identity)
        .ok_or_else(|| CoreError::Dataset(format!("unknown identity `{identity}`")))?;
    let others: Vec<&DatasetRecord> = members.iter().filter(|r| r.id != record.id).collect();
    if others.is_empty() {
        return Ok(GuideChoice {
            record: record.clone(),
            self_guide: true,
        });
    }
    let pick = others[rng.random_range(0..others.len())];
    Ok(GuideChoice {
        record: pick.clone(),
        self_guide: false,
    })
}

/// Builds a manifest from a CelebAMask-HQ checkout.
///
/// Expects `CelebA-HQ-img/{i}.jpg` and `CelebAMask-HQ-mask-anno/{i/2000}/{i:05}_{part}.png`.
/// Per-part masks are merged into label maps written to `out_dir/labels/{i}.png`;
/// parts later in the region order overwrite earlier ones. Identities and
/// splits come from `CelebA-HQ-to-CelebA-mapping.txt` joined with CelebA's
/// `identity_CelebA.txt` and `list_eval_partition.txt` when those exist;
/// otherwise every record is `train` and has no identity.
pub fn prepare_celebamask_hq(root: &Path, out_dir: &Path) -> Result<Manifest> {
    let img_dir = root.join("CelebA-HQ-img");
    let anno_dir = root.join("CelebAMask-HQ-mask-anno");
    let labels_dir = out_dir.join("labels");
    std::fs::create_dir_all(&labels_dir).map_err(|e| CoreError::io(&labels_dir, e))?;

    let mapping = read_table(&root.join("CelebA-HQ-to-CelebA-mapping.txt"), 1)?;
    let identities = read_table(&root.join("identity_CelebA.txt"), 0)?;
    let partitions = read_table(&root.join("list_eval_partition.txt"), 0)?;

    let mut ids: Vec<usize> = std::fs::read_dir(&img_dir)
        .map_err(|e| CoreError::io(&img_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            p.file_stem()?.to_str()?.parse::<usize>().ok()
        })
        .collect();
    ids.sort_unstable();

    let mut records = Vec::with_capacity(ids.len());
    for i in ids {
        let hr = img_dir.join(format!("{i}.jpg"));
        let mut labels: Option<LabelMap> = None;
        for (label, part) in REGION_NAMES.iter().enumerate().skip(1) {
            let part_path = anno_dir
                .join((i / 2000).to_string())
                .join(format!("{i:05}_{part}.png"));
            if !part_path.exists() {
                continue;
            }
            let part_img = ::image::open(&part_path)?.to_luma8();
            let (w, h) = part_img.dimensions();
            let l = labels.get_or_insert_with(|| LabelMap::zeros((h as usize, w as usize)));
            if l.dim() != (h as usize, w as usize) {
                return Err(CoreError::Dataset(format!(
                    "part mask {} has inconsistent size",
                    part_path.display()
                )));
            }
            for (x, y, p) in part_img.enumerate_pixels() {
                if p[0] != 0 {
                    l[[y as usize, x as usize]] = label as u8;
                }
            }
        }
        let label_map = match labels {
            Some(l) => {
                let path = labels_dir.join(format!("{i}.png"));
                SemanticMask::from_labels(&l, N_REGIONS)?.save_png(&path)?;
                Some(path)
            }
            None => None,
        };
        let orig = mapping.get(&i.to_string()).and_then(|row| row.get(1)).cloned();
        let identity = orig
            .as_ref()
            .and_then(|f| identities.get(f))
            .and_then(|row| row.first().cloned());
        let split = orig
            .as_ref()
            .and_then(|f| partitions.get(f))
            .and_then(|row| row.first())
            .map(|p| partition_split(p))
            .transpose()?
            .unwrap_or(Split::Train);
        records.push(DatasetRecord {
            id: i.to_string(),
            hr_image: hr,
            label_map,
            identity,
            split,
        });
    }
    Ok(Manifest::new(records))
}

/// Builds a manifest for aligned CelebA (`img_align_celeba/*.jpg`, no label maps).
pub fn prepare_celeba(root: &Path) -> Result<Manifest> {
    let img_dir = root.join("img_align_celeba");
    let identities = read_table(&root.join("identity_CelebA.txt"), 0)?;
    let partitions = read_table(&root.join("list_eval_partition.txt"), 0)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&img_dir)
        .map_err(|e| CoreError::io(&img_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jpg" || x == "png"))
        .collect();
    files.sort();
    let mut records = Vec::with_capacity(files.len());
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let split = partitions
            .get(&name)
            .and_then(|row| row.first())
            .map(|p| partition_split(p))
            .transpose()?
            .unwrap_or(Split::Train);
        records.push(DatasetRecord {
            id: name.trim_end_matches(".jpg").trim_end_matches(".png").to_string(),
            identity: identities.get(&name).and_then(|row| row.first().cloned()),
            hr_image: path,
            label_map: None,
            split,
        });
    }
    Ok(Manifest::new(records))
}

fn partition_split(p: &str) -> Result<Split> {
    match p {
        "0" => Ok(Split::Train),
        "1" => Ok(Split::Val),
        "2" => Ok(Split::Test),
        other => Err(CoreError::Dataset(format!("bad partition value `{other}`"))),
    }
}

/// Whitespace-separated table keyed by its first column. Missing file → empty.
fn read_table(path: &Path, skip_header: usize) -> Result<BTreeMap<String, Vec<String>>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    Ok(text
        .lines()
        .skip(skip_header)
        .filter_map(|line| {
            let mut cols = line.split_whitespace().map(str::to_string);
            let key = cols.next()?;
            Some((key, cols.collect()))
        })
        .collect())
}
