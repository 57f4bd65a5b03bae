//! The fixed 19-region face vocabulary.
//!
//! Ordering follows the CelebAMask-HQ label convention (background first,
//! then the annotation order of the per-part mask files), so label maps
//! produced by that dataset's tooling can be used without remapping.

use crate::error::{CoreError, Result};

pub const N_REGIONS: usize = 19;

pub const REGION_NAMES: [&str; N_REGIONS] = [
    "background",
    "skin",
    "nose",
    "eye_g",
    "l_eye",
    "r_eye",
    "l_brow",
    "r_brow",
    "l_ear",
    "r_ear",
    "mouth",
    "u_lip",
    "l_lip",
    "hair",
    "hat",
    "ear_r",
    "neck_l",
    "neck",
    "cloth",
];

/// Display palette, one RGB triple per region. Used for mask PNGs and previews.
pub const PALETTE: [[u8; 3]; N_REGIONS] = [
    [0, 0, 0],
    [204, 0, 0],
    [76, 153, 0],
    [204, 204, 0],
    [51, 51, 255],
    [204, 0, 204],
    [0, 255, 255],
    [255, 204, 204],
    [102, 51, 0],
    [255, 0, 0],
    [102, 204, 0],
    [255, 255, 0],
    [0, 0, 153],
    [0, 0, 204],
    [255, 51, 153],
    [0, 204, 204],
    [0, 51, 0],
    [255, 153, 51],
    [0, 204, 0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Region {
    Background = 0,
    Skin,
    Nose,
    Eyeglasses,
    LeftEye,
    RightEye,
    LeftBrow,
    RightBrow,
    LeftEar,
    RightEar,
    Mouth,
    UpperLip,
    LowerLip,
    Hair,
    Hat,
    Earring,
    Necklace,
    Neck,
    Cloth,
}

impl Region {
    pub const ALL: [Region; N_REGIONS] = [
        Region::Background,
        Region::Skin,
        Region::Nose,
        Region::Eyeglasses,
        Region::LeftEye,
        Region::RightEye,
        Region::LeftBrow,
        Region::RightBrow,
        Region::LeftEar,
        Region::RightEar,
        Region::Mouth,
        Region::UpperLip,
        Region::LowerLip,
        Region::Hair,
        Region::Hat,
        Region::Earring,
        Region::Necklace,
        Region::Neck,
        Region::Cloth,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        REGION_NAMES[self.index()]
    }

    pub fn from_index(index: usize) -> Option<Region> {
        Region::ALL.get(index).copied()
    }
}

/// Resolves a region by canonical name (`"hair"`) or decimal index (`"13"`).
pub fn region_index(name: &str, n_regions: usize) -> Result<usize> {
    let idx = match name.parse::<usize>() {
        Ok(i) => i,
        Err(_) => REGION_NAMES
            .iter()
            .position(|r| *r == name)
            .ok_or_else(|| CoreError::UnknownRegion(name.to_string()))?,
    };
    if idx >= n_regions {
        return Err(CoreError::RegionOutOfRange {
            index: idx,
            n_regions,
        });
    }
    Ok(idx)
}

/// Region names for a vocabulary of `n` regions. The first 19 use the
/// canonical names; smaller vocabularies (tests, toy models) take a prefix.
pub fn region_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            REGION_NAMES
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("region_{i}"))
        })
        .collect()
}

/// The label that region `index` maps to under a horizontal flip.
pub fn mirrored(index: usize) -> usize {
    match Region::from_index(index) {
        Some(Region::LeftEye) => Region::RightEye.index(),
        Some(Region::RightEye) => Region::LeftEye.index(),
        Some(Region::LeftBrow) => Region::RightBrow.index(),
        Some(Region::RightBrow) => Region::LeftBrow.index(),
        Some(Region::LeftEar) => Region::RightEar.index(),
        Some(Region::RightEar) => Region::LeftEar.index(),
        _ => index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_enum_agree() {
        for r in Region::ALL {
            assert_eq!(REGION_NAMES[r.index()], r.name());
            assert_eq!(Region::from_index(r.index()), Some(r));
        }
    }

    #[test]
    fn lookup_by_name_or_index() {
        assert_eq!(region_index("hair", N_REGIONS).unwrap(), 13);
        assert_eq!(region_index("11", N_REGIONS).unwrap(), 11);
        assert!(region_index("19", N_REGIONS).is_err());
        assert!(region_index("hair", 4).is_err());
        assert!(region_index("wings", N_REGIONS).is_err());
    }

    #[test]
    fn mirroring_is_an_involution() {
        for i in 0..N_REGIONS {
            assert_eq!(mirrored(mirrored(i)), i);
        }
        assert_eq!(mirrored(Region::LeftEye.index()), Region::RightEye.index());
        assert_eq!(mirrored(Region::Nose.index()), Region::Nose.index());
    }
}
