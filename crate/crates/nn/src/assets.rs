//! Registry of pretrained weight files and their on-disk resolution.

use std::path::{Path, PathBuf};

use crate::error::{NnError, Result};

pub const ASSETS_ENV: &str = "DEEPSEE_ASSETS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssetSpec {
    pub name: &'static str,
    pub file: &'static str,
    pub url: &'static str,
    /// Expected leading hex digits of the file's SHA-256, when published.
    pub sha256_prefix: Option<&'static str>,
    pub description: &'static str,
}

pub const VGG19: AssetSpec = AssetSpec {
    name: "vgg19",
    file: "vgg19-dcbb9e9d.pth",
    url: "https://download.pytorch.org/models/vgg19-dcbb9e9d.pth",
    sha256_prefix: Some("dcbb9e9d"),
    description: "ImageNet VGG-19 (perceptual loss)",
};

pub const VGG16: AssetSpec = AssetSpec {
    name: "vgg16",
    file: "vgg16-397923af.pth",
    url: "https://download.pytorch.org/models/vgg16-397923af.pth",
    sha256_prefix: Some("397923af"),
    description: "ImageNet VGG-16 (LPIPS backbone)",
};

pub const LPIPS_VGG: AssetSpec = AssetSpec {
    name: "lpips-vgg",
    file: "lpips-vgg-v0.1.pth",
    url: "https://github.com/richzhang/PerceptualSimilarity/raw/master/lpips/weights/v0.1/vgg.pth",
    sha256_prefix: None,
    description: "LPIPS v0.1 linear calibration weights for VGG-16",
};

pub const INCEPTION_FID: AssetSpec = AssetSpec {
    name: "inception-fid",
    file: "pt_inception-2015-12-05-6726825d.pth",
    url: "https://github.com/mseitzer/pytorch-fid/releases/download/fid_weights/pt_inception-2015-12-05-6726825d.pth",
    sha256_prefix: Some("6726825d"),
    description: "Inception-v3 pool features for FID",
};

pub const ALL: [AssetSpec; 4] = [VGG19, VGG16, LPIPS_VGG, INCEPTION_FID];

pub fn lookup(name: &str) -> Option<AssetSpec> {
    ALL.into_iter().find(|a| a.name == name)
}

/// `$DEEPSEE_ASSETS`, else `./assets`.
pub fn default_dir() -> PathBuf {
    std::env::var_os(ASSETS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("assets"))
}

/// Path of an asset inside `dir`, or a [`NnError::MissingAsset`] telling the
/// user how to fetch it.
pub fn resolve(spec: &AssetSpec, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(spec.file);
    if path.is_file() {
        Ok(path)
    } else {
        Err(NnError::MissingAsset {
            name: spec.name.to_string(),
            path: path.display().to_string(),
        })
    }
}
