use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{load_map, parameter_checksum, save_map};
use crate::error::{Error, Result};

use super::model::{FsIqaModel, Mode};

pub const BACKBONE_FILE: &str = "backbone.json";
pub const FTN_FILE: &str = "ftn.json";
pub const SCORER_FILE: &str = "scorer.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub mode: Mode,
    pub k: usize,
    pub creation_seed: u64,
    pub dataset_fingerprint: String,
    pub backbone_checksum: String,
}

/// Writes the three checkpoints and `manifest.json` into `dir`.
pub fn save_bundle(model: &FsIqaModel, dir: &Path, creation_seed: u64, dataset_fingerprint: &str) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_map(model.backbone(), &dir.join(BACKBONE_FILE))?;
    save_map(model.ftn(), &dir.join(FTN_FILE))?;
    save_map(model.scorer(), &dir.join(SCORER_FILE))?;
    let manifest = BundleManifest {
        mode: model.mode(),
        k: model.feature_dim(),
        creation_seed,
        dataset_fingerprint: dataset_fingerprint.to_string(),
        backbone_checksum: parameter_checksum(model.backbone()),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_bundle(dir: &Path) -> Result<(FsIqaModel, BundleManifest)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    let backbone = load_map(&dir.join(BACKBONE_FILE))?;
    if parameter_checksum(&backbone) != manifest.backbone_checksum {
        return Err(Error::Checkpoint("backbone checksum does not match the bundle manifest".into()));
    }
    let ftn = load_map(&dir.join(FTN_FILE))?;
    let scorer = load_map(&dir.join(SCORER_FILE))?;
    let model = FsIqaModel::new(backbone, ftn, scorer, manifest.mode)?;
    if model.feature_dim() != manifest.k {
        return Err(Error::Checkpoint(format!("manifest k = {} but FTN yields {}", manifest.k, model.feature_dim())));
    }
    Ok((model, manifest))
}
