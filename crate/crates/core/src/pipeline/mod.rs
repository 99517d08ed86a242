//! Backbone, feature transform-normalize layer and scorer, with
//! feature-space smoothing and certification on top.

mod bundle;
mod model;
mod train;

pub use bundle::{load_bundle, save_bundle, BundleManifest, BACKBONE_FILE, FTN_FILE, MANIFEST_FILE, SCORER_FILE};
pub use model::{
    CallCounters, CallCounts, Certified, CertificationOutput, Decision, FsIqaModel, InputRecord, Mode, NoiseBank,
    QualityInput, DEFAULT_FEATURE_DIM, DEFAULT_SCORER_HIDDEN,
};
pub use train::{
    train, train_from, Optimizer, TrainConfig, TrainReport, TrainState, DEFAULT_EPOCHS, DEFAULT_FTN_SPREAD,
    DEFAULT_LEARNING_RATE, DEFAULT_TRAIN_SAMPLES,
};
pub(crate) use train::permutation;

use crate::diffcore::DifferentiableMap;
use crate::error::Result;

/// Pair-input map `[ref, dist] ↦ [b(ref); b(dist)]` over a single-image backbone.
pub fn make_fr_adapter(backbone: DifferentiableMap) -> Result<DifferentiableMap> {
    DifferentiableMap::pair_adapter(backbone)
}
