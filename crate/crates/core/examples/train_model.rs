//! Generates the synthetic dataset, trains FTN and scorer under feature
//! noise, and writes a model bundle.

use certsmooth::bench::synth_dataset;
use certsmooth::pipeline::{load_bundle, save_bundle, train, FsIqaModel, Mode, TrainConfig};

fn main() -> certsmooth::Result<()> {
    let ds = synth_dataset(0, 120, Mode::Nr)?;
    let mut model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 32, 5)?;
    let cfg = TrainConfig { epochs: 40, seed: 1, ..TrainConfig::default() };
    let report = train(&mut model, &ds.train_records(), &cfg)?;
    println!(
        "loss {:.4} -> {:.4}, train MSE {:.4}, validation SRCC {:?}",
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap(),
        report.final_train_mse,
        report.validation_srcc
    );

    let dir = std::env::temp_dir().join("certsmooth-example-bundle");
    let manifest = save_bundle(&model, &dir, 5, &ds.fingerprint())?;
    let (reloaded, _) = load_bundle(&dir)?;
    println!("bundle in {} (k = {}), reload ok: {}", dir.display(), manifest.k, reloaded.feature_dim() == model.feature_dim());
    Ok(())
}
