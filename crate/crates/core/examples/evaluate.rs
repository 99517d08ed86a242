//! SRCC/PLCC with and without certification, abstain rate and bound widths
//! across noise levels.

use certsmooth::bench::{evaluate, synth_dataset};
use certsmooth::pipeline::{train, FsIqaModel, Mode, TrainConfig};
use certsmooth::smoothing::SmoothingConfig;

fn main() -> certsmooth::Result<()> {
    let ds = synth_dataset(2, 150, Mode::Nr)?;
    let mut model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 32, 4)?;
    train(&mut model, &ds.train_records(), &TrainConfig { epochs: 40, seed: 3, ..TrainConfig::default() })?;
    let test: Vec<_> = ds.split.test.iter().map(|&i| (i, ds.records[i].clone())).collect();
    for sigma in [0.1, 0.25, 0.5] {
        let r = evaluate(&model, &test, &SmoothingConfig::new(sigma, 1000, 0.999, 7)?, 1e-3)?;
        println!(
            "sigma_f {sigma}: SRCC {:.3?} (no cert {:.3?}), abstain {:.3}, mean width {:.3?}",
            r.srcc, r.srcc_no_cert, r.abstain_rate, r.mean_bound_width
        );
    }
    Ok(())
}
