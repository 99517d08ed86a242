//! I-FGSM score-gain curves of a plain and a feature-smoothed model.

use certsmooth::bench::{attack_csv, ifgsm_attack, synth_dataset, AttackConfig, AttackNorm, AttackTarget};
use certsmooth::pipeline::{FsIqaModel, Mode, QualityInput};
use certsmooth::smoothing::SmoothingConfig;

fn main() -> certsmooth::Result<()> {
    let ds = synth_dataset(5, 20, Mode::Nr)?;
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 16, 6)?;
    let inputs: Vec<QualityInput> = ds.records.iter().take(8).map(|r| r.input.clone()).collect();
    for norm in [AttackNorm::LInf, AttackNorm::L2] {
        let cfg = AttackConfig { norm, seed: 1, ..AttackConfig::default() };
        let report = ifgsm_attack(
            &AttackTarget::Plain(&model),
            &AttackTarget::Smoothed { model: &model, smoothing: SmoothingConfig::with_sigma(0.25, 2)? },
            &inputs,
            &cfg,
            3,
        )?;
        println!("{}:\n{}", norm.as_str(), attack_csv(&report));
    }
    Ok(())
}
