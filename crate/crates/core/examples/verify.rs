//! Empirical check of a certificate: re-predict under perturbations inside
//! the certified ball and count scores outside the bounds.

use certsmooth::bench::{verify_certificate, SeedMode};
use certsmooth::pipeline::{FsIqaModel, Mode, QualityInput};
use certsmooth::smoothing::SmoothingConfig;
use certsmooth::Tensor;

fn main() -> certsmooth::Result<()> {
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 16, 3)?;
    let x = QualityInput::Single(Tensor::filled(&[3, 8, 8], 0.45));
    let cert = model.certify(&x, &SmoothingConfig::with_sigma(0.25, 8)?, 1e-3)?;
    for mode in [SeedMode::Same, SeedMode::Fresh] {
        let r = verify_certificate(&model, &x, &cert, 300, 1, mode)?;
        println!(
            "{mode:?}: {} / {} outside [{:.4}, {:.4}], eps_x {:.4}, closest approach {:.4}",
            r.violations,
            r.trials,
            r.s_lower,
            r.s_upper,
            r.epsilon_x,
            -r.max_above.max(r.max_below)
        );
    }
    Ok(())
}
