//! Input-space smoothing next to feature-space smoothing: invocation counts
//! and wall clock.

use certsmooth::bench::{input_space_smooth, timing_report, Reduction};
use certsmooth::pipeline::{FsIqaModel, Mode, QualityInput};
use certsmooth::smoothing::SmoothingConfig;
use certsmooth::Tensor;

fn main() -> certsmooth::Result<()> {
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 16, 2)?;
    let x = QualityInput::Single(Tensor::filled(&[3, 8, 8], 0.5));
    let cfg = SmoothingConfig::with_sigma(0.1, 0)?;
    println!("plain score {:.4}", model.plain_score(&x)?);
    println!("feature-space median {:.4}", model.predict(&x, &cfg)?);
    for r in [Reduction::Mean, Reduction::Trimmed(0.1), Reduction::Median] {
        println!("input-space {r:?} {:.4}", input_space_smooth(&model, &x, 0.1, 2000, r, 0)?);
    }
    let t = timing_report(&model, &x, &cfg, 1e-3, 5)?;
    println!(
        "backbone calls per prediction: {} vs {} (ratio {}); median time {:.2} ms vs {:.2} ms",
        t.predict.backbone_calls_per_run,
        t.input_space.backbone_calls_per_run,
        t.backbone_call_ratio,
        1e3 * t.predict.median_secs,
        1e3 * t.input_space.median_secs
    );
    Ok(())
}
