//! Run-to-run spread of the smoothed score under independent seeds.

use certsmooth::bench::stability_report;
use certsmooth::pipeline::{FsIqaModel, Mode, QualityInput};
use certsmooth::smoothing::SmoothingConfig;
use certsmooth::Tensor;

fn main() -> certsmooth::Result<()> {
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 16, 2)?;
    let x = QualityInput::Single(Tensor::filled(&[3, 8, 8], 0.5));
    for n in [200, 2000, 20000] {
        let r = stability_report(&model, &x, &SmoothingConfig::new(0.25, n, 0.999, 0)?, 20)?;
        let spread = r.max_relative_deviation * r.mean.abs();
        println!(
            "N = {n:>5}: mean {:.5}, max deviation {spread:.2e} ({:.3}% of the mean)",
            r.mean,
            100.0 * r.max_relative_deviation
        );
    }
    Ok(())
}
