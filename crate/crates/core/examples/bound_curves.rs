//! Bound width against certified radius, in 10 rank-based bins per noise
//! level, as plot-ready CSV.

use certsmooth::bench::{bound_width_curve, curves_csv, synth_dataset};
use certsmooth::pipeline::{FsIqaModel, Mode};
use certsmooth::smoothing::SmoothingConfig;

fn main() -> certsmooth::Result<()> {
    let ds = synth_dataset(3, 60, Mode::Nr)?;
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 16, 8)?;
    let mut curves = Vec::new();
    for sigma in [0.1, 0.5] {
        let certs = ds
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| model.certify(&r.input, &SmoothingConfig::new(sigma, 1000, 0.999, i as u64)?, 1e-3))
            .collect::<certsmooth::Result<Vec<_>>>()?;
        curves.push((format!("sigma_f={sigma}"), bound_width_curve(&certs)?));
    }
    print!("{}", curves_csv(&curves));
    Ok(())
}
