//! Certified score for one image in NR and FR mode.

use certsmooth::bench::synth_dataset;
use certsmooth::pipeline::{FsIqaModel, Mode};
use certsmooth::smoothing::SmoothingConfig;

fn main() -> certsmooth::Result<()> {
    let cfg = SmoothingConfig::with_sigma(0.25, 42)?;
    for mode in [Mode::Nr, Mode::Fr] {
        let ds = synth_dataset(1, 10, mode)?;
        let model = FsIqaModel::toy(mode, [3, 8, 8], 16, 9)?;
        let out = model.certify(&ds.records[0].input, &cfg, 1e-3)?;
        match out.certified() {
            Some(c) => println!(
                "{mode}: S = {:.4}, eps_x = {:.4}, S in [{:.4}, {:.4}] ({} linearization calls)",
                c.score, c.epsilon_x, c.bounds.s_lower, c.bounds.s_upper, out.spectral.linearization_calls
            ),
            None => println!("{mode}: abstain (||J|| = {:.2e})", out.spectral.value),
        }
        let counts = model.counters().snapshot();
        println!("  backbone {} / scorer {} calls", counts.backbone_forward, counts.scorer_forward);
    }
    Ok(())
}
