//! Writes the synthetic dataset as CSV plus tensor files and reads it back,
//! rescaling MOS from a 1 to 5 scale.

use std::fs;

use certsmooth::bench::{load_dataset, load_dataset_with, synth_dataset, write_dataset, write_tensor, LoadOptions};
use certsmooth::pipeline::Mode;
use certsmooth::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("certsmooth-example-data");
    let ds = synth_dataset(0, 12, Mode::Fr)?;
    let csv = write_dataset(&ds, &dir)?;
    let back = load_dataset(&csv)?;
    println!("{} FR records, fingerprint match: {}", back.len(), back.fingerprint() == ds.fingerprint());

    let raw = dir.join("raw");
    fs::create_dir_all(&raw)?;
    write_tensor(&Tensor::filled(&[1, 2, 2], 0.5), &raw.join("a.qtns"))?;
    let path = raw.join("scores.csv");
    fs::write(&path, "path,mos\na.qtns,1\na.qtns,4.2\na.qtns,5\n")?;
    let opts = LoadOptions { mos_range: Some((1.0, 5.0)), ..LoadOptions::default() };
    let mos: Vec<f64> = load_dataset_with(&path, &opts)?.records.iter().map(|r| r.mos).collect();
    println!("MOS on [0, 1]: {mos:?}");
    Ok(())
}
