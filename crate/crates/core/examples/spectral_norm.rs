//! Matrix-free spectral norm of a Jacobian and the input radius it implies.

use certsmooth::diffcore::DifferentiableMap;
use certsmooth::ive::{input_variation, spectral_norm, SpectralOptions};
use certsmooth::Tensor;

fn main() -> certsmooth::Result<()> {
    let opts = SpectralOptions::with_seed(3);
    let d = DifferentiableMap::diagonal(&[2.0, 1.0, 0.5])?;
    let est = spectral_norm(&d, &Tensor::zeros(&[3]), &opts)?;
    println!("diag(2, 1, 0.5): {:.9} after {} iterations", est.value, est.iterations);

    let map = DifferentiableMap::toy_backbone([3, 8, 8], 4, 16, 7)?;
    let x = Tensor::filled(&[3, 8, 8], 0.4);
    for sigma in [0.1, 0.25, 0.5] {
        let r = input_variation(&map, &x, sigma, 1e-3, &opts)?;
        println!("sigma_f {sigma}: ||J|| = {:.5}, radius {:?}", r.spectral.value, r.epsilon_x());
    }

    let flat = DifferentiableMap::constant(vec![4], Tensor::vector(vec![1.0, 2.0])?)?;
    let r = input_variation(&flat, &Tensor::zeros(&[4]), 0.25, 1e-3, &opts)?;
    println!("constant map: {:?}", r.outcome);
    Ok(())
}
