//! Forward, JVP and VJP through a composed map, checked against a dense
//! Jacobian.

use certsmooth::diffcore::{compose, dense_jacobian, DifferentiableMap, DEFAULT_JACOBIAN_BUDGET};
use certsmooth::Tensor;

fn main() -> certsmooth::Result<()> {
    let backbone = DifferentiableMap::toy_backbone([3, 8, 8], 4, 16, 1)?;
    let ftn = DifferentiableMap::affine_sigmoid(16, 8, 2)?;
    let features = compose(ftn, backbone)?;

    let x = Tensor::filled(&[3, 8, 8], 0.5);
    let u = Tensor::filled(&[3, 8, 8], 0.01);
    let y = features.forward(&x)?;
    let jvp = features.jvp(&x, &u)?;
    let vjp = features.vjp(&x, &Tensor::filled(&[8], 1.0))?;
    println!("f(x)   = {:.4?}", y.data());
    println!("J u    = {:.4?}", jvp.data());
    println!("|J^T 1| = {:.4}", vjp.norm());

    let j = dense_jacobian(&features, &x, DEFAULT_JACOBIAN_BUDGET)?;
    let row0: f64 = j.row(0).iter().zip(u.data()).map(|(a, b)| a * b).sum();
    println!("dense row 0 · u = {row0:.6} (JVP gives {:.6})", jvp.data()[0]);
    Ok(())
}
