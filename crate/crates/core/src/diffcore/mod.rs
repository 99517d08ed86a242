//! Differentiable maps with exact linearizations.
//!
//! A [`DifferentiableMap`] evaluates `forward`, `jvp` (`J(x) u`) and `vjp`
//! (`J(x)ᵀ v`). The built-in kinds are small enough that dense Jacobians
//! and central finite differences remain usable as test oracles.

mod checkpoint;
mod jacobian;
mod layers;
mod map;

pub use checkpoint::{load_map, parameter_checksum, save_map, Checkpoint};
pub use jacobian::{
    dense_jacobian, finite_diff_jacobian, JacobianMatrix, DEFAULT_FD_STEP, DEFAULT_JACOBIAN_BUDGET,
};
pub use map::{compose, DifferentiableMap, MapKind};

/// Default toy backbone width: 8 conv channels feeding a 64-d embedding.
pub const TOY_BACKBONE_CHANNELS: usize = 8;
pub const TOY_BACKBONE_FEATURES: usize = 64;
