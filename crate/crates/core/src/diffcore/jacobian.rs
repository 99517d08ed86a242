use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::DifferentiableMap;

/// Default entry budget for [`dense_jacobian`].
pub const DEFAULT_JACOBIAN_BUDGET: usize = 1 << 22;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Dense `rows × cols` Jacobian, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl JacobianMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs_diff(&self, other: &JacobianMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.entries.iter().zip(&other.entries).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Materializes `J(x)` row by row through VJPs against basis vectors.
pub fn dense_jacobian(map: &DifferentiableMap, x: &Tensor, budget: usize) -> Result<JacobianMatrix> {
    x.expect_shape(map.input_shape())?;
    let (m, n) = (map.output_len(), map.input_len());
    if m.saturating_mul(n) > budget {
        return Err(Error::Oversize { entries: m.saturating_mul(n), budget });
    }
    let mut entries = Vec::with_capacity(m * n);
    let mut basis = vec![0.0; m];
    for i in 0..m {
        basis[i] = 1.0;
        entries.extend(map.vjp_slice(x.data(), &basis));
        basis[i] = 0.0;
    }
    Ok(JacobianMatrix { rows: m, cols: n, entries })
}

/// Central-difference Jacobian, column `j` = `(f(x + h e_j) - f(x - h e_j)) / 2h`.
pub fn finite_diff_jacobian(map: &DifferentiableMap, x: &Tensor, step: f64) -> Result<JacobianMatrix> {
    x.expect_shape(map.input_shape())?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let (m, n) = (map.output_len(), map.input_len());
    let mut entries = vec![0.0; m * n];
    let mut probe = x.data().to_vec();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + step;
        let plus = map.forward_slice(&probe);
        probe[j] = orig - step;
        let minus = map.forward_slice(&probe);
        probe[j] = orig;
        for i in 0..m {
            entries[i * n + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(JacobianMatrix { rows: m, cols: n, entries })
}
