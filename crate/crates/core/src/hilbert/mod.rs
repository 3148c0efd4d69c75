//! Truncated multimode Fock spaces and the operator algebra built on them.
//!
//! Flat indices are row-major over modes: mode 0 (the bus cavity by
//! convention) is the slowest-varying index.

mod dense;
mod operator;
mod state;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub use dense::{expm_dense, kron_dense, max_abs_diff_dense};
pub use operator::{
    annihilation, creation, displacement, displacement_matrix, number, tensor_embed,
    SparseOperator,
};
pub use state::{expect, expect_density, DensityMatrix, PartialTrace, StateVector};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    mode_dims: Vec<usize>,
    mode_labels: Vec<String>,
    strides: Vec<usize>,
    dim: usize,
}

impl HilbertSpace {
    pub fn new<S: Into<String>>(
        mode_dims: &[usize],
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Arc<Self>> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if mode_dims.is_empty() {
            return Err(Error::InvalidSpace("no modes".into()));
        }
        if labels.len() != mode_dims.len() {
            return Err(Error::InvalidSpace(format!(
                "{} labels for {} modes",
                labels.len(),
                mode_dims.len()
            )));
        }
        if let Some(d) = mode_dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidSpace(format!("mode dimension {d} < 2")));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidSpace(format!("duplicate label `{l}`")));
            }
        }
        let mut strides = vec![1; mode_dims.len()];
        for m in (0..mode_dims.len() - 1).rev() {
            strides[m] = strides[m + 1] * mode_dims[m + 1];
        }
        let dim = mode_dims.iter().product();
        Ok(Arc::new(Self {
            mode_dims: mode_dims.to_vec(),
            mode_labels: labels,
            strides,
            dim,
        }))
    }

    /// Labels modes `a0`, `a1`, ... in order.
    pub fn with_default_labels(mode_dims: &[usize]) -> Result<Arc<Self>> {
        Self::new(mode_dims, (0..mode_dims.len()).map(|i| format!("a{i}")))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_modes(&self) -> usize {
        self.mode_dims.len()
    }

    pub fn mode_dims(&self) -> &[usize] {
        &self.mode_dims
    }

    pub fn mode_dim(&self, mode: usize) -> usize {
        self.mode_dims[mode]
    }

    pub fn labels(&self) -> &[String] {
        &self.mode_labels
    }

    pub fn mode_index(&self, label: &str) -> Result<usize> {
        self.mode_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    pub fn stride(&self, mode: usize) -> usize {
        self.strides[mode]
    }

    pub fn flat_index(&self, occupation: &[usize]) -> Result<usize> {
        if occupation.len() != self.n_modes() {
            return Err(Error::ShapeMismatch {
                expected: self.n_modes(),
                got: occupation.len(),
            });
        }
        let mut idx = 0;
        for (m, (&n, &d)) in occupation.iter().zip(&self.mode_dims).enumerate() {
            if n >= d {
                return Err(Error::InvalidSpace(format!(
                    "level {n} out of range for mode {} (dim {d})",
                    self.mode_labels[m]
                )));
            }
            idx += n * self.strides[m];
        }
        Ok(idx)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        assert!(flat < self.dim, "flat index {flat} out of range");
        self.strides
            .iter()
            .map(|&s| {
                let n = flat / s;
                flat %= s;
                n
            })
            .collect()
    }

    /// Level of `mode` encoded in a flat index.
    #[inline]
    pub fn level(&self, flat: usize, mode: usize) -> usize {
        (flat / self.strides[mode]) % self.mode_dims[mode]
    }

    /// One-mode space with the same label as `mode`; single-mode operators
    /// destined for [`tensor_embed`] live here.
    pub fn single_mode(&self, mode: usize) -> Arc<Self> {
        Self::new(&[self.mode_dims[mode]], [self.mode_labels[mode].clone()])
            .expect("mode of a valid space is valid")
    }
}

impl fmt::Debug for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.mode_labels.iter().zip(&self.mode_dims))
            .finish()
    }
}

pub(crate) fn same_space(a: &HilbertSpace, b: &HilbertSpace) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(HilbertSpace::with_default_labels(&[2]).unwrap().dim(), 2);
        assert_eq!(
            HilbertSpace::with_default_labels(&[10, 20, 20])
                .unwrap()
                .dim(),
            4000
        );
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(HilbertSpace::with_default_labels(&[]).is_err());
        assert!(HilbertSpace::with_default_labels(&[3, 1]).is_err());
        assert!(HilbertSpace::new(&[2, 2], ["x", "x"]).is_err());
    }

    #[test]
    fn flat_index_matches_nested_loops() {
        let space = HilbertSpace::with_default_labels(&[10, 20, 20]).unwrap();
        assert_eq!(space.flat_index(&[1, 0, 3]).unwrap(), 403);
        let mut expected = 0;
        for i in 0..10 {
            for j in 0..20 {
                for k in 0..20 {
                    assert_eq!(space.flat_index(&[i, j, k]).unwrap(), expected);
                    assert_eq!(space.multi_index(expected), vec![i, j, k]);
                    expected += 1;
                }
            }
        }
    }

    #[test]
    fn unknown_mode() {
        let space = HilbertSpace::with_default_labels(&[3, 3]).unwrap();
        assert!(matches!(space.mode_index("a7"), Err(Error::UnknownMode(_))));
        assert_eq!(space.mode_index("a1").unwrap(), 1);
    }
}
