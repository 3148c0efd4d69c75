use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::operator::SparseOperator;
use super::{same_space, HilbertSpace, C64, ONE, ZERO};
use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-10;

/// Pure state with a dense amplitude vector.
#[derive(Clone, Debug)]
pub struct StateVector {
    space: Arc<HilbertSpace>,
    amps: Vec<C64>,
}

impl StateVector {
    /// Wraps amplitudes that are already normalized.
    pub fn new(space: &Arc<HilbertSpace>, amps: Vec<C64>) -> Result<Self> {
        let s = Self::unchecked(space, amps)?;
        let n = s.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: format!("norm {n} differs from 1"),
            });
        }
        Ok(s)
    }

    /// Normalizes the given amplitudes.
    pub fn normalized(space: &Arc<HilbertSpace>, amps: Vec<C64>) -> Result<Self> {
        let mut s = Self::unchecked(space, amps)?;
        let n = s.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: "zero vector".into(),
            });
        }
        s.amps.iter_mut().for_each(|a| *a /= n);
        Ok(s)
    }

    pub(crate) fn unchecked(space: &Arc<HilbertSpace>, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != space.dim() {
            return Err(Error::ShapeMismatch {
                expected: space.dim(),
                got: amps.len(),
            });
        }
        Ok(Self {
            space: space.clone(),
            amps,
        })
    }

    pub fn fock(space: &Arc<HilbertSpace>, occupation: &[usize]) -> Result<Self> {
        let mut amps = vec![ZERO; space.dim()];
        amps[space.flat_index(occupation)?] = ONE;
        Ok(Self {
            space: space.clone(),
            amps,
        })
    }

    /// Tensor product of one local vector per mode, in mode order.
    pub fn product(space: &Arc<HilbertSpace>, locals: &[Vec<C64>]) -> Result<Self> {
        if locals.len() != space.n_modes() {
            return Err(Error::ShapeMismatch {
                expected: space.n_modes(),
                got: locals.len(),
            });
        }
        for (m, v) in locals.iter().enumerate() {
            if v.len() != space.mode_dim(m) {
                return Err(Error::ShapeMismatch {
                    expected: space.mode_dim(m),
                    got: v.len(),
                });
            }
        }
        let mut amps = vec![ONE];
        for v in locals {
            let mut next = Vec::with_capacity(amps.len() * v.len());
            for a in &amps {
                next.extend(v.iter().map(|b| a * b));
            }
            amps = next;
        }
        Self::normalized(space, amps)
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &Self) -> Result<C64> {
        same_space(&self.space, &other.space)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn apply(&self, op: &SparseOperator) -> Result<Self> {
        same_space(&self.space, op.space())?;
        Ok(Self {
            space: self.space.clone(),
            amps: op.mul_vec(&self.amps),
        })
    }

    pub fn to_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amps)
    }

    /// Reduced density matrix of a single mode.
    pub fn reduced(&self, mode: usize) -> DMatrix<C64> {
        let d = self.space.mode_dim(mode);
        let stride = self.space.stride(mode);
        let mut out = DMatrix::from_element(d, d, ZERO);
        for base in 0..self.space.dim() {
            if self.space.level(base, mode) != 0 {
                continue;
            }
            for j in 0..d {
                let bj = self.amps[base + j * stride].conj();
                if bj == ZERO {
                    continue;
                }
                for i in 0..d {
                    out[(i, j)] += self.amps[base + i * stride] * bj;
                }
            }
        }
        out
    }
}

/// States that admit a single-mode partial trace.
pub trait PartialTrace {
    fn space(&self) -> &Arc<HilbertSpace>;
    fn reduced(&self, mode: usize) -> DMatrix<C64>;
}

impl PartialTrace for StateVector {
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }
    fn reduced(&self, mode: usize) -> DMatrix<C64> {
        StateVector::reduced(self, mode)
    }
}

impl PartialTrace for DensityMatrix {
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }
    fn reduced(&self, mode: usize) -> DMatrix<C64> {
        DensityMatrix::reduced(self, mode)
    }
}

/// `<ψ|op|ψ>`.
pub fn expect(op: &SparseOperator, psi: &StateVector) -> Result<C64> {
    same_space(op.space(), psi.space())?;
    let y = op.mul_vec(&psi.amps);
    Ok(psi.amps.iter().zip(&y).map(|(a, b)| a.conj() * b).sum())
}

/// `Tr(op ρ)`.
pub fn expect_density(op: &SparseOperator, rho: &DensityMatrix) -> Result<C64> {
    same_space(op.space(), rho.space())?;
    let mut tr = ZERO;
    for (r, c, v) in op.triplets() {
        tr += v * rho.data[(c, r)];
    }
    Ok(tr)
}

#[derive(Clone, Debug)]
pub struct DensityMatrix {
    space: Arc<HilbertSpace>,
    data: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn from_pure(psi: &StateVector) -> Self {
        let v = psi.to_dvector();
        Self {
            space: psi.space.clone(),
            data: &v * v.adjoint(),
        }
    }

    /// Validates Hermiticity (1e−10), unit trace (1e−8) and positivity
    /// (minimum eigenvalue ≥ −1e−8).
    pub fn new(space: &Arc<HilbertSpace>, data: DMatrix<C64>) -> Result<Self> {
        let rho = Self::unchecked(space, data)?;
        let herm = rho.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::InvalidParameter {
                name: "density matrix",
                reason: format!("not Hermitian (error {herm:e})"),
            });
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::InvalidParameter {
                name: "density matrix",
                reason: format!("trace {tr} differs from 1"),
            });
        }
        let min_eig = rho.min_eigenvalue();
        if min_eig < -1e-8 {
            return Err(Error::PositivityViolation { t: 0.0, min_eig });
        }
        Ok(rho)
    }

    pub(crate) fn unchecked(space: &Arc<HilbertSpace>, data: DMatrix<C64>) -> Result<Self> {
        if data.shape() != (space.dim(), space.dim()) {
            return Err(Error::ShapeMismatch {
                expected: space.dim(),
                got: data.nrows(),
            });
        }
        Ok(Self {
            space: space.clone(),
            data,
        })
    }

    pub fn maximally_mixed(space: &Arc<HilbertSpace>) -> Self {
        let n = space.dim();
        Self {
            space: space.clone(),
            data: DMatrix::from_diagonal_element(n, n, C64::from(1.0 / n as f64)),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    /// Column-major entries.
    pub fn as_slice(&self) -> &[C64] {
        self.data.as_slice()
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.data.nrows();
        let mut err: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                err = err.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        err
    }

    pub fn symmetrize(&mut self) {
        let n = self.data.nrows();
        for j in 0..n {
            for i in 0..=j {
                let avg = (self.data[(i, j)] + self.data[(j, i)].conj()) * 0.5;
                self.data[(i, j)] = avg;
                self.data[(j, i)] = avg.conj();
            }
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut h = self.data.clone();
        let n = h.nrows();
        for j in 0..n {
            for i in 0..=j {
                let avg = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
                h[(i, j)] = avg;
                h[(j, i)] = avg.conj();
            }
        }
        h.symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `<φ|ρ|φ>`.
    pub fn expect_state(&self, phi: &StateVector) -> Result<f64> {
        same_space(&self.space, phi.space())?;
        let v = phi.to_dvector();
        Ok((v.adjoint() * &self.data * &v)[(0, 0)].re)
    }

    /// Reduced state of a single mode (all other modes traced out).
    pub fn reduced(&self, mode: usize) -> DMatrix<C64> {
        let d = self.space.mode_dim(mode);
        let stride = self.space.stride(mode);
        let mut out = DMatrix::from_element(d, d, ZERO);
        for base in 0..self.space.dim() {
            if self.space.level(base, mode) != 0 {
                continue;
            }
            for j in 0..d {
                for i in 0..d {
                    out[(i, j)] += self.data[(base + i * stride, base + j * stride)];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{annihilation, number};

    #[test]
    fn vacuum_has_no_photons() {
        let s = HilbertSpace::with_default_labels(&[6]).unwrap();
        let vac = StateVector::fock(&s, &[0]).unwrap();
        let n = number(&s, "a0").unwrap();
        assert_eq!(expect(&n, &vac).unwrap(), ZERO);
    }

    #[test]
    fn density_expectation_is_trace() {
        let s = HilbertSpace::with_default_labels(&[4]).unwrap();
        let psi = StateVector::normalized(&s, vec![ONE, C64::new(0.0, 1.0), ZERO, ONE]).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let a = annihilation(&s, "a0").unwrap();
        let e1 = expect(&a, &psi).unwrap();
        let e2 = expect_density(&a, &rho).unwrap();
        assert!((e1 - e2).norm() < 1e-14);
    }

    #[test]
    fn reduced_of_product_state() {
        let s = HilbertSpace::with_default_labels(&[2, 3]).unwrap();
        let psi = StateVector::product(
            &s,
            &[vec![ONE, ONE], vec![ZERO, ONE, ZERO]],
        )
        .unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let r1 = rho.reduced(1);
        assert!((r1[(1, 1)] - ONE).norm() < 1e-14);
        let r0 = rho.reduced(0);
        assert!((r0[(0, 1)] - C64::from(0.5)).norm() < 1e-14);
        assert!(crate::hilbert::max_abs_diff_dense(&psi.reduced(0), &r0) < 1e-15);
        assert!(crate::hilbert::max_abs_diff_dense(&psi.reduced(1), &r1) < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_trace() {
        let s = HilbertSpace::with_default_labels(&[2]).unwrap();
        let m = DMatrix::from_diagonal_element(2, 2, ONE);
        assert!(DensityMatrix::new(&s, m).is_err());
        assert!(DensityMatrix::new(&s, DensityMatrix::maximally_mixed(&s).data).is_ok());
    }
}
