//! Coherent, cat and excited-cat states, plus state-comparison metrics.
//!
//! Single-mode builders come in two flavours: `*_local` returns the Fock
//! amplitudes of one mode, the unsuffixed version places that mode in a
//! multimode space with every other mode in vacuum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hilbert::{DensityMatrix, HilbertSpace, StateVector, C64, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatParity {
    /// `|C+>`, support on even Fock levels.
    Even,
    /// `|C->`, support on odd Fock levels.
    Odd,
}

impl CatParity {
    pub fn flipped(self) -> Self {
        match self {
            Self::Even => Self::Odd,
            Self::Odd => Self::Even,
        }
    }

    /// Computational index: `|C+>` is 0, `|C->` is 1.
    pub fn bit(self) -> usize {
        match self {
            Self::Even => 0,
            Self::Odd => 1,
        }
    }

    pub fn from_bit(bit: usize) -> Self {
        if bit & 1 == 0 {
            Self::Even
        } else {
            Self::Odd
        }
    }

    fn sign(self) -> f64 {
        match self {
            Self::Even => 1.0,
            Self::Odd => -1.0,
        }
    }
}

/// Product of per-qubit cat states with the bus in a Fock state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitBasisState {
    pub parities: Vec<CatParity>,
    #[serde(default)]
    pub bus_fock: usize,
}

impl QubitBasisState {
    pub fn all_even(n: usize) -> Self {
        Self {
            parities: vec![CatParity::Even; n],
            bus_fock: 0,
        }
    }

    /// Basis state for computational index `k` (qubit 1 is the most
    /// significant bit), bus in vacuum.
    pub fn from_index(n: usize, k: usize) -> Self {
        Self {
            parities: (0..n)
                .map(|q| CatParity::from_bit(k >> (n - 1 - q)))
                .collect(),
            bus_fock: 0,
        }
    }

    pub fn index(&self) -> usize {
        self.parities
            .iter()
            .fold(0, |acc, p| (acc << 1) | p.bit())
    }
}

/// Closed-form normalization `N± = 1/√(2(1 ± e^{−2α²}))`.
pub fn cat_normalization(alpha: f64, parity: CatParity) -> f64 {
    1.0 / (2.0 * (1.0 + parity.sign() * (-2.0 * alpha * alpha).exp())).sqrt()
}

fn normalize(mut v: Vec<C64>) -> Vec<C64> {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Poisson amplitudes `e^{−|α|²/2} αⁿ/√n!`, renormalized on the truncated
/// mode.
pub fn coherent_local(dim: usize, alpha: C64) -> Vec<C64> {
    normalize(coherent_series(dim, alpha))
}

fn coherent_series(dim: usize, alpha: C64) -> Vec<C64> {
    let mut out = Vec::with_capacity(dim);
    let mut c = C64::from((-0.5 * alpha.norm_sqr()).exp());
    for n in 0..dim {
        if n > 0 {
            c *= alpha / (n as f64).sqrt();
        }
        out.push(c);
    }
    out
}

fn project_parity(v: &[C64], parity: CatParity) -> Vec<C64> {
    v.iter()
        .enumerate()
        .map(|(n, &x)| if n % 2 == parity.bit() { x } else { ZERO })
        .collect()
}

/// `N±[D(α) ± D(−α)]|0>`; parity is exact because `D(−α)|0> = Π D(α)|0>`.
pub fn cat_local(dim: usize, alpha: f64, parity: CatParity) -> Result<Vec<C64>> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("cat amplitude must be > 0, got {alpha}")));
    }
    // D(α)|0> ± D(−α)|0> = (1 ± Π) D(α)|0> keeps exactly one parity.
    let plus = coherent_series(dim, C64::from(alpha));
    Ok(normalize(project_parity(&plus, parity)))
}

/// Displaced-Fock approximation of the first excited KPO eigenstates,
/// `N_e^±[D(α) ∓ D(−α)]|1>`: `Even` is `|ψ+^{e,1}>`, `Odd` is `|ψ−^{e,1}>`.
///
/// The bare expression overlaps the cat of the same parity by
/// `≈ 2α e^{−2α²}`; that component is projected out so the excited states
/// are orthogonal to the cat manifold.
pub fn excited_cat_local(dim: usize, alpha: f64, parity: CatParity) -> Result<Vec<C64>> {
    let v = normalize(excited_cat_raw(dim, alpha, parity)?);
    let cat = cat_local(dim, alpha, parity)?;
    let ov: C64 = cat.iter().zip(&v).map(|(c, x)| c.conj() * x).sum();
    Ok(normalize(v.iter().zip(&cat).map(|(x, c)| x - ov * c).collect()))
}

/// `D(α)|1> ∓ D(−α)|1> = (1 ± Π) D(α)|1>`, unnormalized, with
/// `D(α)|1> = (a† − α) |α>`.
pub(crate) fn excited_cat_raw(dim: usize, alpha: f64, parity: CatParity) -> Result<Vec<C64>> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("cat amplitude must be > 0, got {alpha}")));
    }
    let c = coherent_series(dim + 1, C64::from(alpha));
    let u: Vec<C64> = (0..dim)
        .map(|n| {
            let up = if n > 0 { c[n - 1] * (n as f64).sqrt() } else { ZERO };
            up - c[n] * alpha
        })
        .collect();
    Ok(project_parity(&u, parity))
}

fn place_on_mode(space: &Arc<HilbertSpace>, mode: &str, local: Vec<C64>) -> Result<StateVector> {
    let m = space.mode_index(mode)?;
    let locals: Vec<Vec<C64>> = (0..space.n_modes())
        .map(|k| {
            if k == m {
                local.clone()
            } else {
                let mut v = vec![ZERO; space.mode_dim(k)];
                v[0] = ONE;
                v
            }
        })
        .collect();
    StateVector::product(space, &locals)
}

pub fn coherent(space: &Arc<HilbertSpace>, mode: &str, alpha: C64) -> Result<StateVector> {
    let d = space.mode_dim(space.mode_index(mode)?);
    place_on_mode(space, mode, coherent_local(d, alpha))
}

pub fn cat_state(
    space: &Arc<HilbertSpace>,
    mode: &str,
    alpha: f64,
    parity: CatParity,
) -> Result<StateVector> {
    let d = space.mode_dim(space.mode_index(mode)?);
    place_on_mode(space, mode, cat_local(d, alpha, parity)?)
}

pub fn excited_cat(
    space: &Arc<HilbertSpace>,
    mode: &str,
    alpha: f64,
    parity: CatParity,
) -> Result<StateVector> {
    let d = space.mode_dim(space.mode_index(mode)?);
    place_on_mode(space, mode, excited_cat_local(d, alpha, parity)?)
}

pub fn overlap(psi: &StateVector, phi: &StateVector) -> Result<C64> {
    psi.overlap(phi)
}

/// Fidelity of a state against a pure reference `φ`.
pub trait Fidelity {
    fn fidelity(&self, phi: &StateVector) -> Result<f64>;
}

impl Fidelity for StateVector {
    /// `|<ψ|φ>|²`
    fn fidelity(&self, phi: &StateVector) -> Result<f64> {
        Ok(self.overlap(phi)?.norm_sqr())
    }
}

impl Fidelity for DensityMatrix {
    /// `<φ|ρ|φ>`
    fn fidelity(&self, phi: &StateVector) -> Result<f64> {
        self.expect_state(phi)
    }
}

pub fn fidelity<S: Fidelity>(state: &S, phi: &StateVector) -> Result<f64> {
    state.fidelity(phi)
}
