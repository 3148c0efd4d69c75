//! Hamiltonians, collapse operators and projectors for N Kerr parametric
//! oscillators coupled to a common bus cavity.
//!
//! All rates and angular frequencies are in rad/μs, times in μs.
//!
//! Two representations are available:
//!
//! * [`FullModel`]: bus Fock space ⊗ N KPO modes. Each KPO mode is either a
//!   truncated Fock space or the span of the highest `levels` eigenstates of
//!   the single-mode Kerr Hamiltonian (the cat pair sits at the top of the
//!   spectrum). The dressed representation is an exact change of basis
//!   followed by an energy cut-off.
//! * [`EffectiveModel`]: bus Fock space ⊗ N two-level cat qubits.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hilbert::{
    annihilation, number, tensor_embed, HilbertSpace, SparseOperator, StateVector, C64, I, ONE,
    ZERO,
};
use crate::states::{cat_local, excited_cat_local, CatParity, QubitBasisState};

/// How each KPO mode is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KpoBasis {
    Fock,
    /// Highest `levels` eigenstates of the Kerr Hamiltonian, computed at the
    /// configured Fock truncation.
    Dressed { levels: usize },
}

impl Default for KpoBasis {
    fn default() -> Self {
        Self::Fock
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Number of KPOs (cat qubits).
    pub n_qubits: usize,
    /// Kerr nonlinearity K.
    pub kerr: f64,
    /// Cat amplitude α = √(Ω_p/K).
    pub alpha: f64,
    /// Intercavity coupling J.
    pub coupling: f64,
    /// Bus detuning Δ = ω_0 − ω_c.
    pub detuning: f64,
    /// Number of phase-space loops m.
    pub loops: u32,
    #[serde(default)]
    pub kappa_bus: f64,
    #[serde(default)]
    pub gamma_bus: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_bus_dim")]
    pub bus_dim: usize,
    #[serde(default = "default_kpo_dim")]
    pub kpo_dim: usize,
    #[serde(default)]
    pub kpo_basis: KpoBasis,
}

fn default_bus_dim() -> usize {
    10
}

fn default_kpo_dim() -> usize {
    25
}

impl GateConfig {
    /// Config on the MS resonance Δ = 4√m Jα, no decoherence, default
    /// truncations.
    pub fn resonant(n_qubits: usize, kerr: f64, alpha: f64, coupling: f64, loops: u32) -> Self {
        Self {
            n_qubits,
            kerr,
            alpha,
            coupling,
            detuning: crate::gates::resonance_detuning(coupling, alpha, loops),
            loops,
            kappa_bus: 0.0,
            gamma_bus: 0.0,
            kappa: 0.0,
            gamma: 0.0,
            bus_dim: default_bus_dim(),
            kpo_dim: default_kpo_dim(),
            kpo_basis: KpoBasis::Fock,
        }
    }

    /// Two-photon drive Ω_p = Kα².
    pub fn pump(&self) -> f64 {
        self.kerr * self.alpha * self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 1 {
            return Err(invalid("n_qubits", "need at least one KPO"));
        }
        for (name, v) in [
            ("kerr", self.kerr),
            ("alpha", self.alpha),
            ("coupling", self.coupling),
            ("detuning", self.detuning),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("kappa_bus", self.kappa_bus),
            ("gamma_bus", self.gamma_bus),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("rate must be ≥ 0, got {v}")));
            }
        }
        if self.loops < 1 {
            return Err(invalid("loops", "m must be ≥ 1"));
        }
        if self.bus_dim < 2 || self.kpo_dim < 2 {
            return Err(invalid("truncation", "mode dimensions must be ≥ 2"));
        }
        if let KpoBasis::Dressed { levels } = self.kpo_basis {
            if levels < 2 || levels > self.kpo_dim {
                return Err(invalid(
                    "kpo_basis.levels",
                    format!("need 2 ≤ levels ≤ kpo_dim, got {levels}"),
                ));
            }
        }
        Ok(())
    }
}

/// `−K a†²a² + Ω_p(a² + a†²)` on a single Fock mode (real symmetric).
pub fn kerr_matrix(dim: usize, kerr: f64, pump: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let nf = n as f64;
        h[(n, n)] = -kerr * nf * (nf - 1.0);
        if n >= 2 {
            let v = pump * (nf * (nf - 1.0)).sqrt();
            h[(n - 2, n)] = v;
            h[(n, n - 2)] = v;
        }
    }
    h
}

/// Eigenpairs of a single-mode Kerr Hamiltonian, highest energy first.
///
/// The even and odd Fock sectors are diagonalized separately so each
/// eigenvector has exact parity even when the cat pair is nearly degenerate.
#[derive(Clone, Debug)]
pub struct KerrSpectrum {
    pub energies: Vec<f64>,
    pub parities: Vec<CatParity>,
    /// Columns are eigenvectors in the Fock basis.
    pub vectors: DMatrix<f64>,
}

impl KerrSpectrum {
    pub fn new(dim: usize, kerr: f64, pump: f64) -> Self {
        let h = kerr_matrix(dim, kerr, pump);
        let mut pairs: Vec<(f64, CatParity, Vec<f64>)> = Vec::with_capacity(dim);
        for parity in [CatParity::Even, CatParity::Odd] {
            let idx: Vec<usize> = (parity.bit()..dim).step_by(2).collect();
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| h[(idx[i], idx[j])]);
            let eig = SymmetricEigen::new(sub);
            for k in 0..idx.len() {
                let mut v = vec![0.0; dim];
                for (i, &fi) in idx.iter().enumerate() {
                    v[fi] = eig.eigenvectors[(i, k)];
                }
                // Fix the arbitrary sign: largest component positive.
                let pivot = v
                    .iter()
                    .copied()
                    .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if pivot < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                pairs.push((eig.eigenvalues[k], parity, v));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let vectors = DMatrix::from_fn(dim, dim, |i, k| pairs[k].2[i]);
        Self {
            energies: pairs.iter().map(|p| p.0).collect(),
            parities: pairs.iter().map(|p| p.1).collect(),
            vectors,
        }
    }

    /// Gap between the cat pair and the first excited pair.
    pub fn gap(&self) -> f64 {
        let top = 0.5 * (self.energies[0] + self.energies[1]);
        let next = 0.5 * (self.energies[2] + self.energies[3]);
        top - next
    }

    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k).iter().map(|&x| C64::from(x)).collect()
    }
}

/// Single KPO mode representation shared by all N oscillators.
#[derive(Clone, Debug)]
pub struct KpoMode {
    fock_dim: usize,
    /// Fock-basis columns of the kept eigenstates; `None` means Fock.
    basis: Option<DMatrix<C64>>,
    energies: Option<Vec<f64>>,
}

impl KpoMode {
    pub fn new(config: &GateConfig) -> Self {
        match config.kpo_basis {
            KpoBasis::Fock => Self {
                fock_dim: config.kpo_dim,
                basis: None,
                energies: None,
            },
            KpoBasis::Dressed { levels } => {
                let spec = KerrSpectrum::new(config.kpo_dim, config.kerr, config.pump());
                let basis = DMatrix::from_fn(config.kpo_dim, levels, |i, k| {
                    C64::from(spec.vectors[(i, k)])
                });
                Self {
                    fock_dim: config.kpo_dim,
                    basis: Some(basis),
                    energies: Some(spec.energies[..levels].to_vec()),
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.as_ref().map_or(self.fock_dim, |b| b.ncols())
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn is_dressed(&self) -> bool {
        self.basis.is_some()
    }

    /// Fock amplitudes → mode representation (projection when dressed).
    pub fn local_vec(&self, fock: &[C64]) -> Vec<C64> {
        match &self.basis {
            None => fock.to_vec(),
            Some(b) => (0..b.ncols())
                .map(|k| b.column(k).iter().zip(fock).map(|(v, x)| v.conj() * x).sum())
                .collect(),
        }
    }

    /// Fock-basis operator → mode representation `V† A V`.
    pub fn local_op(&self, fock: &DMatrix<C64>) -> DMatrix<C64> {
        match &self.basis {
            None => fock.clone(),
            Some(b) => {
                let mut m = b.adjoint() * fock * b;
                // Parity selection rules make many entries exactly zero in
                // exact arithmetic; clear round-off there.
                m.iter_mut().for_each(|z| {
                    if z.norm() < 1e-13 {
                        *z = ZERO;
                    }
                });
                m
            }
        }
    }

    fn lowering_fock(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.fock_dim, self.fock_dim, |i, j| {
            if j == i + 1 {
                C64::from((j as f64).sqrt())
            } else {
                ZERO
            }
        })
    }

    pub fn lowering(&self) -> DMatrix<C64> {
        self.local_op(&self.lowering_fock())
    }

    pub fn number(&self) -> DMatrix<C64> {
        let a = self.lowering_fock();
        self.local_op(&(a.adjoint() * &a))
    }

    pub fn kerr(&self, kerr: f64, pump: f64) -> DMatrix<C64> {
        match &self.energies {
            Some(e) => DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                e.len(),
                e.iter().map(|&x| C64::from(x)),
            )),
            None => kerr_matrix(self.fock_dim, kerr, pump).map(C64::from),
        }
    }
}

/// A Lindblad channel `rate · D[op]`.
#[derive(Clone, Debug)]
pub struct CollapseOp {
    pub label: String,
    pub rate: f64,
    pub op: SparseOperator,
}

fn embed_dense(space: &Arc<HilbertSpace>, mode: usize, m: &DMatrix<C64>) -> Result<SparseOperator> {
    let local = SparseOperator::from_dense(&space.single_mode(mode), m)?;
    tensor_embed(&local, space, &space.labels()[mode])
}

/// Parts of a bus-coupled gate model that the gate runner needs.
///
/// The coupling is written `H_int(t) = J (e^{iφ(t)} V + e^{−iφ(t)} V†)` with
/// `φ(t) = ∫Δ dt`.
pub trait GateSystem: Send + Sync {
    fn config(&self) -> &GateConfig;
    fn space(&self) -> &Arc<HilbertSpace>;
    /// Time-independent KPO part with the cat-manifold energy removed.
    fn static_hamiltonian(&self) -> &SparseOperator;
    fn bus_number(&self) -> &SparseOperator;
    fn coupling_op(&self) -> &SparseOperator;
    fn coupling_op_dag(&self) -> &SparseOperator;
    fn collapse_ops(&self) -> Vec<CollapseOp>;
    /// Mode index of qubit `q` (0-based).
    fn qubit_mode(&self, q: usize) -> usize {
        q + 1
    }
    /// `|C+>` and `|C->` in the local representation of a qubit mode.
    fn cat_pair(&self) -> [&[C64]; 2];

    fn basis_state(&self, state: &QubitBasisState) -> Result<StateVector> {
        let cfg = self.config();
        if state.parities.len() != cfg.n_qubits {
            return Err(invalid(
                "parities",
                format!("{} parities for {} qubits", state.parities.len(), cfg.n_qubits),
            ));
        }
        let space = self.space();
        let mut bus = vec![ZERO; space.mode_dim(0)];
        *bus
            .get_mut(state.bus_fock)
            .ok_or_else(|| invalid("bus_fock", "beyond bus truncation"))? = ONE;
        let cats = self.cat_pair();
        let mut locals = vec![bus];
        locals.extend(state.parities.iter().map(|p| cats[p.bit()].to_vec()));
        StateVector::product(space, &locals)
    }

    /// Computational basis (bus in vacuum), index order of
    /// [`QubitBasisState::from_index`].
    fn computational_basis(&self) -> Result<Vec<StateVector>> {
        let n = self.config().n_qubits;
        (0..1usize << n)
            .map(|k| self.basis_state(&QubitBasisState::from_index(n, k)))
            .collect()
    }

    /// `H(t)` with the given instantaneous coupling and accumulated bus phase.
    fn hamiltonian_at(&self, coupling: f64, phase: f64) -> Result<SparseOperator> {
        let e = C64::from_polar(coupling, phase);
        SparseOperator::linear_combination(
            self.space(),
            [
                (ONE, self.static_hamiltonian()),
                (e, self.coupling_op()),
                (e.conj(), self.coupling_op_dag()),
            ],
        )
    }
}

/// Bus cavity plus N KPO modes.
#[derive(Clone, Debug)]
pub struct FullModel {
    config: GateConfig,
    space: Arc<HilbertSpace>,
    kpo: KpoMode,
    lowering: Vec<SparseOperator>,
    numbers: Vec<SparseOperator>,
    kerr_terms: Vec<SparseOperator>,
    static_h: SparseOperator,
    coupling: SparseOperator,
    coupling_dag: SparseOperator,
    cats: [Vec<C64>; 2],
}

impl FullModel {
    pub fn new(config: &GateConfig) -> Result<Self> {
        config.validate()?;
        let kpo = KpoMode::new(config);
        let mut dims = vec![config.bus_dim];
        dims.extend(std::iter::repeat(kpo.dim()).take(config.n_qubits));
        let space = HilbertSpace::with_default_labels(&dims)?;

        let mut lowering = vec![annihilation(&space, "a0")?];
        let mut numbers = vec![number(&space, "a0")?];
        let mut kerr_terms = Vec::new();
        let a_local = kpo.lowering();
        let n_local = kpo.number();
        let k_local = kpo.kerr(config.kerr, config.pump());
        for m in 1..=config.n_qubits {
            lowering.push(embed_dense(&space, m, &a_local)?);
            numbers.push(embed_dense(&space, m, &n_local)?);
            kerr_terms.push(embed_dense(&space, m, &k_local)?);
        }

        let offset = config.pump() * config.pump() / config.kerr;
        let id = SparseOperator::identity(&space);
        let static_h = SparseOperator::linear_combination(
            &space,
            kerr_terms
                .iter()
                .map(|h| (ONE, h))
                .chain([(C64::from(-offset * config.n_qubits as f64), &id)]),
        )?;

        let a0_dag = lowering[0].dagger();
        let mut coupling = SparseOperator::zeros(&space);
        for a in &lowering[1..] {
            coupling = coupling.add(&a.mul(&a0_dag)?)?;
        }
        let coupling_dag = coupling.dagger();

        let cats = [CatParity::Even, CatParity::Odd]
            .map(|p| cat_local(config.kpo_dim, config.alpha, p).map(|v| kpo.local_vec(&v)));
        let [even, odd] = cats;
        Ok(Self {
            config: config.clone(),
            space,
            kpo,
            lowering,
            numbers,
            kerr_terms,
            static_h,
            coupling,
            coupling_dag,
            cats: [even?, odd?],
        })
    }

    pub fn kpo_mode(&self) -> &KpoMode {
        &self.kpo
    }

    /// Lowering operator of mode `m` (0 = bus).
    pub fn lowering(&self, m: usize) -> &SparseOperator {
        &self.lowering[m]
    }

    pub fn number_op(&self, m: usize) -> &SparseOperator {
        &self.numbers[m]
    }

    /// `−K a_n†²a_n² + Ω_p(a_n² + a_n†²)` on KPO `n` (1-based).
    pub fn h_kerr(&self, n: usize) -> Result<&SparseOperator> {
        self.kerr_terms
            .get(n.wrapping_sub(1))
            .ok_or_else(|| invalid("mode", format!("no KPO {n}")))
    }

    /// `Σ_n J a_n a_0† e^{iΔt} + h.c.` at constant detuning.
    pub fn h_int(&self, t: f64) -> Result<SparseOperator> {
        if t < 0.0 {
            return Err(invalid("t", "time must be ≥ 0"));
        }
        let e = C64::from_polar(self.config.coupling, self.config.detuning * t);
        SparseOperator::linear_combination(
            &self.space,
            [(e, &self.coupling), (e.conj(), &self.coupling_dag)],
        )
    }

    /// `Σ_n H_n^Kerr + H_int(t)`, Kerr terms exactly as written (no offset).
    pub fn h_total(&self, t: f64) -> Result<SparseOperator> {
        let mut h = self.h_int(t)?;
        for k in &self.kerr_terms {
            h = h.add(k)?;
        }
        Ok(h)
    }

    /// `{√κ_0 a_0, √γ_0 a_0†a_0} ∪ {√κ a_n, √γ a_n†a_n}`; zero-rate channels
    /// are omitted.
    pub fn collapse_ops_full(&self) -> Vec<CollapseOp> {
        let c = &self.config;
        let mut out = Vec::new();
        let mut push = |label: String, rate: f64, op: &SparseOperator| {
            if rate > 0.0 {
                out.push(CollapseOp {
                    label,
                    rate,
                    op: op.clone(),
                })
            }
        };
        push("loss_a0".into(), c.kappa_bus, &self.lowering[0]);
        push("dephasing_a0".into(), c.gamma_bus, &self.numbers[0]);
        for m in 1..=c.n_qubits {
            push(format!("loss_a{m}"), c.kappa, &self.lowering[m]);
            push(format!("dephasing_a{m}"), c.gamma, &self.numbers[m]);
        }
        out
    }

    fn local_projector(&self, vecs: &[Vec<C64>]) -> DMatrix<C64> {
        let d = self.kpo.dim();
        let mut p = DMatrix::from_element(d, d, ZERO);
        for v in vecs {
            let col = nalgebra::DVector::from_column_slice(v);
            p += &col * col.adjoint();
        }
        p
    }

    fn product_projector(&self, local: &DMatrix<C64>) -> Result<SparseOperator> {
        let mut bus = DMatrix::from_element(self.config.bus_dim, self.config.bus_dim, ZERO);
        bus[(0, 0)] = ONE;
        let mut p = embed_dense(&self.space, 0, &bus)?;
        for m in 1..=self.config.n_qubits {
            p = p.mul(&embed_dense(&self.space, m, local)?)?;
        }
        Ok(p)
    }

    /// `|0>_0<0| ⊗ ⊗_n (|C+><C+| + |C−><C−|)`.
    pub fn projector_cat(&self) -> Result<SparseOperator> {
        let local = self.local_projector(&self.cats);
        self.product_projector(&local)
    }

    /// Identity on the bus ⊗ projector on the highest `levels` Kerr
    /// eigenstates of every KPO (`levels = 4` keeps the cat pair and the
    /// first excited pair).
    pub fn projector_kpo(&self, levels: usize) -> Result<SparseOperator> {
        let spec = KerrSpectrum::new(self.config.kpo_dim, self.config.kerr, self.config.pump());
        if levels > spec.energies.len() {
            return Err(invalid("levels", "more levels than the truncation holds"));
        }
        let vecs: Vec<Vec<C64>> = (0..levels)
            .map(|k| self.kpo.local_vec(&spec.vector(k)))
            .collect();
        let local = self.local_projector(&vecs);
        let mut p = SparseOperator::identity(&self.space);
        for m in 1..=self.config.n_qubits {
            p = p.mul(&embed_dense(&self.space, m, &local)?)?;
        }
        Ok(p)
    }

    /// Displaced-Fock excited cat `|ψ±^{e,1}>` in the mode representation.
    pub fn excited_local(&self, parity: CatParity) -> Result<Vec<C64>> {
        Ok(self
            .kpo
            .local_vec(&excited_cat_local(self.config.kpo_dim, self.config.alpha, parity)?))
    }
}

impl GateSystem for FullModel {
    fn config(&self) -> &GateConfig {
        &self.config
    }
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }
    fn static_hamiltonian(&self) -> &SparseOperator {
        &self.static_h
    }
    fn bus_number(&self) -> &SparseOperator {
        &self.numbers[0]
    }
    fn coupling_op(&self) -> &SparseOperator {
        &self.coupling
    }
    fn coupling_op_dag(&self) -> &SparseOperator {
        &self.coupling_dag
    }
    fn collapse_ops(&self) -> Vec<CollapseOp> {
        self.collapse_ops_full()
    }
    fn cat_pair(&self) -> [&[C64]; 2] {
        [&self.cats[0], &self.cats[1]]
    }
}

/// `D(±α) H^Kerr D†(±α)` with the constant `Ω_p²/K` removed:
/// `−K[4α² a†a + a†²a² ∓ 2α(a†²a + a†a²)]` on a single Fock mode of
/// dimension `config.kpo_dim`. `sign = +1` corresponds to `D(+α)`.
pub fn h_displaced(config: &GateConfig, sign: f64) -> Result<SparseOperator> {
    let space = HilbertSpace::with_default_labels(&[config.kpo_dim])?;
    let a = annihilation(&space, "a0")?;
    let ad = a.dagger();
    let n = ad.mul(&a)?;
    let ad2a2 = ad.mul(&ad)?.mul(&a)?.mul(&a)?;
    let ad2a = ad.mul(&ad)?.mul(&a)?;
    let cubic = ad2a.add(&ad2a.dagger())?;
    let (k, alpha) = (config.kerr, config.alpha);
    SparseOperator::linear_combination(
        &space,
        [
            (C64::from(-4.0 * k * alpha * alpha), &n),
            (C64::from(-k), &ad2a2),
            (C64::from(2.0 * k * alpha * sign.signum()), &cubic),
        ],
    )
}

/// `E_gap ≃ 4Kα²`.
pub fn energy_gap(config: &GateConfig) -> f64 {
    4.0 * config.kerr * config.alpha * config.alpha
}

/// Order-of-magnitude excitation probability `N J²/(E_gap + Δ)²`.
/// Diagnostic only.
pub fn leakage_estimate(config: &GateConfig) -> f64 {
    let denom = energy_gap(config) + config.detuning;
    config.n_qubits as f64 * config.coupling * config.coupling / (denom * denom)
}

/// Pauli matrices on a cat qubit in the ordered basis (|C+>, |C->).
pub mod pauli {
    use super::*;

    /// `σ+ = |C−><C+|`
    pub fn sigma_plus() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
    }
    pub fn sigma_minus() -> DMatrix<C64> {
        sigma_plus().adjoint()
    }
    pub fn sigma_x() -> DMatrix<C64> {
        sigma_plus() + sigma_minus()
    }
    /// `σy = i(σ− − σ+)`
    pub fn sigma_y() -> DMatrix<C64> {
        (sigma_minus() - sigma_plus()) * I
    }
    /// `σz = |C−><C−| − |C+><C+|`
    pub fn sigma_z() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[-ONE, ZERO, ZERO, ONE])
    }
}

/// Bus cavity plus N two-level cat qubits.
#[derive(Clone, Debug)]
pub struct EffectiveModel {
    config: GateConfig,
    space: Arc<HilbertSpace>,
    a0: SparseOperator,
    n0: SparseOperator,
    sigma_x: Vec<SparseOperator>,
    sigma_y: Vec<SparseOperator>,
    static_h: SparseOperator,
    coupling: SparseOperator,
    coupling_dag: SparseOperator,
    cats: [Vec<C64>; 2],
}

impl EffectiveModel {
    pub fn new(config: &GateConfig) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.bus_dim];
        dims.extend(std::iter::repeat(2).take(config.n_qubits));
        let labels = std::iter::once("a0".to_string())
            .chain((1..=config.n_qubits).map(|q| format!("q{q}")));
        let space = HilbertSpace::new(&dims, labels)?;
        let a0 = annihilation(&space, "a0")?;
        let n0 = number(&space, "a0")?;
        let mut sigma_x = Vec::new();
        let mut sigma_y = Vec::new();
        for m in 1..=config.n_qubits {
            sigma_x.push(embed_dense(&space, m, &pauli::sigma_x())?);
            sigma_y.push(embed_dense(&space, m, &pauli::sigma_y())?);
        }
        let a0_dag = a0.dagger();
        let mut sx_total = SparseOperator::zeros(&space);
        for s in &sigma_x {
            sx_total = sx_total.add(s)?;
        }
        let coupling = sx_total.mul(&a0_dag)?.scale(C64::from(config.alpha));
        let coupling_dag = coupling.dagger();
        Ok(Self {
            config: config.clone(),
            static_h: SparseOperator::zeros(&space),
            space,
            a0,
            n0,
            sigma_x,
            sigma_y,
            coupling,
            coupling_dag,
            cats: [vec![ONE, ZERO], vec![ZERO, ONE]],
        })
    }

    pub fn sigma_x(&self, q: usize) -> &SparseOperator {
        &self.sigma_x[q]
    }

    pub fn sigma_y(&self, q: usize) -> &SparseOperator {
        &self.sigma_y[q]
    }

    /// `S_x = ½ Σ_n σ_n^x`.
    pub fn s_x(&self) -> Result<SparseOperator> {
        SparseOperator::linear_combination(
            &self.space,
            self.sigma_x.iter().map(|s| (C64::from(0.5), s)),
        )
    }

    pub fn bus_lowering(&self) -> &SparseOperator {
        &self.a0
    }

    /// `2Jα S_x (a_0 e^{−iΔt} + a_0† e^{iΔt})`.
    pub fn h_eff_spin_boson(&self, t: f64) -> Result<SparseOperator> {
        let e = C64::from_polar(self.config.coupling, self.config.detuning * t);
        SparseOperator::linear_combination(
            &self.space,
            [(e, &self.coupling), (e.conj(), &self.coupling_dag)],
        )
    }

    /// Per-qubit bit-flip channel
    /// `κα²/√(1−e^{−4α²}) D[σx + i e^{−2α²} σy]`, the identity dephasing
    /// channel `γα⁴ D[𝟙]`, and the bus channels.
    pub fn collapse_ops_effective(&self) -> Result<Vec<CollapseOp>> {
        let c = &self.config;
        let a2 = c.alpha * c.alpha;
        let mut out = Vec::new();
        if c.kappa_bus > 0.0 {
            out.push(CollapseOp {
                label: "loss_a0".into(),
                rate: c.kappa_bus,
                op: self.a0.clone(),
            });
        }
        if c.gamma_bus > 0.0 {
            out.push(CollapseOp {
                label: "dephasing_a0".into(),
                rate: c.gamma_bus,
                op: self.n0.clone(),
            });
        }
        let flip_rate = c.kappa * a2 / (1.0 - (-4.0 * a2).exp()).sqrt();
        let phase_weight = (-2.0 * a2).exp();
        let id = SparseOperator::identity(&self.space);
        for q in 0..c.n_qubits {
            if c.kappa > 0.0 {
                out.push(CollapseOp {
                    label: format!("bitflip_q{}", q + 1),
                    rate: flip_rate,
                    op: self.sigma_x[q].add_scaled(&self.sigma_y[q], I * phase_weight)?,
                });
            }
            if c.gamma > 0.0 {
                out.push(CollapseOp {
                    label: format!("identity_dephasing_q{}", q + 1),
                    rate: c.gamma * a2 * a2,
                    op: id.clone(),
                });
            }
        }
        Ok(out)
    }
}

impl GateSystem for EffectiveModel {
    fn config(&self) -> &GateConfig {
        &self.config
    }
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }
    fn static_hamiltonian(&self) -> &SparseOperator {
        &self.static_h
    }
    fn bus_number(&self) -> &SparseOperator {
        &self.n0
    }
    fn coupling_op(&self) -> &SparseOperator {
        &self.coupling
    }
    fn coupling_op_dag(&self) -> &SparseOperator {
        &self.coupling_dag
    }
    fn collapse_ops(&self) -> Vec<CollapseOp> {
        self.collapse_ops_effective()
            .expect("collapse operators of a validated model")
    }
    fn cat_pair(&self) -> [&[C64]; 2] {
        [&self.cats[0], &self.cats[1]]
    }
}

/// Exact-diagonalization counterparts of the cat and excited-cat states,
/// for validating the displaced-Fock constructors.
pub fn kerr_eigenstate(config: &GateConfig, level: usize) -> Vec<C64> {
    KerrSpectrum::new(config.kpo_dim, config.kerr, config.pump()).vector(level)
}
