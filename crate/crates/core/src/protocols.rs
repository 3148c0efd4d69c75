//! Single-KPO protocols: adiabatic cat-state preparation and single-qubit
//! rotations inside the cat manifold.
//!
//! Two-level matrices use the library ordering `0 = |C+>`, `1 = |C−>`, with
//! `σz = |C−><C−| − |C+><C+|`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_density, evolve_state, Hamiltonian, IntegratorSettings};
use crate::error::{invalid, Result};
use crate::gates::average_gate_fidelity;
use crate::hilbert::{
    annihilation, creation, number, DensityMatrix, HilbertSpace, SparseOperator, StateVector, C64,
    ONE, ZERO,
};
use crate::model::CollapseOp;
use crate::states::{cat_local, CatParity};

fn single_mode(dim: usize) -> Result<Arc<HilbertSpace>> {
    HilbertSpace::new(&[dim], ["a"])
}

fn kerr_term(space: &Arc<HilbertSpace>) -> Result<SparseOperator> {
    let n = number(space, "a")?;
    // a†²a² = n(n − 1)
    Ok(SparseOperator::diagonal(space, |i| {
        let v = n.get(i, i).re;
        C64::from(v * (v - 1.0))
    }))
}

fn two_photon(space: &Arc<HilbertSpace>) -> Result<SparseOperator> {
    let a = annihilation(space, "a")?;
    let a2 = a.mul(&a)?;
    a2.add(&a2.dagger())
}

/// Linear ramp `α_t = α(t + t_0)/t_0` with `Δ_q(t) = −K sin(π(t + t_0)/t_0)`
/// on `t ∈ [−t_0, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatPrepSchedule {
    pub ramp_time: f64,
    pub alpha: f64,
}

impl CatPrepSchedule {
    pub fn new(ramp_time: f64, alpha: f64) -> Result<Self> {
        let s = Self { ramp_time, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ramp_time > 0.0 && self.ramp_time.is_finite()) {
            return Err(invalid("t_0", format!("must be > 0, got {}", self.ramp_time)));
        }
        if !(self.alpha > 0.0) {
            return Err(invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    fn progress(&self, t: f64) -> Result<f64> {
        let tol = 1e-12 * self.ramp_time;
        if t < -self.ramp_time - tol || t > tol {
            return Err(invalid("t", format!("{t} lies outside [−t_0, 0]")));
        }
        Ok(((t + self.ramp_time) / self.ramp_time).clamp(0.0, 1.0))
    }

    pub fn amplitude_at(&self, t: f64) -> Result<f64> {
        Ok(self.alpha * self.progress(t)?)
    }

    pub fn pump_at(&self, kerr: f64, t: f64) -> Result<f64> {
        let a = self.amplitude_at(t)?;
        Ok(kerr * a * a)
    }

    pub fn detuning_at(&self, kerr: f64, t: f64) -> Result<f64> {
        Ok(-kerr * (PI * self.progress(t)?).sin())
    }

    /// How well the displaced-frame conditions hold at `t`: the smaller of
    /// `|Δ_q − 4Kα_t²| / 2Kα_t` and `|Δ_q − 4Kα_t²| / √((α_tΔ_q)² + α̇_t²)`.
    pub fn condition_margin(&self, kerr: f64, t: f64) -> Result<f64> {
        let a = self.amplitude_at(t)?;
        let dq = self.detuning_at(kerr, t)?;
        let rate = self.alpha / self.ramp_time;
        let lhs = (dq - 4.0 * kerr * a * a).abs();
        let photon = if a > 0.0 { lhs / (2.0 * kerr * a) } else { f64::INFINITY };
        let drive = lhs / ((a * dq).powi(2) + rate * rate).sqrt();
        Ok(photon.min(drive))
    }

    /// Ramp average of [`Self::condition_margin`] over 1000 midpoints.
    pub fn ramp_margin(&self, kerr: f64) -> Result<f64> {
        let n = 1000;
        let mut acc = 0.0;
        for k in 0..n {
            let t = -self.ramp_time + (k as f64 + 0.5) / n as f64 * self.ramp_time;
            acc += self.condition_margin(kerr, t)?;
        }
        Ok(acc / n as f64)
    }
}

/// `Ω_p(t)(a†² + a²) − K a†²a² + Δ_q(t) a†a` on a single mode of `dim` levels.
pub fn cat_prep_hamiltonian(kerr: f64, schedule: &CatPrepSchedule, dim: usize, t: f64) -> Result<SparseOperator> {
    schedule.validate()?;
    let space = single_mode(dim)?;
    SparseOperator::linear_combination(
        &space,
        [
            (C64::from(schedule.pump_at(kerr, t)?), &two_photon(&space)?),
            (C64::from(-kerr), &kerr_term(&space)?),
            (C64::from(schedule.detuning_at(kerr, t)?), &number(&space, "a")?),
        ],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrepInitial {
    /// `|0>`, prepares `|C+>`.
    Vacuum,
    /// `|1>`, prepares `|C−>`.
    OnePhoton,
}

impl PrepInitial {
    pub fn target(self) -> CatParity {
        match self {
            PrepInitial::Vacuum => CatParity::Even,
            PrepInitial::OnePhoton => CatParity::Odd,
        }
    }

    fn level(self) -> usize {
        match self {
            PrepInitial::Vacuum => 0,
            PrepInitial::OnePhoton => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatPrepRun {
    pub kerr: f64,
    pub schedule: CatPrepSchedule,
    pub initial: PrepInitial,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub gamma: f64,
    pub dim: usize,
    #[serde(default = "prep_settings")]
    pub settings: IntegratorSettings,
}

fn prep_settings() -> IntegratorSettings {
    IntegratorSettings::default()
}

impl CatPrepRun {
    pub fn new(kerr: f64, alpha: f64, ramp_time: f64, initial: PrepInitial) -> Result<Self> {
        Ok(Self {
            kerr,
            schedule: CatPrepSchedule::new(ramp_time, alpha)?,
            initial,
            kappa: 0.0,
            gamma: 0.0,
            dim: 30,
            settings: prep_settings(),
        })
    }

    /// Ramp Hamiltonian in the shifted time `s = t + t_0 ∈ [0, t_0]`.
    pub fn hamiltonian(&self) -> Result<Hamiltonian> {
        let space = single_mode(self.dim)?;
        let (k, sch) = (self.kerr, self.schedule);
        let t0 = sch.ramp_time;
        Hamiltonian::constant(kerr_term(&space)?.scale(C64::from(-k)))
            .with_term(two_photon(&space)?, move |s| {
                let a = sch.alpha * (s / t0).clamp(0.0, 1.0);
                C64::from(k * a * a)
            })?
            .with_term(number(&space, "a")?, move |s| {
                C64::from(-k * (PI * (s / t0).clamp(0.0, 1.0)).sin())
            })
    }
}

#[derive(Clone, Debug)]
pub enum PrepState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

#[derive(Clone, Debug)]
pub struct CatPrepOutcome {
    /// `<C±|ρ(0)|C±>` for the targeted parity.
    pub fidelity: f64,
    pub margin: f64,
    pub state: PrepState,
}

/// Evolves the initial Fock state from `−t_0` to `0`; dissipative runs use
/// `κD[a] + γD[a†a]`.
pub fn run_cat_prep(run: &CatPrepRun) -> Result<CatPrepOutcome> {
    run.schedule.validate()?;
    if run.kappa < 0.0 || run.gamma < 0.0 {
        return Err(invalid("rates", "decoherence rates must be ≥ 0"));
    }
    if run.dim < 4 {
        return Err(invalid("dim", "need at least 4 levels"));
    }
    let h = run.hamiltonian()?;
    let space = h.space().clone();
    let psi0 = StateVector::fock(&space, &[run.initial.level()])?;
    let target = StateVector::new(
        &space,
        cat_local(run.dim, run.schedule.alpha, run.initial.target())?,
    )?;
    let times = [0.0, run.schedule.ramp_time];
    let margin = run.schedule.ramp_margin(run.kerr)?;
    let mut collapse = Vec::new();
    if run.kappa > 0.0 {
        collapse.push(CollapseOp {
            label: "loss_a".into(),
            rate: run.kappa,
            op: annihilation(&space, "a")?,
        });
    }
    if run.gamma > 0.0 {
        collapse.push(CollapseOp {
            label: "dephasing_a".into(),
            rate: run.gamma,
            op: number(&space, "a")?,
        });
    }
    if collapse.is_empty() {
        let psi = evolve_state(&h, &psi0, &times, &run.settings)?.into_final_state();
        let fidelity = target.overlap(&psi)?.norm_sqr();
        Ok(CatPrepOutcome {
            fidelity,
            margin,
            state: PrepState::Pure(psi),
        })
    } else {
        let rho0 = DensityMatrix::from_pure(&psi0);
        let rho = evolve_density(&h, &collapse, &rho0, &times, &run.settings)?.into_final_state();
        let fidelity = rho.expect_state(&target)?;
        Ok(CatPrepOutcome {
            fidelity,
            margin,
            state: PrepState::Mixed(rho),
        })
    }
}

/// Single-photon drive `ξ_p a + ξ_p* a†`, detuning `Δ_q a†a` and the
/// Josephson energy `ξ_J` of the optional `H_add` element.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleQubitParams {
    pub drive: C64,
    pub detuning: f64,
    #[serde(default)]
    pub josephson: f64,
}

/// Cat-manifold Hamiltonian `Δ̃/2 σz + Ω_1(e^{−iφ}|C−><C+| + h.c.)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRotation {
    pub detuning: f64,
    pub rabi: f64,
    pub phase: f64,
}

impl EffectiveRotation {
    /// `Ξ = √(Δ̃²/4 + Ω_1²)`.
    pub fn rate(&self) -> f64 {
        (self.detuning * self.detuning / 4.0 + self.rabi * self.rabi).sqrt()
    }

    /// `θ_rot = arctan(2Ω_1/Δ̃)`, taken in `[0, π]`.
    pub fn angle(&self) -> f64 {
        (2.0 * self.rabi).atan2(self.detuning)
    }

    pub fn hamiltonian(&self) -> DMatrix<C64> {
        let off = C64::from_polar(self.rabi, self.phase);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::from(-self.detuning / 2.0),
                off,
                off.conj(),
                C64::from(self.detuning / 2.0),
            ],
        )
    }

    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        u1_closed_form(self.rate(), self.angle(), self.phase, t)
    }
}

/// `⟨C−|a†a|C−⟩ − ⟨C+|a†a|C+⟩ = α²(coth α² − tanh α²)`.
fn number_splitting(alpha: f64) -> f64 {
    2.0 * alpha * alpha / (2.0 * alpha * alpha).sinh()
}

/// Closed-form map to the cat-manifold rotation.
///
/// `Ω_1 e^{−iφ} = ξα√tanh α² + ξ*α√coth α²` is the `|C−><C+|` matrix
/// element of the drive. A non-zero `ξ_J` adds the rotating-wave splitting
/// of `H_add`, `−ξ_J/(α√(2π))`.
pub fn effective_single_qubit(params: &SingleQubitParams, alpha: f64) -> Result<EffectiveRotation> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    let a2 = alpha * alpha;
    let xi = params.drive;
    let coupling = xi * alpha * a2.tanh().sqrt() + xi.conj() * alpha / a2.tanh().sqrt();
    let detuning = params.detuning * number_splitting(alpha) + josephson_splitting(params.josephson, alpha);
    Ok(EffectiveRotation {
        detuning,
        rabi: coupling.norm(),
        phase: -coupling.arg(),
    })
}

/// Rotating-wave `σz` coefficient produced by `ξ_J cos[φ_a(a e^{−iω_c t} + h.c.)]`
/// with `φ_a = 2α`.
pub fn josephson_splitting(josephson: f64, alpha: f64) -> f64 {
    -josephson / (alpha * (2.0 * PI).sqrt())
}

/// `exp(−iH t)` for `H = Ξ[cos θ σz + sin θ(e^{−iφ}|C−><C+| + h.c.)]`.
pub fn u1_closed_form(rate: f64, angle: f64, phase: f64, t: f64) -> DMatrix<C64> {
    let (s, c) = (rate * t).sin_cos();
    let i = C64::new(0.0, 1.0);
    let off = -i * s * angle.sin();
    DMatrix::from_row_slice(
        2,
        2,
        &[
            c + i * s * angle.cos(),
            off * C64::from_polar(1.0, phase),
            off * C64::from_polar(1.0, -phase),
            c - i * s * angle.cos(),
        ],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleQubitGate {
    Hadamard,
    Not,
}

/// Parameters realizing `gate` in time `t_gate` with a real drive. The
/// Hadamard uses `Δ_q` alone or, with `use_h_add`, `ξ_J` alone.
pub fn design_single_qubit(
    gate: SingleQubitGate,
    alpha: f64,
    t_gate: f64,
    use_h_add: bool,
) -> Result<SingleQubitParams> {
    if !(t_gate > 0.0) {
        return Err(invalid("t_gate", "must be > 0"));
    }
    let rate = PI / (2.0 * t_gate);
    let angle: f64 = match gate {
        SingleQubitGate::Hadamard => PI / 4.0,
        SingleQubitGate::Not => PI / 2.0,
    };
    let rabi = rate * angle.sin();
    let split = 2.0 * rate * angle.cos();
    let a2 = alpha * alpha;
    let drive = rabi / (alpha * (a2.tanh().sqrt() + 1.0 / a2.tanh().sqrt()));
    let (detuning, josephson) = if split.abs() < 1e-15 * rate {
        (0.0, 0.0)
    } else if use_h_add {
        (0.0, split / josephson_splitting(1.0, alpha))
    } else {
        (split / number_splitting(alpha), 0.0)
    };
    Ok(SingleQubitParams {
        drive: C64::from(drive),
        detuning,
        josephson,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleQubitRun {
    pub kerr: f64,
    pub pump: f64,
    pub params: SingleQubitParams,
    pub use_h_add: bool,
    pub gate_time: f64,
    /// KPO frequency `ω_c` seen by `H_add`; defaults to `800K`.
    #[serde(default)]
    pub oscillator_frequency: Option<f64>,
    /// `φ_a`; defaults to `2α`.
    #[serde(default)]
    pub phase_amplitude: Option<f64>,
    pub dim: usize,
    #[serde(default = "gate_settings")]
    pub settings: IntegratorSettings,
}

fn gate_settings() -> IntegratorSettings {
    IntegratorSettings {
        method: crate::dynamics::Method::Rkf45Adaptive {
            rtol: 1e-10,
            atol: 1e-12,
        },
        max_step: None,
    }
}

impl SingleQubitRun {
    pub fn new(kerr: f64, alpha: f64, params: SingleQubitParams, use_h_add: bool, gate_time: f64) -> Self {
        Self {
            kerr,
            pump: kerr * alpha * alpha,
            params,
            use_h_add,
            gate_time,
            oscillator_frequency: None,
            phase_amplitude: None,
            dim: 40,
            settings: gate_settings(),
        }
    }

    pub fn alpha(&self) -> f64 {
        (self.pump / self.kerr).sqrt()
    }

    fn effective_params(&self) -> SingleQubitParams {
        SingleQubitParams {
            josephson: if self.use_h_add { self.params.josephson } else { 0.0 },
            ..self.params
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kerr > 0.0 && self.pump > 0.0) {
            return Err(invalid("kerr/pump", "must be > 0"));
        }
        if !(self.gate_time >= 0.0 && self.gate_time.is_finite()) {
            return Err(invalid("gate_time", "must be ≥ 0"));
        }
        if self.dim < 8 {
            return Err(invalid("dim", "need at least 8 levels"));
        }
        self.settings.validate()
    }

    /// Driven Kerr Hamiltonian with the cat energy `Ω_p²/K` removed, plus
    /// `H_add(t)` when enabled.
    pub fn hamiltonian(&self) -> Result<Hamiltonian> {
        let space = single_mode(self.dim)?;
        let a = annihilation(&space, "a")?;
        let ad = creation(&space, "a")?;
        let xi = self.params.drive;
        let shift = self.pump * self.pump / self.kerr;
        let static_part = SparseOperator::linear_combination(
            &space,
            [
                (C64::from(self.pump), &two_photon(&space)?),
                (C64::from(-self.kerr), &kerr_term(&space)?),
                (C64::from(self.params.detuning), &number(&space, "a")?),
                (xi, &a),
                (xi.conj(), &ad),
                (C64::from(-shift), &SparseOperator::identity(&space)),
            ],
        )?;
        let mut h = Hamiltonian::constant(static_part);
        if self.use_h_add && self.params.josephson != 0.0 {
            let omega = self.oscillator_frequency.unwrap_or(800.0 * self.kerr);
            let phi = self.phase_amplitude.unwrap_or(2.0 * self.alpha());
            let c = cosine_quadrature(self.dim, phi);
            let ej = self.params.josephson;
            for k in (-(self.dim as isize - 1)..self.dim as isize).filter(|k| k % 2 == 0) {
                let trips: Vec<(usize, usize, C64)> = (0..self.dim)
                    .filter_map(|n| {
                        let m = n as isize + k;
                        (m >= 0 && (m as usize) < self.dim).then(|| (m as usize, n, C64::from(c[(m as usize, n)])))
                    })
                    .filter(|t| t.2 != ZERO)
                    .collect();
                if trips.is_empty() {
                    continue;
                }
                let op = SparseOperator::from_triplets(&space, trips)?;
                let kf = k as f64;
                h = h.with_term(op, move |t| C64::from_polar(ej, kf * omega * t))?;
            }
        }
        Ok(h)
    }
}

/// `cos(φ(a + a†))` on the lowest `dim` Fock levels, computed in a larger
/// space so the kept block is free of truncation error.
pub fn cosine_quadrature(dim: usize, phi: f64) -> DMatrix<f64> {
    let big = dim + 80 + (phi * phi * 4.0) as usize;
    let mut x = DMatrix::<f64>::zeros(big, big);
    for n in 1..big {
        let s = (n as f64).sqrt();
        x[(n, n - 1)] = s;
        x[(n - 1, n)] = s;
    }
    let eig = SymmetricEigen::new(x);
    let v = &eig.eigenvectors;
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    for m in 0..dim {
        for n in 0..dim {
            if (m + n) % 2 == 1 {
                continue;
            }
            out[(m, n)] = (0..big)
                .map(|k| v[(m, k)] * v[(n, k)] * (phi * eig.eigenvalues[k]).cos())
                .sum();
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SingleQubitOutcome {
    pub average_fidelity: f64,
    /// Simulated gate restricted to `{|C+>, |C−>}`.
    pub projected: DMatrix<C64>,
    pub target: DMatrix<C64>,
    pub leakage: f64,
}

/// Simulates the driven KPO for `gate_time` and scores it against the
/// closed-form rotation.
pub fn run_single_qubit_gate(run: &SingleQubitRun) -> Result<SingleQubitOutcome> {
    run.validate()?;
    let alpha = run.alpha();
    let rot = effective_single_qubit(&run.effective_params(), alpha)?;
    let target = rot.propagator(run.gate_time);
    let h = run.hamiltonian()?;
    let space = h.space().clone();
    let cats = [CatParity::Even, CatParity::Odd]
        .iter()
        .map(|&p| StateVector::new(&space, cat_local(run.dim, alpha, p)?))
        .collect::<Result<Vec<_>>>()?;
    let mut g = DMatrix::from_element(2, 2, ZERO);
    for (j, c) in cats.iter().enumerate() {
        let psi = if run.gate_time > 0.0 {
            evolve_state(&h, c, &[0.0, run.gate_time], &run.settings)?.into_final_state()
        } else {
            c.clone()
        };
        for (i, b) in cats.iter().enumerate() {
            g[(i, j)] = b.overlap(&psi)?;
        }
    }
    let leakage = 1.0 - (g.adjoint() * &g).trace().re / 2.0;
    let average_fidelity = average_gate_fidelity(&(target.adjoint() * &g), 2)?;
    Ok(SingleQubitOutcome {
        average_fidelity,
        projected: g,
        target,
        leakage,
    })
}

/// Identity on the two-level space.
pub fn identity2() -> DMatrix<C64> {
    DMatrix::from_diagonal_element(2, 2, ONE)
}
