//! Mølmer–Sørensen gate: closed-form geometry, schedules, the detuning
//! switch, gate simulation and fidelity metrics.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    check_orthonormal, evolve_density, evolve_state, EvolutionResult, Hamiltonian,
    IntegratorSettings, Method, StepStats,
};
use crate::error::{invalid, Error, Result};
use crate::hilbert::{
    displacement_matrix, DensityMatrix, HilbertSpace, PartialTrace, SparseOperator, StateVector,
    C64, ONE, ZERO,
};
use crate::model::{pauli, EffectiveModel, FullModel, GateConfig, GateSystem};
use crate::states::{Fidelity, QubitBasisState};

/// Bus displacement `χ(t) = (2iJα/Δ)(1 − e^{iΔt})`.
pub fn chi(coupling: f64, alpha: f64, detuning: f64, t: f64) -> C64 {
    C64::new(0.0, 2.0 * coupling * alpha / detuning) * (ONE - C64::from_polar(1.0, detuning * t))
}

/// Geometric phase `β(t) = (2Jα/Δ)²(sin Δt − Δt)`.
pub fn beta(coupling: f64, alpha: f64, detuning: f64, t: f64) -> f64 {
    let r = 2.0 * coupling * alpha / detuning;
    r * r * ((detuning * t).sin() - detuning * t)
}

/// `Δ = 4√m Jα`, the detuning giving `β(t_g) = −π/2` after `m` loops.
pub fn resonance_detuning(coupling: f64, alpha: f64, loops: u32) -> f64 {
    4.0 * (loops as f64).sqrt() * coupling * alpha
}

/// `t_g = 2πm/Δ` for the configured detuning.
pub fn gate_time(config: &GateConfig) -> f64 {
    2.0 * PI * config.loops as f64 / config.detuning
}

/// `π√m/(2Jα)`: gate time on resonance.
pub fn resonant_gate_time(coupling: f64, alpha: f64, loops: u32) -> f64 {
    PI * (loops as f64).sqrt() / (2.0 * coupling * alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsGeometry {
    /// Loop radius `r = 2Jα/Δ`.
    pub radius: f64,
    /// Rotation angle `Δ t_g`.
    pub angle: f64,
    pub gate_time: f64,
    /// `β(t_g) = −2πm r²`.
    pub phase: f64,
    /// Area `πr²` enclosed by one loop.
    pub area: f64,
}

impl MsGeometry {
    pub fn new(config: &GateConfig) -> Self {
        let radius = 2.0 * config.coupling * config.alpha / config.detuning;
        let t_g = gate_time(config);
        Self {
            radius,
            angle: config.detuning * t_g,
            gate_time: t_g,
            phase: beta(config.coupling, config.alpha, config.detuning, t_g),
            area: PI * radius * radius,
        }
    }
}

/// Interval of constant coupling and detuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub coupling: f64,
    pub detuning: f64,
}

/// Piecewise-constant `J(t)`, `Δ(t)` starting at `t = 0`. The bus phase in the
/// coupling is the accumulated `φ(t) = ∫Δ dt`, which reduces to `Δt` for a
/// single segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    segments: Vec<Segment>,
}

impl Schedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("schedule", "no segments"));
        }
        for s in &segments {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(invalid("schedule", format!("bad segment duration {}", s.duration)));
            }
            if !s.coupling.is_finite() || !s.detuning.is_finite() {
                return Err(invalid("schedule", "non-finite segment parameter"));
            }
        }
        Ok(Self { segments })
    }

    /// Constant `J`, `Δ` over one gate time `2πm/Δ`.
    pub fn constant(config: &GateConfig) -> Self {
        Self {
            segments: vec![Segment {
                duration: gate_time(config),
                coupling: config.coupling,
                detuning: config.detuning,
            }],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Same plan stopped at `t_end`; past the planned end the last segment
    /// is continued.
    pub fn until(&self, t_end: f64) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(invalid("t_end", "must be > 0"));
        }
        let mut out = Vec::new();
        let mut t = 0.0;
        for (k, s) in self.segments.iter().enumerate() {
            let last = k + 1 == self.segments.len();
            let remaining = t_end - t;
            if remaining <= 0.0 {
                break;
            }
            let d = if last { remaining } else { s.duration.min(remaining) };
            out.push(Segment { duration: d, ..*s });
            t += d;
        }
        Self::new(out)
    }

    /// Multiplies every coupling and detuning by constant factors.
    pub fn scaled(&self, coupling: f64, detuning: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    duration: s.duration,
                    coupling: s.coupling * coupling,
                    detuning: s.detuning * detuning,
                })
                .collect(),
        }
    }

    /// Splits `[0, duration]` into `n` equal cells and multiplies the
    /// coupling and detuning in cell `k` by `factors(k)`.
    pub fn modulated(&self, n: usize, factors: impl Fn(usize) -> (f64, f64)) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n_events", "must be ≥ 1"));
        }
        let total = self.duration();
        let cell = total / n as f64;
        let mut edges: Vec<f64> = (1..n).map(|k| k as f64 * cell).collect();
        let mut t = 0.0;
        for s in &self.segments[..self.segments.len() - 1] {
            t += s.duration;
            edges.push(t);
        }
        edges.push(total);
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * total);
        let mut out = Vec::with_capacity(edges.len());
        let mut start = 0.0;
        for &end in &edges {
            if end - start <= 1e-12 * total {
                continue;
            }
            let mid = 0.5 * (start + end);
            let base = self.segment_at(mid);
            let k = ((mid / cell) as usize).min(n - 1);
            let (fj, fd) = factors(k);
            out.push(Segment {
                duration: end - start,
                coupling: base.coupling * fj,
                detuning: base.detuning * fd,
            });
            start = end;
        }
        Self::new(out)
    }

    fn segment_at(&self, t: f64) -> &Segment {
        let mut acc = 0.0;
        for s in &self.segments {
            acc += s.duration;
            if t < acc {
                return s;
            }
        }
        self.segments.last().expect("non-empty")
    }

    pub fn coupling_at(&self, t: f64) -> f64 {
        self.segment_at(t).coupling
    }

    /// `φ(t) = ∫_0^t Δ dt'`.
    pub fn phase_at(&self, t: f64) -> f64 {
        let mut phase = 0.0;
        let mut start = 0.0;
        for s in &self.segments {
            let end = start + s.duration;
            if t <= end {
                return phase + s.detuning * (t - start);
            }
            phase += s.detuning * s.duration;
            start = end;
        }
        phase + self.segments.last().expect("non-empty").detuning * (t - start)
    }

    /// Exact `(χ, β)` at the end of the schedule for cat amplitude `alpha`,
    /// with `χ(t) = 2α∫J e^{iφ}dt'` and `β(t) = −∫Im(χ̇ χ*) dt'`.
    pub fn trajectory(&self, alpha: f64) -> (C64, f64) {
        let mut chi = ZERO;
        let mut beta = 0.0;
        let mut phase = 0.0;
        for s in &self.segments {
            let d = s.duration;
            if s.detuning == 0.0 {
                let a = C64::from_polar(2.0 * alpha * s.coupling, phase);
                beta -= (a * chi.conj() * d).im;
                chi += a * d;
                continue;
            }
            // χ(τ) = χ_k + a(e^{iΔτ} − 1) within the segment.
            let a = C64::from_polar(2.0 * alpha * s.coupling, phase) / C64::new(0.0, s.detuning);
            let e = C64::from_polar(1.0, s.detuning * d) - ONE;
            let integral = a * chi.conj() * e
                + C64::new(0.0, s.detuning * a.norm_sqr() * d)
                - a.norm_sqr() * e;
            beta -= integral.im;
            chi += a * e;
            phase += s.detuning * d;
        }
        (chi, beta)
    }
}

/// Two-segment detuning plan robust to gate-time errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchPlan {
    /// Switch time `2πm/Δ_before`.
    pub tau: f64,
    pub detuning_before: f64,
    pub detuning_after: f64,
    pub loops_before: u32,
    pub loops_after: u32,
    /// Planned end `τ + 2πm′/Δ_after`.
    pub t_end: f64,
    pub coupling: f64,
}

/// `Δ = 4√m Jα/√(1−ε)` until `τ = 2πm/Δ`, then `Δ′ = 4√m′ Jα/√ε` for `m′`
/// loops.
pub fn plan_detuning_switch(config: &GateConfig, epsilon: f64, loops_after: u32) -> Result<SwitchPlan> {
    config.validate()?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", format!("must lie in (0, 1), got {epsilon}")));
    }
    if loops_after < 1 || loops_after > config.loops {
        return Err(invalid("loops_after", "need 1 ≤ m′ ≤ m"));
    }
    let jm = config.coupling * config.alpha;
    let m = config.loops as f64;
    let mp = loops_after as f64;
    let before = 4.0 * m.sqrt() * jm / (1.0 - epsilon).sqrt();
    let after = 4.0 * mp.sqrt() * jm / epsilon.sqrt();
    let tau = 2.0 * PI * m / before;
    Ok(SwitchPlan {
        tau,
        detuning_before: before,
        detuning_after: after,
        loops_before: config.loops,
        loops_after,
        t_end: tau + 2.0 * PI * mp / after,
        coupling: config.coupling,
    })
}

impl SwitchPlan {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            segments: vec![
                Segment {
                    duration: self.tau,
                    coupling: self.coupling,
                    detuning: self.detuning_before,
                },
                Segment {
                    duration: self.t_end - self.tau,
                    coupling: self.coupling,
                    detuning: self.detuning_after,
                },
            ],
        }
    }
}

fn qubit_space(config: &GateConfig) -> Result<Arc<HilbertSpace>> {
    let mut dims = vec![config.bus_dim];
    dims.extend(std::iter::repeat(2).take(config.n_qubits));
    let labels = std::iter::once("a0".to_string()).chain((1..=config.n_qubits).map(|q| format!("q{q}")));
    HilbertSpace::new(&dims, labels)
}

/// Eigenvectors of `σx` on each qubit, indexed by bitstring (bit 0 ↦ +1,
/// first qubit most significant), with their `S_x` eigenvalue.
fn sx_eigenbasis(n: usize) -> Vec<(f64, DVector<C64>)> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    (0..1usize << n)
        .map(|x| {
            let mut v = DVector::from_element(1, ONE);
            let mut s = 0.0;
            for q in 0..n {
                let sign = if (x >> (n - 1 - q)) & 1 == 0 { 1.0 } else { -1.0 };
                s += 0.5 * sign;
                let local = DVector::from_vec(vec![C64::from(h), C64::from(sign * h)]);
                v = v.kronecker(&local);
            }
            (s, v)
        })
        .collect()
}

/// `Σ_s D(−iχs) ⊗ P_s e^{−iβs²}` on the bus ⊗ qubit space.
fn ms_operator(config: &GateConfig, chi: C64, beta: f64) -> Result<SparseOperator> {
    let space = qubit_space(config)?;
    let nq = 1usize << config.n_qubits;
    let nb = config.bus_dim;
    let mut u = DMatrix::from_element(nb * nq, nb * nq, ZERO);
    for (s, v) in sx_eigenbasis(config.n_qubits) {
        let d = displacement_matrix(nb, C64::new(0.0, -s) * chi);
        let phase = C64::from_polar(1.0, -beta * s * s);
        let p = &v * v.adjoint() * phase;
        for b in 0..nb {
            for bp in 0..nb {
                let dbb = d[(b, bp)];
                if dbb == ZERO {
                    continue;
                }
                for q in 0..nq {
                    for qp in 0..nq {
                        u[(b * nq + q, bp * nq + qp)] += dbb * p[(q, qp)];
                    }
                }
            }
        }
    }
    u.iter_mut().for_each(|z| {
        if z.norm() < 1e-15 {
            *z = ZERO
        }
    });
    SparseOperator::from_dense(&space, &u)
}

/// `U_MS(t) = exp(−i[χ a_0† S_x + h.c.]) exp(−iβ S_x²)` on the space of
/// [`EffectiveModel`].
pub fn ms_closed_form(t: f64, config: &GateConfig) -> Result<SparseOperator> {
    if t < 0.0 {
        return Err(invalid("t", "must be ≥ 0"));
    }
    let (j, a, d) = (config.coupling, config.alpha, config.detuning);
    ms_operator(config, chi(j, a, d, t), beta(j, a, d, t))
}

/// `exp(−iβ S_x²)` on N qubits in the cat basis.
pub fn ms_target(n_qubits: usize, beta: f64) -> DMatrix<C64> {
    let d = 1usize << n_qubits;
    let mut u = DMatrix::from_element(d, d, ZERO);
    for (s, v) in sx_eigenbasis(n_qubits) {
        u += &v * v.adjoint() * C64::from_polar(1.0, -beta * s * s);
    }
    u
}

/// `F̄ = (Tr MM† + |Tr M|²)/(D² + D)`.
pub fn average_gate_fidelity(m: &DMatrix<C64>, d: usize) -> Result<f64> {
    if m.shape() != (d, d) {
        return Err(Error::ShapeMismatch {
            expected: d,
            got: m.nrows(),
        });
    }
    let tr_mm = m.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let tr = m.trace().norm_sqr();
    Ok((tr_mm + tr) / (d * d + d) as f64)
}

/// Ideal output `U_target |input>` embedded with the bus in vacuum.
pub fn ideal_output(system: &dyn GateSystem, input: &QubitBasisState) -> Result<StateVector> {
    let n = system.config().n_qubits;
    let target = ms_target(n, -PI / 2.0);
    let basis = system.computational_basis()?;
    let k = input.index();
    let mut amps = vec![ZERO; system.space().dim()];
    for (i, b) in basis.iter().enumerate() {
        let c = target[(i, k)];
        for (a, x) in amps.iter_mut().zip(b.amplitudes()) {
            *a += c * x;
        }
    }
    StateVector::normalized(system.space(), amps)
}

/// `F_out = <ψ_out|ρ|ψ_out>` against the ideal MS output of `input`.
pub fn output_fidelity<S: Fidelity>(state: &S, system: &dyn GateSystem, input: &QubitBasisState) -> Result<f64> {
    state.fidelity(&ideal_output(system, input)?)
}

/// Cat-manifold population averaged over qubits, from single-mode reduced
/// states.
pub fn no_leakage<S: PartialTrace>(state: &S, system: &dyn GateSystem) -> Result<f64> {
    if **state.space() != **system.space() {
        return Err(Error::SpaceMismatch);
    }
    let n = system.config().n_qubits;
    let cats = system.cat_pair();
    let mut total = 0.0;
    for q in 0..n {
        let rho = state.reduced(system.qubit_mode(q));
        for c in cats {
            let v = DVector::from_column_slice(c);
            total += (v.adjoint() * &rho * &v)[(0, 0)].re;
        }
    }
    Ok(total / n as f64)
}

/// `‖U(t_g, τ) σ_n U(τ, 0) − σ_n U(t_g, 0)‖_max` with `σ = σx` (or `σz`
/// when `use_z`), from the closed-form propagator. `qubit` is 0-based.
pub fn error_bias_distance(config: &GateConfig, tau: f64, qubit: usize, use_z: bool) -> Result<f64> {
    let t_g = gate_time(config);
    if !(tau > 0.0 && tau < t_g) {
        return Err(invalid("tau_err", format!("must lie in (0, t_g = {t_g})")));
    }
    if qubit >= config.n_qubits {
        return Err(invalid("qubit", "out of range"));
    }
    let u_tau = ms_closed_form(tau, config)?.to_dense();
    let u_g = ms_closed_form(t_g, config)?.to_dense();
    let space = qubit_space(config)?;
    let local = if use_z { pauli::sigma_z() } else { pauli::sigma_x() };
    let local = SparseOperator::from_dense(&space.single_mode(qubit + 1), &local)?;
    let sigma = crate::hilbert::tensor_embed(&local, &space, &format!("q{}", qubit + 1))?.to_dense();
    let later = &u_g * u_tau.adjoint();
    let erroneous = later * &sigma * &u_tau;
    let ideal = &sigma * &u_g;
    Ok(crate::hilbert::max_abs_diff_dense(&erroneous, &ideal))
}

/// Error-bias check with a bit flip on `qubit` (0-based) at `τ_err`.
pub fn verify_error_bias(config: &GateConfig, tau: f64, qubit: usize) -> Result<f64> {
    error_bias_distance(config, tau, qubit, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Full,
    Effective,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Piecewise time-independent evolution in the frame rotating with the
    /// bus detuning.
    Rotating,
    /// Direct integration of the time-dependent coupling.
    Interaction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRunOptions {
    pub mode: GateMode,
    pub frame: Frame,
    pub settings: IntegratorSettings,
    /// Input for `F_out` and `P_C`.
    pub input: QubitBasisState,
    /// Evolve the whole computational basis and report `F̄` (pure runs only).
    pub average_fidelity: bool,
}

impl GateRunOptions {
    pub fn new(mode: GateMode, n_qubits: usize) -> Self {
        Self {
            mode,
            frame: Frame::Rotating,
            settings: IntegratorSettings::taylor(),
            input: QubitBasisState::all_even(n_qubits),
            average_fidelity: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub gate_time: f64,
    /// `F̄`; absent for dissipative runs.
    pub average_fidelity: Option<f64>,
    pub output_fidelity: f64,
    pub no_leakage: f64,
    /// `|χ|` of the ideal bus trajectory at the end of the schedule.
    pub chi_residual: f64,
    /// Ideal geometric phase accumulated by the schedule.
    pub beta_total: f64,
}

#[derive(Clone, Debug)]
pub enum FinalStates {
    Pure(Vec<StateVector>),
    Mixed(DensityMatrix),
}

#[derive(Clone, Debug)]
pub struct GateOutcome {
    pub metrics: GateMetrics,
    pub states: FinalStates,
    pub stats: StepStats,
}

pub fn build_system(config: &GateConfig, mode: GateMode) -> Result<Box<dyn GateSystem>> {
    Ok(match mode {
        GateMode::Full => Box::new(FullModel::new(config)?),
        GateMode::Effective => Box::new(EffectiveModel::new(config)?),
    })
}

fn segment_hamiltonian(system: &dyn GateSystem, seg: &Segment) -> Result<Hamiltonian> {
    let j = C64::from(seg.coupling);
    Ok(Hamiltonian::constant(SparseOperator::linear_combination(
        system.space(),
        [
            (ONE, system.static_hamiltonian()),
            (C64::from(seg.detuning), system.bus_number()),
            (j, system.coupling_op()),
            (j, system.coupling_op_dag()),
        ],
    )?))
}

fn interaction_hamiltonian(system: &dyn GateSystem, schedule: &Schedule) -> Result<Hamiltonian> {
    let (s1, s2) = (schedule.clone(), schedule.clone());
    Hamiltonian::constant(system.static_hamiltonian().clone())
        .with_term(system.coupling_op().clone(), move |t| {
            C64::from_polar(s1.coupling_at(t), s1.phase_at(t))
        })?
        .with_term(system.coupling_op_dag().clone(), move |t| {
            C64::from_polar(s2.coupling_at(t), -s2.phase_at(t))
        })
}

/// `e^{iφ n_0}` as a diagonal of phases.
fn frame_phases(system: &dyn GateSystem, phase: f64) -> Vec<C64> {
    let n0 = system.bus_number();
    (0..n0.dim())
        .map(|i| C64::from_polar(1.0, phase * n0.get(i, i).re))
        .collect()
}

fn interaction_settings(settings: &IntegratorSettings, schedule: &Schedule) -> IntegratorSettings {
    let mut s = *settings;
    if matches!(s.method, Method::TaylorExpm { .. }) {
        s = IntegratorSettings::default();
    }
    if s.max_step.is_none() {
        let dmax = schedule
            .segments()
            .iter()
            .map(|g| g.detuning.abs())
            .fold(0.0, f64::max);
        s = IntegratorSettings {
            max_step: IntegratorSettings::for_detuning(dmax.max(1e-300), schedule.duration()).max_step,
            ..s
        };
    }
    s
}

fn evolve_pure(
    system: &dyn GateSystem,
    schedule: &Schedule,
    psi0: &StateVector,
    options: &GateRunOptions,
) -> Result<(StateVector, StepStats)> {
    let mut stats = StepStats::default();
    match options.frame {
        Frame::Rotating => {
            let mut psi = psi0.clone();
            for seg in schedule.segments() {
                let h = segment_hamiltonian(system, seg)?;
                let r = evolve_state(&h, &psi, &[0.0, seg.duration], &options.settings)?;
                stats += r.stats;
                psi = r.into_final_state();
            }
            let phases = frame_phases(system, schedule.phase_at(schedule.duration()));
            let amps = psi.amplitudes().iter().zip(&phases).map(|(a, p)| a * p).collect();
            Ok((StateVector::unchecked(system.space(), amps)?, stats))
        }
        Frame::Interaction => {
            let h = interaction_hamiltonian(system, schedule)?;
            let settings = interaction_settings(&options.settings, schedule);
            let r = evolve_state(&h, psi0, &[0.0, schedule.duration()], &settings)?;
            stats += r.stats;
            Ok((r.into_final_state(), stats))
        }
    }
}

fn evolve_mixed(
    system: &dyn GateSystem,
    schedule: &Schedule,
    rho0: &DensityMatrix,
    options: &GateRunOptions,
) -> Result<(DensityMatrix, StepStats)> {
    let collapse = system.collapse_ops();
    let mut stats = StepStats::default();
    match options.frame {
        Frame::Rotating => {
            let mut rho = rho0.clone();
            for seg in schedule.segments() {
                let h = segment_hamiltonian(system, seg)?;
                let r: EvolutionResult<DensityMatrix> =
                    evolve_density(&h, &collapse, &rho, &[0.0, seg.duration], &options.settings)?;
                stats += r.stats;
                rho = r.into_final_state();
            }
            let p = frame_phases(system, schedule.phase_at(schedule.duration()));
            let mut m = rho.matrix().clone();
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    m[(i, j)] *= p[i] * p[j].conj();
                }
            }
            Ok((DensityMatrix::unchecked(system.space(), m)?, stats))
        }
        Frame::Interaction => {
            let h = interaction_hamiltonian(system, schedule)?;
            let settings = interaction_settings(&options.settings, schedule);
            let r = evolve_density(&h, &collapse, rho0, &[0.0, schedule.duration()], &settings)?;
            stats += r.stats;
            Ok((r.into_final_state(), stats))
        }
    }
}

/// Simulates the gate along `schedule` and scores it against the ideal
/// `exp(iπ/2 S_x²)`.
///
/// Runs with any non-zero decoherence rate evolve the density matrix of
/// `options.input`; otherwise pure states are propagated (the whole
/// computational basis when `options.average_fidelity` is set).
pub fn run_gate(config: &GateConfig, schedule: &Schedule, options: &GateRunOptions) -> Result<GateOutcome> {
    let system = build_system(config, options.mode)?;
    run_gate_on(system.as_ref(), schedule, options)
}

pub fn run_gate_on(system: &dyn GateSystem, schedule: &Schedule, options: &GateRunOptions) -> Result<GateOutcome> {
    let config = system.config();
    let (chi_end, beta_total) = schedule.trajectory(config.alpha);
    let dissipative = !system.collapse_ops().is_empty();
    let input_state = system.basis_state(&options.input)?;
    let (metrics_core, states, stats) = if dissipative {
        let (rho, stats) = evolve_mixed(system, schedule, &DensityMatrix::from_pure(&input_state), options)?;
        let f_out = output_fidelity(&rho, system, &options.input)?;
        let p_c = no_leakage(&rho, system)?;
        ((None, f_out, p_c), FinalStates::Mixed(rho), stats)
    } else if options.average_fidelity {
        let basis = system.computational_basis()?;
        check_orthonormal(&basis)?;
        let results: Vec<(StateVector, StepStats)> = basis
            .par_iter()
            .map(|b| evolve_pure(system, schedule, b, options))
            .collect::<Result<_>>()?;
        let mut stats = StepStats::default();
        let finals: Vec<StateVector> = results
            .into_iter()
            .map(|(s, st)| {
                stats += st;
                s
            })
            .collect();
        let g = crate::dynamics::project_onto(&basis, &finals)?;
        let target = ms_target(config.n_qubits, -PI / 2.0);
        let d = basis.len();
        let f_avg = average_gate_fidelity(&(target.adjoint() * g), d)?;
        let k = options.input.index();
        let f_out = output_fidelity(&finals[k], system, &options.input)?;
        let p_c = no_leakage(&finals[k], system)?;
        ((Some(f_avg), f_out, p_c), FinalStates::Pure(finals), stats)
    } else {
        let (psi, stats) = evolve_pure(system, schedule, &input_state, options)?;
        let f_out = output_fidelity(&psi, system, &options.input)?;
        let p_c = no_leakage(&psi, system)?;
        ((None, f_out, p_c), FinalStates::Pure(vec![psi]), stats)
    };
    let (average_fidelity, output_fidelity, no_leakage) = metrics_core;
    Ok(GateOutcome {
        metrics: GateMetrics {
            gate_time: schedule.duration(),
            average_fidelity,
            output_fidelity,
            no_leakage,
            chi_residual: chi_end.norm(),
            beta_total,
        },
        states,
        stats,
    })
}
