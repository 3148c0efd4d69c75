//! Time integration of the Schrödinger and Lindblad equations.
//!
//! Three schemes share one [`Generator`] abstraction:
//! fixed-step RK4, adaptive Runge–Kutta–Fehlberg 4(5), and a truncated
//! Taylor expansion of the exponential action for time-independent
//! generators.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hilbert::{DensityMatrix, HilbertSpace, SparseOperator, StateVector, C64, I, ONE, ZERO};
use crate::model::CollapseOp;

/// Density matrices up to this dimension get a full eigenvalue positivity
/// check at every output time.
const POSITIVITY_CHECK_MAX_DIM: usize = 2048;
const POSITIVITY_TOL: f64 = 1e-6;

pub type Coefficient = Arc<dyn Fn(f64) -> C64 + Send + Sync>;
type OperatorFn = Arc<dyn Fn(f64) -> SparseOperator + Send + Sync>;

/// Time-dependent Hamiltonian `H(t) = H_s + Σ_k f_k(t) H_k`, or an
/// arbitrary closure returning the operator at each time.
#[derive(Clone)]
pub struct Hamiltonian {
    space: Arc<HilbertSpace>,
    static_part: SparseOperator,
    terms: Vec<(SparseOperator, Coefficient)>,
    closure: Option<OperatorFn>,
}

impl std::fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("space", &self.space)
            .field("terms", &self.terms.len())
            .field("closure", &self.closure.is_some())
            .finish()
    }
}

impl Hamiltonian {
    pub fn constant(op: SparseOperator) -> Self {
        Self {
            space: op.space().clone(),
            static_part: op,
            terms: Vec::new(),
            closure: None,
        }
    }

    pub fn zero(space: &Arc<HilbertSpace>) -> Self {
        Self::constant(SparseOperator::zeros(space))
    }

    /// Adds `f(t) · op`.
    pub fn with_term(
        mut self,
        op: SparseOperator,
        f: impl Fn(f64) -> C64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if self.closure.is_some() {
            return Err(invalid("hamiltonian", "cannot add terms to a closure Hamiltonian"));
        }
        if **op.space() != *self.space {
            return Err(Error::SpaceMismatch);
        }
        self.terms.push((op, Arc::new(f)));
        Ok(self)
    }

    /// Wraps an arbitrary `t ↦ H(t)`. Every generator evaluation rebuilds
    /// the operator, so prefer [`Hamiltonian::with_term`] in hot loops.
    pub fn from_fn(
        space: &Arc<HilbertSpace>,
        f: impl Fn(f64) -> SparseOperator + Send + Sync + 'static,
    ) -> Self {
        Self {
            space: space.clone(),
            static_part: SparseOperator::zeros(space),
            terms: Vec::new(),
            closure: Some(Arc::new(f)),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn is_autonomous(&self) -> bool {
        self.terms.is_empty() && self.closure.is_none()
    }

    pub fn at(&self, t: f64) -> Result<SparseOperator> {
        if let Some(f) = &self.closure {
            return Ok(f(t));
        }
        let coeffs: Vec<C64> = self.terms.iter().map(|(_, f)| f(t)).collect();
        SparseOperator::linear_combination(
            &self.space,
            std::iter::once((ONE, &self.static_part))
                .chain(coeffs.into_iter().zip(self.terms.iter().map(|(op, _)| op))),
        )
    }

    /// `y += alpha H(t) x`.
    fn apply_acc(&self, t: f64, alpha: C64, x: &[C64], y: &mut [C64]) {
        if let Some(f) = &self.closure {
            f(t).mul_vec_acc(alpha, x, y);
            return;
        }
        self.static_part.mul_vec_acc(alpha, x, y);
        for (op, f) in &self.terms {
            let c = f(t);
            if c != ZERO {
                op.mul_vec_acc(alpha * c, x, y);
            }
        }
    }

    fn apply_dense_acc(&self, t: f64, alpha: C64, m: &[C64], out: &mut [C64]) {
        if let Some(f) = &self.closure {
            f(t).mul_dense_acc(alpha, m, out);
            return;
        }
        self.static_part.mul_dense_acc(alpha, m, out);
        for (op, f) in &self.terms {
            let c = f(t);
            if c != ZERO {
                op.mul_dense_acc(alpha * c, m, out);
            }
        }
    }

    fn static_norm(&self) -> f64 {
        self.static_part.norm_one()
    }
}

/// Right-hand side `dy/dt = f(t, y)` of a linear evolution equation.
pub trait Generator: Sync {
    fn len(&self) -> usize;
    /// Overwrites `dy` with `f(t, y)`.
    fn rhs(&self, t: f64, y: &[C64], dy: &mut [C64]);
    fn is_autonomous(&self) -> bool;
    /// Upper bound on the induced 1-norm of the (autonomous) generator.
    fn norm_bound(&self) -> f64;
    /// Projection applied after every accepted step.
    fn post_step(&self, _y: &mut [C64]) {}
}

/// `dψ/dt = −iH(t)ψ`.
pub struct SchrodingerGenerator<'a> {
    h: &'a Hamiltonian,
}

impl<'a> SchrodingerGenerator<'a> {
    pub fn new(h: &'a Hamiltonian) -> Self {
        Self { h }
    }
}

impl Generator for SchrodingerGenerator<'_> {
    fn len(&self) -> usize {
        self.h.space.dim()
    }
    fn rhs(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        dy.fill(ZERO);
        self.h.apply_acc(t, -I, y, dy);
    }
    fn is_autonomous(&self) -> bool {
        self.h.is_autonomous()
    }
    fn norm_bound(&self) -> f64 {
        self.h.static_norm()
    }
}

/// Vectorized (column-major) Lindblad generator
/// `−i[H, ρ] + Σ r (c ρ c† − ½{c†c, ρ})`.
pub struct LindbladGenerator<'a> {
    h: &'a Hamiltonian,
    /// `−(i/2) Σ r c†c`
    damping: SparseOperator,
    jumps: Vec<(f64, SparseOperator)>,
    n: usize,
}

impl<'a> LindbladGenerator<'a> {
    pub fn new(h: &'a Hamiltonian, collapse: &[CollapseOp]) -> Result<Self> {
        let space = h.space();
        let mut damping = SparseOperator::zeros(space);
        let mut jumps = Vec::with_capacity(collapse.len());
        for c in collapse {
            if **c.op.space() != **space {
                return Err(Error::SpaceMismatch);
            }
            if !(c.rate >= 0.0) {
                return Err(invalid("rate", format!("negative rate on {}", c.label)));
            }
            if c.rate == 0.0 {
                continue;
            }
            let cdc = c.op.dagger().mul(&c.op)?;
            damping = damping.add_scaled(&cdc, C64::new(0.0, -0.5 * c.rate))?;
            jumps.push((c.rate, c.op.clone()));
        }
        Ok(Self {
            h,
            damping,
            jumps,
            n: space.dim(),
        })
    }
}

fn adjoint_into(m: &[C64], n: usize, out: &mut [C64]) {
    for j in 0..n {
        for i in 0..n {
            out[i + j * n] = m[j + i * n].conj();
        }
    }
}

fn symmetrize_flat(y: &mut [C64], n: usize) {
    for j in 0..n {
        for i in 0..=j {
            let avg = (y[i + j * n] + y[j + i * n].conj()) * 0.5;
            y[i + j * n] = avg;
            y[j + i * n] = avg.conj();
        }
    }
}

impl Generator for LindbladGenerator<'_> {
    fn len(&self) -> usize {
        self.n * self.n
    }

    fn rhs(&self, t: f64, rho: &[C64], dy: &mut [C64]) {
        let n = self.n;
        // X = H_e ρ with H_e = H − (i/2)Σ r c†c; then −iH_eρ + iρH_e† = −iX + iX†.
        let mut x = vec![ZERO; n * n];
        self.h.apply_dense_acc(t, ONE, rho, &mut x);
        self.damping.mul_dense_acc(ONE, rho, &mut x);
        for j in 0..n {
            for i in 0..n {
                dy[i + j * n] = -I * x[i + j * n] + I * x[j + i * n].conj();
            }
        }
        let mut tmp = x;
        let mut adj = vec![ZERO; n * n];
        for (rate, c) in &self.jumps {
            // c ρ c† = c (c ρ)†
            c.mul_dense_into(rho, &mut tmp);
            adjoint_into(&tmp, n, &mut adj);
            c.mul_dense_acc(C64::from(*rate), &adj, dy);
        }
    }

    fn is_autonomous(&self) -> bool {
        self.h.is_autonomous()
    }

    fn norm_bound(&self) -> f64 {
        let jump: f64 = self
            .jumps
            .iter()
            .map(|(r, c)| r * c.norm_one() * c.dagger().norm_one())
            .sum();
        let he = self.h.static_norm() + self.damping.norm_one();
        2.0 * he + jump
    }

    fn post_step(&self, y: &mut [C64]) {
        symmetrize_flat(y, self.n);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed { dt: f64 },
    Rkf45Adaptive { rtol: f64, atol: f64 },
    /// Exponential action by a truncated Taylor series; time-independent
    /// generators only.
    TaylorExpm { tol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub method: Method,
    /// Upper bound on any single step (μs).
    #[serde(default)]
    pub max_step: Option<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            method: Method::Rkf45Adaptive {
                rtol: 1e-8,
                atol: 1e-10,
            },
            max_step: None,
        }
    }
}

impl IntegratorSettings {
    /// Adaptive defaults with the step capped at `min(0.02/Δ, span/1000)`.
    pub fn for_detuning(detuning: f64, span: f64) -> Self {
        Self {
            max_step: Some((0.02 / detuning.abs()).min(span / 1000.0)),
            ..Self::default()
        }
    }

    pub fn taylor() -> Self {
        Self {
            method: Method::TaylorExpm { tol: 1e-15 },
            max_step: None,
        }
    }

    pub fn rk4(dt: f64) -> Self {
        Self {
            method: Method::Rk4Fixed { dt },
            max_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be > 0, got {v}")))
            }
        };
        match self.method {
            Method::Rk4Fixed { dt } => pos("dt", dt)?,
            Method::Rkf45Adaptive { rtol, atol } => {
                pos("rtol", rtol)?;
                pos("atol", atol)?;
            }
            Method::TaylorExpm { tol } => pos("tol", tol)?,
        }
        if let Some(m) = self.max_step {
            pos("max_step", m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.steps += o.steps;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionResult<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub stats: StepStats,
}

impl<S> EvolutionResult<S> {
    pub fn final_state(&self) -> &S {
        self.states.last().expect("at least one output time")
    }

    pub fn into_final_state(mut self) -> S {
        self.states.pop().expect("at least one output time")
    }
}

impl EvolutionResult<StateVector> {
    pub fn expectations(&self, op: &SparseOperator) -> Result<Vec<C64>> {
        self.states.iter().map(|s| crate::hilbert::expect(op, s)).collect()
    }
}

impl EvolutionResult<DensityMatrix> {
    pub fn expectations(&self, op: &SparseOperator) -> Result<Vec<C64>> {
        self.states
            .iter()
            .map(|s| crate::hilbert::expect_density(op, s))
            .collect()
    }
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn rk4_step<G: Generator + ?Sized>(g: &G, t: f64, h: f64, y: &mut [C64]) {
    let n = y.len();
    let mut k1 = vec![ZERO; n];
    let mut k2 = vec![ZERO; n];
    let mut k3 = vec![ZERO; n];
    let mut k4 = vec![ZERO; n];
    let mut tmp = y.to_vec();
    g.rhs(t, y, &mut k1);
    axpy(&mut tmp, C64::from(0.5 * h), &k1);
    g.rhs(t + 0.5 * h, &tmp, &mut k2);
    tmp.copy_from_slice(y);
    axpy(&mut tmp, C64::from(0.5 * h), &k2);
    g.rhs(t + 0.5 * h, &tmp, &mut k3);
    tmp.copy_from_slice(y);
    axpy(&mut tmp, C64::from(h), &k3);
    g.rhs(t + h, &tmp, &mut k4);
    for i in 0..n {
        y[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
    }
}

fn integrate_rk4<G: Generator + ?Sized>(
    g: &G,
    y: &mut [C64],
    t0: f64,
    t1: f64,
    dt: f64,
    max_step: Option<f64>,
) -> StepStats {
    let dt = max_step.map_or(dt, |m| dt.min(m));
    let span = t1 - t0;
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = span / n as f64;
    for k in 0..n {
        rk4_step(g, t0 + k as f64 * h, h, y);
        g.post_step(y);
    }
    StepStats {
        steps: n,
        rejected: 0,
        rhs_evals: 4 * n,
    }
}

// Fehlberg tableau.
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];

#[allow(clippy::too_many_arguments)]
fn integrate_rkf45<G: Generator + ?Sized>(
    g: &G,
    y: &mut [C64],
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
    max_step: Option<f64>,
    h_init: &mut f64,
) -> Result<StepStats> {
    let n = y.len();
    let span = t1 - t0;
    let hmax = max_step.unwrap_or(span).min(span);
    let mut h = h_init.min(hmax);
    let mut t = t0;
    let mut stats = StepStats::default();
    let mut k: Vec<Vec<C64>> = (0..6).map(|_| vec![ZERO; n]).collect();
    let mut tmp = vec![ZERO; n];
    let mut y5 = vec![ZERO; n];
    while t1 - t > 1e-14 * span.max(1e-300) {
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 0..6 {
            tmp.copy_from_slice(y);
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    axpy(&mut tmp, C64::from(h * A[s][j]), kj);
                }
            }
            let (_, rest) = k.split_at_mut(s);
            g.rhs(t + C[s] * h, &tmp, &mut rest[0]);
        }
        stats.rhs_evals += 6;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut d5 = ZERO;
            let mut de = ZERO;
            for s in 0..6 {
                d5 += k[s][i] * B5[s];
                de += k[s][i] * (B5[s] - B4[s]);
            }
            y5[i] = y[i] + d5 * h;
            let scale = atol + rtol * y[i].norm().max(y5[i].norm());
            err = err.max((de * h).norm() / scale);
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y.copy_from_slice(&y5);
            g.post_step(y);
            stats.steps += 1;
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).min(5.0) };
            if !last {
                *h_init = h;
            }
            h = (h * grow.max(0.2)).min(hmax);
        } else {
            stats.rejected += 1;
            let shrink = if err.is_finite() { (0.9 * err.powf(-0.25)).max(0.1) } else { 0.1 };
            h *= shrink;
            if h < 1e-13 * span.max(t.abs()) || h < 1e-300 {
                return Err(Error::StepUnderflow { t, h });
            }
        }
    }
    Ok(stats)
}

/// `y ← exp((t1 − t0) A) y` for an autonomous generator `A`, by Taylor
/// series on substeps with `‖A‖₁ h ≤ 4`.
pub fn expm_apply<G: Generator + ?Sized>(
    g: &G,
    y: &mut [C64],
    t0: f64,
    t1: f64,
    tol: f64,
    max_step: Option<f64>,
) -> Result<StepStats> {
    if !g.is_autonomous() {
        return Err(invalid(
            "method",
            "Taylor exponential requires a time-independent generator",
        ));
    }
    let span = t1 - t0;
    let norm = g.norm_bound();
    let mut nsub = (norm * span / 4.0).ceil().max(1.0) as usize;
    if let Some(m) = max_step {
        nsub = nsub.max((span / m - 1e-9).ceil() as usize);
    }
    let h = span / nsub as f64;
    let n = y.len();
    let mut term = vec![ZERO; n];
    let mut next = vec![ZERO; n];
    let mut stats = StepStats::default();
    for _ in 0..nsub {
        term.copy_from_slice(y);
        let mut small_in_a_row = 0;
        for k in 1..200 {
            g.rhs(t0, &term, &mut next);
            stats.rhs_evals += 1;
            let f = C64::from(h / k as f64);
            let mut tn: f64 = 0.0;
            let mut yn: f64 = 0.0;
            for i in 0..n {
                term[i] = next[i] * f;
                y[i] += term[i];
                tn = tn.max(term[i].norm());
                yn = yn.max(y[i].norm());
            }
            if !tn.is_finite() {
                return Err(Error::StepUnderflow { t: t0, h });
            }
            if tn <= tol * yn {
                small_in_a_row += 1;
                if small_in_a_row == 2 {
                    break;
                }
            } else {
                small_in_a_row = 0;
            }
        }
        g.post_step(y);
        stats.steps += 1;
    }
    Ok(stats)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(invalid("t_span", "need a start and an end time"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(invalid("t_span", "times must be finite and strictly increasing"));
    }
    Ok(())
}

/// Integrates `y` through every output time, calling `record` at each.
fn integrate<G: Generator + ?Sized>(
    g: &G,
    y: &mut [C64],
    times: &[f64],
    settings: &IntegratorSettings,
    mut record: impl FnMut(f64, &[C64]) -> Result<()>,
) -> Result<StepStats> {
    settings.validate()?;
    check_times(times)?;
    let mut stats = StepStats::default();
    let mut h_init = settings
        .max_step
        .unwrap_or(f64::INFINITY)
        .min((times[times.len() - 1] - times[0]) / 100.0);
    record(times[0], y)?;
    for w in times.windows(2) {
        let s = match settings.method {
            Method::Rk4Fixed { dt } => integrate_rk4(g, y, w[0], w[1], dt, settings.max_step),
            Method::Rkf45Adaptive { rtol, atol } => {
                integrate_rkf45(g, y, w[0], w[1], rtol, atol, settings.max_step, &mut h_init)?
            }
            Method::TaylorExpm { tol } => expm_apply(g, y, w[0], w[1], tol, settings.max_step)?,
        };
        stats += s;
        record(w[1], y)?;
    }
    Ok(stats)
}

/// Solves `i dψ/dt = H(t) ψ`, recording the state at every entry of
/// `times` (the first entry is the initial time).
pub fn evolve_state(
    h: &Hamiltonian,
    psi0: &StateVector,
    times: &[f64],
    settings: &IntegratorSettings,
) -> Result<EvolutionResult<StateVector>> {
    if **psi0.space() != **h.space() {
        return Err(Error::SpaceMismatch);
    }
    let g = SchrodingerGenerator::new(h);
    let mut y = psi0.amplitudes().to_vec();
    let mut states = Vec::with_capacity(times.len());
    let space = h.space().clone();
    let stats = integrate(&g, &mut y, times, settings, |_, y| {
        states.push(StateVector::unchecked(&space, y.to_vec())?);
        Ok(())
    })?;
    Ok(EvolutionResult {
        times: times.to_vec(),
        states,
        stats,
    })
}

/// Solves the Lindblad master equation. Hermiticity is restored after every
/// step; for dimensions up to 2048 a minimum eigenvalue below −1e−6 at any
/// output time is reported as [`Error::PositivityViolation`].
pub fn evolve_density(
    h: &Hamiltonian,
    collapse: &[CollapseOp],
    rho0: &DensityMatrix,
    times: &[f64],
    settings: &IntegratorSettings,
) -> Result<EvolutionResult<DensityMatrix>> {
    if **rho0.space() != **h.space() {
        return Err(Error::SpaceMismatch);
    }
    let g = LindbladGenerator::new(h, collapse)?;
    let mut y = rho0.as_slice().to_vec();
    let n = h.space().dim();
    let space = h.space().clone();
    let mut states = Vec::with_capacity(times.len());
    let stats = integrate(&g, &mut y, times, settings, |t, y| {
        let rho = DensityMatrix::unchecked(
            &space,
            nalgebra::DMatrix::from_column_slice(n, n, y),
        )?;
        if n <= POSITIVITY_CHECK_MAX_DIM {
            let min_eig = rho.min_eigenvalue();
            if min_eig < -POSITIVITY_TOL {
                return Err(Error::PositivityViolation { t, min_eig });
            }
        }
        states.push(rho);
        Ok(())
    })?;
    Ok(EvolutionResult {
        times: times.to_vec(),
        states,
        stats,
    })
}

pub(crate) fn check_orthonormal(basis: &[StateVector]) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate().skip(i) {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((a.overlap(b)? - target).norm());
        }
    }
    if worst > 1e-8 {
        return Err(Error::NotOrthonormal(worst));
    }
    Ok(())
}

/// Final states `U(t_end, t_start)|b_j>` for every basis vector, evolved in
/// parallel.
pub fn evolve_basis(
    h: &Hamiltonian,
    basis: &[StateVector],
    times: &[f64],
    settings: &IntegratorSettings,
) -> Result<Vec<StateVector>> {
    basis
        .par_iter()
        .map(|b| evolve_state(h, b, times, settings).map(EvolutionResult::into_final_state))
        .collect()
}

/// `M_ij = <b_i| U |b_j>` over an orthonormal basis.
pub fn propagator_on_subspace(
    h: &Hamiltonian,
    basis: &[StateVector],
    times: &[f64],
    settings: &IntegratorSettings,
) -> Result<nalgebra::DMatrix<C64>> {
    check_orthonormal(basis)?;
    let out = evolve_basis(h, basis, times, settings)?;
    project_onto(basis, &out)
}

/// `M_ij = <b_i|ψ_j>`.
pub fn project_onto(basis: &[StateVector], states: &[StateVector]) -> Result<nalgebra::DMatrix<C64>> {
    let d = basis.len();
    let mut m = nalgebra::DMatrix::from_element(d, states.len(), ZERO);
    for (j, psi) in states.iter().enumerate() {
        for (i, b) in basis.iter().enumerate() {
            m[(i, j)] = b.overlap(psi)?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{annihilation, expm_dense, number};
    use crate::states::coherent;

    fn space(dims: &[usize]) -> Arc<HilbertSpace> {
        HilbertSpace::with_default_labels(dims).unwrap()
    }

    fn dist(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let s = space(&[5]);
        let psi = coherent(&s, "a0", C64::new(0.7, 0.2)).unwrap();
        for settings in [IntegratorSettings::default(), IntegratorSettings::taylor(), IntegratorSettings::rk4(0.1)] {
            let r = evolve_state(&Hamiltonian::zero(&s), &psi, &[0.0, 1.0], &settings).unwrap();
            assert_eq!(r.final_state().amplitudes(), psi.amplitudes());
        }
    }

    #[test]
    fn rotating_coherent_state() {
        let s = space(&[40]);
        let omega = 3.0;
        let beta = C64::new(1.5, -0.5);
        let h = Hamiltonian::constant(number(&s, "a0").unwrap().scale(C64::from(omega)));
        let psi = coherent(&s, "a0", beta).unwrap();
        let t = 1.3;
        let target = coherent(&s, "a0", beta * C64::from_polar(1.0, -omega * t)).unwrap();
        for settings in [IntegratorSettings::default(), IntegratorSettings::taylor()] {
            let r = evolve_state(&h, &psi, &[0.0, 0.5, t], &settings).unwrap();
            let d = dist(r.final_state().amplitudes(), target.amplitudes());
            assert!(d < 1e-6, "{settings:?}: {d}");
            assert_eq!(r.states.len(), 3);
            assert!((r.final_state().norm() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn time_dependent_terms_match_closure() {
        let s = space(&[6]);
        let a = annihilation(&s, "a0").unwrap();
        let x = a.add(&a.dagger()).unwrap();
        let n = number(&s, "a0").unwrap();
        let h1 = Hamiltonian::constant(n.clone())
            .with_term(x.clone(), |t| C64::from((5.0 * t).cos()))
            .unwrap();
        let (n2, x2) = (n.clone(), x.clone());
        let h2 = Hamiltonian::from_fn(&s, move |t| n2.add_scaled(&x2, C64::from((5.0 * t).cos())).unwrap());
        let psi = StateVector::fock(&s, &[0]).unwrap();
        let r1 = evolve_state(&h1, &psi, &[0.0, 2.0], &IntegratorSettings::default()).unwrap();
        let r2 = evolve_state(&h2, &psi, &[0.0, 2.0], &IntegratorSettings::default()).unwrap();
        assert!(dist(r1.final_state().amplitudes(), r2.final_state().amplitudes()) < 1e-7);
        assert!(h1.at(0.3).unwrap().max_abs_diff(&h2.at(0.3).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn taylor_rejects_time_dependence() {
        let s = space(&[3]);
        let h = Hamiltonian::zero(&s)
            .with_term(number(&s, "a0").unwrap(), |t| C64::from(t))
            .unwrap();
        let psi = StateVector::fock(&s, &[1]).unwrap();
        assert!(evolve_state(&h, &psi, &[0.0, 1.0], &IntegratorSettings::taylor()).is_err());
    }

    fn random_hermitian(s: &Arc<HilbertSpace>, seed: u64) -> SparseOperator {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = s.dim();
        let m = nalgebra::DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = (&m + m.adjoint()) * C64::from(0.5);
        SparseOperator::from_dense(s, &h).unwrap()
    }

    #[test]
    fn agrees_with_dense_exponential() {
        let s = space(&[12, 12]);
        let h = random_hermitian(&s, 7);
        let t = 0.8;
        let u = expm_dense(&(h.to_dense() * C64::new(0.0, -t)));
        let psi = StateVector::fock(&s, &[3, 4]).unwrap();
        let target = &u * psi.to_dvector();
        let hh = Hamiltonian::constant(h);
        for settings in [IntegratorSettings::default(), IntegratorSettings::taylor()] {
            let r = evolve_state(&hh, &psi, &[0.0, t], &settings).unwrap();
            let d = dist(r.final_state().amplitudes(), target.as_slice());
            assert!(d < 1e-7, "{settings:?}: {d}");
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = space(&[8]);
        let a = annihilation(&s, "a0").unwrap();
        let x = a.add(&a.dagger()).unwrap();
        let h = Hamiltonian::constant(number(&s, "a0").unwrap())
            .with_term(x, |t| C64::from(2.0 * (3.0 * t).sin()))
            .unwrap();
        let psi = StateVector::fock(&s, &[1]).unwrap();
        let run = |dt: f64| {
            evolve_state(&h, &psi, &[0.0, 1.0], &IntegratorSettings::rk4(dt))
                .unwrap()
                .into_final_state()
        };
        let dt = 0.02;
        let reference = run(dt / 8.0);
        let e1 = dist(run(dt).amplitudes(), reference.amplitudes());
        let e2 = dist(run(dt / 2.0).amplitudes(), reference.amplitudes());
        let ratio = e1 / e2;
        assert!(ratio > 13.0 && ratio < 19.0, "ratio {ratio}");
    }

    #[test]
    fn amplitude_decay() {
        let s = space(&[4]);
        let kappa = 0.7;
        let c = vec![CollapseOp {
            label: "loss".into(),
            rate: kappa,
            op: annihilation(&s, "a0").unwrap(),
        }];
        let rho0 = DensityMatrix::from_pure(&StateVector::fock(&s, &[1]).unwrap());
        let n = number(&s, "a0").unwrap();
        let times: Vec<f64> = (0..=5).map(|k| 0.4 * k as f64).collect();
        for settings in [IntegratorSettings::default(), IntegratorSettings::taylor()] {
            let r = evolve_density(&Hamiltonian::zero(&s), &c, &rho0, &times, &settings).unwrap();
            for (t, e) in r.times.iter().zip(r.expectations(&n).unwrap()) {
                assert!((e.re - (-kappa * t).exp()).abs() < 1e-6);
            }
            for rho in &r.states {
                assert!(rho.hermiticity_error() < 1e-10);
                assert!((rho.trace().re - 1.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn pure_dephasing() {
        let s = space(&[3]);
        let gamma = 1.1;
        let c = vec![CollapseOp {
            label: "dephasing".into(),
            rate: gamma,
            op: number(&s, "a0").unwrap(),
        }];
        let plus = StateVector::normalized(&s, vec![ONE, ONE, ZERO]).unwrap();
        let rho0 = DensityMatrix::from_pure(&plus);
        let t = 1.7;
        let r = evolve_density(&Hamiltonian::zero(&s), &c, &rho0, &[0.0, t], &IntegratorSettings::default())
            .unwrap();
        let off = r.final_state().matrix()[(0, 1)];
        assert!((off.re - 0.5 * (-gamma * t / 2.0).exp()).abs() < 1e-6);
    }

    #[test]
    fn unitary_density_matches_state() {
        let s = space(&[4, 3]);
        let h = Hamiltonian::constant(random_hermitian(&s, 3))
            .with_term(random_hermitian(&s, 4), |t| C64::from(t.cos()))
            .unwrap();
        let psi = StateVector::fock(&s, &[1, 2]).unwrap();
        let times = [0.0, 0.5, 1.0];
        let r1 = evolve_state(&h, &psi, &times, &IntegratorSettings::default()).unwrap();
        let r2 = evolve_density(&h, &[], &DensityMatrix::from_pure(&psi), &times, &IntegratorSettings::default())
            .unwrap();
        for (p, rho) in r1.states.iter().zip(&r2.states) {
            let pure = DensityMatrix::from_pure(p);
            let d = crate::hilbert::max_abs_diff_dense(pure.matrix(), rho.matrix());
            assert!(d < 1e-7, "{d}");
        }
    }

    #[test]
    fn propagator_shapes_and_unitarity() {
        let s = space(&[3, 3]);
        let basis: Vec<StateVector> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| StateVector::fock(&s, &[i, j]).unwrap())
            .collect();
        let id = propagator_on_subspace(&Hamiltonian::zero(&s), &basis, &[0.0, 1.0], &IntegratorSettings::default())
            .unwrap();
        assert!(crate::hilbert::max_abs_diff_dense(&id, &nalgebra::DMatrix::identity(9, 9)) < 1e-14);
        let h = Hamiltonian::constant(random_hermitian(&s, 11));
        let m = propagator_on_subspace(&h, &basis, &[0.0, 2.0], &IntegratorSettings::default()).unwrap();
        assert_eq!(m.shape(), (9, 9));
        let err = crate::hilbert::max_abs_diff_dense(&(m.adjoint() * &m), &nalgebra::DMatrix::identity(9, 9));
        assert!(err < 1e-6);
        let bad = vec![basis[0].clone(), basis[0].clone()];
        assert!(matches!(
            propagator_on_subspace(&h, &bad, &[0.0, 1.0], &IntegratorSettings::default()),
            Err(Error::NotOrthonormal(_))
        ));
    }

    #[test]
    fn settings_validation() {
        assert!(IntegratorSettings::rk4(0.0).validate().is_err());
        let s = IntegratorSettings::for_detuning(2.0 * std::f64::consts::PI * 40.0, 0.025);
        assert!((s.max_step.unwrap() - 2.5e-5).abs() < 1e-12);
        assert!(IntegratorSettings {
            method: Method::Rkf45Adaptive { rtol: -1.0, atol: 1e-10 },
            max_step: None
        }
        .validate()
        .is_err());
    }
}
