//! Invariant checks shared by the property tests and the acceptance run.
//! Each check drives a deterministic proptest runner so failures replay.

use std::f64::consts::PI;
use std::sync::Arc;

use kerrcat::dynamics::{evolve_density, evolve_state, Hamiltonian, IntegratorSettings};
use kerrcat::gates::{
    average_gate_fidelity, beta, chi, gate_time, ms_closed_form, run_gate, verify_error_bias, GateMode,
    GateRunOptions, Schedule,
};
use kerrcat::hilbert::{max_abs_diff_dense, DensityMatrix, HilbertSpace, SparseOperator, StateVector, C64, ONE};
use kerrcat::model::{CollapseOp, EffectiveModel, GateConfig};
use kerrcat::noise::{apply_stochastic, stochastic_trace, NoiseTarget, StochasticNoiseSpec};
use kerrcat::protocols::{CatPrepRun, PrepInitial};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub type Check = fn() -> Result<(), String>;

/// Every invariant with a short name, in the order they are run.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("schrodinger evolution preserves the norm", schrodinger_preserves_norm),
        ("lindblad evolution preserves trace, hermiticity and positivity", lindblad_preserves_state),
        ("kerr ramp conserves photon-number parity", kerr_ramp_conserves_parity),
        ("fixed-step rk4 converges at fourth order", rk4_fourth_order),
        ("closed-form gate is unitary and commutes with S_x", closed_form_unitary),
        ("bus trajectory lies on its circle and closes at resonance", trajectory_geometry),
        ("average gate fidelity ignores global phase", fidelity_phase_invariant),
        ("bit flips commute through the gate", error_bias_preserved),
        ("stochastic schedules are fixed by the seed", stochastic_seed_determinism),
        ("noisy gate runs are reproducible", gate_run_determinism),
    ]
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn finish<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn cplx(v: &[f64]) -> Vec<C64> {
    v.chunks(2).map(|p| C64::new(p[0], p[1])).collect()
}

fn dense(d: usize, entries: &[f64]) -> DMatrix<C64> {
    DMatrix::from_vec(d, d, cplx(&entries[..2 * d * d]))
}

fn hermitian(d: usize, entries: &[f64]) -> DMatrix<C64> {
    let a = dense(d, entries);
    (&a + a.adjoint()) * C64::from(0.5)
}

fn mode(d: usize) -> Arc<HilbertSpace> {
    HilbertSpace::with_default_labels(&[d]).unwrap()
}

fn op(space: &Arc<HilbertSpace>, m: &DMatrix<C64>) -> SparseOperator {
    SparseOperator::from_dense(space, m).unwrap()
}

/// Dimension, two random matrices' worth of entries and a random state.
fn system(max_dim: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2..=max_dim).prop_flat_map(|d| {
        let m = 2 * d * d;
        (
            Just(d),
            prop::collection::vec(-1.0..1.0f64, m),
            prop::collection::vec(-1.0..1.0f64, m),
            prop::collection::vec(-1.0..1.0f64, 2 * d),
        )
    })
}

fn random_state(space: &Arc<HilbertSpace>, amps: &[f64]) -> StateVector {
    let mut v = cplx(amps);
    v[0] += ONE; // keeps the vector away from zero
    StateVector::normalized(space, v).unwrap()
}

pub fn schrodinger_preserves_norm() -> Result<(), String> {
    finish(runner(48).run(&(system(8), 0.1..3.0f64), |((d, h0, h1, psi), t_end)| {
        let space = mode(d);
        let psi0 = random_state(&space, &psi);
        let h = Hamiltonian::constant(op(&space, &hermitian(d, &h0)))
            .with_term(op(&space, &hermitian(d, &h1)), |t| C64::from((2.0 * t).cos()))
            .unwrap();
        let adaptive = evolve_state(&h, &psi0, &[0.0, t_end], &IntegratorSettings::default()).unwrap();
        let n = adaptive.final_state().norm();
        prop_assert!((n - 1.0).abs() < 1e-7, "adaptive norm {n}");
        let h = Hamiltonian::constant(op(&space, &hermitian(d, &h0)));
        let taylor = evolve_state(&h, &psi0, &[0.0, t_end], &IntegratorSettings::taylor()).unwrap();
        let n = taylor.final_state().norm();
        prop_assert!((n - 1.0).abs() < 1e-12, "taylor norm {n}");
        Ok(())
    }))
}

pub fn lindblad_preserves_state() -> Result<(), String> {
    let strategy = (system(5), 0.0..2.0f64, 0.1..2.0f64);
    finish(runner(32).run(&strategy, |((d, h0, jump, psi), rate, t_end)| {
        let space = mode(d);
        let rho0 = DensityMatrix::from_pure(&random_state(&space, &psi));
        let h = Hamiltonian::constant(op(&space, &hermitian(d, &h0)));
        let collapse = [CollapseOp {
            label: "random".into(),
            rate,
            op: op(&space, &dense(d, &jump)),
        }];
        let times: Vec<f64> = (0..=4).map(|k| t_end * k as f64 / 4.0).collect();
        let out = evolve_density(&h, &collapse, &rho0, &times, &IntegratorSettings::default()).unwrap();
        for rho in &out.states {
            let tr = rho.trace();
            prop_assert!((tr - ONE).norm() < 1e-8, "trace {tr}");
            prop_assert!(rho.hermiticity_error() < 1e-10, "hermiticity {}", rho.hermiticity_error());
            prop_assert!(rho.min_eigenvalue() > -1e-8, "eigenvalue {}", rho.min_eigenvalue());
        }
        Ok(())
    }))
}

pub fn kerr_ramp_conserves_parity() -> Result<(), String> {
    let strategy = (0.5..2.5f64, 0.5..3.0f64, prop::bool::ANY);
    finish(runner(12).run(&strategy, |(alpha, t0_k, odd)| {
        let kerr = 1.0;
        let initial = if odd { PrepInitial::OnePhoton } else { PrepInitial::Vacuum };
        let mut run = CatPrepRun::new(kerr, alpha, t0_k / kerr, initial).unwrap();
        run.dim = 24;
        let h = run.hamiltonian().unwrap();
        let psi0 = StateVector::fock(h.space(), &[usize::from(odd)]).unwrap();
        let psi = evolve_state(&h, &psi0, &[0.0, run.schedule.ramp_time], &run.settings)
            .unwrap()
            .into_final_state();
        let wrong: f64 = psi
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(n, _)| (n % 2 == 1) != odd)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        prop_assert!(wrong < 1e-20, "opposite-parity weight {wrong}");
        Ok(())
    }))
}

pub fn rk4_fourth_order() -> Result<(), String> {
    finish(runner(16).run(&system(6), |(d, h0, h1, psi)| {
        let space = mode(d);
        let psi0 = random_state(&space, &psi);
        let h = Hamiltonian::constant(op(&space, &hermitian(d, &h0)))
            .with_term(op(&space, &hermitian(d, &h1)), |t| C64::from((3.0 * t).sin()))
            .unwrap();
        let run = |dt: f64| evolve_state(&h, &psi0, &[0.0, 1.0], &IntegratorSettings::rk4(dt)).unwrap().into_final_state();
        let reference = run(0.04 / 64.0);
        let err = |dt: f64| {
            let s = run(dt);
            s.amplitudes().iter().zip(reference.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        let ratio = err(0.04) / err(0.02);
        prop_assert!((13.0..=19.5).contains(&ratio), "error ratio {ratio}");
        Ok(())
    }))
}

fn resonant(n: usize, coupling: f64, alpha: f64, loops: u32) -> GateConfig {
    GateConfig::resonant(n, 2.0 * PI * 5.0, alpha, coupling, loops)
}

fn gate_params() -> impl Strategy<Value = (usize, f64, f64, u32)> {
    (1..=4usize, 2.0 * PI * 0.1..2.0 * PI * 5.0, 1.0..2.5f64, 1..=3u32)
}

pub fn closed_form_unitary() -> Result<(), String> {
    let strategy = (1..=3usize, 2.0 * PI * 0.1..2.0 * PI * 5.0, 0.5..2.5f64, 1..=4u32, 0.0..1.5f64);
    finish(runner(32).run(&strategy, |(n, j, alpha, loops, frac)| {
        let mut c = resonant(n, j, alpha, loops);
        c.bus_dim = 14;
        let u = ms_closed_form(frac * gate_time(&c), &c).unwrap();
        let ud = u.to_dense();
        let id = DMatrix::<C64>::identity(ud.nrows(), ud.ncols());
        let err = max_abs_diff_dense(&(ud.adjoint() * &ud), &id);
        prop_assert!(err < 1e-10, "unitarity error {err}");
        let sx = EffectiveModel::new(&c).unwrap().s_x().unwrap();
        let comm = u.commutator(&sx).unwrap().max_abs();
        prop_assert!(comm < 1e-10, "[U, S_x] = {comm}");
        Ok(())
    }))
}

pub fn trajectory_geometry() -> Result<(), String> {
    finish(runner(64).run(&(gate_params(), 0.0..3.0f64), |((_, j, alpha, loops), frac)| {
        let c = resonant(1, j, alpha, loops);
        let r = 2.0 * j * alpha / c.detuning;
        let t = frac * gate_time(&c);
        let x = chi(j, alpha, c.detuning, t);
        prop_assert!(((x - C64::new(0.0, r)).norm() - r).abs() < 1e-12 * r.max(1.0));
        let t_g = gate_time(&c);
        prop_assert!(chi(j, alpha, c.detuning, t_g).norm() < 1e-12);
        prop_assert!((beta(j, alpha, c.detuning, t_g) + PI / 2.0).abs() < 1e-12);
        Ok(())
    }))
}

pub fn fidelity_phase_invariant() -> Result<(), String> {
    let strategy = (prop::collection::vec(-1.0..1.0f64, 32), 0.0..2.0 * PI);
    finish(runner(64).run(&strategy, |(entries, phase)| {
        let h = hermitian(4, &entries);
        let u = kerrcat::hilbert::expm_dense(&(h * C64::new(0.0, -1.0)));
        let f = average_gate_fidelity(&u, 4).unwrap();
        let g = average_gate_fidelity(&(&u * C64::from_polar(1.0, phase)), 4).unwrap();
        prop_assert!((f - g).abs() < 1e-12);
        prop_assert!(f <= 1.0 + 1e-12 && f >= 1.0 / 5.0 - 1e-12, "F = {f}");
        Ok(())
    }))
}

pub fn error_bias_preserved() -> Result<(), String> {
    let strategy = (gate_params(), 0.01..0.99f64, 0..4usize);
    finish(runner(24).run(&strategy, |((n, j, alpha, loops), frac, q)| {
        let c = resonant(n, j, alpha, loops);
        let d = verify_error_bias(&c, frac * gate_time(&c), q % n).unwrap();
        prop_assert!(d < 1e-10, "distance {d}");
        Ok(())
    }))
}

pub fn stochastic_seed_determinism() -> Result<(), String> {
    let strategy = (any::<u64>(), 0.01..0.5f64, 2..200usize);
    finish(runner(64).run(&strategy, |(seed, eps, events)| {
        let c = resonant(2, 2.0 * PI * 5.0, 2.0, 1);
        let base = Schedule::constant(&c);
        let mut spec = StochasticNoiseSpec::new(eps, seed, vec![NoiseTarget::Coupling, NoiseTarget::Detuning]);
        spec.n_events = events;
        let a = apply_stochastic(&base, &spec).unwrap();
        prop_assert_eq!(&a, &apply_stochastic(&base, &spec).unwrap());
        let trace = stochastic_trace(&spec, c.coupling, gate_time(&c)).unwrap();
        for l in &trace.levels {
            prop_assert!((l / c.coupling - 1.0).abs() <= eps);
        }
        spec.seed = seed.wrapping_add(1);
        prop_assert_ne!(&a, &apply_stochastic(&base, &spec).unwrap());
        Ok(())
    }))
}

pub fn gate_run_determinism() -> Result<(), String> {
    finish(runner(6).run(&any::<u64>(), |seed| {
        let c = resonant(2, 2.0 * PI * 5.0, 2.0, 1);
        let spec = StochasticNoiseSpec::new(0.1, seed, vec![NoiseTarget::Coupling, NoiseTarget::Detuning]);
        let s = apply_stochastic(&Schedule::constant(&c), &spec).unwrap();
        let opts = GateRunOptions::new(GateMode::Effective, 2);
        let a = run_gate(&c, &s, &opts).unwrap().metrics;
        let b = run_gate(&c, &s, &opts).unwrap().metrics;
        prop_assert_eq!(a, b);
        Ok(())
    }))
}
