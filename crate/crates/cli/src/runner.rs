//! Expands an experiment into independent simulations, runs them on a
//! worker pool and writes the result table plus a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kerrcat::gates::{
    plan_detuning_switch, resonance_detuning, run_gate, GateMode, GateRunOptions, Schedule,
};
use kerrcat::model::{GateConfig, KpoBasis};
use kerrcat::noise::{
    apply_stochastic, apply_systematic, apply_systematic_schedule, NoiseTarget, SignedTarget,
    StochasticNoiseSpec, SystematicNoiseSpec, RNG_ALGORITHM,
};
use kerrcat::protocols::{
    design_single_qubit, run_cat_prep, run_single_qubit_gate, CatPrepRun, PrepInitial,
    SingleQubitGate, SingleQubitRun,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{write_csv, Field};
use crate::resources::{PointEstimate, ResourceEstimate, Storage};
use crate::spec::{
    grid_points, load_spec, parse_variant, ExperimentKind, ExperimentSpec, GateInput, KindConfig,
    ScheduleKind, SwitchInput, SystematicInput,
};

/// Environment variable consulted when `--workers` is absent.
pub const WORKERS_ENV: &str = "KERRCAT_WORKERS";

const GATE_PREFIX: &[&str] = &[
    "n_qubits", "alpha", "kerr", "coupling", "detuning", "loops", "kappa", "gamma", "kpo_basis", "mode",
];
const GATE_METRICS: &[&str] = &["t_g", "F_avg", "F_out", "P_C", "chi_residual", "beta_total"];
const REFERENCE: &[&str] = &["F_avg_nominal", "delta_F_avg"];

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<GateMode>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub columns: Vec<String>,
    pub rows: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    cli_version: &'static str,
    engine_version: &'static str,
    rng: &'static str,
    config_path: Option<String>,
    resolved: &'a ExperimentSpec,
    workers: usize,
    csv: String,
    columns: &'a [String],
    rows: usize,
    resources: &'a ResourceEstimate,
    wall_time_s: f64,
    reference_wall_times_s: Vec<f64>,
    point_wall_times_s: Vec<f64>,
}

#[derive(Clone, Debug)]
struct GateJob {
    config: GateConfig,
    schedule: Schedule,
    mode: GateMode,
}

#[derive(Clone, Debug)]
enum Job {
    Gate { job: GateJob, reference: Option<usize> },
    CatPrep(CatPrepRun),
    SingleQubit(SingleQubitRun),
}

#[derive(Clone, Debug)]
struct Task {
    prefix: Vec<Field>,
    job: Job,
}

/// Every simulation of an experiment, before anything runs.
#[derive(Clone, Debug)]
pub struct Plan {
    pub columns: Vec<String>,
    tasks: Vec<Task>,
    references: Vec<GateJob>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn estimates(&self) -> Vec<PointEstimate> {
        self.references
            .iter()
            .map(gate_estimate)
            .chain(self.tasks.iter().map(|t| match &t.job {
                Job::Gate { job, .. } => gate_estimate(job),
                Job::CatPrep(run) => prep_estimate(run),
                Job::SingleQubit(run) => single_qubit_estimate(run),
            }))
            .collect()
    }
}

fn columns(parts: &[&[&str]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().map(|s| s.to_string())).collect()
}

fn mode_name(mode: GateMode) -> &'static str {
    match mode {
        GateMode::Full => "full",
        GateMode::Effective => "effective",
    }
}

fn basis_name(basis: KpoBasis) -> String {
    match basis {
        KpoBasis::Fock => "fock".to_string(),
        KpoBasis::Dressed { levels } => format!("dressed{levels}"),
    }
}

fn gate_prefix(c: &GateConfig, mode: GateMode) -> Vec<Field> {
    vec![
        Field::Int(c.n_qubits as i64),
        Field::Num(c.alpha),
        Field::Num(c.kerr),
        Field::Num(c.coupling),
        Field::Num(c.detuning),
        Field::Int(c.loops as i64),
        Field::Num(c.kappa),
        Field::Num(c.gamma),
        Field::Text(basis_name(c.kpo_basis)),
        Field::text(mode_name(mode)),
    ]
}

fn resolve_gate(input: &GateInput, point: &BTreeMap<String, f64>, index: usize) -> CliResult<GateConfig> {
    let mut c = GateConfig {
        n_qubits: input.n_qubits,
        kerr: input.kerr.resolve(),
        alpha: input.alpha,
        coupling: input.coupling.resolve(),
        detuning: 0.0,
        loops: input.loops,
        kappa_bus: input.kappa_bus.resolve(),
        gamma_bus: input.gamma_bus.resolve(),
        kappa: input.kappa.resolve(),
        gamma: input.gamma.resolve(),
        bus_dim: input.bus_dim,
        kpo_dim: input.kpo_dim,
        kpo_basis: input.kpo_basis,
    };
    let mut detuning = input.detuning.map(|q| q.resolve());
    for (key, &v) in point {
        match key.as_str() {
            "n_qubits" => c.n_qubits = v as usize,
            "loops" => c.loops = v as u32,
            "alpha" => c.alpha = v,
            "kerr" => c.kerr = v,
            "coupling" => c.coupling = v,
            "detuning" => detuning = Some(v),
            "kappa" => c.kappa = v,
            "gamma" => c.gamma = v,
            "kappa_gamma" => {
                c.kappa = v;
                c.gamma = v;
            }
            "kappa_bus" => c.kappa_bus = v,
            "gamma_bus" => c.gamma_bus = v,
            "bus_dim" => c.bus_dim = v as usize,
            "kpo_dim" => c.kpo_dim = v as usize,
            _ => {}
        }
    }
    c.detuning = detuning.unwrap_or_else(|| resonance_detuning(c.coupling, c.alpha, c.loops));
    c.validate()
        .map_err(|e| CliError::from_resolve(&format!("grid point {index}"), e))?;
    Ok(c)
}

fn signed_spec(targets: &[NoiseTarget], epsilon: f64) -> SystematicNoiseSpec {
    let sign = if epsilon < 0.0 { -1.0 } else { 1.0 };
    SystematicNoiseSpec {
        epsilon: epsilon.abs(),
        targets: targets.iter().map(|&target| SignedTarget { target, sign }).collect(),
    }
}

/// Systematic errors: `α` perturbs the model, the rest perturb the schedule.
fn perturbed(
    config: &GateConfig,
    schedule: &Schedule,
    spec: &SystematicNoiseSpec,
    index: usize,
) -> CliResult<(GateConfig, Schedule)> {
    let ctx = format!("grid point {index}");
    let alpha_only = SystematicNoiseSpec {
        epsilon: spec.epsilon,
        targets: spec.targets.iter().copied().filter(|t| t.target == NoiseTarget::Alpha).collect(),
    };
    let c = apply_systematic(config, &alpha_only).map_err(|e| CliError::from_resolve(&ctx, e))?;
    let s = apply_systematic_schedule(schedule, spec).map_err(|e| CliError::from_resolve(&ctx, e))?;
    Ok((c, s))
}

fn nominal_schedule(config: &GateConfig, kind: ScheduleKind, switch: &SwitchInput, index: usize) -> CliResult<(Schedule, Option<(f64, f64)>)> {
    match kind {
        ScheduleKind::Fixed => Ok((Schedule::constant(config), None)),
        ScheduleKind::Switch => {
            let plan = plan_detuning_switch(config, switch.epsilon, switch.loops_after)
                .map_err(|e| CliError::from_resolve(&format!("grid point {index}"), e))?;
            Ok((plan.schedule(), Some((plan.tau, plan.detuning_after))))
        }
    }
}

fn variants(given: &Option<Vec<String>>, default: &[&str]) -> CliResult<Vec<(String, Vec<NoiseTarget>)>> {
    let names: Vec<String> = match given {
        Some(v) => v.clone(),
        None => default.iter().map(|s| s.to_string()).collect(),
    };
    names
        .into_iter()
        .map(|n| parse_variant(&n).map(|t| (n, t)))
        .collect()
}

/// Expands `spec` into its simulations. `mode` overrides the config's mode.
pub fn plan(spec: &ExperimentSpec, mode: Option<GateMode>) -> CliResult<Plan> {
    let points = grid_points(&spec.grid);
    let kind = spec.kind;
    let default_mode = if kind == ExperimentKind::CombinedFig4 {
        GateMode::Effective
    } else {
        GateMode::Full
    };
    let mode = mode.or(spec.mode).unwrap_or(default_mode);
    let seed = spec.seed;
    let mut tasks = Vec::new();
    let mut references = Vec::new();
    let cols = match &spec.config {
        KindConfig::Gate(section) => {
            for (i, p) in points.iter().enumerate() {
                let config = resolve_gate(&section.gate, p, i)?;
                let mut prefix = gate_prefix(&config, mode);
                prefix.push(Field::Int(seed as i64));
                tasks.push(Task {
                    prefix,
                    job: Job::Gate {
                        job: GateJob { schedule: Schedule::constant(&config), config, mode },
                        reference: None,
                    },
                });
            }
            columns(&[GATE_PREFIX, &["seed"], GATE_METRICS])
        }
        KindConfig::Stochastic(section) => {
            let noise = &section.noise;
            let vars = variants(&noise.variants, &["coupling+detuning", "coupling", "detuning"])?;
            for (i, p) in points.iter().enumerate() {
                let config = resolve_gate(&section.gate, p, i)?;
                let epsilon = p.get("epsilon").copied().unwrap_or(noise.epsilon);
                let base = Schedule::constant(&config);
                let r = references.len();
                references.push(GateJob { config: config.clone(), schedule: base.clone(), mode });
                for (name, targets) in &vars {
                    for k in 0..noise.seeds {
                        let s = seed.wrapping_add(k);
                        let mut ns = StochasticNoiseSpec::new(epsilon, s, targets.clone());
                        ns.n_events = noise.n_events;
                        let schedule = apply_stochastic(&base, &ns)
                            .map_err(|e| CliError::from_resolve(&format!("grid point {i}"), e))?;
                        let mut prefix = gate_prefix(&config, mode);
                        prefix.extend([
                            Field::text(name.as_str()),
                            Field::Num(epsilon),
                            Field::Int(noise.n_events as i64),
                            Field::Int(s as i64),
                        ]);
                        tasks.push(Task {
                            prefix,
                            job: Job::Gate {
                                job: GateJob { config: config.clone(), schedule, mode },
                                reference: Some(r),
                            },
                        });
                    }
                }
            }
            columns(&[GATE_PREFIX, &["variant", "epsilon", "n_events", "seed"], GATE_METRICS, REFERENCE])
        }
        KindConfig::Systematic(section) => {
            let switch_demo = kind == ExperimentKind::SwitchDemo;
            let default_vars: &[&str] = if switch_demo {
                &["gate_time"]
            } else {
                &["coupling", "detuning", "alpha", "gate_time"]
            };
            let vars = variants(&section.noise.variants, default_vars)?;
            let schedules = section.schedules.clone().unwrap_or_else(|| {
                if switch_demo {
                    vec![ScheduleKind::Fixed, ScheduleKind::Switch]
                } else {
                    vec![ScheduleKind::Fixed]
                }
            });
            for (i, p) in points.iter().enumerate() {
                let config = resolve_gate(&section.gate, p, i)?;
                let epsilon = p.get("epsilon").copied().unwrap_or(section.noise.epsilon);
                for &sk in &schedules {
                    let (nominal, switch) = nominal_schedule(&config, sk, &section.switch, i)?;
                    let r = references.len();
                    references.push(GateJob { config: config.clone(), schedule: nominal.clone(), mode });
                    for (name, targets) in &vars {
                        let (c, schedule) = perturbed(&config, &nominal, &signed_spec(targets, epsilon), i)?;
                        let mut prefix = gate_prefix(&config, mode);
                        prefix.extend([
                            Field::text(name.as_str()),
                            Field::Num(epsilon),
                            Field::text(sk.name()),
                            Field::opt(switch.map(|s| s.0)),
                            Field::opt(switch.map(|s| s.1)),
                            Field::Int(seed as i64),
                        ]);
                        tasks.push(Task {
                            prefix,
                            job: Job::Gate { job: GateJob { config: c, schedule, mode }, reference: Some(r) },
                        });
                    }
                }
            }
            columns(&[
                GATE_PREFIX,
                &["variant", "epsilon", "schedule", "switch_time", "detuning_after", "seed"],
                GATE_METRICS,
                REFERENCE,
            ])
        }
        KindConfig::Combined(section) => {
            let default_noise = SystematicInput { epsilon: -0.05, variants: None };
            let noise = section.noise.as_ref().unwrap_or(&default_noise);
            let vars = variants(&noise.variants, &["coupling+detuning+gate_time"])?;
            let sk = section.schedule.unwrap_or(ScheduleKind::Switch);
            for (i, p) in points.iter().enumerate() {
                let mut config = resolve_gate(&section.gate, p, i)?;
                if mode == GateMode::Full && config.n_qubits > 2 {
                    return Err(CliError::config(format!(
                        "grid point {i}: full mode is limited to N ≤ 2 for {}; use effective",
                        kind.name()
                    )));
                }
                let t = p.get("coherence_time").copied().unwrap_or(section.coherence_time);
                if !(t > 0.0) {
                    return Err(CliError::config(format!("grid point {i}: coherence_time must be > 0")));
                }
                config.kappa = 1.0 / t;
                config.gamma = 1.0 / t;
                let epsilon = p.get("epsilon").copied().unwrap_or(noise.epsilon);
                let (nominal, _) = nominal_schedule(&config, sk, &section.switch, i)?;
                for (name, targets) in &vars {
                    let (c, schedule) = perturbed(&config, &nominal, &signed_spec(targets, epsilon), i)?;
                    let mut prefix = gate_prefix(&config, mode);
                    prefix.extend([
                        Field::text(name.as_str()),
                        Field::Num(epsilon),
                        Field::text(sk.name()),
                        Field::Num(t),
                        Field::Int(seed as i64),
                    ]);
                    tasks.push(Task {
                        prefix,
                        job: Job::Gate { job: GateJob { config: c, schedule, mode }, reference: None },
                    });
                }
            }
            columns(&[
                GATE_PREFIX,
                &["variant", "epsilon", "schedule", "coherence_time", "seed"],
                GATE_METRICS,
            ])
        }
        KindConfig::CatPrep(section) => {
            for (i, p) in points.iter().enumerate() {
                let kerr = p.get("kerr").copied().unwrap_or(section.kerr.resolve());
                let alpha = p.get("alpha").copied().unwrap_or(section.alpha);
                let ramp_k = p.get("ramp_time_k").copied().unwrap_or(section.ramp_time_k);
                let joint = p.get("kappa_gamma_over_k").copied();
                let kappa_k = joint.or(p.get("kappa_over_k").copied()).unwrap_or(section.kappa_over_k);
                let gamma_k = joint.or(p.get("gamma_over_k").copied()).unwrap_or(section.gamma_over_k);
                let dim = p.get("dim").map_or(section.dim, |&d| d as usize);
                for &initial in &section.initial {
                    let mut run = CatPrepRun::new(kerr, alpha, ramp_k / kerr, initial)
                        .map_err(|e| CliError::from_resolve(&format!("grid point {i}"), e))?;
                    run.kappa = kappa_k * kerr;
                    run.gamma = gamma_k * kerr;
                    run.dim = dim;
                    let prefix = vec![
                        Field::Num(kerr),
                        Field::Num(alpha),
                        Field::Num(ramp_k),
                        Field::Num(run.schedule.ramp_time),
                        Field::Num(run.kappa),
                        Field::Num(run.gamma),
                        Field::text(match initial {
                            PrepInitial::Vacuum => "vacuum",
                            PrepInitial::OnePhoton => "one_photon",
                        }),
                        Field::Int(dim as i64),
                        Field::Int(seed as i64),
                    ];
                    tasks.push(Task { prefix, job: Job::CatPrep(run) });
                }
            }
            columns(&[&[
                "kerr", "alpha", "ramp_time_k", "ramp_time", "kappa", "gamma", "initial", "dim", "seed",
                "fidelity", "margin",
            ]])
        }
        KindConfig::SingleQubit(section) => {
            for (i, p) in points.iter().enumerate() {
                let kerr = p.get("kerr").copied().unwrap_or(section.kerr.resolve());
                let alpha = p.get("alpha").copied().unwrap_or(section.alpha);
                let t_k = p.get("gate_time_k").copied().unwrap_or(section.gate_time_k);
                let dim = p.get("dim").map_or(section.dim, |&d| d as usize);
                for &gate in &section.gates {
                    for &h_add in &section.h_add {
                        let t = t_k / kerr;
                        let params = design_single_qubit(gate, alpha, t, h_add)
                            .map_err(|e| CliError::from_resolve(&format!("grid point {i}"), e))?;
                        let mut run = SingleQubitRun::new(kerr, alpha, params, h_add, t);
                        run.dim = dim;
                        run.validate()
                            .map_err(|e| CliError::from_resolve(&format!("grid point {i}"), e))?;
                        let prefix = vec![
                            Field::Num(kerr),
                            Field::Num(alpha),
                            Field::text(match gate {
                                SingleQubitGate::Hadamard => "hadamard",
                                SingleQubitGate::Not => "not",
                            }),
                            Field::text(if h_add { "true" } else { "false" }),
                            Field::Num(t_k),
                            Field::Num(t),
                            Field::Int(dim as i64),
                            Field::Num(params.drive.re),
                            Field::Num(params.detuning),
                            Field::Num(params.josephson),
                            Field::Int(seed as i64),
                        ];
                        tasks.push(Task { prefix, job: Job::SingleQubit(run) });
                    }
                }
            }
            columns(&[&[
                "kerr", "alpha", "gate", "h_add", "gate_time_k", "gate_time", "dim", "drive", "detuning_q",
                "josephson", "seed", "F_avg", "infidelity", "leakage",
            ]])
        }
    };
    Ok(Plan { columns: cols, tasks, references })
}

fn is_dissipative(c: &GateConfig) -> bool {
    c.kappa > 0.0 || c.gamma > 0.0 || c.kappa_bus > 0.0 || c.gamma_bus > 0.0
}

fn gate_estimate(job: &GateJob) -> PointEstimate {
    let c = &job.config;
    let local = match (job.mode, c.kpo_basis) {
        (GateMode::Effective, _) => 2,
        (GateMode::Full, KpoBasis::Fock) => c.kpo_dim,
        (GateMode::Full, KpoBasis::Dressed { levels }) => levels,
    };
    let mut dims = vec![c.bus_dim];
    dims.extend(std::iter::repeat(local).take(c.n_qubits));
    let storage = if is_dissipative(c) { Storage::DensityMatrix } else { Storage::StateVector };
    // Norm bound of the generator; one step per unit of phase.
    let n = c.n_qubits as f64;
    let d = local as f64;
    let bus = c.bus_dim as f64;
    let kpo = if job.mode == GateMode::Full { c.kerr * d * d + 2.0 * c.pump() * d } else { 0.0 };
    let steps = job
        .schedule
        .segments()
        .iter()
        .map(|s| {
            let norm = s.detuning.abs() * bus + n * kpo + 2.0 * s.coupling.abs() * n * (bus * d).sqrt() * c.alpha;
            (s.duration * norm).ceil().max(1.0) as u64
        })
        .sum();
    PointEstimate::new(dims, storage, steps)
}

fn prep_estimate(run: &CatPrepRun) -> PointEstimate {
    let storage = if run.kappa > 0.0 || run.gamma > 0.0 { Storage::DensityMatrix } else { Storage::StateVector };
    let d = run.dim as f64;
    let a2 = run.schedule.alpha * run.schedule.alpha;
    let norm = run.kerr * (d * d + 2.0 * a2 * d + 1.0);
    PointEstimate::new(vec![run.dim], storage, (run.schedule.ramp_time * norm).ceil() as u64)
}

fn single_qubit_estimate(run: &SingleQubitRun) -> PointEstimate {
    let d = run.dim as f64;
    let mut norm = run.kerr * d * d + 2.0 * run.pump * d;
    if run.use_h_add {
        norm += run.oscillator_frequency.unwrap_or(800.0 * run.kerr) + run.params.josephson.abs();
    }
    PointEstimate::new(vec![run.dim], Storage::StateVector, (run.gate_time * norm).ceil() as u64)
}

/// Memory and step estimate for `spec`, without running anything.
pub fn estimate_resources(spec: &ExperimentSpec, mode: Option<GateMode>) -> CliResult<ResourceEstimate> {
    let plan = plan(spec, mode)?;
    Ok(ResourceEstimate::from_points(&plan.estimates(), spec.max_bytes))
}

fn reference_fidelity(job: &GateJob, index: usize) -> CliResult<Option<f64>> {
    let options = GateRunOptions::new(job.mode, job.config.n_qubits);
    let out = run_gate(&job.config, &job.schedule, &options)
        .map_err(|e| CliError::from_run(&format!("reference {index}"), e))?;
    Ok(out.metrics.average_fidelity)
}

fn execute(task: &Task, index: usize, references: &[Option<f64>]) -> CliResult<Vec<Field>> {
    let ctx = format!("point {index}");
    let mut row = task.prefix.clone();
    match &task.job {
        Job::Gate { job, reference } => {
            let options = GateRunOptions::new(job.mode, job.config.n_qubits);
            let out = run_gate(&job.config, &job.schedule, &options).map_err(|e| CliError::from_run(&ctx, e))?;
            let m = out.metrics;
            row.extend([
                Field::Num(m.gate_time),
                Field::opt(m.average_fidelity),
                Field::Num(m.output_fidelity),
                Field::Num(m.no_leakage),
                Field::Num(m.chi_residual),
                Field::Num(m.beta_total),
            ]);
            if let Some(r) = reference {
                let nominal = references[*r];
                row.push(Field::opt(nominal));
                row.push(Field::opt(nominal.zip(m.average_fidelity).map(|(f0, f)| f - f0)));
            }
        }
        Job::CatPrep(run) => {
            let out = run_cat_prep(run).map_err(|e| CliError::from_run(&ctx, e))?;
            row.extend([Field::Num(out.fidelity), Field::Num(out.margin)]);
        }
        Job::SingleQubit(run) => {
            let out = run_single_qubit_gate(run).map_err(|e| CliError::from_run(&ctx, e))?;
            row.extend([
                Field::Num(out.average_fidelity),
                Field::Num(1.0 - out.average_fidelity),
                Field::Num(out.leakage),
            ]);
        }
    }
    if let Some((col, v)) = row.iter().enumerate().find_map(|(k, f)| match f {
        Field::Num(v) if !v.is_finite() => Some((k, *v)),
        _ => None,
    }) {
        return Err(CliError::Numerical(format!("{ctx}: column {col} is {v}")));
    }
    Ok(row)
}

/// Worker count from the flag, else the environment, else the core count.
pub fn resolve_workers(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{WORKERS_ENV}=`{v}` is not a worker count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::config("worker count must be ≥ 1"));
    }
    Ok(n)
}

fn timed<T>(f: impl FnOnce() -> CliResult<T>) -> CliResult<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

/// Runs a parsed experiment into `out_dir`.
pub fn run_spec(spec: &ExperimentSpec, out_dir: &Path, options: &RunOptions) -> CliResult<RunReport> {
    run_inner(spec, None, out_dir, options)
}

/// Loads `config_path` and runs it into `out_dir`.
pub fn run(config_path: &Path, out_dir: &Path, options: &RunOptions) -> CliResult<RunReport> {
    let spec = load_spec(config_path)?;
    run_inner(&spec, Some(config_path), out_dir, options)
}

fn run_inner(
    spec: &ExperimentSpec,
    config_path: Option<&Path>,
    out_dir: &Path,
    options: &RunOptions,
) -> CliResult<RunReport> {
    let start = Instant::now();
    let workers = resolve_workers(options.workers)?;
    let mut resolved = spec.clone();
    if let Some(seed) = options.seed {
        resolved.seed = seed;
    }
    let plan = plan(&resolved, options.mode)?;
    if !matches!(resolved.kind, ExperimentKind::CatPrep | ExperimentKind::SingleQubit) {
        let default = if resolved.kind == ExperimentKind::CombinedFig4 {
            GateMode::Effective
        } else {
            GateMode::Full
        };
        resolved.mode = Some(options.mode.or(resolved.mode).unwrap_or(default));
    }
    let resources = ResourceEstimate::from_points(&plan.estimates(), resolved.max_bytes);
    resources.check()?;

    std::fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let (references, reference_times): (Vec<Option<f64>>, Vec<f64>) = pool
        .install(|| {
            plan.references
                .par_iter()
                .enumerate()
                .map(|(i, job)| timed(|| reference_fidelity(job, i)))
                .collect::<CliResult<Vec<_>>>()
        })?
        .into_iter()
        .unzip();
    let (mut rows, point_times): (Vec<Vec<Field>>, Vec<f64>) = pool
        .install(|| {
            plan.tasks
                .par_iter()
                .enumerate()
                .map(|(i, task)| timed(|| execute(task, i, &references)))
                .collect::<CliResult<Vec<_>>>()
        })?
        .into_iter()
        .unzip();

    let csv = out_dir.join(&resolved.output);
    write_csv(&csv, &plan.columns, &mut rows)?;
    let stem = Path::new(&resolved.output)
        .file_stem()
        .map_or_else(|| resolved.output.clone(), |s| s.to_string_lossy().into_owned());
    let manifest_path = out_dir.join(format!("{stem}.manifest.json"));
    let manifest = Manifest {
        tool: "kerrcat",
        cli_version: env!("CARGO_PKG_VERSION"),
        engine_version: kerrcat::VERSION,
        rng: RNG_ALGORITHM,
        config_path: config_path.map(|p| p.display().to_string()),
        resolved: &resolved,
        workers,
        csv: resolved.output.clone(),
        columns: &plan.columns,
        rows: rows.len(),
        resources: &resources,
        wall_time_s: start.elapsed().as_secs_f64(),
        reference_wall_times_s: reference_times,
        point_wall_times_s: point_times,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&manifest_path, json + "\n")?;
    Ok(RunReport {
        csv,
        manifest: manifest_path,
        columns: plan.columns,
        rows: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec;

    fn spec(kind: &str, config: &str, grid: &str) -> ExperimentSpec {
        parse_spec(&format!(
            r#"{{"version": 1, "kind": "{kind}", "config": {config}, "grid": {grid}}}"#
        ))
        .unwrap()
    }

    const GATE: &str = r#"{"n_qubits": 2, "kerr": {"value": 5, "two_pi": true}, "alpha": 2,
        "coupling": {"value": 0.5, "two_pi": true}, "kpo_basis": {"kind": "dressed", "levels": 8}}"#;

    #[test]
    fn coupling_grid_tracks_resonance() {
        let s = spec(
            "gate_fidelity_sweep",
            &format!(r#"{{"gate": {GATE}}}"#),
            r#"{"coupling": [{"value": 0.1, "two_pi": true}, {"value": 0.2, "two_pi": true}]}"#,
        );
        let p = plan(&s, None).unwrap();
        assert_eq!(p.len(), 2);
        for t in &p.tasks {
            let Job::Gate { job, .. } = &t.job else { panic!() };
            let c = &job.config;
            assert!((c.detuning - 4.0 * c.coupling * c.alpha).abs() < 1e-12);
        }
        assert_eq!(p.columns.len(), GATE_PREFIX.len() + 1 + GATE_METRICS.len());
    }

    #[test]
    fn stochastic_plan_shares_references() {
        let s = spec(
            "noise_stochastic",
            &format!(r#"{{"gate": {GATE}, "noise": {{"epsilon": 0.1, "seeds": 3}}}}"#),
            r#"{"alpha": [1.5, 2]}"#,
        );
        let p = plan(&s, None).unwrap();
        assert_eq!(p.references.len(), 2);
        assert_eq!(p.len(), 2 * 3 * 3);
    }

    #[test]
    fn combined_full_mode_needs_two_qubits() {
        let s = spec("combined_fig4", &format!(r#"{{"gate": {GATE}}}"#), r#"{"n_qubits": [2, 3]}"#);
        assert!(plan(&s, None).is_ok());
        let e = plan(&s, Some(GateMode::Full)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn switch_demo_has_both_schedules() {
        let s = spec(
            "switch_demo",
            &format!(r#"{{"gate": {GATE}, "noise": {{"epsilon": -0.05}}}}"#),
            "null",
        );
        let p = plan(&s, None).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.references.len(), 2);
    }

    #[test]
    fn estimates_follow_storage() {
        let s = spec(
            "decoherence_sweep",
            &format!(r#"{{"gate": {GATE}}}"#),
            r#"{"kappa_gamma": [0, 0.1]}"#,
        );
        let est = plan(&s, None).unwrap().estimates();
        assert_eq!(est[0].storage, Storage::StateVector);
        assert_eq!(est[1].storage, Storage::DensityMatrix);
        assert_eq!(est[1].dims, vec![10, 8, 8]);
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(resolve_workers(Some(0)).is_err());
        assert_eq!(resolve_workers(Some(3)).unwrap(), 3);
    }
}
