//! Experiment config files: a single JSON document with a `version` field.
//!
//! Rates accept either a bare number (already in rad/μs) or
//! `{"value": v, "two_pi": true}`, which stands for `2π·v`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use kerrcat::gates::GateMode;
use kerrcat::model::KpoBasis;
use kerrcat::noise::NoiseTarget;
use kerrcat::protocols::{PrepInitial, SingleQubitGate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Only accepted value of the `version` field.
pub const CONFIG_VERSION: u32 = 1;

/// Default refusal threshold for a single simulation's state storage.
pub const DEFAULT_MAX_BYTES: u64 = 8 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Plain(f64),
    Scaled { value: f64, two_pi: bool },
}

impl Quantity {
    pub fn resolve(self) -> f64 {
        match self {
            Quantity::Plain(v) => v,
            Quantity::Scaled { value, two_pi } => {
                if two_pi {
                    2.0 * PI * value
                } else {
                    value
                }
            }
        }
    }
}

impl Default for Quantity {
    fn default() -> Self {
        Quantity::Plain(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GateFidelitySweep,
    DecoherenceSweep,
    NoiseStochastic,
    NoiseSystematic,
    SwitchDemo,
    CombinedFig4,
    CatPrep,
    SingleQubit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GateFidelitySweep => "gate_fidelity_sweep",
            ExperimentKind::DecoherenceSweep => "decoherence_sweep",
            ExperimentKind::NoiseStochastic => "noise_stochastic",
            ExperimentKind::NoiseSystematic => "noise_systematic",
            ExperimentKind::SwitchDemo => "switch_demo",
            ExperimentKind::CombinedFig4 => "combined_fig4",
            ExperimentKind::CatPrep => "cat_prep",
            ExperimentKind::SingleQubit => "single_qubit",
        }
    }

    /// Parameters that may appear as grid keys.
    pub fn grid_keys(self) -> &'static [&'static str] {
        const GATE: &[&str] = &[
            "n_qubits", "loops", "alpha", "kerr", "coupling", "detuning", "kappa", "gamma",
            "kappa_gamma", "kappa_bus", "gamma_bus", "bus_dim", "kpo_dim",
        ];
        const NOISY: &[&str] = &[
            "n_qubits", "loops", "alpha", "kerr", "coupling", "detuning", "kappa", "gamma",
            "kappa_gamma", "kappa_bus", "gamma_bus", "bus_dim", "kpo_dim", "epsilon",
        ];
        const COMBINED: &[&str] = &[
            "n_qubits", "loops", "alpha", "kerr", "coupling", "detuning", "bus_dim", "kpo_dim",
            "epsilon", "coherence_time",
        ];
        match self {
            ExperimentKind::GateFidelitySweep | ExperimentKind::DecoherenceSweep => GATE,
            ExperimentKind::NoiseStochastic
            | ExperimentKind::NoiseSystematic
            | ExperimentKind::SwitchDemo => NOISY,
            ExperimentKind::CombinedFig4 => COMBINED,
            ExperimentKind::CatPrep => &[
                "alpha", "kerr", "ramp_time_k", "kappa_over_k", "gamma_over_k",
                "kappa_gamma_over_k", "dim",
            ],
            ExperimentKind::SingleQubit => &["alpha", "kerr", "gate_time_k", "dim"],
        }
    }
}

fn default_loops() -> u32 {
    1
}
fn default_bus_dim() -> usize {
    10
}
fn default_kpo_dim() -> usize {
    25
}

/// Physical parameters of an MS gate. A missing `detuning` means the
/// resonance `Δ = 4√m·Jα`, recomputed at every grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateInput {
    pub n_qubits: usize,
    pub kerr: Quantity,
    pub alpha: f64,
    pub coupling: Quantity,
    #[serde(default)]
    pub detuning: Option<Quantity>,
    #[serde(default = "default_loops")]
    pub loops: u32,
    #[serde(default)]
    pub kappa: Quantity,
    #[serde(default)]
    pub gamma: Quantity,
    #[serde(default)]
    pub kappa_bus: Quantity,
    #[serde(default)]
    pub gamma_bus: Quantity,
    #[serde(default = "default_bus_dim")]
    pub bus_dim: usize,
    #[serde(default = "default_kpo_dim")]
    pub kpo_dim: usize,
    #[serde(default)]
    pub kpo_basis: KpoBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    pub gate: GateInput,
}

fn default_events() -> usize {
    1000
}
fn default_seeds() -> u64 {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticInput {
    pub epsilon: f64,
    #[serde(default = "default_events")]
    pub n_events: usize,
    /// Number of consecutive seeds starting at the experiment seed.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    /// Target sets joined by `+`, e.g. `"coupling+detuning"`.
    #[serde(default)]
    pub variants: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSection {
    pub gate: GateInput,
    pub noise: StochasticInput,
}

/// Signed relative error applied to every target of each variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystematicInput {
    pub epsilon: f64,
    #[serde(default)]
    pub variants: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    Switch,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Fixed => "fixed",
            ScheduleKind::Switch => "switch",
        }
    }
}

fn default_switch_epsilon() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchInput {
    /// Gate-time error the switch is planned for.
    #[serde(default = "default_switch_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_loops")]
    pub loops_after: u32,
}

impl Default for SwitchInput {
    fn default() -> Self {
        Self {
            epsilon: default_switch_epsilon(),
            loops_after: default_loops(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystematicSection {
    pub gate: GateInput,
    pub noise: SystematicInput,
    #[serde(default)]
    pub schedules: Option<Vec<ScheduleKind>>,
    #[serde(default)]
    pub switch: SwitchInput,
}

fn default_coherence_time() -> f64 {
    200.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinedSection {
    pub gate: GateInput,
    /// `T_1 = T_2*` in μs; sets `κ = γ = 1/T`.
    #[serde(default = "default_coherence_time")]
    pub coherence_time: f64,
    #[serde(default)]
    pub noise: Option<SystematicInput>,
    #[serde(default)]
    pub schedule: Option<ScheduleKind>,
    #[serde(default)]
    pub switch: SwitchInput,
}

fn default_ramp() -> f64 {
    1.7
}
fn default_prep_dim() -> usize {
    30
}
fn default_initials() -> Vec<PrepInitial> {
    vec![PrepInitial::Vacuum, PrepInitial::OnePhoton]
}

/// Times are in units of `1/K` and rates in units of `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatPrepSection {
    pub kerr: Quantity,
    pub alpha: f64,
    #[serde(default = "default_ramp")]
    pub ramp_time_k: f64,
    #[serde(default)]
    pub kappa_over_k: f64,
    #[serde(default)]
    pub gamma_over_k: f64,
    #[serde(default = "default_prep_dim")]
    pub dim: usize,
    #[serde(default = "default_initials")]
    pub initial: Vec<PrepInitial>,
}

fn default_gate_time() -> f64 {
    5.0
}
fn default_sq_dim() -> usize {
    40
}
fn default_gates() -> Vec<SingleQubitGate> {
    vec![SingleQubitGate::Hadamard, SingleQubitGate::Not]
}
fn default_h_add() -> Vec<bool> {
    vec![false]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleQubitSection {
    pub kerr: Quantity,
    pub alpha: f64,
    #[serde(default = "default_gate_time")]
    pub gate_time_k: f64,
    #[serde(default = "default_gates")]
    pub gates: Vec<SingleQubitGate>,
    #[serde(default = "default_h_add")]
    pub h_add: Vec<bool>,
    #[serde(default = "default_sq_dim")]
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum KindConfig {
    Gate(GateSection),
    Stochastic(StochasticSection),
    Systematic(SystematicSection),
    Combined(CombinedSection),
    CatPrep(CatPrepSection),
    SingleQubit(SingleQubitSection),
}

/// A parsed experiment. Grid values are already resolved to engine units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub version: u32,
    pub kind: ExperimentKind,
    pub mode: Option<GateMode>,
    pub seed: u64,
    pub config: KindConfig,
    /// `None` runs the base config once; an empty map or an empty value
    /// list yields no points.
    pub grid: Option<BTreeMap<String, Vec<f64>>>,
    /// CSV file name inside the output directory.
    pub output: String,
    pub max_bytes: u64,
}

#[derive(Deserialize)]
struct Header {
    version: u32,
    kind: ExperimentKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile<C> {
    #[allow(dead_code)]
    version: u32,
    #[allow(dead_code)]
    kind: ExperimentKind,
    #[serde(default)]
    mode: Option<GateMode>,
    #[serde(default)]
    seed: Option<u64>,
    config: C,
    #[serde(default)]
    grid: Option<BTreeMap<String, Vec<Quantity>>>,
    #[serde(default)]
    output: Option<String>,
    #[serde(default)]
    max_bytes: Option<u64>,
}

fn json_error(e: serde_json::Error) -> CliError {
    let mut msg = e.to_string();
    if let Some(i) = msg.rfind(" at line ") {
        msg.truncate(i);
    }
    CliError::config(format!("line {}, column {}: {msg}", e.line(), e.column()))
}

fn parse_raw<C: DeserializeOwned>(text: &str) -> CliResult<RawFile<C>> {
    serde_json::from_str(text).map_err(json_error)
}

/// Parses and checks a config document.
pub fn parse_spec(text: &str) -> CliResult<ExperimentSpec> {
    let header: Header = serde_json::from_str(text).map_err(json_error)?;
    if header.version != CONFIG_VERSION {
        return Err(CliError::config(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            header.version
        )));
    }
    let kind = header.kind;
    macro_rules! assemble {
        ($section:ty, $variant:ident) => {{
            let raw: RawFile<$section> = parse_raw(text)?;
            (KindConfig::$variant(raw.config), raw.mode, raw.seed, raw.grid, raw.output, raw.max_bytes)
        }};
    }
    let (config, mode, seed, grid, output, max_bytes) = match kind {
        ExperimentKind::GateFidelitySweep | ExperimentKind::DecoherenceSweep => assemble!(GateSection, Gate),
        ExperimentKind::NoiseStochastic => assemble!(StochasticSection, Stochastic),
        ExperimentKind::NoiseSystematic | ExperimentKind::SwitchDemo => assemble!(SystematicSection, Systematic),
        ExperimentKind::CombinedFig4 => assemble!(CombinedSection, Combined),
        ExperimentKind::CatPrep => assemble!(CatPrepSection, CatPrep),
        ExperimentKind::SingleQubit => assemble!(SingleQubitSection, SingleQubit),
    };
    let grid = grid.map(|g| resolve_grid(kind, g)).transpose()?;
    let output = output.unwrap_or_else(|| format!("{}.csv", kind.name()));
    if output.is_empty() || output.contains(['/', '\\']) {
        return Err(CliError::config(format!("output `{output}` must be a plain file name")));
    }
    Ok(ExperimentSpec {
        version: CONFIG_VERSION,
        kind,
        mode,
        seed: seed.unwrap_or(0),
        config,
        grid,
        output,
        max_bytes: max_bytes.unwrap_or(DEFAULT_MAX_BYTES),
    })
}

/// Reads and parses a config file; errors name the file.
pub fn load_spec(path: &Path) -> CliResult<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Keys whose values must be strictly positive.
const POSITIVE: &[&str] = &[
    "n_qubits", "loops", "alpha", "kerr", "coupling", "detuning", "bus_dim", "kpo_dim",
    "coherence_time", "ramp_time_k", "gate_time_k", "dim",
];
const INTEGRAL: &[&str] = &["n_qubits", "loops", "bus_dim", "kpo_dim", "dim"];

fn resolve_grid(
    kind: ExperimentKind,
    grid: BTreeMap<String, Vec<Quantity>>,
) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let allowed = kind.grid_keys();
    let mut out = BTreeMap::new();
    for (key, values) in grid {
        if !allowed.contains(&key.as_str()) {
            return Err(CliError::config(format!(
                "grid key `{key}` is not valid for {} (allowed: {})",
                kind.name(),
                allowed.join(", ")
            )));
        }
        let mut resolved = Vec::with_capacity(values.len());
        for (i, q) in values.into_iter().enumerate() {
            let v = q.resolve();
            let bad = if !v.is_finite() {
                Some("must be finite")
            } else if POSITIVE.contains(&key.as_str()) && v <= 0.0 {
                Some("must be > 0")
            } else if !POSITIVE.contains(&key.as_str()) && key != "epsilon" && v < 0.0 {
                Some("must be ≥ 0")
            } else if INTEGRAL.contains(&key.as_str()) && v.fract() != 0.0 {
                Some("must be an integer")
            } else {
                None
            };
            if let Some(reason) = bad {
                return Err(CliError::config(format!("grid.{key}[{i}] = {v}: {reason}")));
            }
            resolved.push(v);
        }
        out.insert(key, resolved);
    }
    Ok(out)
}

/// Cartesian product of the grid, last key varying fastest.
pub fn grid_points(grid: &Option<BTreeMap<String, Vec<f64>>>) -> Vec<BTreeMap<String, f64>> {
    let Some(grid) = grid else {
        return vec![BTreeMap::new()];
    };
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Vec::new();
    }
    let mut points = vec![BTreeMap::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Parses a `+`-joined list of noise targets.
pub fn parse_variant(variant: &str) -> CliResult<Vec<NoiseTarget>> {
    let mut targets = Vec::new();
    for part in variant.split('+') {
        let t = match part.trim() {
            "coupling" => NoiseTarget::Coupling,
            "detuning" => NoiseTarget::Detuning,
            "alpha" => NoiseTarget::Alpha,
            "gate_time" => NoiseTarget::GateTime,
            other => {
                return Err(CliError::config(format!(
                    "unknown noise target `{other}` in variant `{variant}`"
                )))
            }
        };
        if targets.contains(&t) {
            return Err(CliError::config(format!("duplicate target in variant `{variant}`")));
        }
        targets.push(t);
    }
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "kind": "gate_fidelity_sweep",
        "config": {"gate": {"n_qubits": 2, "kerr": {"value": 5, "two_pi": true},
                            "alpha": 2, "coupling": 1.0}}
    }"#;

    #[test]
    fn quantities_resolve() {
        assert_eq!(Quantity::Plain(0.1).resolve(), 0.1);
        let q: Quantity = serde_json::from_str(r#"{"value": 0.5, "two_pi": true}"#).unwrap();
        assert!((q.resolve() - PI).abs() < 1e-15);
        let q: Quantity = serde_json::from_str(r#"{"value": 0.5, "two_pi": false}"#).unwrap();
        assert_eq!(q.resolve(), 0.5);
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let s = parse_spec(MINIMAL).unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.output, "gate_fidelity_sweep.csv");
        assert_eq!(s.max_bytes, DEFAULT_MAX_BYTES);
        assert!(s.grid.is_none());
        let KindConfig::Gate(g) = &s.config else { panic!() };
        assert_eq!(g.gate.loops, 1);
        assert_eq!(g.gate.kpo_dim, 25);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\n  \"version\": 1,\n  \"kind\": \"gate_fidelity_sweep\",\n  \"config\": {\"gate\": {\"n_qubits\": 2}}\n}";
        let e = parse_spec(text).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("line 4"), "{e}");
        let e = parse_spec("{\"version\": 1,\n \"kind\": \"teleport\"}").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn rejects_bad_version_keys_and_values() {
        let v2 = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(parse_spec(&v2).is_err());
        let extra = MINIMAL.replace("\"version\": 1,", "\"version\": 1, \"colour\": 3,");
        assert!(parse_spec(&extra).is_err());
        let key = MINIMAL.replace("\"version\": 1,", "\"version\": 1, \"grid\": {\"ramp_time_k\": [1]},");
        assert!(parse_spec(&key).is_err());
        let neg = MINIMAL.replace("\"version\": 1,", "\"version\": 1, \"grid\": {\"alpha\": [1, -2]},");
        let e = parse_spec(&neg).unwrap_err();
        assert!(e.to_string().contains("grid.alpha[1]"), "{e}");
    }

    #[test]
    fn grid_product_order_and_empties() {
        let mut g = BTreeMap::new();
        g.insert("alpha".to_string(), vec![1.0, 2.0]);
        g.insert("coupling".to_string(), vec![0.1, 0.2, 0.3]);
        let pts = grid_points(&Some(g.clone()));
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1]["coupling"], 0.2);
        assert_eq!(pts[3]["alpha"], 2.0);
        assert_eq!(grid_points(&None).len(), 1);
        assert!(grid_points(&Some(BTreeMap::new())).is_empty());
        g.insert("kerr".to_string(), vec![]);
        assert!(grid_points(&Some(g)).is_empty());
    }

    #[test]
    fn variants_parse() {
        assert_eq!(
            parse_variant("coupling+detuning").unwrap(),
            vec![NoiseTarget::Coupling, NoiseTarget::Detuning]
        );
        assert!(parse_variant("coupling+coupling").is_err());
        assert!(parse_variant("phase").is_err());
    }
}
