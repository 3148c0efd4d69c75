//! Stochastic and systematic parameter imperfections.
//!
//! Random traces come from ChaCha20 seeded with a 64-bit seed; each noise
//! target draws from its own stream so adding a target never changes the
//! trace of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gates::Schedule;
use crate::model::GateConfig;

/// Identifier of the generator behind every stochastic trace.
pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    Coupling,
    Detuning,
    Alpha,
    GateTime,
}

impl NoiseTarget {
    fn stream(self) -> u64 {
        match self {
            NoiseTarget::Coupling => 0,
            NoiseTarget::Detuning => 1,
            NoiseTarget::Alpha => 2,
            NoiseTarget::GateTime => 3,
        }
    }
}

fn default_events() -> usize {
    1000
}

fn default_rng() -> String {
    RNG_ALGORITHM.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticNoiseSpec {
    /// Relative amplitude: levels are `base·(1 + u)`, `u ~ U(−ε, ε)`.
    pub epsilon: f64,
    #[serde(default = "default_events")]
    pub n_events: usize,
    pub seed: u64,
    pub targets: Vec<NoiseTarget>,
    #[serde(default = "default_rng")]
    pub rng: String,
}

impl StochasticNoiseSpec {
    pub fn new(epsilon: f64, seed: u64, targets: Vec<NoiseTarget>) -> Self {
        Self {
            epsilon,
            n_events: default_events(),
            seed,
            targets,
            rng: default_rng(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be ≥ 0, got {}", self.epsilon)));
        }
        if self.epsilon >= 1.0 {
            return Err(invalid("epsilon", "levels would change sign"));
        }
        if self.n_events < 1 {
            return Err(invalid("n_events", "must be ≥ 1"));
        }
        if self.rng != RNG_ALGORITHM {
            return Err(invalid("rng", format!("unsupported generator `{}`", self.rng)));
        }
        for t in &self.targets {
            if !matches!(t, NoiseTarget::Coupling | NoiseTarget::Detuning) {
                return Err(invalid("targets", format!("{t:?} cannot fluctuate stochastically")));
            }
        }
        Ok(())
    }

    fn factors(&self, target: NoiseTarget) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(target.stream());
        (0..self.n_events)
            .map(|_| 1.0 + self.epsilon * (2.0 * rng.random::<f64>() - 1.0))
            .collect()
    }
}

/// Piecewise-constant trace over equal cells of `[0, duration]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrace {
    pub duration: f64,
    pub levels: Vec<f64>,
}

impl NoiseTrace {
    pub fn cell(&self) -> f64 {
        self.duration / self.levels.len() as f64
    }

    pub fn level_at(&self, t: f64) -> f64 {
        let k = ((t / self.cell()).max(0.0) as usize).min(self.levels.len() - 1);
        self.levels[k]
    }

    pub fn mean(&self) -> f64 {
        self.levels.iter().sum::<f64>() / self.levels.len() as f64
    }
}

/// Trace of `base` over `[0, t_g]` using the stream of the first target
/// (the coupling stream when no target is listed).
pub fn stochastic_trace(spec: &StochasticNoiseSpec, base: f64, t_g: f64) -> Result<NoiseTrace> {
    spec.validate()?;
    if !(t_g > 0.0) {
        return Err(invalid("t_g", "must be > 0"));
    }
    let target = spec.targets.first().copied().unwrap_or(NoiseTarget::Coupling);
    Ok(NoiseTrace {
        duration: t_g,
        levels: spec.factors(target).into_iter().map(|f| base * f).collect(),
    })
}

/// Applies independent multiplicative noise to the coupling and/or
/// detuning of `schedule`, one level per event cell.
pub fn apply_stochastic(schedule: &Schedule, spec: &StochasticNoiseSpec) -> Result<Schedule> {
    spec.validate()?;
    let ones = vec![1.0; spec.n_events];
    let fj = if spec.targets.contains(&NoiseTarget::Coupling) {
        spec.factors(NoiseTarget::Coupling)
    } else {
        ones.clone()
    };
    let fd = if spec.targets.contains(&NoiseTarget::Detuning) {
        spec.factors(NoiseTarget::Detuning)
    } else {
        ones
    };
    schedule.modulated(spec.n_events, |k| (fj[k], fd[k]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedTarget {
    pub target: NoiseTarget,
    /// `+1` or `−1`.
    pub sign: f64,
}

/// Constant relative offset `δx/x = sign·ε_a` on each listed parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystematicNoiseSpec {
    pub epsilon: f64,
    pub targets: Vec<SignedTarget>,
}

impl SystematicNoiseSpec {
    pub fn single(target: NoiseTarget, relative: f64) -> Self {
        Self {
            epsilon: relative.abs(),
            targets: vec![SignedTarget {
                target,
                sign: if relative < 0.0 { -1.0 } else { 1.0 },
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.abs() < 1.0) {
            return Err(invalid("epsilon", format!("need |ε_a| < 1, got {}", self.epsilon)));
        }
        for t in &self.targets {
            if t.sign != 1.0 && t.sign != -1.0 {
                return Err(invalid("sign", format!("must be ±1, got {}", t.sign)));
            }
        }
        Ok(())
    }

    /// Multiplier `1 + Σ sign·ε_a` for `target`.
    pub fn factor(&self, target: NoiseTarget) -> f64 {
        1.0 + self
            .targets
            .iter()
            .filter(|t| t.target == target)
            .map(|t| t.sign * self.epsilon)
            .sum::<f64>()
    }
}

/// Perturbed copy of `config`. Gate-time offsets are not part of the
/// configuration; see [`apply_systematic_schedule`].
pub fn apply_systematic(config: &GateConfig, spec: &SystematicNoiseSpec) -> Result<GateConfig> {
    spec.validate()?;
    let mut out = config.clone();
    out.coupling *= spec.factor(NoiseTarget::Coupling);
    out.detuning *= spec.factor(NoiseTarget::Detuning);
    out.alpha *= spec.factor(NoiseTarget::Alpha);
    for (name, v) in [
        ("coupling", out.coupling),
        ("detuning", out.detuning),
        ("alpha", out.alpha),
        ("t_g", spec.factor(NoiseTarget::GateTime)),
    ] {
        if !(v > 0.0) {
            return Err(invalid("systematic", format!("perturbed {name} is {v}, must be > 0")));
        }
    }
    Ok(out)
}

/// Runs a schedule planned for the nominal parameters with the perturbed
/// coupling and detuning, stopped at `duration·(1 + δt_g/t_g)`.
pub fn apply_systematic_schedule(schedule: &Schedule, spec: &SystematicNoiseSpec) -> Result<Schedule> {
    spec.validate()?;
    schedule
        .scaled(spec.factor(NoiseTarget::Coupling), spec.factor(NoiseTarget::Detuning))
        .until(schedule.duration() * spec.factor(NoiseTarget::GateTime))
}
