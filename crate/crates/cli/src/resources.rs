//! Memory accounting for planned simulations.

use serde::Serialize;

use crate::error::{CliError, CliResult};

const COMPLEX_BYTES: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    StateVector,
    DensityMatrix,
}

/// Cost of one simulation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointEstimate {
    pub dims: Vec<usize>,
    pub storage: Storage,
    /// Bytes of one state (`D` or `D²` complex entries).
    pub bytes: u64,
    /// Rough number of integrator steps.
    pub steps: u64,
}

impl PointEstimate {
    pub fn new(dims: Vec<usize>, storage: Storage, steps: u64) -> Self {
        let bytes = storage_bytes(&dims, storage);
        Self {
            dims,
            storage,
            bytes,
            steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceEstimate {
    pub points: usize,
    pub peak_bytes: u64,
    pub peak_dims: Vec<usize>,
    pub peak_storage: Option<Storage>,
    pub total_steps: u64,
    pub ceiling_bytes: u64,
}

impl ResourceEstimate {
    pub fn from_points(points: &[PointEstimate], ceiling_bytes: u64) -> Self {
        let peak = points.iter().max_by_key(|p| p.bytes);
        Self {
            points: points.len(),
            peak_bytes: peak.map_or(0, |p| p.bytes),
            peak_dims: peak.map_or_else(Vec::new, |p| p.dims.clone()),
            peak_storage: peak.map(|p| p.storage),
            total_steps: points.iter().fold(0u64, |acc, p| acc.saturating_add(p.steps)),
            ceiling_bytes,
        }
    }

    pub fn allowed(&self) -> bool {
        self.peak_bytes <= self.ceiling_bytes
    }

    /// Refusal with a required-bytes report when over the ceiling.
    pub fn check(&self) -> CliResult<()> {
        if self.allowed() {
            return Ok(());
        }
        let storage = match self.peak_storage {
            Some(Storage::DensityMatrix) => "density-matrix",
            _ => "state-vector",
        };
        Err(CliError::Resource(format!(
            "{storage} run on dims {:?} needs {} bytes ({:.2} GiB) per state, above the ceiling of {} bytes ({:.2} GiB)",
            self.peak_dims,
            self.peak_bytes,
            gib(self.peak_bytes),
            self.ceiling_bytes,
            gib(self.ceiling_bytes),
        )))
    }
}

pub fn gib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

/// Bytes for one state on the tensor product of `dims`.
pub fn storage_bytes(dims: &[usize], storage: Storage) -> u64 {
    let d = dims.iter().fold(1u64, |acc, &n| acc.saturating_mul(n as u64));
    let entries = match storage {
        Storage::StateVector => d,
        Storage::DensityMatrix => d.saturating_mul(d),
    };
    entries.saturating_mul(COMPLEX_BYTES)
}
