//! Deterministic model of the docking pipeline: per-ligand cost, wave-based
//! kernel timing, transfers, and the worker/buffer/GPU event loop.

mod experiment;
mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{Bucket, ClusterError};
use crate::dataset::Ligand;
use crate::device::{DeviceDescriptor, DeviceError};

pub use experiment::{
    grid_throughput, run_experiment_heatmap, run_experiment_trace, trace_bucket_sizes, trace_point, write_heatmap_csv,
    write_trace_csv, HeatmapParams, HeatmapRow, TraceParams, TraceRow,
};
pub use pipeline::{
    simulate, ClassStats, EventKind, SimConfig, SimReport, TimelineEvent,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Analytic per-ligand cost `c0 + c1*A + c2*A*R` plus the latency-exposure
/// penalty applied to under-occupied SMs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub lambda: f64,
    /// Resident blocks per SM needed to hide stalls; the class occupancy when unset.
    pub w_hide: Option<u32>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            c0: 1000.0,
            c1: 50.0,
            c2: 20.0,
            lambda: 1.0,
            w_hide: None,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [("c0", self.c0), ("c1", self.c1), ("c2", self.c2), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("cost model {name} must be finite and >= 0")));
            }
        }
        if self.w_hide == Some(0) {
            return Err(SimError::Config("cost model w_hide must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn ligand_cost(cm: &CostModel, ligand: &Ligand) -> f64 {
    let a = ligand.n_atoms as f64;
    let r = ligand.n_rotamers as f64;
    cm.c0 + cm.c1 * a + cm.c2 * a * r
}

/// Stall penalty multiplier for an SM holding `k` resident blocks.
pub(crate) fn occupancy_penalty(lambda: f64, w_hide: u32, k: u32) -> f64 {
    let w = w_hide as f64;
    1.0 + lambda * (w - k as f64).max(0.0) / w
}

/// Kernel duration of a bucket under the wave model.
///
/// One block per ligand, in bucket order. Each wave holds up to `b` blocks
/// per SM, dealt round-robin over `sm_count` SMs. An SM with `k` blocks runs
/// for its slowest block times the stall penalty; a wave lasts as long as
/// its slowest SM and waves run back to back.
pub fn kernel_time(bucket: &Bucket, dev: &DeviceDescriptor, b: u32, cm: &CostModel) -> f64 {
    let costs: Vec<f64> = bucket.ligands.iter().map(|l| ligand_cost(cm, l)).collect();
    wave_time(&costs, dev.sm_count, b, cm.lambda, cm.w_hide.unwrap_or(b))
}

/// Wave-model duration for explicit per-block costs.
pub fn wave_time(costs: &[f64], sm_count: u32, b: u32, lambda: f64, w_hide: u32) -> f64 {
    assert!(sm_count >= 1 && b >= 1 && w_hide >= 1);
    let sms = sm_count as usize;
    let wave_cap = sms * b as usize;
    let mut slowest = vec![0.0f64; sms];
    let mut resident = vec![0u32; sms];
    let mut total = 0.0;
    for wave in costs.chunks(wave_cap) {
        slowest.fill(0.0);
        resident.fill(0);
        for (j, &c) in wave.iter().enumerate() {
            let sm = j % sms;
            resident[sm] += 1;
            slowest[sm] = slowest[sm].max(c);
        }
        let busy = sms.min(wave.len());
        let duration = (0..busy)
            .map(|sm| slowest[sm] * occupancy_penalty(lambda, w_hide, resident[sm]))
            .fold(0.0, f64::max);
        total += duration;
    }
    total
}

/// Host/device copy time of a bucket over a linear link.
pub fn transfer_time(bucket_size: u64, per_ligand_bytes: u64, bandwidth: f64) -> Result<f64, SimError> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(SimError::Config("transfer bandwidth must be positive".into()));
    }
    Ok((bucket_size as f64 * per_ligand_bytes as f64) / bandwidth)
}
