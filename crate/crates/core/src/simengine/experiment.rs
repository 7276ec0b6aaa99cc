//! Bucket-size sweep and cluster-grid speedup experiments.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate, SimConfig, SimError, SimReport};
use crate::clustering::{Bucketizer, ClusterGrid};
use crate::dataset::{replicate, Ligand};
use crate::device::{max_bucket_multiple, ClassProfile, DeviceDescriptor, KernelClassTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub ligand: Ligand,
    pub replicas: u64,
    /// Sweep points `k`; bucket size is `ceil(k * l / 3)`.
    pub sweep: Vec<u32>,
    /// Append the largest bucket that fits in device memory.
    pub include_memory_max: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub bucket_size: u64,
    pub throughput: f64,
}

/// Kernel class sized for one ligand: the warp multiple at or above its atom count.
fn class_for_ligand(
    dev: &DeviceDescriptor,
    table: &KernelClassTable,
    ligand: &Ligand,
) -> Result<ClassProfile, SimError> {
    let ws = dev.warp_size;
    let bound = ligand.n_atoms.div_ceil(ws) * ws;
    Ok(table.profile(dev, bound)?)
}

/// Bucket sizes swept by the trace experiment, strictly increasing.
pub fn trace_bucket_sizes(
    params: &TraceParams,
    dev: &DeviceDescriptor,
    table: &KernelClassTable,
    config: &SimConfig,
) -> Result<Vec<u64>, SimError> {
    if params.sweep.is_empty() || params.sweep.contains(&0) {
        return Err(SimError::Config("trace sweep must be nonempty with k >= 1".into()));
    }
    let l = class_for_ligand(dev, table, &params.ligand)?.capacity;
    let mut sizes: Vec<u64> = params.sweep.iter().map(|&k| (k as u64 * l).div_ceil(3)).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if params.include_memory_max {
        let k = max_bucket_multiple(
            dev,
            l,
            config.per_ligand_bytes,
            config.n_device_buffers as u64,
        );
        let all = k * l;
        if all > *sizes.last().unwrap() {
            sizes.push(all);
        }
    }
    Ok(sizes)
}

/// Throughput of a homogeneous replicated stream at each swept bucket size.
pub fn run_experiment_trace(
    params: &TraceParams,
    dev: &DeviceDescriptor,
    table: &KernelClassTable,
    config: &SimConfig,
) -> Result<Vec<TraceRow>, SimError> {
    let sizes = trace_bucket_sizes(params, dev, table, config)?;
    sizes
        .par_iter()
        .map(|&size| {
            let report = trace_point(params, dev, table, config, size)?;
            log::info!("trace: bucket_size={size} throughput={}", report.throughput);
            Ok(TraceRow {
                bucket_size: size,
                throughput: report.throughput,
            })
        })
        .collect()
}

/// Full simulation report for the replicated stream at one bucket size.
pub fn trace_point(
    params: &TraceParams,
    dev: &DeviceDescriptor,
    table: &KernelClassTable,
    config: &SimConfig,
    bucket_size: u64,
) -> Result<SimReport, SimError> {
    let profile = class_for_ligand(dev, table, &params.ligand)?;
    let grid = ClusterGrid::new(vec![profile.class.max_atoms], vec![params.ligand.n_rotamers])?;
    let mut bz = Bucketizer::new(grid, vec![(profile.class, bucket_size)])?;
    let buckets = bz.bucketize_all(replicate(&params.ligand, params.replicas))?;
    simulate(&buckets, dev, &[profile], config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapParams {
    pub atom_clusters: Vec<u32>,
    pub rotamer_clusters: Vec<u32>,
    /// Upper bounds of the grid; ligands beyond them are an error.
    pub max_atoms: u32,
    pub max_rotamers: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapRow {
    pub atom_clusters: u32,
    pub rotamer_clusters: u32,
    pub throughput: f64,
    pub speedup: f64,
}

/// Throughput for one grid, each atom class with its own kernel class and capacity.
pub fn grid_throughput(
    dataset: &[Ligand],
    atom_clusters: u32,
    rotamer_clusters: u32,
    params: &HeatmapParams,
    dev: &DeviceDescriptor,
    table: &KernelClassTable,
    config: &SimConfig,
) -> Result<f64, SimError> {
    let grid = ClusterGrid::from_counts(
        atom_clusters,
        rotamer_clusters,
        dev.warp_size,
        params.max_atoms,
        params.max_rotamers,
    )?;
    let profiles = grid
        .atom_boundaries()
        .iter()
        .map(|&a| table.profile(dev, a))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = profiles.iter().map(|p| (p.class, p.capacity)).collect();
    let mut bz = Bucketizer::new(grid, classes)?;
    let buckets = bz.bucketize_all(dataset.iter().cloned())?;
    Ok(simulate(&buckets, dev, &profiles, config)?.throughput)
}

/// Speedup of every `(atom, rotamer)` cluster-count pair over the 1x1 grid.
/// Rows are atoms-major in the order given.
pub fn run_experiment_heatmap(
    dataset: &[Ligand],
    params: &HeatmapParams,
    dev: &DeviceDescriptor,
    table: &KernelClassTable,
    config: &SimConfig,
) -> Result<Vec<HeatmapRow>, SimError> {
    if params.atom_clusters.is_empty()
        || params.rotamer_clusters.is_empty()
        || params.atom_clusters.contains(&0)
        || params.rotamer_clusters.contains(&0)
    {
        return Err(SimError::Config("cluster-count lists must be nonempty and >= 1".into()));
    }
    let points: Vec<(u32, u32)> = params
        .atom_clusters
        .iter()
        .flat_map(|&a| params.rotamer_clusters.iter().map(move |&r| (a, r)))
        .collect();
    let baseline = grid_throughput(dataset, 1, 1, params, dev, table, config)?;
    let rows = points
        .par_iter()
        .map(|&(a, r)| {
            let throughput = if (a, r) == (1, 1) {
                baseline
            } else {
                grid_throughput(dataset, a, r, params, dev, table, config)?
            };
            log::info!("heatmap: atoms={a} rotamers={r} throughput={throughput}");
            Ok(HeatmapRow {
                atom_clusters: a,
                rotamer_clusters: r,
                throughput,
                speedup: if baseline > 0.0 { throughput / baseline } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> io::Result<()> {
    writeln!(w, "bucket_size,throughput")?;
    for r in rows {
        writeln!(w, "{},{:e}", r.bucket_size, r.throughput)?;
    }
    w.flush()
}

pub fn write_heatmap_csv<W: Write>(mut w: W, rows: &[HeatmapRow]) -> io::Result<()> {
    writeln!(w, "atom_clusters,rotamer_clusters,speedup")?;
    for r in rows {
        writeln!(w, "{},{},{:.6}", r.atom_clusters, r.rotamer_clusters, r.speedup)?;
    }
    w.flush()
}
