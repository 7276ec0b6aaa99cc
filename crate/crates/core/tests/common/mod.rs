#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use bucketsim::clustering::Bucket;
use bucketsim::simengine::{EventKind, SimReport};

/// Brute-force wave model: deals blocks one at a time into explicit
/// per-SM lists, opening a new wave when every SM holds `b` blocks.
pub fn wave_oracle(costs: &[f64], sm_count: u32, b: u32, lambda: f64, w_hide: u32) -> f64 {
    let sms = sm_count as usize;
    let per_wave = sms * b as usize;
    let mut waves: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = vec![Vec::new(); sms];
    let mut cursor = 0;
    let mut placed = 0;
    for &c in costs {
        if placed == per_wave {
            waves.push(std::mem::replace(&mut current, vec![Vec::new(); sms]));
            cursor = 0;
            placed = 0;
        }
        current[cursor].push(c);
        cursor = (cursor + 1) % sms;
        placed += 1;
    }
    if placed > 0 {
        waves.push(current);
    }

    let w = w_hide as f64;
    let mut total = 0.0;
    for wave in &waves {
        let mut longest = 0.0f64;
        for blocks in wave.iter().filter(|v| !v.is_empty()) {
            let k = blocks.len() as u32;
            let slowest = blocks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let excess = w_hide.saturating_sub(k) as f64;
            let d = slowest * (1.0 + lambda * excess / w);
            if d > longest {
                longest = d;
            }
        }
        total += longest;
    }
    total
}

/// Checks mutual exclusion, per-bucket event order, buffer and worker
/// limits, and ligand conservation. Returns a description of the first
/// violation.
pub fn check_pipeline(
    report: &SimReport,
    buckets: &[Bucket],
    n_buffers: u32,
) -> Result<(), String> {
    let mut per_bucket: BTreeMap<u64, Vec<(f64, EventKind, u32, u32)>> = BTreeMap::new();
    for e in &report.timeline {
        per_bucket
            .entry(e.bucket)
            .or_default()
            .push((e.time, e.event, e.worker, e.gpu));
    }
    if per_bucket.len() != buckets.len() {
        return Err(format!(
            "{} buckets in timeline, {} submitted",
            per_bucket.len(),
            buckets.len()
        ));
    }
    let order = [
        EventKind::TransferInStart,
        EventKind::TransferInEnd,
        EventKind::KernelStart,
        EventKind::KernelEnd,
        EventKind::TransferOutStart,
        EventKind::TransferOutEnd,
    ];
    let mut kernels: HashMap<u32, Vec<(f64, f64)>> = HashMap::new();
    let mut residency: HashMap<u32, Vec<(f64, f64)>> = HashMap::new();
    let mut worker_busy: HashMap<u32, Vec<(f64, f64)>> = HashMap::new();
    for (seq, events) in &per_bucket {
        let kinds: Vec<EventKind> = events.iter().map(|e| e.1).collect();
        if kinds != order {
            return Err(format!("bucket {seq}: events {kinds:?}"));
        }
        if events.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(format!("bucket {seq}: time goes backwards"));
        }
        let (worker, gpu) = (events[0].2, events[0].3);
        if events.iter().any(|e| e.2 != worker || e.3 != gpu) {
            return Err(format!("bucket {seq}: changes worker or gpu"));
        }
        kernels.entry(gpu).or_default().push((events[2].0, events[3].0));
        residency.entry(gpu).or_default().push((events[0].0, events[5].0));
        worker_busy.entry(worker).or_default().push((events[0].0, events[5].0));
    }
    for (gpu, mut iv) in kernels {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = iv.windows(2).find(|w| w[0].1 > w[1].0) {
            return Err(format!("gpu {gpu}: kernels overlap {:?} {:?}", w[0], w[1]));
        }
    }
    for (worker, mut iv) in worker_busy {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        if iv.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(format!("worker {worker} holds two buckets at once"));
        }
    }
    for (gpu, iv) in residency {
        // buffers in use at each acquisition instant
        for &(t, _) in &iv {
            let held = iv.iter().filter(|&&(s, e)| s <= t && t < e).count();
            if held > n_buffers as usize {
                return Err(format!("gpu {gpu}: {held} buffers in use at {t}"));
            }
        }
    }

    let submitted: usize = buckets.iter().map(|b| b.len()).sum();
    if report.n_ligands as usize != submitted {
        return Err(format!("n_ligands {} != {submitted}", report.n_ligands));
    }
    Ok(())
}

/// Every ligand id of `expected` appears exactly once across `buckets`.
pub fn check_conservation(expected: &[String], buckets: &[Bucket]) -> Result<(), String> {
    let mut seen = HashSet::new();
    for b in buckets {
        for l in &b.ligands {
            if !seen.insert(l.id.clone()) {
                return Err(format!("ligand {} appears twice", l.id));
            }
        }
    }
    if seen.len() != expected.len() || !expected.iter().all(|id| seen.contains(id)) {
        return Err(format!("{} ids bucketed, {} expected", seen.len(), expected.len()));
    }
    Ok(())
}
