use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{kernel_time, transfer_time, CostModel, SimError};
use crate::clustering::Bucket;
use crate::device::{ClassProfile, DeviceDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_workers: u32,
    pub n_device_buffers: u32,
    pub n_gpus: u32,
    /// Bytes per time unit on the host/device link.
    pub transfer_bandwidth: f64,
    pub per_ligand_bytes: u64,
    #[serde(default)]
    pub cost_model: CostModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_workers: 2,
            n_device_buffers: 2,
            n_gpus: 1,
            transfer_bandwidth: 65536.0,
            per_ligand_bytes: 4096,
            cost_model: CostModel::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_workers == 0 || self.n_device_buffers == 0 || self.n_gpus == 0 {
            return Err(SimError::Config(
                "n_workers, n_device_buffers and n_gpus must be at least 1".into(),
            ));
        }
        if !(self.transfer_bandwidth.is_finite() && self.transfer_bandwidth > 0.0) {
            return Err(SimError::Config("transfer bandwidth must be positive".into()));
        }
        self.cost_model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TransferInStart,
    TransferInEnd,
    KernelStart,
    KernelEnd,
    TransferOutStart,
    TransferOutEnd,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::TransferInStart => "transfer_in_start",
            EventKind::TransferInEnd => "transfer_in_end",
            EventKind::KernelStart => "kernel_start",
            EventKind::KernelEnd => "kernel_end",
            EventKind::TransferOutStart => "transfer_out_start",
            EventKind::TransferOutEnd => "transfer_out_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineEvent {
    pub time: f64,
    pub event: EventKind,
    pub worker: u32,
    pub gpu: u32,
    pub bucket: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub max_atoms: u32,
    pub buckets: usize,
    pub mean_fill: f64,
    pub kernel_time_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub total_time: f64,
    pub n_ligands: u64,
    pub throughput: f64,
    pub per_class_stats: Vec<ClassStats>,
    pub timeline: Vec<TimelineEvent>,
}

impl SimReport {
    /// `time,event,worker,gpu,bucket`
    pub fn write_timeline_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,event,worker,gpu,bucket")?;
        for e in &self.timeline {
            writeln!(w, "{},{},{},{},{}", e.time, e.event.as_str(), e.worker, e.gpu, e.bucket)?;
        }
        w.flush()
    }
}

/// Completion events, ordered by (time, worker, phase).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    TransferIn,
    Kernel,
    TransferOut,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    worker: usize,
    phase: Phase,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.worker.cmp(&self.worker))
            .then_with(|| other.phase.cmp(&self.phase))
    }
}

#[derive(Debug, Default)]
struct Gpu {
    buffers_in_use: u32,
    kernel_busy: bool,
    lock_queue: VecDeque<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    bucket: usize,
    gpu: usize,
    t_in: f64,
    t_kernel: f64,
    t_out: f64,
}

struct Engine<'a> {
    buckets: &'a [Bucket],
    durations: Vec<(f64, f64, f64)>,
    n_buffers: u32,
    now: f64,
    next_bucket: usize,
    gpus: Vec<Gpu>,
    jobs: Vec<Option<Job>>,
    buffer_queue: VecDeque<usize>,
    heap: BinaryHeap<Pending>,
    timeline: Vec<TimelineEvent>,
}

impl Engine<'_> {
    fn log(&mut self, event: EventKind, worker: usize) {
        let job = self.jobs[worker].expect("worker has a job");
        self.timeline.push(TimelineEvent {
            time: self.now,
            event,
            worker: worker as u32,
            gpu: job.gpu as u32,
            bucket: self.buckets[job.bucket].seq,
        });
    }

    fn schedule(&mut self, delay: f64, worker: usize, phase: Phase) {
        self.heap.push(Pending {
            time: self.now + delay,
            worker,
            phase,
        });
    }

    /// Least outstanding buckets among GPUs with a free buffer; ties go to the lowest index.
    fn pick_gpu(&self) -> Option<usize> {
        self.gpus
            .iter()
            .enumerate()
            .filter(|(_, g)| g.buffers_in_use < self.n_buffers)
            .min_by_key(|(i, g)| (g.buffers_in_use, *i))
            .map(|(i, _)| i)
    }

    fn take_next_bucket(&mut self, worker: usize) {
        if self.next_bucket >= self.buckets.len() {
            return;
        }
        let bucket = self.next_bucket;
        self.next_bucket += 1;
        let (t_in, t_kernel, t_out) = self.durations[bucket];
        self.jobs[worker] = Some(Job {
            bucket,
            gpu: usize::MAX,
            t_in,
            t_kernel,
            t_out,
        });
        self.acquire_buffer(worker);
    }

    fn acquire_buffer(&mut self, worker: usize) {
        match self.pick_gpu() {
            Some(g) => {
                self.gpus[g].buffers_in_use += 1;
                let job = self.jobs[worker].as_mut().expect("worker has a job");
                job.gpu = g;
                let t_in = job.t_in;
                self.log(EventKind::TransferInStart, worker);
                self.schedule(t_in, worker, Phase::TransferIn);
            }
            None => self.buffer_queue.push_back(worker),
        }
    }

    fn start_kernel(&mut self, worker: usize) {
        let job = self.jobs[worker].expect("worker has a job");
        self.gpus[job.gpu].kernel_busy = true;
        self.log(EventKind::KernelStart, worker);
        self.schedule(job.t_kernel, worker, Phase::Kernel);
    }

    fn handle(&mut self, ev: Pending) {
        self.now = ev.time;
        let w = ev.worker;
        let job = self.jobs[w].expect("event for an idle worker");
        match ev.phase {
            Phase::TransferIn => {
                self.log(EventKind::TransferInEnd, w);
                let gpu = &mut self.gpus[job.gpu];
                if !gpu.kernel_busy && gpu.lock_queue.is_empty() {
                    self.start_kernel(w);
                } else {
                    gpu.lock_queue.push_back(w);
                }
            }
            Phase::Kernel => {
                self.log(EventKind::KernelEnd, w);
                self.gpus[job.gpu].kernel_busy = false;
                self.log(EventKind::TransferOutStart, w);
                self.schedule(job.t_out, w, Phase::TransferOut);
                if let Some(next) = self.gpus[job.gpu].lock_queue.pop_front() {
                    self.start_kernel(next);
                }
            }
            Phase::TransferOut => {
                self.log(EventKind::TransferOutEnd, w);
                self.gpus[job.gpu].buffers_in_use -= 1;
                self.jobs[w] = None;
                if let Some(waiting) = self.buffer_queue.pop_front() {
                    self.acquire_buffer(waiting);
                }
                self.take_next_bucket(w);
            }
        }
    }
}

/// Runs the worker pipeline over `buckets` in stream order.
///
/// Each worker takes the next bucket, grabs a free device buffer on the
/// least-loaded GPU, copies in, waits for exclusive use of that GPU's
/// kernel engine, runs the kernel, copies out and frees the buffer.
pub fn simulate(
    buckets: &[Bucket],
    dev: &DeviceDescriptor,
    classes: &[ClassProfile],
    config: &SimConfig,
) -> Result<SimReport, SimError> {
    config.validate()?;
    let by_atoms: HashMap<u32, &ClassProfile> =
        classes.iter().map(|p| (p.class.max_atoms, p)).collect();
    let buffer_bytes = dev.global_mem_bytes / config.n_device_buffers as u64;
    let cm = &config.cost_model;

    let mut durations = Vec::with_capacity(buckets.len());
    let mut stats: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
    let mut n_ligands = 0u64;
    for bucket in buckets {
        let profile = by_atoms.get(&bucket.kernel_class.max_atoms).ok_or_else(|| {
            SimError::Config(format!(
                "bucket {} uses kernel class {} which is not configured",
                bucket.seq, bucket.kernel_class.max_atoms
            ))
        })?;
        let size = bucket.len() as u64;
        let bytes = size as u128 * config.per_ligand_bytes as u128;
        if bytes > buffer_bytes as u128 {
            return Err(SimError::Config(format!(
                "bucket {} needs {bytes} bytes but a device buffer holds {buffer_bytes}",
                bucket.seq
            )));
        }
        let t_move = transfer_time(size, config.per_ligand_bytes, config.transfer_bandwidth)?;
        let t_kernel = if bucket.is_empty() {
            0.0
        } else {
            kernel_time(bucket, dev, profile.active_blocks, cm)
        };
        durations.push((t_move, t_kernel, t_move));
        n_ligands += size;
        let s = stats.entry(profile.class.max_atoms).or_default();
        s.0 += 1;
        s.1 += size as f64 / bucket.capacity.max(1) as f64;
        s.2 += t_kernel;
    }

    let mut engine = Engine {
        buckets,
        durations,
        n_buffers: config.n_device_buffers,
        now: 0.0,
        next_bucket: 0,
        gpus: (0..config.n_gpus).map(|_| Gpu::default()).collect(),
        jobs: vec![None; config.n_workers as usize],
        buffer_queue: VecDeque::new(),
        heap: BinaryHeap::new(),
        timeline: Vec::with_capacity(buckets.len() * 6),
    };
    for w in 0..config.n_workers as usize {
        engine.take_next_bucket(w);
    }
    while let Some(ev) = engine.heap.pop() {
        engine.handle(ev);
    }
    debug_assert!(engine.jobs.iter().all(Option::is_none));

    let total_time = engine.now;
    let throughput = if total_time > 0.0 {
        n_ligands as f64 / total_time
    } else {
        0.0
    };
    Ok(SimReport {
        total_time,
        n_ligands,
        throughput,
        per_class_stats: stats
            .into_iter()
            .map(|(max_atoms, (buckets, fill, kt))| ClassStats {
                max_atoms,
                buckets,
                mean_fill: fill / buckets as f64,
                kernel_time_sum: kt,
            })
            .collect(),
        timeline: engine.timeline,
    })
}
