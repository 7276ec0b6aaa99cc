//! Config-driven experiment commands behind the `bucketsim` CLI.
//!
//! Every command is a pure function of its config and input files. Data goes
//! to files under the output directory (and the bucketize summary to the
//! given writer); progress goes through `log`.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{write_manifest, Bucketizer, ClusterError, ClusterGrid, FillStats};
use crate::dataset::{self, CountRange, DatasetError, Ligand};
use crate::device::{ligand_footprint, DeviceDescriptor, DeviceError, KernelClassTable};
use crate::simengine::{
    run_experiment_heatmap, run_experiment_trace, trace_bucket_sizes, trace_point,
    write_heatmap_csv, write_trace_csv, CostModel, HeatmapParams, SimConfig, SimError, TraceParams,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(DatasetError),
    #[error("{} ligand(s) overflow the cluster grid: {}", .0.len(), .0.join(", "))]
    Overflow(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    /// Process exit code: 2 config, 3 parse, 4 overflow, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } => 1,
            HarnessError::Config(_) => 2,
            HarnessError::Parse(_) => 3,
            HarnessError::Overflow(_) => 4,
        }
    }
}

impl From<DeviceError> for HarnessError {
    fn from(e: DeviceError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<DatasetError> for HarnessError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Argument(m) => HarnessError::Config(m),
            other => HarnessError::Parse(other),
        }
    }
}

impl From<ClusterError> for HarnessError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Overflow { id, .. } => HarnessError::Overflow(vec![id]),
            ClusterError::Argument(m) => HarnessError::Config(m),
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => HarnessError::Config(m),
            SimError::Device(d) => d.into(),
            SimError::Cluster(c) => c.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub n_workers: u32,
    pub n_device_buffers: u32,
    pub n_gpus: u32,
    pub transfer_bandwidth: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSettings {
            n_workers: d.n_workers,
            n_device_buffers: d.n_device_buffers,
            n_gpus: d.n_gpus,
            transfer_bandwidth: d.transfer_bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FootprintSettings {
    pub n_docking_sites: u64,
    pub base_bytes: u64,
    pub per_site_bytes: u64,
}

impl Default for FootprintSettings {
    fn default() -> Self {
        FootprintSettings {
            n_docking_sites: 12,
            base_bytes: 1024,
            per_site_bytes: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub n: u64,
    pub atoms: CountRange,
    pub rotamers: CountRange,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            n: 100_000,
            atoms: CountRange::new(20, 120),
            rotamers: CountRange::new(0, 20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSettings {
    pub ligand: Ligand,
    pub replicas: u64,
    pub sweep: Vec<u32>,
    pub include_memory_max: bool,
}

impl Default for TraceSettings {
    fn default() -> Self {
        TraceSettings {
            ligand: Ligand {
                id: "small".into(),
                n_atoms: 17,
                n_rotamers: 4,
            },
            replicas: 50_000,
            sweep: (1..=12).collect(),
            include_memory_max: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub atom_clusters: Vec<u32>,
    pub rotamer_clusters: Vec<u32>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            atom_clusters: (1..=6).collect(),
            rotamer_clusters: vec![1, 2, 3, 4, 5, 6, 7, 8, 12, 16, 23],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketizeSettings {
    pub atom_clusters: u32,
    pub rotamer_clusters: u32,
}

impl Default for BucketizeSettings {
    fn default() -> Self {
        BucketizeSettings {
            atom_clusters: 6,
            rotamer_clusters: 23,
        }
    }
}

/// Everything a run depends on. Relative paths resolve against the
/// directory of the config file they were loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Device descriptor JSON; the built-in A100 when unset.
    pub device: Option<PathBuf>,
    /// Kernel class table JSON; the built-in native table when unset.
    pub kernel_classes: Option<PathBuf>,
    pub cost_model: CostModel,
    pub sim: SimSettings,
    pub footprint: FootprintSettings,
    pub dataset: DatasetSettings,
    pub seed: u64,
    pub trace: TraceSettings,
    pub heatmap: GridSettings,
    pub bucketize: BucketizeSettings,
    pub output_dir: PathBuf,
    /// Also write per-point event timelines for the trace sweep.
    pub timeline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            device: None,
            kernel_classes: None,
            cost_model: CostModel::default(),
            sim: SimSettings::default(),
            footprint: FootprintSettings::default(),
            dataset: DatasetSettings::default(),
            seed: 2023,
            trace: TraceSettings::default(),
            heatmap: GridSettings::default(),
            bucketize: BucketizeSettings::default(),
            output_dir: PathBuf::from("out"),
            timeline: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.device.as_mut().map(resolve);
        cfg.kernel_classes.as_mut().map(resolve);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn device_descriptor(&self) -> Result<DeviceDescriptor, HarnessError> {
        match &self.device {
            Some(p) => Ok(DeviceDescriptor::load(p)?),
            None => Ok(DeviceDescriptor::a100()),
        }
    }

    pub fn class_table(&self) -> Result<KernelClassTable, HarnessError> {
        match &self.kernel_classes {
            Some(p) => Ok(KernelClassTable::load(p)?),
            None => Ok(KernelClassTable::a100_native()),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_workers: self.sim.n_workers,
            n_device_buffers: self.sim.n_device_buffers,
            n_gpus: self.sim.n_gpus,
            transfer_bandwidth: self.sim.transfer_bandwidth,
            per_ligand_bytes: ligand_footprint(
                self.footprint.n_docking_sites,
                self.footprint.base_bytes,
                self.footprint.per_site_bytes,
            ),
            cost_model: self.cost_model,
        }
    }

    fn prepare_output(&self) -> Result<(), HarnessError> {
        fs::create_dir_all(&self.output_dir).map_err(io_err(&self.output_dir))?;
        let path = self.output_dir.join("run_config.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn read_ligands(path: &Path) -> Result<Vec<Ligand>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    dataset::parse_ligand_records(BufReader::new(file))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            DatasetError::Io(source) => HarnessError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => HarnessError::Parse(other),
        })
}

fn synthetic(cfg: &RunConfig) -> Result<dataset::SyntheticStream, HarnessError> {
    Ok(dataset::generate_synthetic(
        cfg.dataset.n,
        cfg.dataset.atoms,
        cfg.dataset.rotamers,
        cfg.seed,
    )?)
}

/// Writes `<out>/ligands.csv` from the configured synthetic dataset.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    let stream = synthetic(cfg)?;
    cfg.prepare_output()?;
    let path = cfg.output_dir.join("ligands.csv");
    log::info!("writing {} ligands to {}", cfg.dataset.n, path.display());
    dataset::write_ligand_records(create(&path)?, stream).map_err(io_err(&path))?;
    Ok(path)
}

/// Bucketizes a record file into `<out>/buckets.csv` and writes fill
/// statistics to `summary`.
pub fn cmd_bucketize<W: Write>(
    cfg: &RunConfig,
    input: &Path,
    summary: W,
) -> Result<FillStats, HarnessError> {
    let dev = cfg.device_descriptor()?;
    let table = cfg.class_table()?;
    let ligands = read_ligands(input)?;
    let grid = ClusterGrid::from_counts(
        cfg.bucketize.atom_clusters,
        cfg.bucketize.rotamer_clusters,
        dev.warp_size,
        cfg.dataset.atoms.max,
        cfg.dataset.rotamers.max,
    )?;
    let overflow: Vec<String> = ligands
        .iter()
        .filter(|l| grid.assign(l).is_err())
        .map(|l| l.id.clone())
        .collect();
    if !overflow.is_empty() {
        return Err(HarnessError::Overflow(overflow));
    }
    let classes = grid
        .atom_boundaries()
        .iter()
        .map(|&a| table.profile(&dev, a).map(|p| (p.class, p.capacity)))
        .collect::<Result<Vec<_>, _>>()?;
    let buckets = Bucketizer::new(grid, classes)?.bucketize_all(ligands)?;

    cfg.prepare_output()?;
    let path = cfg.output_dir.join("buckets.csv");
    write_manifest(create(&path)?, &buckets).map_err(io_err(&path))?;
    let stats = FillStats::from_buckets(&buckets);
    stats
        .write_summary(summary)
        .map_err(io_err(Path::new("<summary>")))?;
    log::info!(
        "{} buckets ({} full), manifest at {}",
        stats.total_buckets,
        stats.full_buckets,
        path.display()
    );
    Ok(stats)
}

/// Bucket-size sweep over a replicated ligand; writes `<out>/trace.csv`.
pub fn cmd_trace(cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    let dev = cfg.device_descriptor()?;
    let table = cfg.class_table()?;
    let sim = cfg.sim_config();
    let params = TraceParams {
        ligand: cfg.trace.ligand.clone(),
        replicas: cfg.trace.replicas,
        sweep: cfg.trace.sweep.clone(),
        include_memory_max: cfg.trace.include_memory_max,
    };
    let rows = run_experiment_trace(&params, &dev, &table, &sim)?;
    cfg.prepare_output()?;
    let path = cfg.output_dir.join("trace.csv");
    write_trace_csv(create(&path)?, &rows).map_err(io_err(&path))?;
    if cfg.timeline {
        for size in trace_bucket_sizes(&params, &dev, &table, &sim)? {
            let report = trace_point(&params, &dev, &table, &sim, size)?;
            let tpath = cfg.output_dir.join(format!("timeline_{size}.csv"));
            report
                .write_timeline_csv(create(&tpath)?)
                .map_err(io_err(&tpath))?;
        }
    }
    log::info!("trace written to {}", path.display());
    Ok(path)
}

/// Cluster-grid speedup matrix; writes `<out>/heatmap.csv`. Uses the
/// records in `input` when given, otherwise the configured synthetic set.
pub fn cmd_heatmap(cfg: &RunConfig, input: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let dev = cfg.device_descriptor()?;
    let table = cfg.class_table()?;
    let sim = cfg.sim_config();
    let ligands = match input {
        Some(p) => read_ligands(p)?,
        None => synthetic(cfg)?.collect(),
    };
    let params = HeatmapParams {
        atom_clusters: cfg.heatmap.atom_clusters.clone(),
        rotamer_clusters: cfg.heatmap.rotamer_clusters.clone(),
        max_atoms: cfg.dataset.atoms.max,
        max_rotamers: cfg.dataset.rotamers.max,
    };
    log::info!(
        "heatmap over {} ligands, {} grid points",
        ligands.len(),
        params.atom_clusters.len() * params.rotamer_clusters.len()
    );
    let rows = run_experiment_heatmap(&ligands, &params, &dev, &table, &sim)?;
    cfg.prepare_output()?;
    let path = cfg.output_dir.join("heatmap.csv");
    write_heatmap_csv(create(&path)?, &rows).map_err(io_err(&path))?;
    log::info!("heatmap written to {}", path.display());
    Ok(path)
}

/// Runs `f` on a pool of `jobs` threads (0 = one per core).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(pool.install(f))
}
