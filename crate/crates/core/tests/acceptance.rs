//! Acceptance suite. Prints one line per criterion and exits nonzero if any fails.

mod common;

use std::cell::Cell;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bucketsim::clustering::{Bucketizer, ClusterGrid};
use bucketsim::dataset::{generate_synthetic, CountRange, Ligand};
use bucketsim::device::{
    active_blocks_per_sm, bucket_capacity_native, bucket_capacity_portable, ClassProfile,
    DeviceDescriptor, KernelApi, KernelClassDescriptor, KernelClassTable,
};
use bucketsim::harness::{self, RunConfig};
use bucketsim::simengine::{
    grid_throughput, kernel_time, run_experiment_heatmap, run_experiment_trace, simulate, CostModel,
    HeatmapParams, SimConfig, TraceParams,
};

use common::{check_conservation, check_pipeline, wave_oracle};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn FnMut() -> Outcome + 'a>;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn capacities(table: &KernelClassTable, dev: &DeviceDescriptor) -> Result<Vec<u64>, String> {
    let t = 32;
    table
        .classes
        .iter()
        .map(|kc| {
            let b = active_blocks_per_sm(dev, kc).map_err(|e| e.to_string())?;
            match table.api {
                KernelApi::Native => bucket_capacity_native(b, dev.sm_count, t, dev.warp_size),
                KernelApi::Portable => bucket_capacity_portable(b * t, dev.sm_count, t, dev.warp_size),
            }
            .map_err(|e| e.to_string())
        })
        .collect()
}

fn load_tables() -> Result<(DeviceDescriptor, KernelClassTable, KernelClassTable), String> {
    let dev = DeviceDescriptor::load(&fixture("a100.json")).map_err(|e| e.to_string())?;
    let cuda = KernelClassTable::load(&fixture("a100_native.json")).map_err(|e| e.to_string())?;
    let sycl = KernelClassTable::load(&fixture("a100_portable.json")).map_err(|e| e.to_string())?;
    Ok((dev, cuda, sycl))
}

fn capacity_exactness() -> Outcome {
    let (dev, cuda, sycl) = load_tables()?;
    let native = capacities(&cuda, &dev)?;
    let portable = capacities(&sycl, &dev)?;
    if native != [1728, 2160, 1728] || portable != [1296, 864, 864] {
        return Err(format!("native {native:?}, portable {portable:?}"));
    }
    Ok(format!("native {native:?}, portable {portable:?}"))
}

fn portable_below_native() -> Outcome {
    let (dev, cuda, sycl) = load_tables()?;
    let native = capacities(&cuda, &dev)?;
    let portable = capacities(&sycl, &dev)?;
    for ((kc, n), p) in cuda.classes.iter().zip(&native).zip(&portable) {
        if p >= n {
            return Err(format!("{}-atom class: portable {p} >= native {n}", kc.max_atoms));
        }
    }
    Ok(format!("{portable:?} < {native:?}"))
}

fn sawtooth() -> Outcome {
    let params = TraceParams {
        ligand: Ligand::new("small", 17, 4).map_err(|e| e.to_string())?,
        replicas: 50_000,
        sweep: (1..=12).collect(),
        include_memory_max: false,
    };
    let cfg = RunConfig::default();
    let rows = run_experiment_trace(
        &params,
        &DeviceDescriptor::a100(),
        &KernelClassTable::a100_native(),
        &cfg.sim_config(),
    )
    .map_err(|e| e.to_string())?;
    if rows.len() != 12 {
        return Err(format!("{} points, expected 12", rows.len()));
    }
    let thr: Vec<f64> = rows.iter().map(|r| r.throughput).collect();
    for k in [3usize, 6, 9, 12] {
        let i = k - 1;
        let left = thr[i - 1];
        let right = thr.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if !(thr[i] > left && thr[i] > right) {
            return Err(format!("k={k} is not a local maximum: {thr:?}"));
        }
    }
    if thr[2] <= thr[3] {
        return Err(format!("thr(3)={} <= thr(4)={}", thr[2], thr[3]));
    }
    Ok(format!("peaks at k=3,6,9,12; thr(3)/thr(4)={:.3}", thr[2] / thr[3]))
}

fn heatmap_setup(n: u64) -> Result<(Vec<Ligand>, HeatmapParams), String> {
    let ligands = generate_synthetic(n, CountRange::new(20, 120), CountRange::new(0, 20), 2023)
        .map_err(|e| e.to_string())?
        .collect();
    let params = HeatmapParams {
        atom_clusters: (1..=6).collect(),
        rotamer_clusters: (1..=8).collect(),
        max_atoms: 120,
        max_rotamers: 20,
    };
    Ok((ligands, params))
}

fn finest_speedup(ligands: &[Ligand], params: &HeatmapParams) -> Result<f64, String> {
    let dev = DeviceDescriptor::a100();
    let table = KernelClassTable::a100_native();
    let sim = RunConfig::default().sim_config();
    let base = grid_throughput(ligands, 1, 1, params, &dev, &table, &sim).map_err(|e| e.to_string())?;
    let fine = grid_throughput(ligands, 6, 23, params, &dev, &table, &sim).map_err(|e| e.to_string())?;
    Ok(fine / base)
}

fn clustering_speedup(finest_100k: &Cell<Option<f64>>) -> Outcome {
    let (ligands, params) = heatmap_setup(100_000)?;
    let rows = run_experiment_heatmap(
        &ligands,
        &params,
        &DeviceDescriptor::a100(),
        &KernelClassTable::a100_native(),
        &RunConfig::default().sim_config(),
    )
    .map_err(|e| e.to_string())?;
    let s = |a: u32, r: u32| rows[((a - 1) * 8 + (r - 1)) as usize].speedup;
    let mut dips = Vec::new();
    for a in 1..=6 {
        for r in 1..=8 {
            if a < 6 && s(a + 1, r) < 0.95 * s(a, r) {
                dips.push(format!("({a},{r})->({},{r})", a + 1));
            }
            if r < 8 && s(a, r + 1) < 0.95 * s(a, r) {
                dips.push(format!("({a},{r})->({a},{})", r + 1));
            }
        }
    }
    let finest = finest_speedup(&ligands, &params)?;
    finest_100k.set(Some(finest));
    if finest < 1.5 {
        return Err(format!("speedup(6,23)={finest:.3} < 1.5"));
    }
    if !dips.is_empty() {
        return Err(format!("drops beyond 5%: {}", dips.join(" ")));
    }
    Ok(format!("speedup(6,23)={finest:.3}, monotone within 5% over 6x8"))
}

fn tail_effect(finest_100k: Option<f64>) -> Outcome {
    let (ligands, params) = heatmap_setup(5_000)?;
    let big = match finest_100k {
        Some(v) => v,
        None => finest_speedup(&heatmap_setup(100_000)?.0, &params)?,
    };
    let small = finest_speedup(&ligands, &params)?;
    if small < big {
        Ok(format!("5k {small:.3} < 100k {big:.3}"))
    } else {
        Err(format!("5k {small:.3} >= 100k {big:.3}"))
    }
}

fn wave_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dev0 = DeviceDescriptor::a100();
    for case in 0..1000 {
        let n: u32 = rng.gen_range(1..=64);
        let ligands: Vec<Ligand> = (0..n)
            .map(|i| Ligand::new(format!("w{i}"), rng.gen_range(1..=120), rng.gen_range(0..=20)).unwrap())
            .collect();
        let mut dev = dev0.clone();
        dev.sm_count = rng.gen_range(1..=4);
        let b = rng.gen_range(1..=32);
        let cm = CostModel {
            c0: rng.gen_range(0.0..5000.0),
            c1: rng.gen_range(0.0..200.0),
            c2: rng.gen_range(0.0..100.0),
            lambda: rng.gen_range(0.0..4.0),
            w_hide: if rng.gen_bool(0.5) { Some(rng.gen_range(1..=32)) } else { None },
        };
        let kc = KernelClassDescriptor {
            max_atoms: 120,
            regs_per_thread: 64,
            shared_per_block: 0,
            block_size: 32,
            measured_active_blocks: None,
        };
        let grid = ClusterGrid::new(vec![120], vec![20]).unwrap();
        let mut bz = Bucketizer::new(grid, vec![(kc, 64)]).unwrap();
        let bucket = bz.bucketize_all(ligands).unwrap().remove(0);
        let costs: Vec<f64> = bucket
            .ligands
            .iter()
            .map(|l| cm.c0 + cm.c1 * l.n_atoms as f64 + cm.c2 * l.n_atoms as f64 * l.n_rotamers as f64)
            .collect();
        let got = kernel_time(&bucket, &dev, b, &cm);
        let want = wave_oracle(&costs, dev.sm_count, b, cm.lambda, cm.w_hide.unwrap_or(b));
        if got != want {
            return Err(format!("case {case}: kernel_time {got} != oracle {want}"));
        }
    }
    Ok("1000/1000 exact".into())
}

fn pipeline_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = 500;
    for case in 0..cases {
        let mut dev = DeviceDescriptor::a100();
        dev.sm_count = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=400);
        let ligands: Vec<Ligand> = (0..n)
            .map(|i| Ligand::new(format!("c{case}-{i}"), rng.gen_range(1..=120), rng.gen_range(0..=20)).unwrap())
            .collect();
        let grid = ClusterGrid::from_counts(rng.gen_range(1..=6), rng.gen_range(1..=23), 32, 120, 20)
            .map_err(|e| e.to_string())?;
        let profiles: Vec<ClassProfile> = grid
            .atom_boundaries()
            .iter()
            .map(|&a| {
                let kc = KernelClassDescriptor {
                    max_atoms: a,
                    regs_per_thread: 64,
                    shared_per_block: 0,
                    block_size: 32,
                    measured_active_blocks: Some(dev.sm_count * rng.gen_range(1..=6)),
                };
                ClassProfile::new(&dev, &kc, KernelApi::Native).unwrap()
            })
            .collect();
        let cap = rng.gen_range(1..=48);
        let classes = profiles.iter().map(|p| (p.class, cap)).collect();
        let buckets = Bucketizer::new(grid, classes)
            .and_then(|mut bz| bz.bucketize_all(ligands.clone()))
            .map_err(|e| e.to_string())?;
        let buffers = rng.gen_range(1..=4);
        let cfg = SimConfig {
            n_workers: rng.gen_range(1..=6),
            n_device_buffers: buffers,
            n_gpus: rng.gen_range(1..=4),
            transfer_bandwidth: rng.gen_range(1.0..1e6),
            per_ligand_bytes: rng.gen_range(1..=10_000),
            cost_model: CostModel::default(),
        };
        let report = simulate(&buckets, &dev, &profiles, &cfg).map_err(|e| e.to_string())?;
        let ids: Vec<String> = ligands.iter().map(|l| l.id.clone()).collect();
        check_conservation(&ids, &buckets).map_err(|e| format!("case {case}: {e}"))?;
        check_pipeline(&report, &buckets, buffers).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(format!("{cases} randomized simulations"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        output_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let run = |f: &dyn Fn() -> Result<std::path::PathBuf, harness::HarnessError>| {
        f().map_err(|e| e.to_string())
            .and_then(|p| std::fs::read(p).map_err(|e| e.to_string()))
    };
    let trace_a = run(&|| harness::cmd_trace(&cfg))?;
    let trace_b = run(&|| harness::cmd_trace(&cfg))?;
    let heat_a = run(&|| harness::cmd_heatmap(&cfg, None))?;
    let heat_b = run(&|| harness::cmd_heatmap(&cfg, None))?;
    if trace_a != trace_b {
        return Err("trace.csv differs between runs".into());
    }
    if heat_a != heat_b {
        return Err("heatmap.csv differs between runs".into());
    }
    Ok(format!("trace {} bytes, heatmap {} bytes identical", trace_a.len(), heat_a.len()))
}

fn occupancy_monotonicity() -> Outcome {
    let dev = DeviceDescriptor::a100();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b_of = |regs: u32, t: u32, shared: u64| {
        active_blocks_per_sm(
            &dev,
            &KernelClassDescriptor {
                max_atoms: 32,
                regs_per_thread: regs,
                shared_per_block: shared,
                block_size: t,
                measured_active_blocks: None,
            },
        )
        .unwrap_or(0)
    };
    for pair in 0..1000 {
        let regs = rng.gen_range(1..=255);
        let t = 32 * rng.gen_range(1..=32);
        let shared = rng.gen_range(0..=100_000);
        let base = b_of(regs, t, shared);
        let more_regs = b_of(regs + rng.gen_range(0..=64), t, shared);
        let more_threads = b_of(regs, (t + 32 * rng.gen_range(0..=8)).min(2048), shared);
        let more_shared = b_of(regs, t, shared + rng.gen_range(0..=50_000));
        if more_regs > base || more_threads > base || more_shared > base {
            return Err(format!(
                "pair {pair}: base {base} regs={regs} t={t} shared={shared} -> {more_regs}/{more_threads}/{more_shared}"
            ));
        }
    }
    Ok("1000 pairs non-increasing".into())
}

fn main() -> ExitCode {
    let finest_100k = Cell::new(None);
    let criteria: Vec<(&str, Duration, Check)> = vec![
        ("AC1 bucket capacity exactness", Duration::from_secs(1), Box::new(capacity_exactness)),
        ("AC2 portable capacity below native", Duration::from_secs(1), Box::new(portable_below_native)),
        ("AC3 sawtooth over k=1..12", Duration::from_secs(60), Box::new(sawtooth)),
        (
            "AC4 clustering speedup",
            Duration::from_secs(600),
            Box::new(|| clustering_speedup(&finest_100k)),
        ),
        ("AC5 tail effect", Duration::from_secs(120), Box::new(|| tail_effect(finest_100k.get()))),
        ("AC6 wave model equals oracle", Duration::from_secs(30), Box::new(wave_oracle_equivalence)),
        ("AC7 pipeline invariants", Duration::from_secs(120), Box::new(pipeline_invariants)),
        ("AC8 determinism", Duration::from_secs(1200), Box::new(determinism)),
        ("AC9 occupancy monotonicity", Duration::from_secs(5), Box::new(occupancy_monotonicity)),
    ];
    let mut failed = 0;
    for (name, limit, mut check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > limit => Err(format!("{msg}; took {elapsed:.1?} > {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("[PASS] {name}: {msg} ({elapsed:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {name}: {msg} ({elapsed:.2?})");
            }
        }
    }
    println!("{} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
