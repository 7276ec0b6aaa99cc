//! Device resource limits, per-class occupancy and bucket capacity.
//!
//! Occupancy follows the usual min-of-limits model (registers, threads,
//! resident blocks, shared memory). A kernel class may carry a measured
//! total of active blocks, which then replaces the analytic estimate.
//!
//! All capacity math is integer arithmetic.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeviceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("kernel class with max_atoms={max_atoms} does not fit on the device (0 active blocks)")]
    DoesNotFit { max_atoms: u32 },
}

fn default_granularity() -> u32 {
    256
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub sm_count: u32,
    pub warp_size: u32,
    pub regs_per_sm: u32,
    pub max_threads_per_sm: u32,
    pub max_blocks_per_sm: u32,
    pub shared_mem_per_sm: u64,
    #[serde(default = "default_granularity")]
    pub reg_alloc_granularity: u32,
    pub global_mem_bytes: u64,
    /// Measured work-items resident per compute unit. When absent it is
    /// derived per kernel class from its occupancy.
    #[serde(default)]
    pub max_work_group_per_cu: Option<u32>,
}

impl DeviceDescriptor {
    /// NVIDIA A100 (SXM4, 40 GB).
    pub fn a100() -> Self {
        DeviceDescriptor {
            sm_count: 108,
            warp_size: 32,
            regs_per_sm: 65536,
            max_threads_per_sm: 2048,
            max_blocks_per_sm: 32,
            shared_mem_per_sm: 167_936,
            reg_alloc_granularity: 256,
            global_mem_bytes: 40 * (1 << 30),
            max_work_group_per_cu: None,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let counts = [
            ("sm_count", self.sm_count as u64),
            ("warp_size", self.warp_size as u64),
            ("regs_per_sm", self.regs_per_sm as u64),
            ("max_threads_per_sm", self.max_threads_per_sm as u64),
            ("max_blocks_per_sm", self.max_blocks_per_sm as u64),
            ("shared_mem_per_sm", self.shared_mem_per_sm),
            ("reg_alloc_granularity", self.reg_alloc_granularity as u64),
            ("global_mem_bytes", self.global_mem_bytes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(DeviceError::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.max_threads_per_sm.is_multiple_of(self.warp_size) {
            return Err(DeviceError::Config(format!(
                "warp_size {} does not divide max_threads_per_sm {}",
                self.warp_size, self.max_threads_per_sm
            )));
        }
        if self.max_work_group_per_cu == Some(0) {
            return Err(DeviceError::Config("max_work_group_per_cu must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        let dev: DeviceDescriptor = read_json(path)?;
        dev.validate()?;
        Ok(dev)
    }
}

/// Resource usage of one kernel variant compiled for at most `max_atoms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelClassDescriptor {
    pub max_atoms: u32,
    pub regs_per_thread: u32,
    #[serde(default)]
    pub shared_per_block: u64,
    pub block_size: u32,
    /// Measured total active blocks across the whole device.
    #[serde(default)]
    pub measured_active_blocks: Option<u32>,
}

impl KernelClassDescriptor {
    pub fn validate(&self, dev: &DeviceDescriptor) -> Result<(), DeviceError> {
        if self.max_atoms == 0 {
            return Err(DeviceError::Config("max_atoms must be at least 1".into()));
        }
        if self.regs_per_thread == 0 {
            return Err(DeviceError::Config(format!(
                "class {}: regs_per_thread must be at least 1",
                self.max_atoms
            )));
        }
        if self.block_size < dev.warp_size {
            return Err(DeviceError::Config(format!(
                "class {}: block_size {} is smaller than the warp size {}",
                self.max_atoms, self.block_size, dev.warp_size
            )));
        }
        Ok(())
    }
}

/// Number of blocks of `kc` that can be resident on one SM.
pub fn active_blocks_per_sm(
    dev: &DeviceDescriptor,
    kc: &KernelClassDescriptor,
) -> Result<u32, DeviceError> {
    if kc.block_size == 0 || kc.block_size > dev.max_threads_per_sm {
        return Err(DeviceError::Config(format!(
            "block_size {} outside 1..={}",
            kc.block_size, dev.max_threads_per_sm
        )));
    }
    let b = match kc.measured_active_blocks {
        Some(total) => total / dev.sm_count,
        None => {
            let regs_per_block = (kc.regs_per_thread as u64 * kc.block_size as u64)
                .div_ceil(dev.reg_alloc_granularity as u64)
                * dev.reg_alloc_granularity as u64;
            let reg_limit = dev.regs_per_sm as u64 / regs_per_block;
            let thread_limit = (dev.max_threads_per_sm / kc.block_size) as u64;
            let block_limit = dev.max_blocks_per_sm as u64;
            let shared_limit = dev
                .shared_mem_per_sm
                .checked_div(kc.shared_per_block)
                .unwrap_or(u64::MAX);
            reg_limit.min(thread_limit).min(block_limit).min(shared_limit) as u32
        }
    };
    if b == 0 {
        return Err(DeviceError::DoesNotFit {
            max_atoms: kc.max_atoms,
        });
    }
    Ok(b)
}

/// Ligands per bucket from the native runtime occupancy:
/// `b * sm_count * block_size / warp_size`.
pub fn bucket_capacity_native(
    b: u32,
    sm_count: u32,
    block_size: u32,
    warp_size: u32,
) -> Result<u64, DeviceError> {
    if b == 0 || sm_count == 0 || block_size == 0 || warp_size == 0 {
        return Err(DeviceError::Argument("all arguments must be at least 1".into()));
    }
    if !block_size.is_multiple_of(warp_size) {
        return Err(DeviceError::Argument(format!(
            "warp size {warp_size} does not divide block size {block_size}"
        )));
    }
    Ok(b as u64 * sm_count as u64 * (block_size / warp_size) as u64)
}

/// Ligands per bucket from portable kernel-bundle queries:
/// `(wgs / block_size) * cu * (block_size / sgs)`.
pub fn bucket_capacity_portable(
    wgs: u32,
    cu: u32,
    block_size: u32,
    sgs: u32,
) -> Result<u64, DeviceError> {
    if wgs == 0 || cu == 0 || block_size == 0 || sgs == 0 {
        return Err(DeviceError::Argument("all arguments must be at least 1".into()));
    }
    if !wgs.is_multiple_of(block_size) {
        return Err(DeviceError::Argument(format!(
            "block size {block_size} does not divide work-group size {wgs}"
        )));
    }
    if !block_size.is_multiple_of(sgs) {
        return Err(DeviceError::Argument(format!(
            "sub-group size {sgs} does not divide block size {block_size}"
        )));
    }
    Ok((wgs / block_size) as u64 * cu as u64 * (block_size / sgs) as u64)
}

/// Device bytes held per ligand; grows linearly with the docking sites.
pub fn ligand_footprint(n_docking_sites: u64, base_bytes: u64, per_site_bytes: u64) -> u64 {
    base_bytes + n_docking_sites * per_site_bytes
}

/// Largest `k` such that `n_buffers` buffers of `k * l` ligands fit in
/// device memory. Zero means even one bucket of `l` does not fit.
pub fn max_bucket_multiple(
    dev: &DeviceDescriptor,
    l: u64,
    per_ligand_bytes: u64,
    n_buffers: u64,
) -> u64 {
    let per_multiple = (l as u128) * (per_ligand_bytes as u128) * (n_buffers as u128);
    if per_multiple == 0 {
        return 0;
    }
    (dev.global_mem_bytes as u128 / per_multiple) as u64
}

/// Which capacity formula a kernel family is sized with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelApi {
    #[default]
    Native,
    Portable,
}

/// Resource usage for kernel classes not listed in a table: a fixed
/// register budget and shared memory reserved per atom of capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelClassModel {
    pub block_size: u32,
    pub regs_per_thread: u32,
    #[serde(default)]
    pub shared_base_bytes: u64,
    pub shared_bytes_per_atom: u64,
}

impl Default for KernelClassModel {
    fn default() -> Self {
        KernelClassModel {
            block_size: 32,
            regs_per_thread: 104,
            shared_base_bytes: 0,
            shared_bytes_per_atom: 160,
        }
    }
}

impl KernelClassModel {
    pub fn class_for(&self, max_atoms: u32) -> KernelClassDescriptor {
        KernelClassDescriptor {
            max_atoms,
            regs_per_thread: self.regs_per_thread,
            shared_per_block: self.shared_base_bytes + self.shared_bytes_per_atom * max_atoms as u64,
            block_size: self.block_size,
            measured_active_blocks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct KernelClassTable {
    #[serde(default)]
    pub api: KernelApi,
    #[serde(default)]
    pub classes: Vec<KernelClassDescriptor>,
    /// Fallback for atom boundaries without an exact table entry.
    #[serde(default)]
    pub model: Option<KernelClassModel>,
}

impl KernelClassTable {
    /// Native docking kernels on an A100 at 32/64/96 atoms (measured).
    pub fn a100_native() -> Self {
        KernelClassTable {
            api: KernelApi::Native,
            classes: vec![
                measured_class(32, 104, 1728),
                measured_class(64, 91, 2160),
                measured_class(96, 124, 1728),
            ],
            model: Some(KernelClassModel::default()),
        }
    }

    /// Portable docking kernels on an A100 at 32/64/96 atoms (measured).
    pub fn a100_portable() -> Self {
        KernelClassTable {
            api: KernelApi::Portable,
            classes: vec![
                measured_class(32, 160, 1296),
                measured_class(64, 174, 864),
                measured_class(96, 178, 864),
            ],
            model: Some(KernelClassModel::default()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        read_json(path)
    }

    pub fn resolve(&self, max_atoms: u32) -> Result<KernelClassDescriptor, DeviceError> {
        if let Some(kc) = self.classes.iter().find(|c| c.max_atoms == max_atoms) {
            return Ok(*kc);
        }
        self.model
            .map(|m| m.class_for(max_atoms))
            .ok_or_else(|| {
                DeviceError::Config(format!(
                    "no kernel class for max_atoms={max_atoms} and no class model to derive one"
                ))
            })
    }

    pub fn profile(
        &self,
        dev: &DeviceDescriptor,
        max_atoms: u32,
    ) -> Result<ClassProfile, DeviceError> {
        ClassProfile::new(dev, &self.resolve(max_atoms)?, self.api)
    }
}

/// A kernel class together with its occupancy and bucket capacity on one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassProfile {
    pub class: KernelClassDescriptor,
    pub active_blocks: u32,
    pub capacity: u64,
}

impl ClassProfile {
    pub fn new(
        dev: &DeviceDescriptor,
        kc: &KernelClassDescriptor,
        api: KernelApi,
    ) -> Result<Self, DeviceError> {
        kc.validate(dev)?;
        let b = active_blocks_per_sm(dev, kc)?;
        let (active_blocks, capacity) = match api {
            KernelApi::Native => (
                b,
                bucket_capacity_native(b, dev.sm_count, kc.block_size, dev.warp_size)?,
            ),
            KernelApi::Portable => {
                let wgs = dev.max_work_group_per_cu.unwrap_or(b * kc.block_size);
                let l = bucket_capacity_portable(wgs, dev.sm_count, kc.block_size, dev.warp_size)?;
                (wgs / kc.block_size, l)
            }
        };
        if active_blocks == 0 {
            return Err(DeviceError::DoesNotFit {
                max_atoms: kc.max_atoms,
            });
        }
        Ok(ClassProfile {
            class: *kc,
            active_blocks,
            capacity,
        })
    }
}

fn measured_class(max_atoms: u32, regs_per_thread: u32, active_blocks: u32) -> KernelClassDescriptor {
    KernelClassDescriptor {
        max_atoms,
        regs_per_thread,
        shared_per_block: 0,
        block_size: 32,
        measured_active_blocks: Some(active_blocks),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DeviceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DeviceError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DeviceError::Config(format!("{}: {e}", path.display())))
}
