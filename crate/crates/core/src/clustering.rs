//! Two-axis clustering of ligands (atoms x rotamers) and streaming
//! bucketization into fixed-capacity batches per grid cell.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::Ligand;
use crate::device::KernelClassDescriptor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("ligand `{id}` overflows the {axis} axis: {value} > {limit}")]
    Overflow {
        id: String,
        axis: Axis,
        value: u32,
        limit: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Axis {
    Atoms,
    Rotamers,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Atoms => "atom",
            Axis::Rotamers => "rotamer",
        })
    }
}

/// Atom-class upper bounds at warp multiples, the last class taking the rest.
///
/// When `max_atoms` is too small for `n_clusters` warp-multiple classes the
/// count is clamped to the largest one that fits, so every boundary but the
/// last stays a warp multiple.
pub fn atom_boundaries(n_clusters: u32, warp_size: u32, max_atoms: u32) -> Result<Vec<u32>, ClusterError> {
    if n_clusters == 0 {
        return Err(ClusterError::Argument("atom cluster count must be at least 1".into()));
    }
    if warp_size == 0 || max_atoms == 0 {
        return Err(ClusterError::Argument("warp size and max atoms must be at least 1".into()));
    }
    let fitting = (max_atoms - 1) / warp_size + 1;
    let n = n_clusters.min(fitting);
    let mut out: Vec<u32> = (1..n).map(|i| i * warp_size).collect();
    out.push(max_atoms);
    Ok(out)
}

/// Rotamer-class upper bounds, geometrically spaced so classes are
/// narrower at low rotamer counts.
///
/// `b_i = max(b_{i-1} + 1, round(max * (2^i - 1) / (2^n - 1)))`, last forced
/// to `max`. Asking for more classes than distinct values yields one class
/// per value.
pub fn rotamer_boundaries(n_clusters: u32, max_rotamers: u32) -> Result<Vec<u32>, ClusterError> {
    if n_clusters == 0 {
        return Err(ClusterError::Argument("rotamer cluster count must be at least 1".into()));
    }
    if n_clusters > max_rotamers {
        return Ok((0..=max_rotamers).collect());
    }
    let n = n_clusters;
    let denom = (1u128 << n) - 1;
    let mut out = Vec::with_capacity(n as usize);
    let mut prev: i64 = -1;
    for i in 1..n {
        let num = max_rotamers as u128 * ((1u128 << i) - 1);
        // round half up in integer arithmetic
        let rounded = ((2 * num + denom) / (2 * denom)) as i64;
        let b = rounded.max(prev + 1);
        out.push(b as u32);
        prev = b;
    }
    out.push(max_rotamers);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cell {
    pub atom_class: usize,
    pub rotamer_class: usize,
}

/// Inclusive upper thresholds along both axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterGrid {
    atom_boundaries: Vec<u32>,
    rotamer_boundaries: Vec<u32>,
}

fn check_increasing(name: &str, v: &[u32]) -> Result<(), ClusterError> {
    if v.is_empty() {
        return Err(ClusterError::Argument(format!("{name} boundaries are empty")));
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ClusterError::Argument(format!(
            "{name} boundaries are not strictly increasing: {v:?}"
        )));
    }
    Ok(())
}

impl ClusterGrid {
    pub fn new(atom_boundaries: Vec<u32>, rotamer_boundaries: Vec<u32>) -> Result<Self, ClusterError> {
        check_increasing("atom", &atom_boundaries)?;
        check_increasing("rotamer", &rotamer_boundaries)?;
        if atom_boundaries[0] == 0 {
            return Err(ClusterError::Argument("atom boundaries must be positive".into()));
        }
        Ok(ClusterGrid {
            atom_boundaries,
            rotamer_boundaries,
        })
    }

    /// Grid from cluster counts using the warp-multiple atom rule and the
    /// geometric rotamer rule.
    pub fn from_counts(
        atom_clusters: u32,
        rotamer_clusters: u32,
        warp_size: u32,
        max_atoms: u32,
        max_rotamers: u32,
    ) -> Result<Self, ClusterError> {
        Self::new(
            atom_boundaries(atom_clusters, warp_size, max_atoms)?,
            rotamer_boundaries(rotamer_clusters, max_rotamers)?,
        )
    }

    pub fn atom_boundaries(&self) -> &[u32] {
        &self.atom_boundaries
    }

    pub fn rotamer_boundaries(&self) -> &[u32] {
        &self.rotamer_boundaries
    }

    pub fn n_cells(&self) -> usize {
        self.atom_boundaries.len() * self.rotamer_boundaries.len()
    }

    /// Row-major index of a cell.
    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.atom_class * self.rotamer_boundaries.len() + cell.rotamer_class
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let cols = self.rotamer_boundaries.len();
        Cell {
            atom_class: index / cols,
            rotamer_class: index % cols,
        }
    }

    /// Inclusive atom range `[lo, hi]` covered by an atom class.
    pub fn atom_range(&self, class: usize) -> (u32, u32) {
        let lo = if class == 0 { 1 } else { self.atom_boundaries[class - 1] + 1 };
        (lo, self.atom_boundaries[class])
    }

    /// Inclusive rotamer range `[lo, hi]` covered by a rotamer class.
    pub fn rotamer_range(&self, class: usize) -> (u32, u32) {
        let lo = if class == 0 { 0 } else { self.rotamer_boundaries[class - 1] + 1 };
        (lo, self.rotamer_boundaries[class])
    }

    pub fn assign(&self, ligand: &Ligand) -> Result<Cell, ClusterError> {
        let atom_class = smallest_fit(&self.atom_boundaries, ligand.n_atoms).ok_or_else(|| {
            ClusterError::Overflow {
                id: ligand.id.clone(),
                axis: Axis::Atoms,
                value: ligand.n_atoms,
                limit: *self.atom_boundaries.last().unwrap(),
            }
        })?;
        let rotamer_class =
            smallest_fit(&self.rotamer_boundaries, ligand.n_rotamers).ok_or_else(|| {
                ClusterError::Overflow {
                    id: ligand.id.clone(),
                    axis: Axis::Rotamers,
                    value: ligand.n_rotamers,
                    limit: *self.rotamer_boundaries.last().unwrap(),
                }
            })?;
        Ok(Cell {
            atom_class,
            rotamer_class,
        })
    }
}

fn smallest_fit(boundaries: &[u32], v: u32) -> Option<usize> {
    let i = boundaries.partition_point(|&b| b < v);
    (i < boundaries.len()).then_some(i)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    /// Emission sequence number, unique per bucketizer.
    pub seq: u64,
    pub cell: Cell,
    pub kernel_class: KernelClassDescriptor,
    pub capacity: u64,
    pub ligands: Vec<Ligand>,
}

impl Bucket {
    pub fn len(&self) -> usize {
        self.ligands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ligands.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.ligands.len() as u64 == self.capacity
    }
}

/// Streaming bucketizer: one open bucket per grid cell, emitted when full.
#[derive(Debug, Clone)]
pub struct Bucketizer {
    grid: ClusterGrid,
    classes: Vec<(KernelClassDescriptor, u64)>,
    open: Vec<Vec<Ligand>>,
    next_seq: u64,
}

impl Bucketizer {
    /// `classes[i]` is the kernel class and bucket capacity for atom class `i`;
    /// its `max_atoms` must equal the grid's atom boundary `i`.
    pub fn new(
        grid: ClusterGrid,
        classes: Vec<(KernelClassDescriptor, u64)>,
    ) -> Result<Self, ClusterError> {
        if classes.len() != grid.atom_boundaries.len() {
            return Err(ClusterError::Argument(format!(
                "{} kernel classes for {} atom classes",
                classes.len(),
                grid.atom_boundaries.len()
            )));
        }
        for ((kc, cap), &bound) in classes.iter().zip(&grid.atom_boundaries) {
            if kc.max_atoms != bound {
                return Err(ClusterError::Argument(format!(
                    "kernel class max_atoms {} does not match atom boundary {bound}",
                    kc.max_atoms
                )));
            }
            if *cap == 0 {
                return Err(ClusterError::Argument(format!(
                    "zero capacity for atom class {bound}"
                )));
            }
        }
        let open = vec![Vec::new(); grid.n_cells()];
        Ok(Bucketizer {
            grid,
            classes,
            open,
            next_seq: 0,
        })
    }

    pub fn grid(&self) -> &ClusterGrid {
        &self.grid
    }

    pub fn capacity(&self, atom_class: usize) -> u64 {
        self.classes[atom_class].1
    }

    pub fn push(&mut self, ligand: Ligand) -> Result<Option<Bucket>, ClusterError> {
        let cell = self.grid.assign(&ligand)?;
        let idx = self.grid.cell_index(cell);
        let (kc, cap) = self.classes[cell.atom_class];
        let slot = &mut self.open[idx];
        slot.push(ligand);
        if slot.len() as u64 == cap {
            let ligands = std::mem::take(slot);
            return Ok(Some(self.emit(cell, kc, cap, ligands)));
        }
        Ok(None)
    }

    /// Emits every nonempty open bucket in row-major cell order and clears state.
    pub fn flush(&mut self) -> Vec<Bucket> {
        let mut out = Vec::new();
        for idx in 0..self.open.len() {
            if self.open[idx].is_empty() {
                continue;
            }
            let cell = self.grid.cell_at(idx);
            let (kc, cap) = self.classes[cell.atom_class];
            let ligands = std::mem::take(&mut self.open[idx]);
            out.push(self.emit(cell, kc, cap, ligands));
        }
        out
    }

    fn emit(&mut self, cell: Cell, kernel_class: KernelClassDescriptor, capacity: u64, ligands: Vec<Ligand>) -> Bucket {
        let seq = self.next_seq;
        self.next_seq += 1;
        Bucket {
            seq,
            cell,
            kernel_class,
            capacity,
            ligands,
        }
    }

    /// Pushes a whole stream, returning emitted buckets followed by the flush.
    pub fn bucketize_all<I>(&mut self, ligands: I) -> Result<Vec<Bucket>, ClusterError>
    where
        I: IntoIterator<Item = Ligand>,
    {
        let mut out = Vec::new();
        for l in ligands {
            if let Some(b) = self.push(l)? {
                out.push(b);
            }
        }
        out.extend(self.flush());
        Ok(out)
    }
}

/// Fill statistics over a set of emitted buckets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillStats {
    pub total_buckets: usize,
    pub full_buckets: usize,
    pub partial_buckets: usize,
    pub n_ligands: usize,
    /// Mean of per-bucket size/capacity, in percent.
    pub mean_fill_pct: f64,
    /// `(cell, buckets, ligands)` for every cell that received ligands, row-major.
    pub per_cell: Vec<(Cell, usize, usize)>,
}

impl FillStats {
    pub fn from_buckets(buckets: &[Bucket]) -> Self {
        let mut per_cell: std::collections::BTreeMap<Cell, (usize, usize)> = Default::default();
        let mut fill_sum = 0.0;
        let mut full = 0;
        let mut n = 0;
        for b in buckets {
            let e = per_cell.entry(b.cell).or_default();
            e.0 += 1;
            e.1 += b.len();
            n += b.len();
            fill_sum += b.len() as f64 / b.capacity as f64;
            if b.is_full() {
                full += 1;
            }
        }
        FillStats {
            total_buckets: buckets.len(),
            full_buckets: full,
            partial_buckets: buckets.len() - full,
            n_ligands: n,
            mean_fill_pct: if buckets.is_empty() {
                0.0
            } else {
                100.0 * fill_sum / buckets.len() as f64
            },
            per_cell: per_cell.into_iter().map(|(c, (b, l))| (c, b, l)).collect(),
        }
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "total_buckets,{}", self.total_buckets)?;
        writeln!(w, "full_buckets,{}", self.full_buckets)?;
        writeln!(w, "partial_buckets,{}", self.partial_buckets)?;
        writeln!(w, "ligands,{}", self.n_ligands)?;
        writeln!(w, "mean_fill_pct,{:.3}", self.mean_fill_pct)?;
        for (c, b, l) in &self.per_cell {
            writeln!(w, "cell,{},{},{},{}", c.atom_class, c.rotamer_class, b, l)?;
        }
        Ok(())
    }
}

/// `bucket_seq,atom_class,rotamer_class,capacity,size,ligand_ids...`
pub fn write_manifest<W: Write>(mut w: W, buckets: &[Bucket]) -> io::Result<()> {
    for b in buckets {
        write!(
            w,
            "{},{},{},{},{}",
            b.seq,
            b.cell.atom_class,
            b.cell.rotamer_class,
            b.capacity,
            b.len()
        )?;
        for l in &b.ligands {
            write!(w, ",{}", l.id)?;
        }
        writeln!(w)?;
    }
    w.flush()
}
