//! Ligand work items: synthetic generation, replication and the
//! `id,n_atoms,n_rotamers` record format.

use std::borrow::Borrow;
use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: ligand `{id}` is invalid: {reason}")]
    Validation {
        line: usize,
        id: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A work item. Only the atom and rotamer counts drive cost and clustering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ligand {
    pub id: String,
    pub n_atoms: u32,
    pub n_rotamers: u32,
}

impl Ligand {
    pub fn new(id: impl Into<String>, n_atoms: u32, n_rotamers: u32) -> Result<Self, DatasetError> {
        let id = id.into();
        if n_atoms == 0 {
            return Err(DatasetError::Validation {
                line: 0,
                id,
                reason: "n_atoms must be at least 1".into(),
            });
        }
        Ok(Ligand {
            id,
            n_atoms,
            n_rotamers,
        })
    }
}

impl fmt::Display for Ligand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.id, self.n_atoms, self.n_rotamers)
    }
}

/// Inclusive `[min, max]` range of counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub const fn new(min: u32, max: u32) -> Self {
        CountRange { min, max }
    }

    pub fn contains(&self, v: u32) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

/// Seeded stream of ligands with independently, uniformly sampled counts.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    rng: ChaCha8Rng,
    atoms: CountRange,
    rotamers: CountRange,
    next: u64,
    len: u64,
}

impl Iterator for SyntheticStream {
    type Item = Ligand;

    fn next(&mut self) -> Option<Ligand> {
        if self.next >= self.len {
            return None;
        }
        let n_atoms = self.rng.gen_range(self.atoms.min..=self.atoms.max);
        let n_rotamers = self.rng.gen_range(self.rotamers.min..=self.rotamers.max);
        let id = format!("L{}", self.next);
        self.next += 1;
        Some(Ligand {
            id,
            n_atoms,
            n_rotamers,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = (self.len - self.next) as usize;
        (rest, Some(rest))
    }
}

impl ExactSizeIterator for SyntheticStream {}

pub fn generate_synthetic(
    n: u64,
    atoms: CountRange,
    rotamers: CountRange,
    seed: u64,
) -> Result<SyntheticStream, DatasetError> {
    if atoms.min > atoms.max {
        return Err(DatasetError::Argument(format!(
            "inverted atom range [{}, {}]",
            atoms.min, atoms.max
        )));
    }
    if rotamers.min > rotamers.max {
        return Err(DatasetError::Argument(format!(
            "inverted rotamer range [{}, {}]",
            rotamers.min, rotamers.max
        )));
    }
    if atoms.min == 0 {
        return Err(DatasetError::Argument("atom range must start at 1 or above".into()));
    }
    Ok(SyntheticStream {
        rng: ChaCha8Rng::seed_from_u64(seed),
        atoms,
        rotamers,
        next: 0,
        len: n,
    })
}

/// `n` copies of one ligand, ids suffixed with `#<index>`.
#[derive(Debug, Clone)]
pub struct Replicas {
    template: Ligand,
    next: u64,
    len: u64,
}

impl Iterator for Replicas {
    type Item = Ligand;

    fn next(&mut self) -> Option<Ligand> {
        if self.next >= self.len {
            return None;
        }
        let l = Ligand {
            id: format!("{}#{}", self.template.id, self.next),
            n_atoms: self.template.n_atoms,
            n_rotamers: self.template.n_rotamers,
        };
        self.next += 1;
        Some(l)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = (self.len - self.next) as usize;
        (rest, Some(rest))
    }
}

impl ExactSizeIterator for Replicas {}

pub fn replicate(ligand: &Ligand, n: u64) -> Replicas {
    Replicas {
        template: ligand.clone(),
        next: 0,
        len: n,
    }
}

/// Streaming reader over a ligand record file. Yields one item per
/// non-empty line and stops after the first error.
pub struct RecordReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    failed: bool,
}

pub fn parse_ligand_records<R: BufRead>(source: R) -> RecordReader<R> {
    RecordReader {
        lines: source.lines(),
        line_no: 0,
        seen: HashSet::new(),
        failed: false,
    }
}

impl<R: BufRead> RecordReader<R> {
    fn parse_line(&mut self, line: &str) -> Result<Ligand, DatasetError> {
        let line_no = self.line_no;
        let parse_err = |reason: String| DatasetError::Parse {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 comma-separated fields, found {}",
                fields.len()
            )));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let count = |name: &str, s: &str| {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(parse_err(format!("{name} `{s}` is not a decimal count")));
            }
            s.parse::<u32>()
                .map_err(|e| parse_err(format!("{name} `{s}`: {e}")))
        };
        let n_atoms = count("n_atoms", fields[1])?;
        let n_rotamers = count("n_rotamers", fields[2])?;
        if n_atoms == 0 {
            return Err(DatasetError::Validation {
                line: line_no,
                id: id.to_string(),
                reason: "n_atoms must be at least 1".into(),
            });
        }
        if !self.seen.insert(id.to_string()) {
            return Err(DatasetError::Validation {
                line: line_no,
                id: id.to_string(),
                reason: "duplicate id".into(),
            });
        }
        Ok(Ligand {
            id: id.to_string(),
            n_atoms,
            n_rotamers,
        })
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<Ligand, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            if line.is_empty() {
                continue;
            }
            let res = self.parse_line(&line);
            if res.is_err() {
                self.failed = true;
            }
            return Some(res);
        }
    }
}

/// Parses a whole record file held in memory.
pub fn parse_ligand_str(text: &str) -> Result<Vec<Ligand>, DatasetError> {
    parse_ligand_records(text.as_bytes()).collect()
}

pub fn write_ligand_records<W: Write, I>(mut out: W, ligands: I) -> io::Result<()>
where
    I: IntoIterator,
    I::Item: Borrow<Ligand>,
{
    for l in ligands {
        writeln!(out, "{}", l.borrow())?;
    }
    out.flush()
}
