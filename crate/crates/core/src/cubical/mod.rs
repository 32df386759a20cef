//! Cubical persistent homology of voxel volumes.
//!
//! The complex is the V-construction: voxels are vertices, and every edge,
//! square and cube of the grid carries the maximum of its vertex values
//! (lower-star filtration). Superlevel persistence is sublevel persistence of
//! the negated volume with finite values negated back. Essential classes
//! always carry `death = +inf`, in both modes.

mod engine;
mod oracle;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3D};

pub use engine::sublevel_pairs;
pub use oracle::{oracle_persistence, ORACLE_MAX_VOXELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Filtration {
    #[default]
    Sublevel,
    Superlevel,
}

impl FromStr for Filtration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sublevel" => Ok(Filtration::Sublevel),
            "superlevel" => Ok(Filtration::Superlevel),
            other => Err(Error::param(format!("unknown filtration `{other}`"))),
        }
    }
}

impl fmt::Display for Filtration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Filtration::Sublevel => "sublevel",
            Filtration::Superlevel => "superlevel",
        })
    }
}

/// One (birth, death) interval. In superlevel diagrams finite deaths lie
/// below births.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePair {
    pub dim: u8,
    pub birth: f32,
    pub death: f32,
}

impl PersistencePair {
    pub fn new(dim: u8, birth: f32, death: f32) -> Self {
        Self { dim, birth, death }
    }

    pub fn is_essential(&self) -> bool {
        self.death == f32::INFINITY
    }

    /// Interval length; infinite for essential classes.
    pub fn persistence(&self) -> f32 {
        if self.is_essential() {
            f32::INFINITY
        } else {
            (self.death - self.birth).abs()
        }
    }

    fn sort_key(&self) -> (u8, u32, u32) {
        (
            self.dim,
            self.birth.to_bits() ^ sign_mask(self.birth),
            self.death.to_bits() ^ sign_mask(self.death),
        )
    }
}

// Maps f32 bits onto an order-preserving unsigned key.
fn sign_mask(x: f32) -> u32 {
    if x.to_bits() >> 31 == 1 {
        u32::MAX
    } else {
        1 << 31
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub mode: Filtration,
    pub pairs: Vec<PersistencePair>,
    pub source_dims: Dims,
}

impl PersistenceDiagram {
    /// Pairs in canonical (dim, birth, death) order, for multiset comparison.
    pub fn sorted_pairs(&self) -> Vec<PersistencePair> {
        let mut p = self.pairs.clone();
        p.sort_by_key(|q| q.sort_key());
        p
    }

    pub fn same_pairs(&self, other: &Self) -> bool {
        self.mode == other.mode && self.sorted_pairs() == other.sorted_pairs()
    }

    pub fn pairs_of_dim(&self, dim: u8) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(move |p| p.dim == dim)
    }

    pub fn count(&self, dim: u8) -> usize {
        self.pairs_of_dim(dim).count()
    }
}

fn check_dim_set(dims: &[u8]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::param("homology dimension set is empty"));
    }
    if let Some(d) = dims.iter().find(|&&d| d > 2) {
        return Err(Error::param(format!("homology dimension {d} not in {{0,1,2}}")));
    }
    Ok(())
}

/// Persistence pairs of `v` in the requested homology dimensions.
pub fn compute_persistence(v: &Volume3D, mode: Filtration, dims: &[u8]) -> Result<PersistenceDiagram> {
    check_dim_set(dims)?;
    let want = [0u8, 1, 2].map(|d| dims.contains(&d));
    let pairs = match mode {
        Filtration::Sublevel => sublevel_pairs(v.data(), v.dims(), want),
        Filtration::Superlevel => {
            let neg: Vec<f32> = v.data().iter().map(|&x| -x).collect();
            flip(sublevel_pairs(&neg, v.dims(), want))
        }
    };
    Ok(PersistenceDiagram {
        mode,
        pairs,
        source_dims: v.dims(),
    })
}

pub(crate) fn flip(pairs: Vec<PersistencePair>) -> Vec<PersistencePair> {
    pairs
        .into_iter()
        .map(|p| PersistencePair {
            dim: p.dim,
            birth: -p.birth,
            death: if p.is_essential() { p.death } else { -p.death },
        })
        .collect()
}

/// Drops pairs whose persistence is `<= eps`; essential pairs always survive.
pub fn filter_low_persistence(d: &PersistenceDiagram, eps: f32) -> Result<PersistenceDiagram> {
    if !(eps >= 0.0) {
        return Err(Error::param(format!("persistence threshold must be >= 0, got {eps}")));
    }
    Ok(PersistenceDiagram {
        mode: d.mode,
        pairs: d
            .pairs
            .iter()
            .copied()
            .filter(|p| p.is_essential() || p.persistence() > eps)
            .collect(),
        source_dims: d.source_dims,
    })
}

/// Betti numbers of the (sub|super)level set at `threshold`, read off the diagram.
pub fn betti_from_diagram(d: &PersistenceDiagram, threshold: f32) -> [usize; 3] {
    let mut b = [0usize; 3];
    for p in &d.pairs {
        let alive = match d.mode {
            Filtration::Sublevel => p.birth <= threshold && threshold < p.death,
            Filtration::Superlevel => {
                threshold <= p.birth && (p.is_essential() || p.death < threshold)
            }
        };
        if alive {
            b[p.dim as usize] += 1;
        }
    }
    b
}

pub fn betti_numbers(v: &Volume3D, threshold: f32, mode: Filtration) -> [usize; 3] {
    let d = compute_persistence(v, mode, &[0, 1, 2]).expect("non-empty dimension set");
    betti_from_diagram(&d, threshold)
}

pub fn write_diagram_csv<W: Write>(d: &PersistenceDiagram, mut w: W) -> Result<()> {
    writeln!(w, "dim,birth,death")?;
    for p in &d.pairs {
        if p.is_essential() {
            writeln!(w, "{},{},inf", p.dim, p.birth)?;
        } else {
            writeln!(w, "{},{},{}", p.dim, p.birth, p.death)?;
        }
    }
    Ok(())
}

pub fn read_diagram_csv<R: BufRead>(r: R, mode: Filtration, source_dims: Dims) -> Result<PersistenceDiagram> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "dim,birth,death" {
        return Err(Error::Parse(format!("bad diagram header `{header}`")));
    }
    let mut pairs = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("diagram line {}: `{line}`", n + 2));
        let mut it = line.trim().split(',');
        let dim: u8 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let birth: f32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let death: f32 = match it.next() {
            Some("inf") => f32::INFINITY,
            Some(s) => s.parse().map_err(|_| bad())?,
            None => return Err(bad()),
        };
        if it.next().is_some() || dim > 2 || !birth.is_finite() {
            return Err(bad());
        }
        pairs.push(PersistencePair { dim, birth, death });
    }
    Ok(PersistenceDiagram {
        mode,
        pairs,
        source_dims,
    })
}

pub fn save_diagram(d: &PersistenceDiagram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_diagram_csv(d, f)
}

pub fn load_diagram(path: impl AsRef<Path>, mode: Filtration) -> Result<PersistenceDiagram> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_diagram_csv(f, mode, [0, 0, 0])
}

#[cfg(test)]
mod tests;
