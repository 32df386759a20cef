//! Reference persistence by explicit boundary-matrix reduction.
//!
//! Every cell of the V-construction complex is materialised, sorted by
//! (filtration value, dimension, position), and the Z/2 boundary matrix is
//! reduced column by column. Quadratic in the cell count; only for small
//! volumes.

use super::{flip, Filtration, PersistenceDiagram, PersistencePair};
use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const ORACLE_MAX_VOXELS: usize = 512;

struct Cell {
    dim: u8,
    value: f32,
    /// Position in the doubled grid `(2nx-1) x (2ny-1) x (2nz-1)`.
    pos: usize,
}

fn sublevel(values: &[f32], n: [usize; 3]) -> Vec<PersistencePair> {
    let m = n.map(|k| 2 * k - 1);
    let total = m[0] * m[1] * m[2];
    let vertex_value = |x: usize, y: usize, z: usize| values[x + n[0] * (y + n[1] * z)];

    let mut cells = Vec::with_capacity(total);
    for cz in 0..m[2] {
        for cy in 0..m[1] {
            for cx in 0..m[0] {
                let c = [cx, cy, cz];
                let dim = c.iter().filter(|&&k| k % 2 == 1).count() as u8;
                // Vertices of the cell: each odd coordinate spans two lattice points.
                let mut value = f32::NEG_INFINITY;
                let ranges = c.map(|k| if k % 2 == 1 { [k / 2, k / 2 + 1] } else { [k / 2, k / 2] });
                for &z in &ranges[2] {
                    for &y in &ranges[1] {
                        for &x in &ranges[0] {
                            value = value.max(vertex_value(x, y, z));
                        }
                    }
                }
                cells.push(Cell {
                    dim,
                    value,
                    pos: cx + m[0] * (cy + m[1] * cz),
                });
            }
        }
    }
    cells.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.dim.cmp(&b.dim))
            .then(a.pos.cmp(&b.pos))
    });
    let mut order_of = vec![0usize; total];
    for (i, c) in cells.iter().enumerate() {
        order_of[c.pos] = i;
    }

    let mut columns: Vec<Vec<usize>> = cells
        .iter()
        .map(|cell| {
            let cx = cell.pos % m[0];
            let cy = (cell.pos / m[0]) % m[1];
            let cz = cell.pos / (m[0] * m[1]);
            let c = [cx, cy, cz];
            let stride = [1, m[0], m[0] * m[1]];
            let mut col = Vec::new();
            for a in 0..3 {
                if c[a] % 2 == 1 {
                    col.push(order_of[cell.pos - stride[a]]);
                    col.push(order_of[cell.pos + stride[a]]);
                }
            }
            col.sort_unstable();
            col
        })
        .collect();

    let mut low_owner: Vec<Option<usize>> = vec![None; total];
    let mut paired = vec![false; total];
    let mut pairs = Vec::new();
    for j in 0..total {
        while let Some(&low) = columns[j].last() {
            match low_owner[low] {
                Some(k) => {
                    let other = columns[k].clone();
                    columns[j] = symmetric_difference(&columns[j], &other);
                }
                None => break,
            }
        }
        if let Some(&low) = columns[j].last() {
            low_owner[low] = Some(j);
            paired[low] = true;
            paired[j] = true;
            let (b, d) = (cells[low].value, cells[j].value);
            if b < d {
                pairs.push(PersistencePair::new(cells[low].dim, b, d));
            }
        }
    }
    for (i, cell) in cells.iter().enumerate() {
        if !paired[i] && columns[i].is_empty() {
            pairs.push(PersistencePair::new(cell.dim, cell.value, f32::INFINITY));
        }
    }
    pairs
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Persistence in all dimensions by textbook reduction of the full complex.
pub fn oracle_persistence(v: &Volume3D, mode: Filtration) -> Result<PersistenceDiagram> {
    if v.len() > ORACLE_MAX_VOXELS {
        return Err(Error::TooLarge {
            voxels: v.len(),
            limit: ORACLE_MAX_VOXELS,
        });
    }
    let pairs = match mode {
        Filtration::Sublevel => sublevel(v.data(), v.dims()),
        Filtration::Superlevel => {
            let neg: Vec<f32> = v.data().iter().map(|&x| -x).collect();
            flip(sublevel(&neg, v.dims()))
        }
    };
    Ok(PersistenceDiagram {
        mode,
        pairs,
        source_dims: v.dims(),
    })
}
