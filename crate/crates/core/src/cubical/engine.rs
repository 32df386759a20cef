//! Fast sublevel persistence on the full voxel grid.
//!
//! Cells are refined to a total order by the rank of their maximal vertex,
//! then dimension, then cell id. Dimension 0 is a union-find sweep over the
//! vertices; dimension 2 is a union-find sweep over cubes (plus one exterior
//! node) in reverse order, which also identifies the squares that create
//! voids. Those squares are cleared before the dimension-1 boundary matrix
//! reduction, which resolves most columns as apparent pairs and falls back to
//! heap-based reduction for the rest.
//!
//! Ids: vertex `v = x + nx*(y + ny*z)`; edge `3v + axis`; square
//! `3v + normal`; cube `v`. Each cell is anchored at its lowest vertex.

use std::collections::BinaryHeap;

use super::PersistencePair;
use crate::volume::Dims;

const NONE: u32 = u32::MAX;

struct Grid {
    n: [usize; 3],
    stride: [usize; 3],
    rank: Vec<u32>,
    order: Vec<u32>,
    sorted: Vec<f32>,
}

impl Grid {
    fn new(values: &[f32], n: Dims) -> Self {
        let len = values.len();
        assert!(len * 3 < NONE as usize, "volume too large for 32-bit cell ids");
        let mut order: Vec<u32> = (0..len as u32).collect();
        order.sort_unstable_by(|&a, &b| {
            values[a as usize]
                .total_cmp(&values[b as usize])
                .then(a.cmp(&b))
        });
        let mut rank = vec![0u32; len];
        for (r, &v) in order.iter().enumerate() {
            rank[v as usize] = r as u32;
        }
        let sorted = order.iter().map(|&v| values[v as usize]).collect();
        Self {
            n,
            stride: [1, n[0], n[0] * n[1]],
            rank,
            order,
            sorted,
        }
    }

    #[inline]
    fn coords(&self, v: usize) -> [usize; 3] {
        let x = v % self.n[0];
        let yz = v / self.n[0];
        [x, yz % self.n[1], yz / self.n[1]]
    }

    #[inline]
    fn r(&self, v: usize) -> u32 {
        self.rank[v]
    }

    #[inline]
    fn value(&self, rank: u32) -> f32 {
        self.sorted[rank as usize]
    }

    #[inline]
    fn edge_key(&self, id: u32) -> u64 {
        let base = id as usize / 3;
        let axis = id as usize % 3;
        let r = self.r(base).max(self.r(base + self.stride[axis]));
        ((r as u64) << 32) | id as u64
    }

    #[inline]
    fn square_rank(&self, base: usize, normal: usize) -> u32 {
        let (b, c) = span(normal);
        let sb = self.stride[b];
        let sc = self.stride[c];
        self.r(base)
            .max(self.r(base + sb))
            .max(self.r(base + sc))
            .max(self.r(base + sb + sc))
    }

    #[inline]
    fn square_edges(&self, id: u32) -> [u32; 4] {
        let base = id as usize / 3;
        let (b, c) = span(id as usize % 3);
        [
            (3 * base + b) as u32,
            (3 * base + c) as u32,
            (3 * (base + self.stride[b]) + c) as u32,
            (3 * (base + self.stride[c]) + b) as u32,
        ]
    }

    fn cube_rank(&self, base: usize) -> u32 {
        let [sx, sy, sz] = self.stride;
        let mut r = 0;
        for dz in [0, sz] {
            for dy in [0, sy] {
                for dx in [0, sx] {
                    r = r.max(self.r(base + dx + dy + dz));
                }
            }
        }
        r
    }

    /// Cubes whose maximal vertex is `w` (rank `r`), ascending id.
    fn lower_star_cubes(&self, w: usize, c: [usize; 3], r: u32, out: &mut Vec<u32>) {
        out.clear();
        if self.n.iter().any(|&n| n < 2) {
            return;
        }
        for oz in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let o = [ox, oy, oz];
                    if (0..3).any(|a| c[a] < o[a] || c[a] - o[a] > self.n[a] - 2) {
                        continue;
                    }
                    let base = w - ox * self.stride[0] - oy * self.stride[1] - oz * self.stride[2];
                    if self.cube_rank(base) == r {
                        out.push(base as u32);
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// Squares whose maximal vertex is `w` (rank `r`), ascending id.
    fn lower_star_squares(&self, w: usize, c: [usize; 3], r: u32, out: &mut Vec<u32>) {
        out.clear();
        for normal in 0..3 {
            let (b, cc) = span(normal);
            if self.n[b] < 2 || self.n[cc] < 2 {
                continue;
            }
            for ob in 0..2 {
                for oc in 0..2 {
                    if c[b] < ob || c[b] - ob > self.n[b] - 2 || c[cc] < oc || c[cc] - oc > self.n[cc] - 2 {
                        continue;
                    }
                    let base = w - ob * self.stride[b] - oc * self.stride[cc];
                    if self.square_rank(base, normal) == r {
                        out.push((3 * base + normal) as u32);
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// True when `square_key` is the smallest coface of edge `edge`.
    fn is_min_coface(&self, edge: u32, square_key: u64) -> bool {
        let u = edge as usize / 3;
        let b = edge as usize % 3;
        let c = self.coords(u);
        for cc in 0..3 {
            if cc == b || self.n[cc] < 2 {
                continue;
            }
            let normal = 3 - b - cc;
            let candidates = [
                (c[cc] + 2 <= self.n[cc]).then_some(u),
                (c[cc] >= 1).then(|| u - self.stride[cc]),
            ];
            for base in candidates.into_iter().flatten() {
                let key = ((self.square_rank(base, normal) as u64) << 32) | (3 * base + normal) as u64;
                if key < square_key {
                    return false;
                }
            }
        }
        true
    }
}

#[inline]
fn span(normal: usize) -> (usize, usize) {
    match normal {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

#[inline]
fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Sublevel persistence pairs of `values` on an `n`-shaped grid, restricted
/// to the dimensions flagged in `want`. Zero-persistence pairs are dropped.
pub fn sublevel_pairs(values: &[f32], n: Dims, want: [bool; 3]) -> Vec<PersistencePair> {
    let grid = Grid::new(values, n);
    let mut pairs = Vec::new();
    if want[0] {
        dim0(&grid, &mut pairs);
    }
    if want[1] || want[2] {
        let positive = dim2(&grid, want[2], &mut pairs);
        if want[1] {
            dim1(&grid, &positive, &mut pairs);
        }
    }
    pairs
}

fn dim0(g: &Grid, pairs: &mut Vec<PersistencePair>) {
    let len = g.order.len();
    let mut parent: Vec<u32> = vec![NONE; len];
    // Smallest rank in each component, stored at the root.
    let mut elder: Vec<u32> = vec![NONE; len];
    for r in 0..len as u32 {
        let w = g.order[r as usize] as usize;
        parent[w] = w as u32;
        elder[w] = r;
        let c = g.coords(w);
        for a in 0..3 {
            let s = g.stride[a];
            for (ok, u) in [(c[a] >= 1, w.wrapping_sub(s)), (c[a] + 1 < g.n[a], w + s)] {
                if !ok || g.r(u) > r {
                    continue;
                }
                let ru = find(&mut parent, u as u32);
                let rw = find(&mut parent, w as u32);
                if ru == rw {
                    continue;
                }
                let (old, young) = if elder[ru as usize] < elder[rw as usize] {
                    (ru, rw)
                } else {
                    (rw, ru)
                };
                let birth = g.value(elder[young as usize]);
                let death = g.value(r);
                if birth < death {
                    pairs.push(PersistencePair::new(0, birth, death));
                }
                parent[young as usize] = old;
            }
        }
    }
    if len > 0 {
        pairs.push(PersistencePair::new(0, g.value(0), f32::INFINITY));
    }
}

/// Returns a bitset over square ids marking squares that create voids.
fn dim2(g: &Grid, emit: bool, pairs: &mut Vec<PersistencePair>) -> Vec<u64> {
    let len = g.order.len();
    let mut positive = vec![0u64; (3 * len).div_ceil(64)];
    if g.n.iter().filter(|&&n| n >= 2).count() < 2 {
        return positive;
    }
    let exterior = len as u32;
    let mut parent: Vec<u32> = vec![NONE; len + 1];
    let mut born: Vec<u32> = vec![NONE; len + 1];
    let mut elder_rank: Vec<u32> = vec![NONE; len + 1];
    parent[len] = exterior;
    born[len] = 0;
    let mut clock = 1u32;
    let mut cubes = Vec::with_capacity(8);
    let mut squares = Vec::with_capacity(12);
    for r in (0..len as u32).rev() {
        let w = g.order[r as usize] as usize;
        let c = g.coords(w);
        g.lower_star_cubes(w, c, r, &mut cubes);
        for &cube in cubes.iter().rev() {
            parent[cube as usize] = cube;
            born[cube as usize] = clock;
            elder_rank[cube as usize] = r;
            clock += 1;
        }
        g.lower_star_squares(w, c, r, &mut squares);
        for &sq in squares.iter().rev() {
            let base = sq as usize / 3;
            let normal = sq as usize % 3;
            let ca = g.coords(base)[normal];
            let upper = if ca + 1 < g.n[normal] && g.n.iter().all(|&n| n >= 2) {
                base as u32
            } else {
                exterior
            };
            let lower = if ca >= 1 && g.n.iter().all(|&n| n >= 2) {
                (base - g.stride[normal]) as u32
            } else {
                exterior
            };
            let ra = find(&mut parent, upper);
            let rb = find(&mut parent, lower);
            if ra == rb {
                continue;
            }
            let (old, young) = if born[ra as usize] < born[rb as usize] {
                (ra, rb)
            } else {
                (rb, ra)
            };
            if emit {
                let birth = g.value(r);
                let death = g.value(elder_rank[young as usize]);
                if birth < death {
                    pairs.push(PersistencePair::new(2, birth, death));
                }
            }
            parent[young as usize] = old;
            positive[sq as usize / 64] |= 1 << (sq % 64);
        }
    }
    positive
}

fn pop_pivot(heap: &mut BinaryHeap<u64>) -> Option<u64> {
    while let Some(top) = heap.pop() {
        let mut count = 1;
        while heap.peek() == Some(&top) {
            heap.pop();
            count += 1;
        }
        if count % 2 == 1 {
            heap.push(top);
            return Some(top);
        }
    }
    None
}

/// Drains the heap into the reduced column: distinct keys with odd
/// multiplicity, descending.
fn drain_column(heap: &mut BinaryHeap<u64>, out: &mut Vec<u64>) {
    out.clear();
    while let Some(p) = pop_pivot(heap) {
        heap.pop();
        out.push(p);
    }
}

/// `pivot_of` entries with this bit set index `reduced`; otherwise they are
/// the id of an unreduced (apparent) square.
const STORED: u32 = 1 << 31;

fn dim1(g: &Grid, positive: &[u64], pairs: &mut Vec<PersistencePair>) {
    let len = g.order.len();
    assert!(3 * len < STORED as usize, "volume too large for the dimension-1 index");
    let mut pivot_of: Vec<u32> = vec![NONE; 3 * len];
    let mut reduced: Vec<Vec<u64>> = Vec::new();
    let mut squares = Vec::with_capacity(12);
    let mut heap = BinaryHeap::new();
    let mut column = Vec::new();
    for r in 0..len as u32 {
        let w = g.order[r as usize] as usize;
        let c = g.coords(w);
        g.lower_star_squares(w, c, r, &mut squares);
        for &sq in &squares {
            if positive[sq as usize / 64] >> (sq % 64) & 1 == 1 {
                continue;
            }
            let keys = g.square_edges(sq).map(|e| g.edge_key(e));
            let pivot = *keys.iter().max().expect("four edges");
            let square_key = ((r as u64) << 32) | sq as u64;
            let pivot_id = (pivot & 0xffff_ffff) as u32;
            let mut found = None;
            if pivot_of[pivot_id as usize] == NONE && g.is_min_coface(pivot_id, square_key) {
                pivot_of[pivot_id as usize] = sq;
                found = Some(pivot);
            } else {
                heap.clear();
                heap.extend(keys);
                let mut added = false;
                while let Some(p) = pop_pivot(&mut heap) {
                    let e = (p & 0xffff_ffff) as usize;
                    let other = pivot_of[e];
                    if other == NONE {
                        found = Some(p);
                        break;
                    }
                    added = true;
                    if other & STORED != 0 {
                        heap.extend(reduced[(other & !STORED) as usize].iter().copied());
                    } else {
                        heap.extend(g.square_edges(other).map(|e| g.edge_key(e)));
                    }
                }
                let Some(p) = found else {
                    debug_assert!(false, "negative square {sq} reduced to zero");
                    continue;
                };
                let e = (p & 0xffff_ffff) as usize;
                if added {
                    drain_column(&mut heap, &mut column);
                    pivot_of[e] = STORED | reduced.len() as u32;
                    reduced.push(column.clone());
                } else {
                    pivot_of[e] = sq;
                }
            }
            let p = found.expect("pivot");
            let birth = g.value((p >> 32) as u32);
            let death = g.value(r);
            if birth < death {
                pairs.push(PersistencePair::new(1, birth, death));
            }
        }
    }
}
