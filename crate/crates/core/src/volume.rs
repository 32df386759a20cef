//! Dense scalar volumes, the RVOL container, and image-space preprocessing.
//!
//! Voxels are stored x-fastest: `index = x + nx * (y + ny * z)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RVOL_MAGIC: &[u8; 8] = b"RVOL0001";

pub type Dims = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f32>,
    spacing: Option<[f64; 3]>,
}

impl Volume3D {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            dims,
            data,
            spacing: None,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn with_spacing(mut self, spacing: Option<[f64; 3]>) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Option<[f64; 3]> {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Applies `f` to every voxel. Non-finite results are rejected.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Ok(Self::new(self.dims, self.data.iter().map(|&v| f(v)).collect())?
            .with_spacing(self.spacing))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Voxelwise equality on the raw bit patterns.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::param(format!("volume dims must be positive, got {dims:?}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RvolHeader {
    dims: [usize; 3],
    spacing: Option<[f64; 3]>,
}

pub fn write_volume<W: Write>(v: &Volume3D, mut w: W) -> Result<()> {
    w.write_all(RVOL_MAGIC)?;
    let header = RvolHeader {
        dims: v.dims,
        spacing: v.spacing,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(v.data.len() * 4);
    for x in &v.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_volume<R: Read>(r: R) -> Result<Volume3D> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedHeader("truncated magic".into()))?;
    if &magic != RVOL_MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader("unterminated header line".into()));
    }
    line.pop();
    let header: RvolHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::MalformedHeader(format!("header json: {e}")))?;
    check_dims(header.dims).map_err(|_| {
        Error::MalformedHeader(format!("non-positive dims {:?}", header.dims))
    })?;
    let expected = header.dims[0] * header.dims[1] * header.dims[2];
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume3D::new(header.dims, data)?.with_spacing(header.spacing))
}

pub fn save_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_volume(v, BufWriter::new(File::create(path)?))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_volume(File::open(path)?)
}

/// Min-max rescaling to [0, 1]; a constant volume maps to all zeros.
pub fn normalize_intensity(v: &Volume3D) -> Volume3D {
    let (lo, hi) = v.min_max();
    let range = hi - lo;
    let data = if range > 0.0 {
        v.data.iter().map(|&x| ((x - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; v.data.len()]
    };
    Volume3D {
        dims: v.dims,
        data,
        spacing: v.spacing,
    }
}

/// Normalised 1D Gaussian taps for offsets `-r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian smoothing with clamp-to-edge boundaries.
pub fn gaussian_filter(v: &Volume3D, sigma: f64) -> Result<Volume3D> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let dims = v.dims;
    let strides = [1usize, dims[0], dims[0] * dims[1]];
    let mut cur: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    let mut next = vec![0.0f64; cur.len()];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        // Iterate over every 1D line along `axis`.
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for u in 0..dims[a1] {
            for w in 0..dims[a2] {
                let base = u * strides[a1] + w * strides[a2];
                line.clear();
                line.extend((0..n).map(|i| cur[base + i * stride]));
                for i in 0..n {
                    let mut acc = 0.0;
                    for (t, &k) in kernel.iter().enumerate() {
                        let j = (i as isize + t as isize - radius).clamp(0, n as isize - 1);
                        acc += k * line[j as usize];
                    }
                    next[base + i * stride] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Volume3D {
        dims,
        data: cur.into_iter().map(|x| x as f32).collect(),
        spacing: v.spacing,
    })
}

/// Block-mean down-sampling; partial blocks at the high edges average the
/// voxels they actually contain.
pub fn downsample(v: &Volume3D, factor: usize) -> Result<Volume3D> {
    if factor < 1 {
        return Err(Error::param("downsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let [nx, ny, nz] = v.dims;
    let out = [nx.div_ceil(factor), ny.div_ceil(factor), nz.div_ceil(factor)];
    let mut sums = vec![0.0f64; out[0] * out[1] * out[2]];
    let mut counts = vec![0u32; sums.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let o = x / factor + out[0] * (y / factor + out[1] * (z / factor));
                sums[o] += v.get(x, y, z) as f64;
                counts[o] += 1;
            }
        }
    }
    let data = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (s / c as f64) as f32)
        .collect();
    Ok(Volume3D {
        dims: out,
        data,
        spacing: v.spacing.map(|s| s.map(|x| x * factor as f64)),
    })
}

/// Extracts the sub-block `[origin, origin + size)`.
pub fn sub_volume(v: &Volume3D, origin: Dims, size: Dims) -> Result<Volume3D> {
    for a in 0..3 {
        if origin[a] + size[a] > v.dims[a] {
            return Err(Error::param(format!(
                "sub-volume {origin:?}+{size:?} exceeds dims {:?}",
                v.dims
            )));
        }
    }
    let mut data = Vec::with_capacity(size[0] * size[1] * size[2]);
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = v.index(origin[0], origin[1] + y, origin[2] + z);
            data.extend_from_slice(&v.data[start..start + size[0]]);
        }
    }
    Ok(Volume3D {
        dims: size,
        data,
        spacing: v.spacing,
    })
}

/// Centered crop. An odd margin loses its extra voxel on the high side.
pub fn crop_center(v: &Volume3D, target: Dims) -> Result<Volume3D> {
    check_dims(target)?;
    for a in 0..3 {
        if target[a] > v.dims[a] {
            return Err(Error::param(format!(
                "crop target {target:?} exceeds source dims {:?}",
                v.dims
            )));
        }
    }
    sub_volume(v, crop_offsets(v.dims, target), target)
}

pub fn crop_offsets(source: Dims, target: Dims) -> Dims {
    [0, 1, 2].map(|a| (source[a] - target[a]) / 2)
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub index: Dims,
    pub volume: Volume3D,
}

/// Exact tiling of a volume into equally sized blocks.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub source_dims: Dims,
    pub patch_dims: Dims,
    pub patches: Vec<Patch>,
}

impl PatchGrid {
    /// Blocks per axis.
    pub fn blocks(&self) -> Dims {
        grid_blocks(self.source_dims, self.patch_dims)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Places every patch back at its block position.
    pub fn assemble(&self) -> Result<Volume3D> {
        let [nx, ny, _] = self.source_dims;
        let mut data = vec![0.0f32; self.source_dims.iter().product()];
        let [px, py, pz] = self.patch_dims;
        for p in &self.patches {
            let [i, j, k] = p.index;
            for z in 0..pz {
                for y in 0..py {
                    let dst = i * px + nx * ((j * py + y) + ny * (k * pz + z));
                    let src = p.volume.index(0, y, z);
                    data[dst..dst + px].copy_from_slice(&p.volume.data()[src..src + px]);
                }
            }
        }
        Volume3D::new(self.source_dims, data)
    }
}

pub fn grid_blocks(source: Dims, patch: Dims) -> Dims {
    [0, 1, 2].map(|a| source[a] / patch[a])
}

/// Linear position of block `(i, j, k)` in lexicographic order (`k` fastest).
pub fn patch_linear_index(blocks: Dims, index: Dims) -> usize {
    (index[0] * blocks[1] + index[1]) * blocks[2] + index[2]
}

pub fn patch_from_linear(blocks: Dims, linear: usize) -> Dims {
    let k = linear % blocks[2];
    let j = (linear / blocks[2]) % blocks[1];
    let i = linear / (blocks[1] * blocks[2]);
    [i, j, k]
}

pub fn check_tiling(source: Dims, patch: Dims) -> Result<()> {
    check_dims(patch)?;
    for (a, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
        if !source[a].is_multiple_of(patch[a]) {
            return Err(Error::Tiling {
                axis,
                size: source[a],
                patch: patch[a],
            });
        }
    }
    Ok(())
}

/// Cuts `v` into disjoint `patch_dims` blocks, emitted in lexicographic
/// `(i, j, k)` order with `i` the x-block index.
pub fn extract_patches(v: &Volume3D, patch_dims: Dims) -> Result<PatchGrid> {
    check_tiling(v.dims, patch_dims)?;
    let blocks = grid_blocks(v.dims, patch_dims);
    let mut patches = Vec::with_capacity(blocks.iter().product());
    for i in 0..blocks[0] {
        for j in 0..blocks[1] {
            for k in 0..blocks[2] {
                let origin = [i * patch_dims[0], j * patch_dims[1], k * patch_dims[2]];
                patches.push(Patch {
                    index: [i, j, k],
                    volume: sub_volume(v, origin, patch_dims)?,
                });
            }
        }
    }
    Ok(PatchGrid {
        source_dims: v.dims,
        patch_dims,
        patches,
    })
}

/// Extracts only the block at `index`.
pub fn extract_patch(v: &Volume3D, patch_dims: Dims, index: Dims) -> Result<Volume3D> {
    check_tiling(v.dims, patch_dims)?;
    let blocks = grid_blocks(v.dims, patch_dims);
    if (0..3).any(|a| index[a] >= blocks[a]) {
        return Err(Error::param(format!(
            "patch index {index:?} outside grid {blocks:?}"
        )));
    }
    let origin = [0, 1, 2].map(|a| index[a] * patch_dims[a]);
    sub_volume(v, origin, patch_dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64) -> Volume3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume3D::from_fn(dims, |_, _, _| rng.random_range(-5.0f32..5.0)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let v = random_volume([5, 4, 3], 1).with_spacing(Some([1.0, 1.5, 2.0]));
        let mut buf = Vec::new();
        write_volume(&v, &mut buf).unwrap();
        let back = read_volume(&buf[..]).unwrap();
        assert!(back.bit_eq(&v));
        assert_eq!(back.spacing(), v.spacing());
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let mut buf = Vec::new();
        buf.extend_from_slice(RVOL_MAGIC);
        buf.extend_from_slice(b"{\"dims\":[2,2,2],\"spacing\":null}\n");
        for i in 0..7 {
            buf.extend_from_slice(&(i as f32).to_le_bytes());
        }
        assert!(matches!(
            read_volume(&buf[..]),
            Err(Error::SizeMismatch { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(RVOL_MAGIC);
        buf.extend_from_slice(b"{\"dims\":[2,1,1],\"spacing\":null}\n");
        buf.extend_from_slice(&1.0f32.to_le_bytes());
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_volume(&buf[..]), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn bad_magic_and_header() {
        assert!(matches!(
            read_volume(&b"NOTRVOL1{}\n"[..]),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            read_volume(&b"RVOL0001{\"dims\":[2]}\n"[..]),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_volume("/nonexistent/never.rvol"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn normalize_cases() {
        let c = Volume3D::filled([2, 2, 2], 7.0).unwrap();
        assert!(normalize_intensity(&c).data().iter().all(|&x| x == 0.0));
        let v = Volume3D::new([3, 1, 1], vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(normalize_intensity(&v).data(), &[0.0, 0.5, 1.0]);
        let u = Volume3D::new([3, 1, 1], vec![0.0, 0.25, 1.0]).unwrap();
        assert!(normalize_intensity(&u).bit_eq(&u));
    }

    #[test]
    fn gaussian_identity_and_constants() {
        let v = random_volume([6, 5, 4], 3);
        assert!(gaussian_filter(&v, 0.0).unwrap().bit_eq(&v));
        let c = Volume3D::filled([7, 6, 5], 0.3).unwrap();
        let g = gaussian_filter(&c, 1.7).unwrap();
        assert!(g.data().iter().all(|&x| (x - 0.3).abs() < 1e-6));
        assert!(gaussian_filter(&v, -1.0).is_err());
    }

    /// Triple-sum convolution with the product kernel, no separability.
    fn dense_gaussian_oracle(v: &Volume3D, sigma: f64) -> Vec<f64> {
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        let [nx, ny, nz] = v.dims();
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        let mut out = vec![0.0; v.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for (c, kc) in k.iter().enumerate() {
                        for (b, kb) in k.iter().enumerate() {
                            for (a, ka) in k.iter().enumerate() {
                                let sx = clamp(x as isize + a as isize - r, nx);
                                let sy = clamp(y as isize + b as isize - r, ny);
                                let sz = clamp(z as isize + c as isize - r, nz);
                                acc += ka * kb * kc * v.get(sx, sy, sz) as f64;
                            }
                        }
                    }
                    out[v.index(x, y, z)] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gaussian_impulse_matches_dense_oracle() {
        let v = Volume3D::from_fn([9, 9, 9], |x, y, z| {
            if (x, y, z) == (4, 4, 4) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let g = gaussian_filter(&v, 1.0).unwrap();
        let oracle = dense_gaussian_oracle(&v, 1.0);
        let sum: f64 = g.data().iter().map(|&x| x as f64).sum();
        let oracle_sum: f64 = oracle.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5, "sum {sum}");
        assert!((oracle_sum - 1.0).abs() < 1e-9);
        for (a, b) in g.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
    }

    #[test]
    fn gaussian_matches_oracle_with_clamped_edges() {
        let v = random_volume([5, 4, 6], 11);
        let g = gaussian_filter(&v, 0.8).unwrap();
        let oracle = dense_gaussian_oracle(&v, 0.8);
        for (a, b) in g.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn downsample_cases() {
        let v = Volume3D::filled([193, 229, 193], 7.0).unwrap();
        let d = downsample(&v, 2).unwrap();
        assert_eq!(d.dims(), [97, 115, 97]);
        assert!(d.data().iter().all(|&x| x == 7.0));
        let r = random_volume([5, 3, 2], 4);
        assert!(downsample(&r, 1).unwrap().bit_eq(&r));
        assert!(downsample(&r, 0).is_err());
        let line = Volume3D::new([3, 1, 1], vec![1.0, 3.0, 10.0]).unwrap();
        assert_eq!(downsample(&line, 2).unwrap().data(), &[2.0, 10.0]);
    }

    #[test]
    fn crop_cases() {
        assert_eq!(crop_offsets([193, 229, 193], [180, 216, 180]), [6, 6, 6]);
        let r = random_volume([4, 4, 4], 5);
        assert!(crop_center(&r, [4, 4, 4]).unwrap().bit_eq(&r));
        let c = crop_center(&r, [2, 2, 2]).unwrap();
        assert_eq!(c.get(0, 0, 0), r.get(1, 1, 1));
        assert_eq!(c.get(1, 1, 1), r.get(2, 2, 2));
        let odd = random_volume([5, 4, 4], 6);
        let c = crop_center(&odd, [2, 4, 4]).unwrap();
        assert_eq!(c.get(0, 0, 0), odd.get(1, 0, 0));
        assert!(crop_center(&r, [5, 1, 1]).is_err());
    }

    #[test]
    fn patch_cases() {
        let v = random_volume([2, 2, 2], 7);
        let g = extract_patches(&v, [1, 1, 1]).unwrap();
        assert_eq!(g.len(), 8);
        let order: Vec<Dims> = g.patches.iter().map(|p| p.index).collect();
        assert_eq!(order[1], [0, 0, 1]);
        assert_eq!(order[4], [1, 0, 0]);
        for p in &g.patches {
            let [i, j, k] = p.index;
            assert_eq!(p.volume.data()[0], v.get(i, j, k));
        }
        let bad = Volume3D::filled([10, 10, 10], 0.0).unwrap();
        assert!(matches!(
            extract_patches(&bad, [3, 3, 3]),
            Err(Error::Tiling { axis: 'x', .. })
        ));
    }

    #[test]
    fn linear_index_round_trip() {
        let blocks = [6, 6, 6];
        for l in 0..216 {
            assert_eq!(patch_linear_index(blocks, patch_from_linear(blocks, l)), l);
        }
    }

    proptest! {
        #[test]
        fn tiling_reassembles(bx in 1usize..4, by in 1usize..4, bz in 1usize..4,
                              px in 1usize..4, py in 1usize..4, pz in 1usize..4, seed in 0u64..1000) {
            let v = random_volume([bx * px, by * py, bz * pz], seed);
            let g = extract_patches(&v, [px, py, pz]).unwrap();
            prop_assert_eq!(g.len(), bx * by * bz);
            prop_assert!(g.assemble().unwrap().bit_eq(&v));
            let total: usize = g.patches.iter().map(|p| p.volume.len()).sum();
            prop_assert_eq!(total, v.len());
        }

        #[test]
        fn rvol_round_trip(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in 0u64..1000) {
            let v = random_volume([nx, ny, nz], seed);
            let mut buf = Vec::new();
            write_volume(&v, &mut buf).unwrap();
            prop_assert!(read_volume(&buf[..]).unwrap().bit_eq(&v));
        }

        #[test]
        fn normalize_idempotent(seed in 0u64..1000) {
            let v = normalize_intensity(&random_volume([4, 3, 2], seed));
            prop_assert!(normalize_intensity(&v).bit_eq(&v));
        }
    }
}
