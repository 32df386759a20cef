//! Synthetic phantom cohorts. Classes differ by a local lesion (reduced
//! intensity ball inside one patch) and/or a global signal (the number of
//! enclosed low-intensity voids or rings).
//!
//! Geometry (texture, void placement, subject intensity) depends only on
//! `(seed, subject)`; per-image noise depends on `(seed, subject, image)`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{write_manifest, SubjectRecord};
use crate::volume::{check_tiling, grid_blocks, save_volume, Dims, Volume3D};

pub const TISSUE_LEVEL: f64 = 0.75;
pub const VOID_LEVEL: f64 = 0.1;
/// Bound on the texture's deviation from `TISSUE_LEVEL` (subject offset included).
pub const TEXTURE_AMPLITUDE: f64 = 0.06;
/// Ellipsoid semi-axes as a fraction of each dimension.
const SEMI_AXIS: f64 = 0.42;
/// Tissue kept between two voids, and between a void and the tissue edge.
const GAP: f64 = 2.0;
const MAX_RETRIES: usize = 2000;
pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    /// Block index `(ix, iy, iz)` of the lesioned patch in the tiling.
    pub patch: Dims,
    pub patch_dims: Dims,
    /// Intensity removed from tissue inside the lesion ball (class 1 only).
    pub delta: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CavityKind {
    /// Low balls: one dim-2 feature each.
    #[default]
    Voids,
    /// Low tori: one dim-1 and one dim-2 feature each.
    Rings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default)]
    pub kind: CavityKind,
    /// Cavity count for class 0 and class 1.
    pub counts: [usize; 2],
    /// Ball radius range, or the major radius range for rings.
    pub radius: [f64; 2],
    #[serde(default = "default_tube")]
    pub tube_radius: f64,
}

fn default_tube() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// `(nx, ny, nz)`.
    pub dims: Dims,
    /// Subjects with label 0 and label 1.
    pub subjects: [usize; 2],
    /// Inclusive range of longitudinal images per subject.
    pub images_per_subject: [usize; 2],
    pub lesion: Option<LesionSpec>,
    pub topology: Option<TopologySpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [60, 72, 60],
            subjects: [40, 40],
            images_per_subject: [1, 3],
            lesion: None,
            topology: None,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.dims.iter().any(|&d| d < 8) {
            return bad("dims", format!("every dimension must be >= 8, got {:?}", self.dims));
        }
        if self.subjects.contains(&0) {
            return bad("subjects", format!("both classes need subjects, got {:?}", self.subjects));
        }
        let [lo, hi] = self.images_per_subject;
        if lo == 0 || lo > hi {
            return bad("images_per_subject", format!("range {lo}..={hi} is invalid"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma));
        }
        if let Some(l) = &self.lesion {
            check_tiling(self.dims, l.patch_dims).map_err(|e| Error::config("lesion.patch_dims", e.to_string()))?;
            let blocks = grid_blocks(self.dims, l.patch_dims);
            if (0..3).any(|a| l.patch[a] >= blocks[a]) {
                return bad("lesion.patch", format!("{:?} outside the {:?} tiling", l.patch, blocks));
            }
            let max_delta = TISSUE_LEVEL - TEXTURE_AMPLITUDE - VOID_LEVEL - 0.1;
            if !(0.0..=max_delta).contains(&l.delta) {
                return bad("lesion.delta", format!("must lie in [0, {max_delta:.2}], got {}", l.delta));
            }
            let room = *l.patch_dims.iter().min().expect("three dims") as f64 / 2.0 - 0.5;
            if !(l.radius > 0.0 && l.radius <= room) {
                return bad("lesion.radius", format!("{} does not fit a {:?} patch", l.radius, l.patch_dims));
            }
            if !inside_ellipsoid(self.dims, lesion_center(l), l.radius) {
                return bad("lesion.patch", format!("lesion in patch {:?} leaves the tissue", l.patch));
            }
        }
        if let Some(t) = &self.topology {
            let [r_lo, r_hi] = t.radius;
            if !(r_lo >= 1.0 && r_lo <= r_hi && r_hi.is_finite()) {
                return bad("topology.radius", format!("range {:?} invalid (min 1 voxel)", t.radius));
            }
            if t.kind == CavityKind::Rings && !(t.tube_radius >= 1.0 && t.tube_radius < r_lo) {
                return bad("topology.tube_radius", format!("need 1 <= tube < {r_lo}, got {}", t.tube_radius));
            }
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects[0] + self.subjects[1]
    }

    /// Subjects `0..subjects[0]` have label 0, the rest label 1.
    pub fn label(&self, subject: usize) -> u8 {
        u8::from(subject >= self.subjects[0])
    }

    pub fn subject_id(&self, subject: usize) -> String {
        format!("sub{subject:04}")
    }

    /// Longitudinal image count of a subject, drawn from the configured range.
    pub fn image_count(&self, subject: usize) -> usize {
        let [lo, hi] = self.images_per_subject;
        rng_for(self.seed, subject as u64, 0, Stream::Count).random_range(lo..=hi)
    }

    /// A superlevel threshold separating cavity interiors from (lesioned)
    /// tissue when noise is zero.
    pub fn mid_threshold(&self) -> f32 {
        let delta = self.lesion.as_ref().map_or(0.0, |l| l.delta);
        ((VOID_LEVEL + TISSUE_LEVEL - TEXTURE_AMPLITUDE - delta) / 2.0) as f32
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Geometry = 1,
    Noise = 2,
    Count = 3,
}

fn rng_for(seed: u64, subject: u64, image: u64, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, w) in [seed, subject, image, stream as u64].into_iter().enumerate() {
        key[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn center(dims: Dims) -> [f64; 3] {
    dims.map(|d| (d as f64 - 1.0) / 2.0)
}

fn ellipsoid_r2(dims: Dims, p: [f64; 3]) -> f64 {
    let c = center(dims);
    (0..3).map(|a| ((p[a] - c[a]) / (SEMI_AXIS * dims[a] as f64)).powi(2)).sum()
}

/// Whether the ball `(p, r)` plus the safety gap lies inside the tissue.
/// Checked on the ball's lattice points, which is what rendering touches.
fn inside_ellipsoid(dims: Dims, p: [f64; 3], r: f64) -> bool {
    let reach = r + GAP;
    let lo = p.map(|v| (v - reach).floor() as i64);
    let hi = p.map(|v| (v + reach).ceil() as i64);
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let q = [x as f64, y as f64, z as f64];
                let d2: f64 = (0..3).map(|a| (q[a] - p[a]).powi(2)).sum();
                if d2 <= reach * reach && ellipsoid_r2(dims, q) > 1.0 {
                    return false;
                }
            }
        }
    }
    true
}

fn lesion_center(l: &LesionSpec) -> [f64; 3] {
    std::array::from_fn(|a| (l.patch[a] * l.patch_dims[a]) as f64 + (l.patch_dims[a] as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, Copy)]
struct Cavity {
    center: [f64; 3],
    radius: f64,
    /// Normal axis of a ring; `None` for a ball.
    ring_axis: Option<usize>,
    tube: f64,
}

impl Cavity {
    fn bound(&self) -> f64 {
        self.radius + if self.ring_axis.is_some() { self.tube } else { 0.0 }
    }

    fn contains(&self, q: [f64; 3]) -> bool {
        let d: [f64; 3] = std::array::from_fn(|a| q[a] - self.center[a]);
        match self.ring_axis {
            None => d.iter().map(|v| v * v).sum::<f64>() <= self.radius * self.radius,
            Some(n) => {
                let (u, v) = ((n + 1) % 3, (n + 2) % 3);
                let planar = (d[u] * d[u] + d[v] * d[v]).sqrt() - self.radius;
                planar * planar + d[n] * d[n] <= self.tube * self.tube
            }
        }
    }
}

/// Subject-level texture: a few smooth waves plus an intensity offset.
struct Texture {
    waves: Vec<([f64; 3], f64, f64)>,
    offset: f64,
}

impl Texture {
    fn sample(rng: &mut ChaCha8Rng, dims: Dims) -> Self {
        let waves = (0..3)
            .map(|_| {
                let k = std::array::from_fn(|a| {
                    rng.random_range(0.5..2.5) * std::f64::consts::TAU / dims[a] as f64
                });
                (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.002..0.006))
            })
            .collect();
        let offset = rng.random_range(-0.005..0.005);
        Self { waves, offset }
    }

    fn at(&self, q: [f64; 3]) -> f64 {
        let w: f64 = self
            .waves
            .iter()
            .map(|(k, phase, amp)| amp * (k[0] * q[0] + k[1] * q[1] + k[2] * q[2] + phase).cos())
            .sum();
        TISSUE_LEVEL + self.offset + w
    }
}

struct Geometry {
    texture: Texture,
    cavities: Vec<Cavity>,
}

fn overlaps_box(c: &Cavity, lo: [f64; 3], hi: [f64; 3]) -> bool {
    let reach = c.bound() + GAP;
    (0..3).all(|a| c.center[a] + reach >= lo[a] && c.center[a] - reach <= hi[a])
}

fn place_cavities(spec: &PhantomSpec, label: u8, rng: &mut ChaCha8Rng) -> Result<Vec<Cavity>> {
    let Some(t) = &spec.topology else {
        return Ok(Vec::new());
    };
    let lesion_box = spec.lesion.as_ref().map(|l| {
        let lo: [f64; 3] = std::array::from_fn(|a| (l.patch[a] * l.patch_dims[a]) as f64);
        let hi: [f64; 3] = std::array::from_fn(|a| lo[a] + l.patch_dims[a] as f64 - 1.0);
        (lo, hi)
    });
    let c = center(spec.dims);
    let semi = spec.dims.map(|d| SEMI_AXIS * d as f64);
    let mut placed: Vec<Cavity> = Vec::with_capacity(t.counts[label as usize]);
    for _ in 0..t.counts[label as usize] {
        let mut ok = false;
        for _ in 0..MAX_RETRIES {
            let radius = if t.radius[0] == t.radius[1] {
                t.radius[0]
            } else {
                rng.random_range(t.radius[0]..=t.radius[1])
            };
            let cand = Cavity {
                center: std::array::from_fn(|a| c[a] + rng.random_range(-semi[a]..semi[a])),
                radius,
                ring_axis: (t.kind == CavityKind::Rings).then(|| rng.random_range(0..3)),
                tube: t.tube_radius,
            };
            let clear = placed.iter().all(|p| {
                let d2: f64 = (0..3).map(|a| (p.center[a] - cand.center[a]).powi(2)).sum();
                d2.sqrt() >= p.bound() + cand.bound() + GAP
            });
            if clear
                && lesion_box.is_none_or(|(lo, hi)| !overlaps_box(&cand, lo, hi))
                && inside_ellipsoid(spec.dims, cand.center, cand.bound())
            {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Placement(format!(
                "could not place cavity {} of {} after {MAX_RETRIES} attempts",
                placed.len() + 1,
                t.counts[label as usize]
            )));
        }
    }
    Ok(placed)
}

fn geometry(spec: &PhantomSpec, subject: usize) -> Result<Geometry> {
    let mut rng = rng_for(spec.seed, subject as u64, 0, Stream::Geometry);
    let texture = Texture::sample(&mut rng, spec.dims);
    let cavities = place_cavities(spec, spec.label(subject), &mut rng)?;
    Ok(Geometry { texture, cavities })
}

/// One phantom image and its subject's label.
pub fn generate_phantom(spec: &PhantomSpec, subject: usize, image: usize) -> Result<(Volume3D, u8)> {
    spec.validate()?;
    if subject >= spec.n_subjects() {
        return Err(Error::param(format!("subject {subject} out of range 0..{}", spec.n_subjects())));
    }
    let label = spec.label(subject);
    let geo = geometry(spec, subject)?;
    let lesion = spec
        .lesion
        .as_ref()
        .filter(|l| label == 1 && l.delta > 0.0)
        .map(|l| (lesion_center(l), l.radius, l.delta));
    let mut noise_rng = rng_for(spec.seed, subject as u64, image as u64, Stream::Noise);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let vol = Volume3D::from_fn(spec.dims, |x, y, z| {
        let q = [x as f64, y as f64, z as f64];
        let mut v = if ellipsoid_r2(spec.dims, q) <= 1.0 {
            if geo.cavities.iter().any(|c| c.contains(q)) {
                VOID_LEVEL
            } else {
                geo.texture.at(q)
            }
        } else {
            0.0
        };
        if let Some((c, r, delta)) = lesion {
            let d2: f64 = (0..3).map(|a| (q[a] - c[a]).powi(2)).sum();
            if d2 <= r * r {
                v -= delta;
            }
        }
        if let Some(n) = &noise {
            v += n.sample(&mut noise_rng);
        }
        v.clamp(0.0, 1.0) as f32
    })?;
    Ok((vol, label))
}

/// File name of one generated image, relative to the cohort directory.
pub fn image_file_name(spec: &PhantomSpec, subject: usize, image: usize) -> String {
    format!("{}_{image:02}.rvol", spec.subject_id(subject))
}

/// Writes every image as RVOL plus `manifest.jsonl` (image paths relative
/// to `out_dir`). Returns the manifest records.
pub fn generate_cohort(spec: &PhantomSpec, out_dir: &Path) -> Result<Vec<SubjectRecord>> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let jobs: Vec<(usize, usize)> = (0..spec.n_subjects())
        .flat_map(|s| (0..spec.image_count(s)).map(move |i| (s, i)))
        .collect();
    jobs.par_iter().try_for_each(|&(s, i)| {
        let (vol, _) = generate_phantom(spec, s, i)?;
        save_volume(&vol, out_dir.join(image_file_name(spec, s, i)))
    })?;
    let records: Vec<SubjectRecord> = (0..spec.n_subjects())
        .map(|s| SubjectRecord {
            subject_id: spec.subject_id(s),
            label: spec.label(s),
            images: (0..spec.image_count(s)).map(|i| image_file_name(spec, s, i)).collect(),
        })
        .collect();
    let f = fs::File::create(out_dir.join(MANIFEST_NAME))?;
    write_manifest(&records, BufWriter::new(f))?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubical::{betti_numbers, Filtration};
    use crate::eval::load_manifest;
    use crate::volume::{extract_patch, load_volume};
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn small(counts: [usize; 2]) -> PhantomSpec {
        PhantomSpec {
            dims: [24, 24, 24],
            subjects: [3, 3],
            images_per_subject: [1, 2],
            lesion: None,
            topology: Some(TopologySpec {
                kind: CavityKind::Voids,
                counts,
                radius: [1.5, 2.5],
                tube_radius: 1.5,
            }),
            noise_sigma: 0.0,
            seed: 11,
        }
    }

    fn lesion_spec(delta: f64, sigma: f64) -> PhantomSpec {
        PhantomSpec {
            dims: [30, 36, 30],
            subjects: [25, 25],
            images_per_subject: [1, 1],
            lesion: Some(LesionSpec {
                patch: [1, 1, 1],
                patch_dims: [10, 12, 10],
                delta,
                radius: 3.5,
            }),
            topology: None,
            noise_sigma: sigma,
            seed: 5,
        }
    }

    #[test]
    fn void_count_matches_b2() {
        let spec = small([1, 3]);
        for s in 0..spec.n_subjects() {
            let (v, label) = generate_phantom(&spec, s, 0).unwrap();
            let b = betti_numbers(&v, spec.mid_threshold(), Filtration::Superlevel);
            let want = spec.topology.as_ref().unwrap().counts[label as usize];
            assert_eq!(b, [1, 0, want], "subject {s}");
        }
    }

    #[test]
    fn rings_add_a_loop_and_a_cavity_each() {
        let mut spec = small([2, 2]);
        spec.dims = [32, 32, 32];
        spec.topology = Some(TopologySpec {
            kind: CavityKind::Rings,
            counts: [2, 2],
            radius: [3.0, 3.5],
            tube_radius: 1.2,
        });
        let (v, _) = generate_phantom(&spec, 0, 0).unwrap();
        assert_eq!(betti_numbers(&v, spec.mid_threshold(), Filtration::Superlevel), [1, 2, 2]);
    }

    #[test]
    fn deterministic_and_longitudinal() {
        let mut spec = small([2, 2]);
        spec.noise_sigma = 0.05;
        let (a, _) = generate_phantom(&spec, 4, 1).unwrap();
        let (b, _) = generate_phantom(&spec, 4, 1).unwrap();
        assert!(a.bit_eq(&b));
        let (c, _) = generate_phantom(&spec, 4, 0).unwrap();
        assert!(!a.bit_eq(&c));
        // Same geometry: the noiseless images agree.
        spec.noise_sigma = 0.0;
        let (d, _) = generate_phantom(&spec, 4, 0).unwrap();
        let (e, _) = generate_phantom(&spec, 4, 1).unwrap();
        assert!(d.bit_eq(&e));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn lesion_patch_means(spec: &PhantomSpec) -> [Vec<f64>; 2] {
        let l = spec.lesion.as_ref().unwrap();
        let mut out = [Vec::new(), Vec::new()];
        for s in 0..spec.n_subjects() {
            let (v, label) = generate_phantom(spec, s, 0).unwrap();
            out[label as usize].push(extract_patch(&v, l.patch_dims, l.patch).unwrap().mean());
        }
        out
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Welch's two-sided t-test p-value.
    fn welch_p(a: &[f64], b: &[f64]) -> f64 {
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
        };
        let (va, vb) = (var(a) / a.len() as f64, var(b) / b.len() as f64);
        let t = (mean(a) - mean(b)) / (va + vb).sqrt();
        let df = (va + vb).powi(2) / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
        2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
    }

    #[test]
    fn zero_delta_lesion_is_invisible() {
        let spec = lesion_spec(0.0, 0.05);
        let [c0, c1] = lesion_patch_means(&spec);
        assert!((mean(&c0) - mean(&c1)).abs() < spec.noise_sigma / 10.0);
    }

    #[test]
    fn strong_lesion_separates_classes() {
        let spec = lesion_spec(0.16, 0.05);
        let [c0, c1] = lesion_patch_means(&spec);
        assert!(mean(&c0) > mean(&c1));
        assert!(welch_p(&c0, &c1) < 0.01);
    }

    #[test]
    fn cohort_manifest_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small([1, 1]);
        spec.dims = [16, 16, 16];
        spec.topology.as_mut().unwrap().radius = [1.0, 1.5];
        spec.subjects = [20, 20];
        spec.images_per_subject = [1, 3];
        spec.noise_sigma = 0.02;
        let recs = generate_cohort(&spec, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(text.lines().count(), 40);
        assert_eq!(load_manifest(&dir.path().join(MANIFEST_NAME)).unwrap(), recs);
        let counts: Vec<usize> = recs.iter().map(|r| r.images.len()).collect();
        assert!(counts.iter().all(|c| (1..=3).contains(c)));
        assert!(counts.iter().any(|&c| c != counts[0]));
        for r in &recs {
            for img in &r.images {
                assert_eq!(load_volume(dir.path().join(img)).unwrap().dims(), spec.dims);
            }
        }

        let again = tempfile::tempdir().unwrap();
        generate_cohort(&spec, again.path()).unwrap();
        for r in &recs {
            for img in r.images.iter().map(String::as_str).chain([MANIFEST_NAME]) {
                let a = fs::read(dir.path().join(img)).unwrap();
                let b = fs::read(again.path().join(img)).unwrap();
                assert!(a == b, "{img} differs");
            }
        }
    }

    #[test]
    fn prevalence_is_as_configured() {
        let mut spec = small([0, 0]);
        spec.subjects = [18, 22];
        let ad = (0..spec.n_subjects()).filter(|&s| spec.label(s) == 1).count();
        assert!((ad as f64 - 0.55 * 40.0).abs() <= 1.0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = lesion_spec(0.1, 0.0);
        s.lesion.as_mut().unwrap().radius = 6.0;
        assert!(matches!(s.validate(), Err(Error::Config { .. })));
        let mut s = lesion_spec(0.1, 0.0);
        s.lesion.as_mut().unwrap().patch = [3, 0, 0];
        assert!(s.validate().is_err());
        let mut s = lesion_spec(0.1, -1.0);
        assert!(s.validate().is_err());
        s.noise_sigma = 0.0;
        s.lesion.as_mut().unwrap().patch_dims = [7, 12, 10];
        assert!(s.validate().is_err());
        let crowded = small([400, 400]);
        assert!(matches!(generate_phantom(&crowded, 0, 0), Err(Error::Placement(_))));
    }

    #[test]
    fn spec_json_defaults() {
        let s: PhantomSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(s, PhantomSpec::default());
        let t: PhantomSpec =
            serde_json::from_str(r#"{"topology": {"counts": [1, 4], "radius": [2, 3]}}"#).unwrap();
        assert_eq!(t.topology.unwrap().kind, CavityKind::Voids);
    }
}
