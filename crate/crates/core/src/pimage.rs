//! Persistence images: diagrams rasterised in birth-persistence coordinates.
//!
//! Each point `(b, p)` contributes `w(p) * N((b, p), sigma^2 I)` integrated
//! exactly over every pixel cell, with the linear ramp `w(p) = clamp(p / p_hi)`
//! (the ramp end is configurable).
//! Rows run along persistence, columns along birth.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::cubical::PersistenceDiagram;
use crate::error::{Error, Result};
use crate::volume::{load_volume, save_volume, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersistenceImageParams {
    /// (rows, cols) = (persistence bins, birth bins).
    pub resolution: [usize; 2],
    pub birth_range: [f64; 2],
    pub pers_range: [f64; 2],
    pub sigma: f64,
    /// Persistence at which the weight ramp reaches 1; `None` means `p_hi`.
    pub weight_saturation: Option<f64>,
}

impl Default for PersistenceImageParams {
    fn default() -> Self {
        Self {
            resolution: [50, 50],
            birth_range: [0.0, 1.0],
            pers_range: [0.0, 1.0],
            sigma: 0.05,
            weight_saturation: None,
        }
    }
}

impl PersistenceImageParams {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.resolution;
        if h == 0 || w == 0 {
            return Err(Error::param("persistence image resolution must be positive"));
        }
        let [b_lo, b_hi] = self.birth_range;
        let [p_lo, p_hi] = self.pers_range;
        if !(b_hi > b_lo) || !b_lo.is_finite() || !b_hi.is_finite() {
            return Err(Error::param(format!("birth range {:?} is empty", self.birth_range)));
        }
        if !(p_hi > p_lo && p_lo >= 0.0) || !p_hi.is_finite() {
            return Err(Error::param(format!("persistence range {:?} invalid", self.pers_range)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if let Some(s) = self.weight_saturation {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::param(format!("weight saturation must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, persistence: f64) -> f64 {
        let ramp = self.weight_saturation.unwrap_or(self.pers_range[1]);
        (persistence / ramp).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceImage {
    pub params: PersistenceImageParams,
    /// Row-major `rows x cols`.
    pub pixels: Vec<f64>,
    pub source_dim: u8,
}

impl PersistenceImage {
    pub fn rows(&self) -> usize {
        self.params.resolution[0]
    }

    pub fn cols(&self) -> usize {
        self.params.resolution[1]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols() + col]
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// As an RVOL raster with dims `[cols, rows, 1]`.
    pub fn to_volume(&self) -> Volume3D {
        Volume3D::new(
            [self.cols(), self.rows(), 1],
            self.pixels.iter().map(|&p| p as f32).collect(),
        )
        .expect("pixels are finite")
    }

    pub fn from_volume(v: &Volume3D, params: PersistenceImageParams, source_dim: u8) -> Result<Self> {
        let [cols, rows, nz] = v.dims();
        if nz != 1 {
            return Err(Error::Shape {
                expected: vec![cols, rows, 1],
                got: v.dims().to_vec(),
            });
        }
        let params = PersistenceImageParams {
            resolution: [rows, cols],
            ..params
        };
        Ok(Self {
            params,
            pixels: v.data().iter().map(|&p| p as f64).collect(),
            source_dim,
        })
    }
}

/// `(birth, persistence)` points of dimension `dim`; essential pairs are dropped.
pub fn to_birth_persistence(d: &PersistenceDiagram, dim: u8) -> Vec<(f64, f64)> {
    d.pairs_of_dim(dim)
        .filter(|p| !p.is_essential())
        .map(|p| (p.birth as f64, p.persistence() as f64))
        .collect()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Gaussian mass of each cell along one axis, for a kernel centred at `mu`.
fn cell_masses(lo: f64, hi: f64, bins: usize, mu: f64, sigma: f64) -> Vec<f64> {
    let step = (hi - lo) / bins as f64;
    let cdf: Vec<f64> = (0..=bins)
        .map(|i| normal_cdf((lo + i as f64 * step - mu) / sigma))
        .collect();
    cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

pub fn render_persistence_image(
    points: &[(f64, f64)],
    params: &PersistenceImageParams,
    source_dim: u8,
) -> Result<PersistenceImage> {
    params.validate()?;
    let [rows, cols] = params.resolution;
    let mut pixels = vec![0.0; rows * cols];
    for &(b, p) in points {
        let w = params.weight(p);
        if w == 0.0 {
            continue;
        }
        let along_birth = cell_masses(params.birth_range[0], params.birth_range[1], cols, b, params.sigma);
        let along_pers = cell_masses(params.pers_range[0], params.pers_range[1], rows, p, params.sigma);
        for (r, mp) in along_pers.iter().enumerate() {
            if *mp == 0.0 {
                continue;
            }
            let row = &mut pixels[r * cols..(r + 1) * cols];
            for (px, mb) in row.iter_mut().zip(&along_birth) {
                *px += w * mp * mb;
            }
        }
    }
    Ok(PersistenceImage {
        params: *params,
        pixels,
        source_dim,
    })
}

/// Convenience: select, vectorise and render in one step.
pub fn diagram_image(d: &PersistenceDiagram, dim: u8, params: &PersistenceImageParams) -> Result<PersistenceImage> {
    render_persistence_image(&to_birth_persistence(d, dim), params, dim)
}

/// Block-mean pooling by `factor` along both axes.
pub fn resample_image(img: &PersistenceImage, factor: usize) -> Result<PersistenceImage> {
    let (rows, cols) = (img.rows(), img.cols());
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::param(format!(
            "resample factor {factor} does not divide resolution {rows}x{cols}"
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (r2, c2) = (rows / factor, cols / factor);
    let mut out = vec![0.0; r2 * c2];
    for r in 0..rows {
        for c in 0..cols {
            out[(r / factor) * c2 + c / factor] += img.get(r, c);
        }
    }
    let area = (factor * factor) as f64;
    out.iter_mut().for_each(|x| *x /= area);
    Ok(PersistenceImage {
        params: PersistenceImageParams {
            resolution: [r2, c2],
            ..img.params
        },
        pixels: out,
        source_dim: img.source_dim,
    })
}

pub fn save_image(img: &PersistenceImage, path: impl AsRef<Path>) -> Result<()> {
    save_volume(&img.to_volume(), path)
}

pub fn load_image(path: impl AsRef<Path>, params: PersistenceImageParams, source_dim: u8) -> Result<PersistenceImage> {
    PersistenceImage::from_volume(&load_volume(path)?, params, source_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubical::{Filtration, PersistencePair};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diagram(pairs: Vec<PersistencePair>) -> PersistenceDiagram {
        PersistenceDiagram {
            mode: Filtration::Sublevel,
            pairs,
            source_dims: [1, 1, 1],
        }
    }

    /// Midpoint-rule integral of the weighted Gaussian over the whole domain.
    fn dense_mass_oracle(b: f64, p: f64, params: &PersistenceImageParams, grid: usize) -> f64 {
        let [b_lo, b_hi] = params.birth_range;
        let [p_lo, p_hi] = params.pers_range;
        let (db, dp) = ((b_hi - b_lo) / grid as f64, (p_hi - p_lo) / grid as f64);
        let s2 = params.sigma * params.sigma;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * s2);
        let mut total = 0.0;
        for i in 0..grid {
            let y = p_lo + (i as f64 + 0.5) * dp;
            for j in 0..grid {
                let x = b_lo + (j as f64 + 0.5) * db;
                total += norm * (-((x - b).powi(2) + (y - p).powi(2)) / (2.0 * s2)).exp();
            }
        }
        params.weight(p) * total * db * dp
    }

    #[test]
    fn coordinate_change() {
        let d = diagram(vec![PersistencePair::new(1, 0.2, 0.9)]);
        let pts = to_birth_persistence(&d, 1);
        assert_eq!(pts.len(), 1);
        assert!((pts[0].0 - 0.2).abs() < 1e-7 && (pts[0].1 - 0.7).abs() < 1e-6);
        let e = diagram(vec![PersistencePair::new(0, 0.0, f32::INFINITY)]);
        assert!(to_birth_persistence(&e, 0).is_empty());
        let mixed = diagram(vec![
            PersistencePair::new(0, 0.1, 0.2),
            PersistencePair::new(2, 0.3, 0.5),
            PersistencePair::new(1, 0.1, 0.4),
        ]);
        assert_eq!(to_birth_persistence(&mixed, 2).len(), 1);
    }

    #[test]
    fn superlevel_points_have_positive_persistence() {
        let d = PersistenceDiagram {
            mode: Filtration::Superlevel,
            pairs: vec![PersistencePair::new(1, 0.9, 0.4)],
            source_dims: [1, 1, 1],
        };
        let pts = to_birth_persistence(&d, 1);
        assert!((pts[0].1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn empty_and_zero_weight() {
        let params = PersistenceImageParams::default();
        let img = render_persistence_image(&[], &params, 1).unwrap();
        assert_eq!(img.pixels.len(), 2500);
        assert!(img.pixels.iter().all(|&p| p == 0.0));
        let img = render_persistence_image(&[(0.5, 0.0)], &params, 1).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn centred_point_mass_matches_dense_integration() {
        let params = PersistenceImageParams::default();
        let img = render_persistence_image(&[(0.5, 1.0)], &params, 1).unwrap();
        let oracle = dense_mass_oracle(0.5, 1.0, &params, 1000);
        // A point at p = p_hi sits on the top edge: half its mass lies outside.
        assert!((img.sum() - oracle).abs() < 1e-3, "{} vs {oracle}", img.sum());
        let centre = render_persistence_image(&[(0.5, 0.5)], &params, 1).unwrap();
        let oracle = dense_mass_oracle(0.5, 0.5, &params, 1000);
        assert!((centre.sum() - oracle).abs() < 1e-3);
        assert!((centre.sum() - 0.5).abs() < 1e-3);
        let full = PersistenceImageParams {
            weight_saturation: Some(0.5),
            ..params
        };
        let img = render_persistence_image(&[(0.5, 0.5)], &full, 1).unwrap();
        let oracle = dense_mass_oracle(0.5, 0.5, &full, 1000);
        assert!((img.sum() - 1.0).abs() < 1e-3 && (img.sum() - oracle).abs() < 1e-3);
    }

    #[test]
    fn invalid_params() {
        let mut p = PersistenceImageParams::default();
        p.sigma = 0.0;
        assert!(render_persistence_image(&[], &p, 1).is_err());
        let mut p = PersistenceImageParams::default();
        p.birth_range = [1.0, 1.0];
        assert!(p.validate().is_err());
        let mut p = PersistenceImageParams::default();
        p.pers_range = [-0.1, 1.0];
        assert!(p.validate().is_err());
    }

    #[test]
    fn resample_cases() {
        let params = PersistenceImageParams::default();
        let img = render_persistence_image(&[(0.3, 0.4), (0.6, 0.2)], &params, 1).unwrap();
        let half = resample_image(&img, 2).unwrap();
        assert_eq!(half.params.resolution, [25, 25]);
        assert!((half.sum() * 4.0 - img.sum()).abs() < 1e-12);
        assert_eq!(resample_image(&img, 1).unwrap(), img);
        let c = PersistenceImage {
            params,
            pixels: vec![0.7; 2500],
            source_dim: 1,
        };
        assert!(resample_image(&c, 5).unwrap().pixels.iter().all(|&x| (x - 0.7).abs() < 1e-12));
        assert!(resample_image(&img, 3).is_err());
    }

    #[test]
    fn weight_is_monotone_in_persistence() {
        let params = PersistenceImageParams::default();
        let mut last = 0.0;
        for i in 0..=100 {
            let w = params.weight(i as f64 / 100.0);
            assert!(w >= last);
            last = w;
        }
        // Same kernel location, different weights: pixelwise ordering.
        let lo = render_persistence_image(&[(0.5, 0.5)], &params, 1).unwrap();
        let scaled: Vec<f64> = lo.pixels.iter().map(|p| p * params.weight(0.8) / params.weight(0.5)).collect();
        assert!(lo.pixels.iter().zip(&scaled).all(|(a, b)| a <= b));
    }

    #[test]
    fn volume_container_round_trip() {
        let params = PersistenceImageParams {
            resolution: [4, 6],
            ..Default::default()
        };
        let img = render_persistence_image(&[(0.5, 0.5)], &params, 1).unwrap();
        let v = img.to_volume();
        assert_eq!(v.dims(), [6, 4, 1]);
        let back = PersistenceImage::from_volume(&v, params, 1).unwrap();
        assert_eq!(back.params.resolution, [4, 6]);
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect()
    }

    proptest! {
        #[test]
        fn linear_in_point_sets(seed in 0u64..10_000, na in 0usize..12, nb in 0usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_points(&mut rng, na);
            let b = random_points(&mut rng, nb);
            let params = PersistenceImageParams::default();
            let ia = render_persistence_image(&a, &params, 1).unwrap();
            let ib = render_persistence_image(&b, &params, 1).unwrap();
            let union: Vec<_> = a.iter().chain(&b).copied().collect();
            let iu = render_persistence_image(&union, &params, 1).unwrap();
            for ((u, x), y) in iu.pixels.iter().zip(&ia.pixels).zip(&ib.pixels) {
                prop_assert!((u - (x + y)).abs() <= 1e-9 * u.abs().max(1e-12) + 1e-15);
            }
        }

        #[test]
        fn stability_under_small_perturbations(seed in 0u64..10_000, delta in 0.0f64..0.01) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, 20);
            let moved: Vec<_> = pts
                .iter()
                .map(|&(b, p)| (b + delta * rng.random_range(-1.0..1.0), (p + delta * rng.random_range(-1.0..1.0)).max(0.0)))
                .collect();
            let params = PersistenceImageParams::default();
            let a = render_persistence_image(&pts, &params, 1).unwrap();
            let b = render_persistence_image(&moved, &params, 1).unwrap();
            let l1: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).sum();
            // Per point: two unit-normal derivative masses of 2 / (sigma sqrt(2 pi)) ~ 16
            // each, plus 1 / p_hi from the weight ramp; 34 rounds that up.
            prop_assert!(l1 <= 34.0 * delta * pts.len() as f64 + 1e-12, "l1 {l1} delta {delta}");
        }
    }
}
