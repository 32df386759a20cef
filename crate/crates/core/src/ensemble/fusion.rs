use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_matrix, grouped_folds, sigmoid};
use crate::error::{Error, Result};
use crate::eval::average_precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Fixed penalty; skips selection when set.
    pub l1_strength: Option<f64>,
    /// Candidate penalties for selection by validation APS.
    pub grid: Vec<f64>,
    /// Share of subjects held out for selecting the penalty.
    pub validation_fraction: f64,
    pub max_iter: usize,
    /// Stop when the proximal gradient step moves no coordinate by more than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            l1_strength: None,
            grid: vec![1e-4, 1e-3, 1e-2, 1e-1],
            validation_fraction: 0.25,
            max_iter: 20_000,
            tol: 1e-9,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() && self.l1_strength.is_none() {
            return Err(Error::config("grid", "must not be empty"));
        }
        if self.grid.iter().chain(self.l1_strength.iter()).any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::config("grid", "penalties must be finite and non-negative"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction", "must lie in (0, 1)"));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::config("max_iter", "iteration cap and tolerance must be positive"));
        }
        Ok(())
    }
}

/// One dense unit with sigmoid over concatenated encodings. Inputs are
/// standardised with the training statistics before the linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub len_a: usize,
    pub len_b: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l1_strength: f64,
}

impl FusionModel {
    pub fn zeros(len_a: usize, len_b: usize) -> Self {
        let d = len_a + len_b;
        Self {
            len_a,
            len_b,
            mean: vec![0.0; d],
            scale: vec![1.0; d],
            weights: vec![0.0; d],
            bias: 0.0,
            l1_strength: 0.0,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|x| {
                if x.len() != self.weights.len() {
                    return Err(Error::Shape {
                        expected: vec![self.weights.len()],
                        got: vec![x.len()],
                    });
                }
                let z: f64 = x
                    .iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .zip(&self.weights)
                    .map(|(((v, m), s), w)| w * (v - m) / s)
                    .sum();
                Ok(sigmoid(self.bias + z))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionFit {
    pub model: FusionModel,
    /// Validation APS per candidate penalty, ascending.
    pub scores: Vec<(f64, f64)>,
}

fn concat(a: &[Vec<f64>], b: &[Vec<f64>], y: &[u8]) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() || a.len() != y.len() {
        return Err(Error::Alignment(format!(
            "{} encodings A, {} encodings B, {} labels",
            a.len(),
            b.len(),
            y.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, z)| x.iter().chain(z).copied().collect()).collect())
}

fn objective(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, l1: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &t)| {
            let z = b + r.iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>();
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - t as f64 * z
        })
        .sum::<f64>()
        / n;
    loss + l1 * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn gradient(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, gw: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    gw.fill(0.0);
    let mut gb = 0.0;
    for (r, &t) in x.iter().zip(y) {
        let z = b + r.iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>();
        let resid = (sigmoid(z) - t as f64) / n;
        for (g, v) in gw.iter_mut().zip(r) {
            *g += resid * v;
        }
        gb += resid;
    }
    gb
}

/// Largest eigenvalue of `X~^T X~ / n` (with the intercept column), by power
/// iteration from the all-ones vector.
fn curvature(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut v = vec![1.0; d + 1];
    let mut lambda = 1.0;
    for _ in 0..50 {
        let mut out = vec![0.0; d + 1];
        for r in x {
            let z = v[d] + r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            for (o, a) in out.iter_mut().zip(r) {
                *o += z * a / n;
            }
            out[d] += z / n;
        }
        let norm = out.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = out;
    }
    lambda
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Mean BCE plus `l1 * sum |w|`, on standardised inputs, minimised by
/// accelerated proximal gradient with adaptive restart.
pub fn fit_fusion_fixed(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    y: &[u8],
    l1: f64,
    cfg: &FusionConfig,
) -> Result<FusionModel> {
    let raw = concat(a, b, y)?;
    let d = check_matrix(&raw, y)?;
    let n = raw.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = raw.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    // The logistic Hessian is at most a quarter of the design Gram matrix.
    let lipschitz = 0.25 * curvature(&x) * 1.01 + 1e-12;
    let step = 1.0 / lipschitz;
    let (mut w, mut bias) = (vec![0.0; d], 0.0);
    let (mut yw, mut yb) = (w.clone(), bias);
    let mut t = 1.0f64;
    let mut gw = vec![0.0; d];
    let mut f_prev = objective(&x, y, &w, bias, l1);
    for _ in 0..cfg.max_iter {
        let gb = gradient(&x, y, &yw, yb, &mut gw);
        let new_w: Vec<f64> = yw
            .iter()
            .zip(&gw)
            .map(|(v, g)| soft_threshold(v - step * g, step * l1))
            .collect();
        let new_b = yb - step * gb;
        let f_new = objective(&x, y, &new_w, new_b, l1);
        let moved = new_w
            .iter()
            .zip(&w)
            .map(|(p, q)| (p - q).abs())
            .fold((new_b - bias).abs(), f64::max);
        if f_new > f_prev {
            // Momentum overshot: restart from the last iterate.
            t = 1.0;
            yw.clone_from(&w);
            yb = bias;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        yw = new_w.iter().zip(&w).map(|(p, q)| p + beta * (p - q)).collect();
        yb = new_b + beta * (new_b - bias);
        w = new_w;
        bias = new_b;
        t = t_next;
        f_prev = f_new;
        if moved < cfg.tol {
            break;
        }
    }
    Ok(FusionModel {
        len_a: a[0].len(),
        len_b: b[0].len(),
        mean,
        scale,
        weights: w,
        bias,
        l1_strength: l1,
    })
}

/// Selects the penalty by APS on a subject-level held-out split (ties go to
/// the stronger penalty), then refits on all samples.
pub fn fit_fusion(a: &[Vec<f64>], b: &[Vec<f64>], y: &[u8], groups: &[usize], cfg: &FusionConfig) -> Result<FusionFit> {
    cfg.validate()?;
    concat(a, b, y)?;
    if let Some(l1) = cfg.l1_strength {
        return Ok(FusionFit {
            model: fit_fusion_fixed(a, b, y, l1, cfg)?,
            scores: vec![(l1, f64::NAN)],
        });
    }
    let mut grid = cfg.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let scores: Vec<(f64, f64)> = if grid.len() == 1 {
        vec![(grid[0], f64::NAN)]
    } else {
        let k = ((1.0 / cfg.validation_fraction).round() as usize).max(2);
        let held = grouped_folds(y, groups, k, cfg.seed)?.swap_remove(0);
        let mut is_held = vec![false; y.len()];
        for &i in &held {
            is_held[i] = true;
        }
        let pick = |keep: bool| -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<u8>) {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| is_held[i] != keep).collect();
            (
                idx.iter().map(|&i| a[i].clone()).collect(),
                idx.iter().map(|&i| b[i].clone()).collect(),
                idx.iter().map(|&i| y[i]).collect(),
            )
        };
        let (ta, tb, ty) = pick(true);
        let (va, vb, vy) = pick(false);
        let val_rows = concat(&va, &vb, &vy)?;
        grid.par_iter()
            .map(|&l1| {
                let m = fit_fusion_fixed(&ta, &tb, &ty, l1, cfg)?;
                Ok((l1, average_precision(&m.predict_proba(&val_rows)?, &vy)?))
            })
            .collect::<Result<_>>()?
    };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 >= scores[best].1 {
            best = i;
        }
    }
    Ok(FusionFit {
        model: fit_fusion_fixed(a, b, y, scores[best].0, cfg)?,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;
    use rand::{Rng, SeedableRng};

    fn encodings(n: usize, seed: u64, noise: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let a = y
            .iter()
            .map(|&t| {
                let mut r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                r[0] = t as f64 * 2.0 - 1.0 + noise * rng.random_range(-1.0..1.0);
                r
            })
            .collect();
        let b = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (a, b, y)
    }

    #[test]
    fn zero_model_is_half() {
        let m = FusionModel::zeros(3, 2);
        assert_eq!(m.predict_proba(&[vec![5.0; 5], vec![-1.0; 5]]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn perfect_feature_gives_auc_one() {
        let (a, b, y) = encodings(40, 1, 0.0);
        let m = fit_fusion_fixed(&a, &b, &y, 0.0, &FusionConfig::default()).unwrap();
        let (va, vb, vy) = encodings(40, 2, 0.0);
        let p = m.predict_proba(&concat(&va, &vb, &vy).unwrap()).unwrap();
        assert_eq!(auc(&p, &vy).unwrap(), 1.0);
        let train = m.predict_proba(&concat(&a, &b, &y).unwrap()).unwrap();
        assert!(train.iter().zip(&y).all(|(&p, &t)| (p > 0.5) == (t == 1)));
    }

    #[test]
    fn huge_penalty_gives_base_rate() {
        let (a, b, mut y) = encodings(40, 3, 0.5);
        for t in y.iter_mut().take(10) {
            *t = 1;
        }
        let m = fit_fusion_fixed(&a, &b, &y, 1e3, &FusionConfig::default()).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-3));
        let base = y.iter().filter(|&&t| t == 1).count() as f64 / y.len() as f64;
        let p = m.predict_proba(&concat(&a, &b, &y).unwrap()).unwrap();
        assert!(p.iter().all(|&q| (q - base).abs() < 1e-6));
    }

    #[test]
    fn l1_norm_decreases_along_the_grid() {
        let (a, b, y) = encodings(60, 4, 1.5);
        let cfg = FusionConfig::default();
        let mut prev = f64::INFINITY;
        for l1 in [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1] {
            let norm = fit_fusion_fixed(&a, &b, &y, l1, &cfg).unwrap().l1_norm();
            assert!(norm <= prev + 1e-6, "l1 {l1}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn selection_and_alignment() {
        let (a, b, y) = encodings(48, 5, 0.8);
        let groups: Vec<usize> = (0..48).collect();
        let cfg = FusionConfig::default();
        let fit = fit_fusion(&a, &b, &y, &groups, &cfg).unwrap();
        assert_eq!(fit.scores.len(), 4);
        let best = fit.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let last = fit.scores.iter().rev().find(|s| s.1 == best).unwrap().0;
        assert_eq!(fit.model.l1_strength, last);
        assert_eq!(fit, fit_fusion(&a, &b, &y, &groups, &cfg).unwrap());
        assert!(matches!(
            fit_fusion(&a[1..], &b, &y, &groups, &cfg),
            Err(Error::Alignment(_))
        ));
        let bad = FusionConfig {
            grid: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
