use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_matrix, grouped_folds, sigmoid};
use crate::error::{Error, Result};
use crate::eval::average_precision;

/// Gradient 2-norm at which Newton iterations stop.
pub const LR_TOLERANCE: f64 = 1e-6;
const MAX_NEWTON: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn zeros(d: usize) -> Self {
        Self {
            coef: vec![0.0; d],
            intercept: 0.0,
        }
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(Error::Shape {
                expected: vec![self.coef.len()],
                got: vec![x.len()],
            });
        }
        Ok(self.intercept + self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|x| self.decision(x).map(sigmoid)).collect()
    }
}

/// L2-penalised logistic regression, `0.5 |w|^2 + C * sum(log loss)` with an
/// unpenalised intercept, solved by damped Newton steps.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], c: f64) -> Result<LogisticModel> {
    let d = check_matrix(x, y)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param(format!("inverse regularisation C = {c} must be positive")));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Degenerate("logistic regression needs both classes".into()));
    }
    let n = x.len();
    let p = d + 1;
    // Design matrix with a trailing column of ones for the intercept.
    let design = DMatrix::from_fn(n, p, |i, j| if j < d { x[i][j] } else { 1.0 });
    let target = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
    let objective = |theta: &DVector<f64>| -> f64 {
        let z = &design * theta;
        let mut loss = 0.0;
        for i in 0..n {
            // log(1 + e^z) - y z, evaluated stably.
            let zi = z[i];
            let softplus = if zi > 0.0 { zi + (-zi).exp().ln_1p() } else { zi.exp().ln_1p() };
            loss += softplus - target[i] * zi;
        }
        let reg: f64 = theta.rows(0, d).norm_squared();
        0.5 * reg + c * loss
    };
    let base = pos as f64 / n as f64;
    let mut theta = DVector::zeros(p);
    theta[d] = (base / (1.0 - base)).ln();
    let mut f = objective(&theta);
    for _ in 0..MAX_NEWTON {
        let z = &design * &theta;
        let prob = z.map(sigmoid);
        let resid = &prob - &target;
        let mut grad = design.transpose() * &resid * c;
        for j in 0..d {
            grad[j] += theta[j];
        }
        if grad.norm() < LR_TOLERANCE {
            break;
        }
        let weights = prob.map(|q| q * (1.0 - q) * c);
        let mut weighted = design.clone();
        for i in 0..n {
            weighted.row_mut(i).scale_mut(weights[i]);
        }
        let mut hess = design.transpose() * weighted;
        for j in 0..d {
            hess[(j, j)] += 1.0;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                // Saturated intercept direction; a small ridge restores definiteness.
                for j in 0..p {
                    hess[(j, j)] += 1e-10;
                }
                hess.cholesky()
                    .ok_or_else(|| Error::Degenerate("singular logistic Hessian".into()))?
                    .solve(&grad)
            }
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &theta - &step * t;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No further decrease is representable.
            break;
        }
    }
    Ok(LogisticModel {
        coef: theta.rows(0, d).iter().copied().collect(),
        intercept: theta[d],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFit {
    pub model: LogisticModel,
    pub c: f64,
    /// Mean inner-fold APS for each grid value, in ascending order of C.
    pub scores: Vec<(f64, f64)>,
}

/// Picks `C` by mean APS over inner stratified folds (split by `groups`, so
/// samples of one subject never straddle a split), preferring the smaller C
/// on ties, then refits on everything.
pub fn fit_lr_gridsearch(
    x: &[Vec<f64>],
    y: &[u8],
    groups: &[usize],
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LrFit> {
    check_matrix(x, y)?;
    if grid.is_empty() {
        return Err(Error::param("empty C grid"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let per_class = [0u8, 1].map(|k| y.iter().filter(|&&v| v == k).count());
    if per_class.iter().any(|&n| n < 2) {
        return Err(Error::Degenerate("need at least two samples per class".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    if grid.len() == 1 {
        scores.push((grid[0], f64::NAN));
    } else {
        let groups_split = grouped_folds(y, groups, folds, seed)?;
        for &c in &grid {
            let mut total = 0.0;
            for held in &groups_split {
                let mut is_held = vec![false; x.len()];
                for &i in held {
                    is_held[i] = true;
                }
                let (tr, va): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| !is_held[i]);
                let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                let yt: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
                let m = fit_logistic(&xt, &yt, c)?;
                let xv: Vec<Vec<f64>> = va.iter().map(|&i| x[i].clone()).collect();
                let yv: Vec<u8> = va.iter().map(|&i| y[i]).collect();
                total += average_precision(&m.predict_proba(&xv)?, &yv)?;
            }
            scores.push((c, total / groups_split.len() as f64));
        }
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 {
            best = i;
        }
    }
    let c = scores[best].0;
    Ok(LrFit {
        model: fit_logistic(x, y, c)?,
        c,
        scores,
    })
}
