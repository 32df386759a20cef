//! Ensembles over trained models: logistic regression on centred patch
//! probabilities, and a sparse linear fusion of preclassification encodings.

mod fusion;
mod lr;

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

pub use fusion::{fit_fusion, fit_fusion_fixed, FusionConfig, FusionFit, FusionModel};
pub use lr::{fit_logistic, fit_lr_gridsearch, LogisticModel, LrFit, LR_TOLERANCE};

use crate::error::{Error, Result};
use crate::eval::stratified_indices;

/// `p -> 2p - 1`, mapping the decision boundary 0.5 to 0.
pub fn normalize_center(p: &[f64]) -> Result<Vec<f64>> {
    p.iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok(2.0 * v - 1.0)
            } else {
                Err(Error::Range { value: v, lo: 0.0, hi: 1.0 })
            }
        })
        .collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Checks a row-major sample matrix against its labels; returns the width.
pub(crate) fn check_matrix(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Alignment(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x.first().map(Vec::len).ok_or_else(|| Error::Data("no samples".into()))?;
    if let Some(r) = x.iter().position(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: vec![d],
            got: vec![x[r].len()],
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    Ok(d)
}

/// Sample indices in `k` held-out groups, splitting whole groups (subjects)
/// with stratification on the group label. `k` shrinks to the smaller
/// class's group count when needed.
pub(crate) fn grouped_folds(y: &[u8], groups: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if groups.len() != y.len() {
        return Err(Error::Alignment(format!("{} groups for {} samples", groups.len(), y.len())));
    }
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut group_label = vec![None; ids.len()];
    for (&g, &label) in groups.iter().zip(y) {
        let slot = &mut group_label[ids.binary_search(&g).expect("present")];
        match slot {
            None => *slot = Some(label),
            Some(l) if *l != label => {
                return Err(Error::Data(format!("group {g} mixes labels")));
            }
            _ => {}
        }
    }
    let labels: Vec<u8> = group_label.into_iter().map(|l| l.expect("every group has a sample")).collect();
    let smaller = [0u8, 1].map(|c| labels.iter().filter(|&&l| l == c).count()).into_iter().min().unwrap_or(0);
    let k = k.min(smaller);
    if k < 2 {
        return Err(Error::Stratification("need at least two subjects per class".into()));
    }
    let parts = stratified_indices(&labels, k, seed)?;
    Ok(parts
        .into_iter()
        .map(|part| {
            (0..y.len())
                .filter(|&i| part.binary_search(&ids.binary_search(&groups[i]).expect("present")).is_ok())
                .collect()
        })
        .collect())
}

/// Either trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleModel {
    Logistic(LogisticModel),
    Fusion(FusionModel),
}

/// Probabilities for feature rows: centred patch probabilities for the
/// logistic model, concatenated encodings for the fusion model.
pub fn predict_ensemble(model: &EnsembleModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    match model {
        EnsembleModel::Logistic(m) => m.predict_proba(rows),
        EnsembleModel::Fusion(m) => m.predict_proba(rows),
    }
}

/// One row of the ensemble feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub image_id: String,
    pub features: Vec<f64>,
    pub label: u8,
}

/// `subject_id,image_id,f000,...,label`.
pub fn write_feature_csv(rows: &[FeatureRow], mut w: impl Write) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.features.len());
    if rows.iter().any(|r| r.features.len() != d) {
        return Err(Error::Data("feature rows differ in width".into()));
    }
    let cols: Vec<String> = (0..d).map(|j| format!("f{j:03}")).collect();
    writeln!(w, "subject_id,image_id,{}{}label", cols.join(","), if d > 0 { "," } else { "" })?;
    for r in rows {
        if r.subject_id.contains(',') || r.image_id.contains(',') {
            return Err(Error::Data("ids must not contain commas".into()));
        }
        write!(w, "{},{}", r.subject_id, r.image_id)?;
        for v in &r.features {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", r.label)?;
    }
    Ok(())
}

pub fn read_feature_csv(r: impl Read) -> Result<Vec<FeatureRow>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::MalformedHeader("empty feature CSV".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "subject_id" || cols[1] != "image_id" || cols[cols.len() - 1] != "label" {
        return Err(Error::MalformedHeader(format!("feature CSV header {header:?}")));
    }
    let d = cols.len() - 3;
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Parse(format!("bad feature row {line:?}"));
        if f.len() != d + 3 {
            return Err(bad());
        }
        let features = f[2..2 + d].iter().map(|v| v.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        let label: u8 = f[d + 2].parse().map_err(|_| bad())?;
        if label > 1 {
            return Err(bad());
        }
        out.push(FeatureRow {
            subject_id: f[0].to_string(),
            image_id: f[1].to_string(),
            features,
            label,
        });
    }
    Ok(out)
}
