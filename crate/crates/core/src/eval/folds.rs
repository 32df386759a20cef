use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject and its longitudinal images (paths or ids, in acquisition
/// order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: u8,
    pub images: Vec<String>,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!("subject {}: label must be 0 or 1", self.subject_id)));
        }
        if self.images.is_empty() {
            return Err(Error::Data(format!("subject {} has no images", self.subject_id)));
        }
        Ok(())
    }
}

pub fn write_manifest(subjects: &[SubjectRecord], mut w: impl Write) -> Result<()> {
    for s in subjects {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_manifest(r: impl Read) -> Result<Vec<SubjectRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SubjectRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("manifest line {}: {e}", n + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    let mut ids: Vec<&str> = out.iter().map(|s| s.subject_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("duplicate subject id {}", w[0])));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_manifest(std::fs::File::open(path)?)
}

/// Subject indices refer to the slice the plan was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Chosen image index for each entry of `validation`.
    pub selected_image: Vec<usize>,
}

impl Fold {
    /// `(subject, image)` pairs: every image of every training subject.
    pub fn train_images(&self, subjects: &[SubjectRecord]) -> Vec<(usize, usize)> {
        self.train
            .iter()
            .flat_map(|&s| (0..subjects[s].images.len()).map(move |i| (s, i)))
            .collect()
    }

    /// `(subject, image)` pairs: one selected image per validation subject.
    pub fn validation_images(&self) -> Vec<(usize, usize)> {
        self.validation.iter().copied().zip(self.selected_image.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Subject-level stratified k-fold split.
///
/// Each class is shuffled and dealt round-robin over the folds, the second
/// class continuing where the first stopped so fold sizes stay balanced.
pub fn stratified_folds(subjects: &[SubjectRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::param("k must be at least 2"));
    }
    for s in subjects {
        s.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].label == class).collect();
        if idx.len() < k {
            return Err(Error::Stratification(format!(
                "class {class} has {} subjects, fewer than k = {k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            members[next].push(i);
            next = (next + 1) % k;
        }
    }
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(1);
    let folds = (0..k)
        .map(|f| {
            let mut validation = members[f].clone();
            validation.sort_unstable();
            let mut train: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| members[g].iter().copied()).collect();
            train.sort_unstable();
            let selected_image = validation.iter().map(|&s| pick.random_range(0..subjects[s].images.len())).collect();
            Fold {
                train,
                validation,
                selected_image,
            }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}

/// Stratified indices `0..labels.len()` in `k` groups, for inner model
/// selection over already-flattened samples.
pub fn stratified_indices(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Stratification(format!(
                "class {class} has {} samples, fewer than {k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            groups[next].push(i);
            next = (next + 1) % k;
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(groups)
}
