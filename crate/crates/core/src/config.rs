//! The pipeline configuration file: one JSON document with documented
//! defaults for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cubical::Filtration;
use crate::ensemble::FusionConfig;
use crate::error::{Error, Result};
use crate::eval::{ParamDist, SearchSpace};
use crate::nn::{CnnWidths, TrainConfig};
use crate::pimage::PersistenceImageParams;
use crate::volume::Dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// JSON-lines cohort manifest; image paths resolve against its directory.
    pub manifest: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            work_dir: PathBuf::from("work"),
        }
    }
}

/// Applied in order: min-max normalisation, Gaussian smoothing, block-mean
/// downsampling, then a centre crop to `volume_dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub normalize: bool,
    /// 0 disables smoothing.
    pub gaussian_sigma: f64,
    pub downsample: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            normalize: true,
            gaussian_sigma: 0.0,
            downsample: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhConfig {
    pub mode: Filtration,
    pub dims: Vec<u8>,
    /// Pairs with persistence <= eps are dropped before imaging.
    pub low_persistence_eps: f32,
    /// Homology dimension rendered into the persistence image.
    pub image_dim: u8,
}

impl Default for PhConfig {
    fn default() -> Self {
        Self {
            mode: Filtration::Superlevel,
            dims: vec![0, 1, 2],
            low_persistence_eps: 0.0,
            image_dim: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: CnnWidths,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub lr_grid: Vec<f64>,
    pub lr_inner_folds: usize,
    pub fusion: FusionConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            lr_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            lr_inner_folds: 3,
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub runs: usize,
    pub seed: u64,
    /// Share of each training fold's subjects held out for early stopping.
    pub early_stopping_fraction: f64,
    /// Decision threshold for accuracy, recall and precision.
    pub threshold: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 4,
            runs: 2,
            seed: 0,
            early_stopping_fraction: 0.2,
            threshold: 0.5,
        }
    }
}

/// Random search for the patch model's hyperparameters on one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub patch_index: Dims,
    pub budget: usize,
    /// Recognised names: learning_rate, batch_size, conv1, conv2, dense.
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let mut space = SearchSpace::new();
        space.insert("learning_rate".into(), ParamDist::LogUniform { lo: 1e-4, hi: 1e-2 });
        space.insert("conv1".into(), ParamDist::Choice { values: vec![4.0, 8.0] });
        space.insert("dense".into(), ParamDist::Choice { values: vec![16.0, 32.0, 64.0] });
        Self {
            patch_index: [2, 3, 2],
            budget: 8,
            space,
        }
    }
}

pub const SEARCH_PARAMS: [&str; 5] = ["learning_rate", "batch_size", "conv1", "conv2", "dense"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub preprocess: PreprocessConfig,
    /// Volume dimensions after preprocessing.
    pub volume_dims: Dims,
    pub patch_dims: Dims,
    pub ph: PhConfig,
    pub pi: PersistenceImageParams,
    pub patch_model: ModelConfig,
    pub pi_model: ModelConfig,
    pub ensemble: EnsembleConfig,
    pub cv: CvConfig,
    pub search: SearchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            preprocess: PreprocessConfig::default(),
            volume_dims: [60, 72, 60],
            patch_dims: [10, 12, 10],
            ph: PhConfig::default(),
            pi: PersistenceImageParams::default(),
            patch_model: ModelConfig::default(),
            pi_model: ModelConfig::default(),
            ensemble: EnsembleConfig::default(),
            cv: CvConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{prefix}.{field}"), message),
        other => Error::config(prefix, other.to_string()),
    }
}

fn check_widths(prefix: &str, w: &CnnWidths) -> Result<()> {
    if w.conv1 == 0 || w.conv2 == 0 || w.dense == 0 || w.kernel == 0 {
        return Err(Error::config(format!("{prefix}.widths"), format!("all widths must be positive, got {w:?}")));
    }
    Ok(())
}

impl PipelineConfig {
    /// Range checks only; see [`validate_config`] for path checks.
    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        if !(p.gaussian_sigma >= 0.0 && p.gaussian_sigma.is_finite()) {
            return Err(Error::config("preprocess.gaussian_sigma", format!("must be >= 0, got {}", p.gaussian_sigma)));
        }
        if p.downsample == 0 {
            return Err(Error::config("preprocess.downsample", "must be at least 1"));
        }
        if self.volume_dims.contains(&0) || self.patch_dims.contains(&0) {
            return Err(Error::config("patch_dims", "dimensions must be positive"));
        }
        for a in 0..3 {
            if !self.volume_dims[a].is_multiple_of(self.patch_dims[a]) {
                return Err(Error::config(
                    "patch_dims",
                    format!(
                        "patch dims {:?} do not divide volume dims {:?} (axis {})",
                        self.patch_dims,
                        self.volume_dims,
                        ["x", "y", "z"][a]
                    ),
                ));
            }
        }
        let blocks: Vec<usize> = (0..3).map(|a| self.volume_dims[a] / self.patch_dims[a]).collect();
        if (0..3).any(|a| self.search.patch_index[a] >= blocks[a]) {
            return Err(Error::config(
                "search.patch_index",
                format!("{:?} outside the {blocks:?} patch grid", self.search.patch_index),
            ));
        }
        let ph = &self.ph;
        if ph.dims.is_empty() || ph.dims.iter().any(|&d| d > 2) {
            return Err(Error::config("ph.dims", format!("need a non-empty subset of 0..=2, got {:?}", ph.dims)));
        }
        if !ph.dims.contains(&ph.image_dim) {
            return Err(Error::config("ph.image_dim", format!("{} is not among ph.dims {:?}", ph.image_dim, ph.dims)));
        }
        if !(ph.low_persistence_eps >= 0.0 && ph.low_persistence_eps.is_finite()) {
            return Err(Error::config("ph.low_persistence_eps", format!("must be >= 0, got {}", ph.low_persistence_eps)));
        }
        self.pi.validate().map_err(|e| prefixed("pi", e))?;
        for (name, m) in [("patch_model", &self.patch_model), ("pi_model", &self.pi_model)] {
            check_widths(name, &m.widths)?;
            m.train.validate().map_err(|e| prefixed(&format!("{name}.train"), e))?;
        }
        let e = &self.ensemble;
        if e.lr_grid.is_empty() || e.lr_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::config("ensemble.lr_grid", "values must be positive and finite"));
        }
        if e.lr_inner_folds < 2 {
            return Err(Error::config("ensemble.lr_inner_folds", "must be at least 2"));
        }
        e.fusion.validate().map_err(|e| prefixed("ensemble.fusion", e))?;
        let cv = &self.cv;
        if cv.k < 2 {
            return Err(Error::config("cv.k", format!("must be at least 2, got {}", cv.k)));
        }
        if cv.runs == 0 {
            return Err(Error::config("cv.runs", "must be at least 1"));
        }
        if !(cv.early_stopping_fraction > 0.0 && cv.early_stopping_fraction < 1.0) {
            return Err(Error::config("cv.early_stopping_fraction", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&cv.threshold) {
            return Err(Error::config("cv.threshold", "must lie in [0, 1]"));
        }
        if self.search.budget == 0 {
            return Err(Error::config("search.budget", "must be at least 1"));
        }
        for name in self.search.space.keys() {
            if !SEARCH_PARAMS.contains(&name.as_str()) {
                return Err(Error::config(format!("search.space.{name}"), format!("unknown parameter; known: {SEARCH_PARAMS:?}")));
            }
        }
        Ok(())
    }

    /// Patch-grid block counts.
    pub fn blocks(&self) -> Dims {
        std::array::from_fn(|a| self.volume_dims[a] / self.patch_dims[a])
    }

    pub fn n_patches(&self) -> usize {
        self.blocks().iter().product()
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, applies defaults, range-checks, and checks that referenced paths
/// exist. A relative manifest path resolves against the config's directory.
pub fn validate_config(path: &Path) -> Result<PipelineConfig> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut cfg = parse_config(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(m) = &cfg.paths.manifest {
        let m = if m.is_relative() { base.join(m) } else { m.clone() };
        if !m.exists() {
            return Err(Error::config("paths.manifest", format!("{} does not exist", m.display())));
        }
        cfg.paths.manifest = Some(m);
    }
    if cfg.paths.work_dir.is_relative() {
        cfg.paths.work_dir = base.join(&cfg.paths.work_dir);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected a field error, got {other}"),
        }
    }

    #[test]
    fn empty_object_is_the_default() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let echoed = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), cfg);
        assert_eq!(cfg.n_patches(), 216);
    }

    #[test]
    fn tiling_error_names_both_dims() {
        let e = parse_config(r#"{"patch_dims": [7, 12, 10]}"#).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("[7, 12, 10]") && msg.contains("[60, 72, 60]"), "{msg}");
        assert_eq!(field_of(e), "patch_dims");
    }

    #[test]
    fn range_errors_name_fields() {
        let cases = [
            (r#"{"preprocess": {"gaussian_sigma": -1}}"#, "preprocess.gaussian_sigma"),
            (r#"{"pi": {"sigma": -0.1}}"#, "pi"),
            (r#"{"cv": {"k": 1}}"#, "cv.k"),
            (r#"{"patch_model": {"train": {"adam_beta1": 1.5}}}"#, "patch_model.train.adam_beta"),
            (r#"{"ph": {"dims": [0], "image_dim": 1}}"#, "ph.image_dim"),
            (r#"{"ensemble": {"lr_grid": []}}"#, "ensemble.lr_grid"),
            (r#"{"search": {"space": {"momentum": {"kind": "uniform", "lo": 0, "hi": 1}}}}"#, "search.space.momentum"),
        ];
        for (text, field) in cases {
            assert_eq!(field_of(parse_config(text).unwrap_err()), field, "{text}");
        }
        assert!(matches!(parse_config(r#"{"bogus": 1}"#), Err(Error::Parse(_))));
        assert!(matches!(parse_config("not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn dangling_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"paths": {"manifest": "nope.jsonl"}}"#).unwrap();
        assert_eq!(field_of(validate_config(&path).unwrap_err()), "paths.manifest");
        std::fs::write(dir.path().join("nope.jsonl"), "").unwrap();
        let cfg = validate_config(&path).unwrap();
        assert_eq!(cfg.paths.manifest.unwrap(), dir.path().join("nope.jsonl"));
        assert_eq!(cfg.paths.work_dir, dir.path().join("work"));
        assert!(matches!(validate_config(&dir.path().join("missing.json")), Err(Error::MissingFile(_))));
    }
}
