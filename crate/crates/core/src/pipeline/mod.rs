//! The staged experiment: preprocessing, patch tiling, persistence
//! diagrams and images, per-patch and persistence-image CNNs under
//! cross-validation, both ensembles, and the metrics report.
//!
//! Every stage writes under the work directory and is recorded in the
//! [`Ledger`]; a stage whose input key and outputs are unchanged is skipped.
//! Stage keys chain the keys of their inputs, so a config change reruns
//! exactly the affected stages. All randomness derives from `cv.seed`.

mod ledger;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ledger::{digest, file_sha256, Ledger, LedgerEntry, LEDGER_NAME};

use crate::config::{ModelConfig, PipelineConfig};
use crate::cubical::{compute_persistence, filter_low_persistence, load_diagram, save_diagram};
use crate::ensemble::{fit_fusion, fit_lr_gridsearch, normalize_center, FusionConfig};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, compute_metrics, random_search, read_manifest, stratified_folds, stratified_indices,
    write_report_json, write_summary_csv, Configuration, FoldPlan, MetricsReport, ModelReport, RunMetrics,
    SearchResult, SubjectRecord,
};
use crate::nn::{
    image_cnn, load_checkpoint, patch_cnn, predict_proba, save_checkpoint, train_with_early_stopping,
    write_history_csv, Dataset, Mode, Model, ModelSpec, Tensor, TrainOutcome,
};
use crate::pimage::{diagram_image, load_image, save_image};
use crate::volume::{
    crop_center, downsample, extract_patches, gaussian_filter, load_volume, normalize_intensity,
    patch_linear_index, save_volume, Volume3D,
};

pub const MODEL_P_STAR: &str = "3d_cnn_p_star";
pub const MODEL_PI: &str = "2d_cnn_pi";
pub const MODEL_LR: &str = "lr_all_patches";
pub const MODEL_FUSION: &str = "fusion_p_star_pi";

/// Deterministic 64-bit seed for one named purpose.
pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut bytes: Vec<Vec<u8>> = vec![base.to_le_bytes().to_vec(), tag.as_bytes().to_vec()];
    bytes.extend(parts.iter().map(|p| p.to_le_bytes().to_vec()));
    let refs: Vec<&[u8]> = bytes.iter().map(Vec::as_slice).collect();
    u64::from_str_radix(&digest(&refs)[..16], 16).expect("hex digest")
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config types serialise")
}

fn key_of(parts: &[&[u8]]) -> String {
    digest(parts)
}

/// One longitudinal image of the cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub subject: usize,
    pub index: usize,
    /// File-name-safe identifier, unique in the cohort.
    pub key: String,
    pub source: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub subjects: Vec<SubjectRecord>,
    /// Images in manifest order.
    pub images: Vec<ImageRef>,
    offsets: Vec<usize>,
    manifest_bytes: Vec<u8>,
}

impl Cohort {
    /// Reads a manifest; relative image paths resolve against its directory.
    pub fn load(manifest: &Path) -> Result<Self> {
        let bytes = fs::read(manifest).map_err(|_| Error::MissingFile(manifest.to_path_buf()))?;
        let subjects = read_manifest(bytes.as_slice())?;
        if subjects.is_empty() {
            return Err(Error::Data("manifest lists no subjects".into()));
        }
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut images = Vec::new();
        let mut offsets = Vec::with_capacity(subjects.len());
        for (s, rec) in subjects.iter().enumerate() {
            offsets.push(images.len());
            for (i, p) in rec.images.iter().enumerate() {
                let safe: String = rec
                    .subject_id
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                    .collect();
                let p = Path::new(p);
                images.push(ImageRef {
                    subject: s,
                    index: i,
                    key: format!("{safe}_{i:02}"),
                    source: if p.is_relative() { base.join(p) } else { p.to_path_buf() },
                });
            }
        }
        let mut keys: Vec<&str> = images.iter().map(|i| i.key.as_str()).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("subject ids collide after sanitising: {}", w[0])));
        }
        Ok(Self {
            subjects,
            images,
            offsets,
            manifest_bytes: bytes,
        })
    }

    /// Global image index of `(subject, image)`.
    pub fn image(&self, subject: usize, index: usize) -> usize {
        self.offsets[subject] + index
    }

    pub fn image_labels(&self) -> Vec<u8> {
        self.images.iter().map(|i| self.subjects[i.subject].label).collect()
    }

    /// Every image of the given subjects, in order.
    pub fn images_of(&self, subjects: &[usize]) -> Vec<usize> {
        subjects
            .iter()
            .flat_map(|&s| (0..self.subjects[s].images.len()).map(move |i| self.offsets[s] + i))
            .collect()
    }
}

/// Outer folds plus the early-stopping subjects held out of each training fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub plan: FoldPlan,
    pub early_stopping: Vec<Vec<usize>>,
}

impl Splits {
    /// Training subjects that are not held out for early stopping.
    pub fn fit_subjects(&self, fold: usize) -> Vec<usize> {
        let es = &self.early_stopping[fold];
        self.plan.folds[fold].train.iter().copied().filter(|s| es.binary_search(s).is_err()).collect()
    }
}

/// Probabilities of one trained model for every cohort image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    /// 0 for models without epochs.
    pub best_epoch: usize,
    /// Validation loss at the restored epoch; `None` for the ensembles.
    pub early_stopping_loss: Option<f64>,
    /// Factor applied to the model's inputs (persistence images are scaled
    /// by the training fold's maximum pixel).
    pub input_scale: f64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model: String,
    /// Fold-major.
    pub cells: Vec<CellPrediction>,
}

impl PredictionSet {
    pub fn cell(&self, fold: usize, run: usize) -> Result<&CellPrediction> {
        self.cells
            .iter()
            .find(|c| c.fold == fold && c.run == run)
            .ok_or_else(|| Error::IncompleteGrid(format!("{}: no cell (fold {fold}, run {run})", self.model)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub models: Vec<ModelReport>,
    /// Patch chosen as P* in each fold (linear patch index).
    pub p_star: Vec<usize>,
    /// Mean validation AUC of every patch model.
    pub patch_mean_auc: Vec<f64>,
}

impl ExperimentResults {
    pub fn model(&self, name: &str) -> Option<&MetricsReport> {
        self.models.iter().find(|m| m.model == name).map(|m| &m.report)
    }
}

/// Normalisation, smoothing, downsampling and a centre crop to `volume_dims`.
pub fn preprocess_volume(v: &Volume3D, cfg: &PipelineConfig) -> Result<Volume3D> {
    let p = &cfg.preprocess;
    let mut v = if p.normalize { normalize_intensity(v) } else { v.clone() };
    if p.gaussian_sigma > 0.0 {
        v = gaussian_filter(&v, p.gaussian_sigma)?;
    }
    if p.downsample > 1 {
        v = downsample(&v, p.downsample)?;
    }
    if v.dims() == cfg.volume_dims {
        return Ok(v);
    }
    if (0..3).any(|a| v.dims()[a] < cfg.volume_dims[a]) {
        return Err(Error::Shape {
            expected: cfg.volume_dims.to_vec(),
            got: v.dims().to_vec(),
        });
    }
    crop_center(&v, cfg.volume_dims)
}

fn patch_rel(p: usize) -> PathBuf {
    PathBuf::from(format!("patches/p{p:03}.rvol"))
}

fn checkpoint_rel(model_dir: &str, fold: usize, run: usize) -> PathBuf {
    PathBuf::from(format!("models/{model_dir}/f{fold}_r{run}.json"))
}

fn checkpoint_outputs(rel: &Path) -> Vec<PathBuf> {
    vec![rel.to_path_buf(), rel.with_extension("bin"), rel.with_extension("history.csv")]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub struct Pipeline {
    cfg: PipelineConfig,
    ledger: Ledger,
    pool: rayon::ThreadPool,
    cohort: OnceLock<Cohort>,
    keys: Mutex<HashMap<String, String>>,
    log: bool,
}

impl Pipeline {
    /// `jobs = 0` uses every core.
    pub fn new(cfg: PipelineConfig, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        let ledger = Ledger::open(&cfg.paths.work_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::param(format!("worker pool: {e}")))?;
        Ok(Self {
            cfg,
            ledger,
            pool,
            cohort: OnceLock::new(),
            keys: Mutex::new(HashMap::new()),
            log: false,
        })
    }

    /// Print one line per stage to stderr.
    pub fn with_log(mut self, on: bool) -> Self {
        self.log = on;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn work_dir(&self) -> &Path {
        &self.cfg.paths.work_dir
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.work_dir().join(rel)
    }

    fn note(&self, msg: &str) {
        if self.log {
            eprintln!("{msg}");
        }
    }

    pub fn cohort(&self) -> Result<&Cohort> {
        if let Some(c) = self.cohort.get() {
            return Ok(c);
        }
        let m = self
            .cfg
            .paths
            .manifest
            .as_ref()
            .ok_or_else(|| Error::config("paths.manifest", "required by this command"))?;
        let c = Cohort::load(m)?;
        Ok(self.cohort.get_or_init(|| c))
    }

    fn memo(&self, name: &str, f: impl FnOnce() -> Result<String>) -> Result<String> {
        if let Some(k) = self.keys.lock().expect("key lock").get(name) {
            return Ok(k.clone());
        }
        let k = f()?;
        self.keys.lock().expect("key lock").insert(name.to_string(), k.clone());
        Ok(k)
    }

    fn stage(&self, name: &str, key: &str, run: impl FnOnce() -> Result<Vec<PathBuf>>) -> Result<()> {
        if self.ledger.is_complete(name, key) {
            self.note(&format!("{name}: up to date"));
            return Ok(());
        }
        let outputs = run()?;
        self.ledger.record(name, key, &outputs)?;
        self.note(&format!("{name}: done"));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, rel: &Path, value: &T) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec_pretty(value)?)?;
        Ok(())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &Path) -> Result<T> {
        let path = self.path(rel);
        let bytes = fs::read(&path).map_err(|_| Error::MissingFile(path.clone()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn preprocess(&self) -> Result<String> {
        self.memo("preprocess", || {
            let c = self.cohort()?;
            let mut parts: Vec<Vec<u8>> = vec![
                b"preprocess".to_vec(),
                c.manifest_bytes.clone(),
                json(&self.cfg.preprocess),
                json(&self.cfg.volume_dims),
            ];
            for img in &c.images {
                parts.push(file_sha256(&img.source)?.into_bytes());
            }
            let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
            let key = key_of(&refs);
            self.stage("preprocess", &key, || {
                fs::create_dir_all(self.path("pre"))?;
                let outs: Vec<PathBuf> = c.images.iter().map(|i| PathBuf::from(format!("pre/{}.rvol", i.key))).collect();
                self.pool.install(|| {
                    c.images.par_iter().zip(&outs).try_for_each(|(img, rel)| {
                        let v = preprocess_volume(&load_volume(&img.source)?, &self.cfg)?;
                        save_volume(&v, self.path(rel))
                    })
                })?;
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    fn preprocessed(&self, img: &ImageRef) -> Result<Volume3D> {
        load_volume(self.path(format!("pre/{}.rvol", img.key)))
    }

    /// One RVOL per patch index: the patches of all images stacked along z.
    pub fn patches(&self) -> Result<String> {
        self.memo("patches", || {
            let up = self.preprocess()?;
            let key = key_of(&[b"patches", up.as_bytes(), &json(&self.cfg.patch_dims)]);
            self.stage("patches", &key, || {
                let c = self.cohort()?;
                let grids = self.pool.install(|| {
                    c.images
                        .par_iter()
                        .map(|i| extract_patches(&self.preprocessed(i)?, self.cfg.patch_dims))
                        .collect::<Result<Vec<_>>>()
                })?;
                fs::create_dir_all(self.path("patches"))?;
                let n = self.cfg.n_patches();
                let [px, py, pz] = self.cfg.patch_dims;
                self.pool.install(|| {
                    (0..n).into_par_iter().try_for_each(|p| {
                        let mut data = Vec::with_capacity(px * py * pz * grids.len());
                        for g in &grids {
                            data.extend_from_slice(g.patches[p].volume.data());
                        }
                        save_volume(&Volume3D::new([px, py, pz * grids.len()], data)?, self.path(patch_rel(p)))
                    })
                })?;
                Ok((0..n).map(patch_rel).collect())
            })?;
            Ok(key)
        })
    }

    /// Inputs of patch `p` for every image, shaped `[1, z, y, x]`.
    pub fn patch_tensors(&self, p: usize) -> Result<Vec<Tensor>> {
        let c = self.cohort()?;
        let stack = load_volume(self.path(patch_rel(p)))?;
        let [px, py, pz] = self.cfg.patch_dims;
        if stack.dims() != [px, py, pz * c.images.len()] {
            return Err(Error::Shape {
                expected: vec![px, py, pz * c.images.len()],
                got: stack.dims().to_vec(),
            });
        }
        stack
            .data()
            .chunks(px * py * pz)
            .map(|chunk| Tensor::new(vec![1, pz, py, px], chunk.to_vec()))
            .collect()
    }

    pub fn ph(&self) -> Result<String> {
        self.memo("ph", || {
            let up = self.preprocess()?;
            let ph = &self.cfg.ph;
            let key = key_of(&[b"ph", up.as_bytes(), &json(&ph.mode), &ph.dims]);
            self.stage("ph", &key, || {
                let c = self.cohort()?;
                let outs: Vec<PathBuf> = c.images.iter().map(|i| PathBuf::from(format!("ph/{}.csv", i.key))).collect();
                self.pool.install(|| {
                    c.images.par_iter().zip(&outs).try_for_each(|(img, rel)| {
                        let d = compute_persistence(&self.preprocessed(img)?, ph.mode, &ph.dims)?;
                        save_diagram(&d, self.path(rel))
                    })
                })?;
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    pub fn pi(&self) -> Result<String> {
        self.memo("pi", || {
            let up = self.ph()?;
            let ph = &self.cfg.ph;
            let key = key_of(&[
                b"pi",
                up.as_bytes(),
                &json(&self.cfg.pi),
                &ph.low_persistence_eps.to_le_bytes(),
                &[ph.image_dim],
            ]);
            self.stage("pi", &key, || {
                let c = self.cohort()?;
                fs::create_dir_all(self.path("pi"))?;
                let outs: Vec<PathBuf> = c.images.iter().map(|i| PathBuf::from(format!("pi/{}.rvol", i.key))).collect();
                self.pool.install(|| {
                    c.images.par_iter().zip(&outs).try_for_each(|(img, rel)| {
                        let d = load_diagram(self.path(format!("ph/{}.csv", img.key)), ph.mode)?;
                        let d = filter_low_persistence(&d, ph.low_persistence_eps)?;
                        save_image(&diagram_image(&d, ph.image_dim, &self.cfg.pi)?, self.path(rel))
                    })
                })?;
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    /// Persistence images of every cohort image, shaped `[1, rows, cols]`.
    pub fn pi_tensors(&self) -> Result<Vec<Tensor>> {
        let c = self.cohort()?;
        c.images
            .iter()
            .map(|i| {
                let img = load_image(self.path(format!("pi/{}.rvol", i.key)), self.cfg.pi, self.cfg.ph.image_dim)?;
                Ok(Tensor::from_image(&img))
            })
            .collect()
    }

    pub fn folds(&self) -> Result<String> {
        self.memo("folds", || {
            let c = self.cohort()?;
            let cv = &self.cfg.cv;
            let key = key_of(&[
                b"folds",
                &c.manifest_bytes,
                &cv.k.to_le_bytes(),
                &cv.seed.to_le_bytes(),
                &cv.early_stopping_fraction.to_le_bytes(),
            ]);
            self.stage("folds", &key, || {
                let plan = stratified_folds(&c.subjects, cv.k, derive_seed(cv.seed, "folds", &[]))?;
                let parts = ((1.0 / cv.early_stopping_fraction).round() as usize).max(2);
                let mut early_stopping = Vec::with_capacity(cv.k);
                for (f, fold) in plan.folds.iter().enumerate() {
                    let labels: Vec<u8> = fold.train.iter().map(|&s| c.subjects[s].label).collect();
                    let held = stratified_indices(&labels, parts, derive_seed(cv.seed, "early-stopping", &[f as u64]))?;
                    let mut es: Vec<usize> = held[0].iter().map(|&i| fold.train[i]).collect();
                    es.sort_unstable();
                    let classes = |set: &[usize]| [0u8, 1].map(|l| set.iter().any(|&s| c.subjects[s].label == l));
                    if es.is_empty() || classes(&es) != [true, true] {
                        return Err(Error::Stratification(format!(
                            "fold {f}: early-stopping split needs both classes; lower cv.early_stopping_fraction or add subjects"
                        )));
                    }
                    early_stopping.push(es);
                }
                let rel = PathBuf::from("folds.json");
                self.write_json(&rel, &Splits { plan, early_stopping })?;
                Ok(vec![rel])
            })?;
            Ok(key)
        })
    }

    pub fn splits(&self) -> Result<Splits> {
        self.folds()?;
        self.read_json(Path::new("folds.json"))
    }

    fn train_cell(
        &self,
        spec: &ModelSpec,
        model_cfg: &ModelConfig,
        inputs: &[Tensor],
        fit: &[usize],
        es: &[usize],
        seed: u64,
    ) -> Result<(TrainOutcome, f64)> {
        let labels = self.cohort()?.image_labels();
        let set = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| &inputs[i]).collect(), idx.iter().map(|&i| labels[i] as f32).collect());
        let mut train_cfg = model_cfg.train;
        train_cfg.seed = seed;
        let out = train_with_early_stopping(spec, &set(fit)?, &set(es)?, &train_cfg)?;
        let es_loss = out
            .history
            .iter()
            .find(|h| h.epoch == out.best_epoch)
            .map_or(f64::NAN, |h| h.val_loss);
        Ok((out, es_loss))
    }

    fn save_cell_model(&self, rel: &Path, out: &TrainOutcome, seed: u64) -> Result<()> {
        let path = self.path(rel);
        fs::create_dir_all(path.parent().expect("nested path"))?;
        save_checkpoint(&out.model, seed, &path)?;
        write_history_csv(&out.history, std::io::BufWriter::new(fs::File::create(path.with_extension("history.csv"))?))
    }

    pub fn patch_spec(&self) -> ModelSpec {
        let [px, py, pz] = self.cfg.patch_dims;
        patch_cnn([pz, py, px], self.cfg.patch_model.widths)
    }

    pub fn pi_spec(&self) -> ModelSpec {
        image_cnn(self.cfg.pi.resolution, self.cfg.pi_model.widths)
    }

    /// Trains patch `p` for every (fold, run).
    pub fn train_patch(&self, p: usize) -> Result<String> {
        if p >= self.cfg.n_patches() {
            return Err(Error::param(format!("patch index {p} outside 0..{}", self.cfg.n_patches())));
        }
        let name = format!("train-patch/p{p:03}");
        self.memo(&name, || {
            let (up, folds) = (self.patches()?, self.folds()?);
            let key = key_of(&[
                b"train-patch",
                up.as_bytes(),
                folds.as_bytes(),
                &json(&self.cfg.patch_model),
                &self.cfg.cv.runs.to_le_bytes(),
                &self.cfg.cv.seed.to_le_bytes(),
                &p.to_le_bytes(),
            ]);
            self.stage(&name, &key, || {
                let c = self.cohort()?;
                let splits = self.splits()?;
                let inputs = self.patch_tensors(p)?;
                let spec = self.patch_spec();
                let refs: Vec<&Tensor> = inputs.iter().collect();
                let mut cells = Vec::new();
                let mut outs = Vec::new();
                for f in 0..self.cfg.cv.k {
                    let fit = c.images_of(&splits.fit_subjects(f));
                    let es = c.images_of(&splits.early_stopping[f]);
                    for r in 0..self.cfg.cv.runs {
                        let seed = derive_seed(self.cfg.cv.seed, "patch", &[p as u64, f as u64, r as u64]);
                        let (out, es_loss) = self.train_cell(&spec, &self.cfg.patch_model, &inputs, &fit, &es, seed)?;
                        let rel = checkpoint_rel(&format!("patch/p{p:03}"), f, r);
                        self.save_cell_model(&rel, &out, seed)?;
                        outs.extend(checkpoint_outputs(&rel));
                        cells.push(CellPrediction {
                            fold: f,
                            run: r,
                            seed,
                            best_epoch: out.best_epoch,
                            early_stopping_loss: Some(es_loss),
                            input_scale: 1.0,
                            probs: predict_proba(&out.model, &refs)?,
                        });
                    }
                }
                let rel = PathBuf::from(format!("preds/patch/p{p:03}.json"));
                self.write_json(&rel, &PredictionSet { model: format!("patch_{p:03}"), cells })?;
                outs.push(rel);
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    /// Trains all patches in parallel; the key covers all of them.
    pub fn train_all_patches(&self) -> Result<String> {
        self.memo("train-patch/all", || {
            self.patches()?;
            self.folds()?;
            let keys = self
                .pool
                .install(|| (0..self.cfg.n_patches()).into_par_iter().map(|p| self.train_patch(p)).collect::<Result<Vec<_>>>())?;
            Ok(key_of(&[b"train-patch/all", keys.join(",").as_bytes()]))
        })
    }

    pub fn patch_predictions(&self, p: usize) -> Result<PredictionSet> {
        self.train_patch(p)?;
        self.read_json(Path::new(&format!("preds/patch/p{p:03}.json")))
    }

    /// Per fold, the patch whose models reached the lowest mean
    /// early-stopping loss over runs (lowest index on ties).
    pub fn select_p_star(&self, preds: &[PredictionSet]) -> Result<Vec<usize>> {
        (0..self.cfg.cv.k)
            .map(|f| {
                let mut best: Option<(usize, f64)> = None;
                for (p, set) in preds.iter().enumerate() {
                    let losses: Vec<f64> =
                        (0..self.cfg.cv.runs).map(|r| set.cell(f, r).map(|c| c.early_stopping_loss.unwrap_or(f64::INFINITY))).collect::<Result<_>>()?;
                    let m = mean(&losses);
                    if best.is_none_or(|(_, b)| m < b) {
                        best = Some((p, m));
                    }
                }
                best.map(|(p, _)| p).ok_or_else(|| Error::Data("no patch models".into()))
            })
            .collect()
    }

    fn pi_inputs(&self, raw: &[Tensor], scale: f64) -> Result<Vec<Tensor>> {
        raw.iter()
            .map(|t| Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| (v as f64 * scale) as f32).collect()))
            .collect()
    }

    pub fn train_pi(&self) -> Result<String> {
        self.memo("train-pi", || {
            let (up, folds) = (self.pi()?, self.folds()?);
            let key = key_of(&[
                b"train-pi",
                up.as_bytes(),
                folds.as_bytes(),
                &json(&self.cfg.pi_model),
                &self.cfg.cv.runs.to_le_bytes(),
                &self.cfg.cv.seed.to_le_bytes(),
            ]);
            self.stage("train-pi", &key, || {
                let c = self.cohort()?;
                let splits = self.splits()?;
                let raw = self.pi_tensors()?;
                let spec = self.pi_spec();
                let jobs: Vec<(usize, usize)> =
                    (0..self.cfg.cv.k).flat_map(|f| (0..self.cfg.cv.runs).map(move |r| (f, r))).collect();
                let results = self.pool.install(|| {
                    jobs.par_iter()
                        .map(|&(f, r)| {
                            let fit = c.images_of(&splits.fit_subjects(f));
                            let es = c.images_of(&splits.early_stopping[f]);
                            let peak = fit.iter().flat_map(|&i| raw[i].data()).fold(0.0f32, |m, &v| m.max(v));
                            let scale = if peak > 0.0 { 1.0 / peak as f64 } else { 1.0 };
                            let inputs = self.pi_inputs(&raw, scale)?;
                            let seed = derive_seed(self.cfg.cv.seed, "pi", &[f as u64, r as u64]);
                            let (out, es_loss) = self.train_cell(&spec, &self.cfg.pi_model, &inputs, &fit, &es, seed)?;
                            let rel = checkpoint_rel("pi", f, r);
                            self.save_cell_model(&rel, &out, seed)?;
                            let refs: Vec<&Tensor> = inputs.iter().collect();
                            let cell = CellPrediction {
                                fold: f,
                                run: r,
                                seed,
                                best_epoch: out.best_epoch,
                                early_stopping_loss: Some(es_loss),
                                input_scale: scale,
                                probs: predict_proba(&out.model, &refs)?,
                            };
                            Ok((cell, checkpoint_outputs(&rel)))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                let mut outs = Vec::new();
                let mut cells = Vec::new();
                for (cell, o) in results {
                    cells.push(cell);
                    outs.extend(o);
                }
                let rel = PathBuf::from("preds/pi.json");
                self.write_json(&rel, &PredictionSet { model: MODEL_PI.into(), cells })?;
                outs.push(rel);
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    pub fn pi_predictions(&self) -> Result<PredictionSet> {
        self.train_pi()?;
        self.read_json(Path::new("preds/pi.json"))
    }

    fn all_patch_predictions(&self) -> Result<Vec<PredictionSet>> {
        self.train_all_patches()?;
        (0..self.cfg.n_patches()).map(|p| self.patch_predictions(p)).collect()
    }

    /// `(subject group, label)` for image indices.
    fn groups_labels(&self, images: &[usize]) -> Result<(Vec<usize>, Vec<u8>)> {
        let c = self.cohort()?;
        Ok(images.iter().map(|&i| (c.images[i].subject, c.subjects[c.images[i].subject].label)).unzip())
    }

    /// Logistic regression on the centred probabilities of all patch models.
    pub fn ensemble_lr(&self) -> Result<String> {
        self.memo("ensemble-lr", || {
            let up = self.train_all_patches()?;
            let e = &self.cfg.ensemble;
            let key = key_of(&[
                b"ensemble-lr",
                up.as_bytes(),
                &json(&e.lr_grid),
                &e.lr_inner_folds.to_le_bytes(),
                &self.cfg.cv.seed.to_le_bytes(),
            ]);
            self.stage("ensemble-lr", &key, || {
                let c = self.cohort()?;
                let splits = self.splits()?;
                let preds = self.all_patch_predictions()?;
                let jobs: Vec<(usize, usize)> =
                    (0..self.cfg.cv.k).flat_map(|f| (0..self.cfg.cv.runs).map(move |r| (f, r))).collect();
                let results = self.pool.install(|| {
                    jobs.par_iter()
                        .map(|&(f, r)| {
                            let rows: Vec<Vec<f64>> = (0..c.images.len())
                                .map(|i| {
                                    let p: Vec<f64> =
                                        preds.iter().map(|s| s.cell(f, r).map(|c| c.probs[i])).collect::<Result<_>>()?;
                                    normalize_center(&p)
                                })
                                .collect::<Result<_>>()?;
                            let train = c.images_of(&splits.plan.folds[f].train);
                            let (groups, y) = self.groups_labels(&train)?;
                            let x: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
                            let seed = derive_seed(self.cfg.cv.seed, "lr", &[f as u64, r as u64]);
                            let fit = fit_lr_gridsearch(&x, &y, &groups, &e.lr_grid, e.lr_inner_folds, seed)?;
                            let rel = PathBuf::from(format!("models/lr/f{f}_r{r}.json"));
                            self.write_json(&rel, &fit)?;
                            let cell = CellPrediction {
                                fold: f,
                                run: r,
                                seed,
                                best_epoch: 0,
                                early_stopping_loss: None,
                                input_scale: 1.0,
                                probs: fit.model.predict_proba(&rows)?,
                            };
                            Ok((cell, rel))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                let (cells, mut outs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
                let rel = PathBuf::from("preds/lr.json");
                self.write_json(&rel, &PredictionSet { model: MODEL_LR.into(), cells })?;
                outs.push(rel);
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    fn encodings(model: &Model, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        inputs
            .iter()
            .map(|t| Ok(model.forward(t, Mode::Eval)?.preclassification.data().iter().map(|&v| v as f64).collect()))
            .collect()
    }

    /// Sparse fusion of the P* and persistence-image encoders.
    pub fn ensemble_fusion(&self) -> Result<String> {
        self.memo("ensemble-fusion", || {
            let (patches, pi) = (self.train_all_patches()?, self.train_pi()?);
            let key = key_of(&[
                b"ensemble-fusion",
                patches.as_bytes(),
                pi.as_bytes(),
                &json(&self.cfg.ensemble.fusion),
                &self.cfg.cv.seed.to_le_bytes(),
            ]);
            self.stage("ensemble-fusion", &key, || {
                let c = self.cohort()?;
                let splits = self.splits()?;
                let p_star = self.select_p_star(&self.all_patch_predictions()?)?;
                let pi_preds = self.pi_predictions()?;
                let raw_pi = self.pi_tensors()?;
                let mut outs = Vec::new();
                let mut cells = Vec::new();
                for (f, &p) in p_star.iter().enumerate() {
                    let patch_inputs = self.patch_tensors(p)?;
                    let train = c.images_of(&splits.plan.folds[f].train);
                    let (groups, y) = self.groups_labels(&train)?;
                    let fitted = self.pool.install(|| {
                        (0..self.cfg.cv.runs)
                            .into_par_iter()
                            .map(|r| {
                                let (pm, _) = load_checkpoint(&self.path(checkpoint_rel(&format!("patch/p{p:03}"), f, r)))?;
                                let (im, _) = load_checkpoint(&self.path(checkpoint_rel("pi", f, r)))?;
                                let pi_cell = pi_preds.cell(f, r)?;
                                let a = Self::encodings(&pm, &patch_inputs)?;
                                let b = Self::encodings(&im, &self.pi_inputs(&raw_pi, pi_cell.input_scale)?)?;
                                let pick = |m: &[Vec<f64>]| train.iter().map(|&i| m[i].clone()).collect::<Vec<_>>();
                                let seed = derive_seed(self.cfg.cv.seed, "fusion", &[f as u64, r as u64]);
                                let cfg = FusionConfig {
                                    seed,
                                    ..self.cfg.ensemble.fusion.clone()
                                };
                                let fit = fit_fusion(&pick(&a), &pick(&b), &y, &groups, &cfg)?;
                                let rows: Vec<Vec<f64>> = a.iter().zip(&b).map(|(u, v)| [u.as_slice(), v].concat()).collect();
                                let rel = PathBuf::from(format!("models/fusion/f{f}_r{r}.json"));
                                self.write_json(&rel, &fit)?;
                                let cell = CellPrediction {
                                    fold: f,
                                    run: r,
                                    seed,
                                    best_epoch: 0,
                                    early_stopping_loss: None,
                                    input_scale: 1.0,
                                    probs: fit.model.predict_proba(&rows)?,
                                };
                                Ok((cell, rel))
                            })
                            .collect::<Result<Vec<_>>>()
                    })?;
                    for (cell, rel) in fitted {
                        cells.push(cell);
                        outs.push(rel);
                    }
                }
                let rel = PathBuf::from("preds/fusion.json");
                self.write_json(&rel, &PredictionSet { model: MODEL_FUSION.into(), cells })?;
                outs.push(rel);
                Ok(outs)
            })?;
            Ok(key)
        })
    }

    /// Validation metrics of one model: `cell(f, r)` supplies its predictions.
    fn report<'a>(&self, splits: &Splits, cell: impl Fn(usize, usize) -> Result<&'a CellPrediction>) -> Result<MetricsReport> {
        let c = self.cohort()?;
        let mut cells = Vec::new();
        for (f, fold) in splits.plan.folds.iter().enumerate() {
            let images: Vec<usize> = fold.validation_images().into_iter().map(|(s, i)| c.image(s, i)).collect();
            let labels: Vec<u8> = fold.validation.iter().map(|&s| c.subjects[s].label).collect();
            for r in 0..self.cfg.cv.runs {
                let pred = cell(f, r)?;
                let scores: Vec<f64> = images.iter().map(|&i| pred.probs[i]).collect();
                cells.push(RunMetrics {
                    fold: f,
                    run: r,
                    seed: pred.seed,
                    metrics: compute_metrics(&scores, &labels, self.cfg.cv.threshold)?,
                });
            }
        }
        aggregate(&cells, self.cfg.cv.k, self.cfg.cv.runs)
    }

    /// Runs every stage and writes `results/metrics.json` and
    /// `results/summary.csv`.
    pub fn evaluate(&self) -> Result<ExperimentResults> {
        let keys = [self.ensemble_lr()?, self.ensemble_fusion()?, self.train_pi()?];
        let key = key_of(&[
            b"evaluate",
            keys.join(",").as_bytes(),
            &self.cfg.cv.threshold.to_le_bytes(),
        ]);
        let metrics_rel = PathBuf::from("results/metrics.json");
        self.stage("evaluate", &key, || {
            let splits = self.splits()?;
            let patch = self.all_patch_predictions()?;
            let p_star = self.select_p_star(&patch)?;
            let pi = self.pi_predictions()?;
            let lr: PredictionSet = self.read_json(Path::new("preds/lr.json"))?;
            let fusion: PredictionSet = self.read_json(Path::new("preds/fusion.json"))?;
            let patch_mean_auc = patch
                .iter()
                .map(|set| Ok(self.report(&splits, |f, r| set.cell(f, r))?.mean.auc))
                .collect::<Result<Vec<_>>>()?;
            let models = vec![
                ModelReport {
                    model: MODEL_P_STAR.into(),
                    report: self.report(&splits, |f, r| patch[p_star[f]].cell(f, r))?,
                },
                ModelReport {
                    model: MODEL_PI.into(),
                    report: self.report(&splits, |f, r| pi.cell(f, r))?,
                },
                ModelReport {
                    model: MODEL_LR.into(),
                    report: self.report(&splits, |f, r| lr.cell(f, r))?,
                },
                ModelReport {
                    model: MODEL_FUSION.into(),
                    report: self.report(&splits, |f, r| fusion.cell(f, r))?,
                },
            ];
            let results = ExperimentResults {
                models,
                p_star,
                patch_mean_auc,
            };
            self.write_json(&metrics_rel, &results)?;
            let summary_rel = PathBuf::from("results/summary.csv");
            let mut csv = Vec::new();
            write_summary_csv(&results.models, &mut csv)?;
            fs::write(self.path(&summary_rel), csv)?;
            let mut report = Vec::new();
            write_report_json(&results.models, &mut report)?;
            let report_rel = PathBuf::from("results/report.json");
            fs::write(self.path(&report_rel), report)?;
            Ok(vec![metrics_rel.clone(), summary_rel, report_rel])
        })?;
        self.read_json(&metrics_rel)
    }

    /// Random search over patch-model hyperparameters on `search.patch_index`,
    /// scored by mean validation AUC over the folds (first run only).
    pub fn search(&self) -> Result<SearchResult> {
        let (up, folds) = (self.patches()?, self.folds()?);
        let s = &self.cfg.search;
        let key = key_of(&[
            b"search",
            up.as_bytes(),
            folds.as_bytes(),
            &json(s),
            &json(&self.cfg.patch_model),
            &self.cfg.cv.seed.to_le_bytes(),
        ]);
        let rel = PathBuf::from("search/result.json");
        self.stage("search", &key, || {
            let c = self.cohort()?;
            let splits = self.splits()?;
            let p = patch_linear_index(self.cfg.blocks(), s.patch_index);
            let inputs = self.patch_tensors(p)?;
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let objective = |conf: &Configuration| -> Result<f64> {
                let mut m = self.cfg.patch_model;
                for (name, &v) in conf {
                    match name.as_str() {
                        "learning_rate" => m.train.learning_rate = v,
                        "batch_size" => m.train.batch_size = v.round().max(1.0) as usize,
                        "conv1" => m.widths.conv1 = v.round().max(1.0) as usize,
                        "conv2" => m.widths.conv2 = v.round().max(1.0) as usize,
                        "dense" => m.widths.dense = v.round().max(1.0) as usize,
                        other => return Err(Error::config(format!("search.space.{other}"), "unknown parameter")),
                    }
                }
                let [px, py, pz] = self.cfg.patch_dims;
                let spec = patch_cnn([pz, py, px], m.widths);
                let aucs = self.pool.install(|| {
                    (0..self.cfg.cv.k)
                        .into_par_iter()
                        .map(|f| {
                            let fit = c.images_of(&splits.fit_subjects(f));
                            let es = c.images_of(&splits.early_stopping[f]);
                            let seed = derive_seed(self.cfg.cv.seed, "search", &[f as u64]);
                            let (out, _) = self.train_cell(&spec, &m, &inputs, &fit, &es, seed)?;
                            let probs = predict_proba(&out.model, &refs)?;
                            let fold = &splits.plan.folds[f];
                            let scores: Vec<f64> =
                                fold.validation_images().into_iter().map(|(s, i)| probs[c.image(s, i)]).collect();
                            let labels: Vec<u8> = fold.validation.iter().map(|&s| c.subjects[s].label).collect();
                            crate::eval::auc(&scores, &labels)
                        })
                        .collect::<Result<Vec<f64>>>()
                })?;
                Ok(mean(&aucs))
            };
            let result = random_search(&s.space, s.budget, objective, derive_seed(self.cfg.cv.seed, "search", &[]))?;
            self.write_json(&rel, &result)?;
            Ok(vec![rel.clone()])
        })?;
        self.read_json(&rel)
    }
}

#[cfg(test)]
mod tests;
