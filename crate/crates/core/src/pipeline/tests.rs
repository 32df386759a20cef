use super::*;
use crate::synth::{generate_cohort, PhantomSpec, TopologySpec, MANIFEST_NAME};

fn tiny(dir: &Path) -> PipelineConfig {
    let spec = PhantomSpec {
        dims: [20, 20, 20],
        subjects: [6, 6],
        images_per_subject: [1, 2],
        lesion: None,
        topology: Some(TopologySpec {
            kind: Default::default(),
            counts: [1, 2],
            radius: [1.0, 1.5],
            tube_radius: 1.5,
        }),
        noise_sigma: 0.02,
        seed: 3,
    };
    generate_cohort(&spec, &dir.join("data")).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.paths.manifest = Some(dir.join("data").join(MANIFEST_NAME));
    cfg.paths.work_dir = dir.join("work");
    cfg.volume_dims = [20, 20, 20];
    cfg.patch_dims = [10, 10, 10];
    cfg.search.patch_index = [0, 0, 0];
    cfg.search.budget = 2;
    cfg.ph.dims = vec![2];
    cfg.ph.image_dim = 2;
    cfg.pi.resolution = [10, 10];
    cfg.pi.sigma = 0.1;
    cfg.cv.k = 2;
    cfg.cv.runs = 1;
    cfg.cv.early_stopping_fraction = 0.34;
    for m in [&mut cfg.patch_model, &mut cfg.pi_model] {
        m.widths = crate::nn::CnnWidths {
            conv1: 2,
            conv2: 2,
            kernel: 3,
            dense: 4,
        };
        m.train.max_epochs = 3;
        m.train.learning_rate = 1e-3;
    }
    cfg
}

fn stage_runs(p: &Pipeline, stage: &str) -> usize {
    p.ledger().entries().iter().filter(|e| e.stage == stage).count()
}

#[test]
fn end_to_end_is_resumable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let first = Pipeline::new(cfg.clone(), 1).unwrap().evaluate().unwrap();
    let bytes = fs::read(dir.path().join("work/results/metrics.json")).unwrap();
    assert_eq!(first.models.len(), 4);
    assert_eq!(first.patch_mean_auc.len(), 8);
    assert_eq!(first.p_star.len(), 2);
    for m in &first.models {
        assert_eq!(m.report.per_run.len(), 2);
        assert!((0.0..=1.0).contains(&m.report.mean.auc));
    }

    // A second pipeline over the same work dir skips every stage.
    let again = Pipeline::new(cfg.clone(), 1).unwrap();
    assert_eq!(again.evaluate().unwrap(), first);
    assert_eq!(stage_runs(&again, "train-patch/p000"), 1);
    assert_eq!(stage_runs(&again, "evaluate"), 1);

    // A damaged output reruns only its stage and what depends on it.
    fs::write(dir.path().join("work/preds/pi.json"), "{}").unwrap();
    let repaired = Pipeline::new(cfg.clone(), 1).unwrap();
    assert_eq!(repaired.evaluate().unwrap(), first);
    assert_eq!(stage_runs(&repaired, "train-pi"), 2);
    assert_eq!(stage_runs(&repaired, "train-patch/p000"), 1);
    assert_eq!(fs::read(dir.path().join("work/results/metrics.json")).unwrap(), bytes);

    // A fresh work dir reproduces the metrics byte for byte.
    let mut fresh = cfg.clone();
    fresh.paths.work_dir = dir.path().join("work2");
    Pipeline::new(fresh, 1).unwrap().evaluate().unwrap();
    assert_eq!(fs::read(dir.path().join("work2/results/metrics.json")).unwrap(), bytes);

    // Changing only the threshold reruns only the report.
    let mut moved = cfg;
    moved.cv.threshold = 0.4;
    let p = Pipeline::new(moved, 1).unwrap();
    p.evaluate().unwrap();
    assert_eq!(stage_runs(&p, "evaluate"), 2);
    assert_eq!(stage_runs(&p, "ensemble-fusion"), 1);
}

#[test]
fn splits_keep_early_stopping_inside_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path()), 1).unwrap();
    let s = p.splits().unwrap();
    for (f, fold) in s.plan.folds.iter().enumerate() {
        assert!(s.early_stopping[f].iter().all(|x| fold.train.contains(x)));
        let fit = s.fit_subjects(f);
        assert_eq!(fit.len() + s.early_stopping[f].len(), fold.train.len());
    }
}

#[test]
fn search_reports_each_trial() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path()), 1).unwrap();
    let r = p.search().unwrap();
    assert_eq!(r.trace.len(), 2);
    assert!(r.trace.iter().all(|t| (0.0..=1.0).contains(&t.score)));
}

#[test]
fn missing_manifest_and_bad_crop() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.paths.manifest = None;
    assert!(matches!(Pipeline::new(cfg.clone(), 1).unwrap().ph(), Err(Error::Config { .. })));
    cfg.volume_dims = [30, 30, 30];
    cfg.patch_dims = [10, 10, 10];
    let v = Volume3D::filled([20, 20, 20], 0.5).unwrap();
    assert!(matches!(preprocess_volume(&v, &cfg), Err(Error::Shape { .. })));
    cfg.volume_dims = [10, 10, 10];
    assert_eq!(preprocess_volume(&v, &cfg).unwrap().dims(), [10, 10, 10]);
}

#[test]
fn derived_seeds_differ_by_purpose() {
    assert_ne!(derive_seed(0, "patch", &[1]), derive_seed(0, "pi", &[1]));
    assert_ne!(derive_seed(0, "patch", &[1, 0]), derive_seed(0, "patch", &[0, 1]));
    assert_eq!(derive_seed(5, "x", &[]), derive_seed(5, "x", &[]));
}
