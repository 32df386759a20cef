use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{bce_loss, he_uniform_init, Mode, Model};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::spec::ModelSpec;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            max_epochs: 2500,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if !in_unit(self.adam_beta1) || !in_unit(self.adam_beta2) {
            return Err(Error::config("adam_beta", "betas must lie in (0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Borrowed inputs with binary labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub labels: Vec<f32>,
}

impl<'a> Dataset<'a> {
    pub fn new(inputs: Vec<&'a Tensor>, labels: Vec<f32>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::SizeMismatch {
                expected: inputs.len(),
                found: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, model: &Model, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data(format!("{what} set is empty")));
        }
        let expected = &model.shapes()[0];
        if let Some(t) = self.inputs.iter().find(|t| t.shape() != expected.as_slice()) {
            return Err(Error::Shape {
                expected: expected.clone(),
                got: t.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Patience counter on validation loss. Only strict improvements reset it.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records the loss of `epoch` (1-based). Returns true when training
    /// should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Mean clamped BCE of eval-mode predictions.
pub fn mean_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let probs = predict_proba(model, &data.inputs)?;
    Ok(probs
        .iter()
        .zip(&data.labels)
        .map(|(&p, &y)| bce_loss(p, y as f64))
        .sum::<f64>()
        / data.len() as f64)
}

/// Mean-BCE gradient over a batch.
pub fn backward_gradients(model: &Model, batch: &Dataset) -> Result<Vec<f32>> {
    batch.check(model, "batch")?;
    let xs: Vec<&[f32]> = batch.inputs.iter().map(|t| t.data()).collect();
    Ok(model.loss_and_gradient(&xs, &batch.labels, None)?.1)
}

pub fn predict_proba(model: &Model, inputs: &[&Tensor]) -> Result<Vec<f64>> {
    inputs
        .iter()
        .map(|x| model.forward(x, Mode::Eval).map(|f| f.probability))
        .collect()
}

/// Mini-batch Adam from a He-uniform start. Batches are drawn from a seeded
/// shuffle, so the run is a pure function of `(spec, data, config)`.
pub fn train_with_early_stopping(
    spec: &ModelSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = he_uniform_init(spec, cfg.seed)?;
    train.check(&model, "training")?;
    val.check(&model, "validation")?;
    let adam = cfg.adam();
    let mut state = AdamState::new(model.param_count());
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params().to_vec();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| train.inputs[i].data()).collect();
            let ys: Vec<f32> = batch.iter().map(|&i| train.labels[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&xs, &ys, None)?;
            loss_sum += loss as f64 * batch.len() as f64;
            adam_step(model.params_mut(), &grad, &mut state, &adam);
        }
        if let Some(index) = model.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let val_loss = mean_loss(&model, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
        });
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best.copy_from_slice(model.params());
        }
        if stop {
            break;
        }
    }
    model.params_mut().copy_from_slice(&best);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{patch_cnn, CnnWidths, LayerSpec};
    use rand::Rng;

    fn dense_spec(n: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![n],
            layers: vec![
                LayerSpec::Dense { units: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
                LayerSpec::Sigmoid,
            ],
            preclassification: 0,
        }
    }

    fn toy(n: usize, seed: u64) -> (Vec<Tensor>, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = (i % 2) as f32;
            let shift = if y == 1.0 { 1.0 } else { -1.0 };
            let v: Vec<f32> = (0..4).map(|_| shift + rng.random_range(-0.5..0.5)).collect();
            xs.push(Tensor::new(vec![4], v).unwrap());
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn early_stopping_definition() {
        let mut es = EarlyStopping::new(2);
        let losses = [1.0, 0.9, 0.95, 0.96, 0.97];
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if es.observe(i + 1, l) {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(4));
        assert_eq!(es.best_epoch(), 2);
        // Equal loss is not an improvement.
        let mut es = EarlyStopping::new(1);
        assert!(!es.observe(1, 0.5));
        assert!(es.observe(2, 0.5));
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (xs, ys) = toy(20, 1);
        let refs: Vec<&Tensor> = xs.iter().collect();
        let data = Dataset::new(refs, ys.clone()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            max_epochs: 200,
            patience: 200,
            seed: 3,
            ..Default::default()
        };
        let out = train_with_early_stopping(&dense_spec(4), &data, &data, &cfg).unwrap();
        let p = predict_proba(&out.model, &data.inputs).unwrap();
        let correct = p.iter().zip(&ys).filter(|(&p, &y)| (p > 0.5) == (y == 1.0)).count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn cap_and_determinism() {
        let (xs, ys) = toy(12, 2);
        let refs: Vec<&Tensor> = xs.iter().collect();
        let data = Dataset::new(refs, ys).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 5,
            max_epochs: 7,
            patience: 7,
            seed: 11,
            ..Default::default()
        };
        let a = train_with_early_stopping(&dense_spec(4), &data, &data, &cfg).unwrap();
        assert_eq!(a.history.len(), 7);
        let b = train_with_early_stopping(&dense_spec(4), &data, &data, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.history, b.history);
        // The restored parameters reproduce the best recorded validation loss.
        let best = a.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(mean_loss(&a.model, &data).unwrap(), best);
    }

    #[test]
    fn small_learning_rate_descends() {
        let spec = patch_cnn(
            [8, 8, 8],
            CnnWidths {
                conv1: 2,
                conv2: 2,
                kernel: 2,
                dense: 4,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Tensor> = (0..6)
            .map(|_| Tensor::new(vec![1, 8, 8, 8], (0..512).map(|_| rng.random::<f32>()).collect()).unwrap())
            .collect();
        let ys = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        for seed in 0..3 {
            let mut model = he_uniform_init(&spec, seed).unwrap();
            let mut state = AdamState::new(model.param_count());
            let cfg = AdamConfig {
                learning_rate: 1e-5,
                ..Default::default()
            };
            let refs: Vec<&[f32]> = xs.iter().map(|t| t.data()).collect();
            let mut prev = f64::INFINITY;
            for _ in 0..10 {
                let (loss, grad) = model.loss_and_gradient(&refs, &ys, None).unwrap();
                assert!((loss as f64) <= prev + 1e-6, "loss rose from {prev} to {loss}");
                prev = loss as f64;
                adam_step(model.params_mut(), &grad, &mut state, &cfg);
            }
        }
    }

    #[test]
    fn empty_and_mismatched_sets() {
        let (xs, ys) = toy(4, 0);
        let refs: Vec<&Tensor> = xs.iter().collect();
        let data = Dataset::new(refs, ys).unwrap();
        let empty = Dataset::default();
        let cfg = TrainConfig {
            max_epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_with_early_stopping(&dense_spec(4), &data, &empty, &cfg),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            train_with_early_stopping(&dense_spec(5), &data, &data, &cfg),
            Err(Error::Shape { .. })
        ));
        assert!(Dataset::new(vec![&xs[0]], vec![0.5]).is_err());
        let bad = TrainConfig {
            adam_beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn predictions_match_forward_and_zero_model() {
        let (xs, _) = toy(5, 4);
        let refs: Vec<&Tensor> = xs.iter().collect();
        let zero = Model::<f32>::zeros(&dense_spec(4)).unwrap();
        assert!(predict_proba(&zero, &refs).unwrap().iter().all(|&p| p == 0.5));
        let m = he_uniform_init(&dense_spec(4), 9).unwrap();
        let p = predict_proba(&m, &refs).unwrap();
        assert_eq!(p, predict_proba(&m, &refs).unwrap());
        for (x, &pi) in refs.iter().zip(&p) {
            let f = m.forward(x, Mode::Eval).unwrap();
            assert_eq!(f.probability, pi);
            assert!(pi > 0.0 && pi < 1.0);
        }
    }
}
