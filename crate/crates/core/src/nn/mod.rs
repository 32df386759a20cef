//! Small sequential CNNs with exact backpropagation.
//!
//! Networks are generic over the scalar type so that training runs in `f32`
//! while gradient checks run the same code in `f64`.

mod checkpoint;
mod model;
mod optim;
mod spec;
mod train;

pub use checkpoint::{load_checkpoint, read_history_csv, save_checkpoint, write_history_csv, CheckpointManifest};
pub use model::{bce_loss, he_uniform_init, Forward, Gates, Mode, Model, PROB_CLAMP};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use spec::{image_cnn, patch_cnn, CnnWidths, LayerSpec, ModelSpec};
pub use train::{
    backward_gradients, mean_loss, predict_proba, train_with_early_stopping, Dataset, EarlyStopping, EpochRecord, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};

/// Floating-point element type of a model.
pub trait Scalar: num_traits::Float + std::iter::Sum + Send + Sync + std::fmt::Debug + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::param(format!("tensor shape {shape:?} must be non-empty and positive")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    /// Single-channel tensor `[1, d, h, w]` from a volume (x fastest, so the
    /// last axis is x).
    pub fn from_volume(v: &crate::volume::Volume3D) -> Self {
        let [nx, ny, nz] = v.dims();
        Self {
            shape: vec![1, nz, ny, nx],
            data: v.data().to_vec(),
        }
    }

    /// Single-channel tensor `[1, rows, cols]` from a persistence image.
    pub fn from_image(img: &crate::pimage::PersistenceImage) -> Self {
        Self {
            shape: vec![1, img.rows(), img.cols()],
            data: img.pixels.iter().map(|&p| p as f32).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
