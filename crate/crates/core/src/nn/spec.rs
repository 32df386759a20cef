use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a sequential network. Convolutions are stride 1 with valid
/// padding; pooling is 2x2(x2) with stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d { filters: usize, kernel: usize },
    Conv2d { filters: usize, kernel: usize },
    Relu,
    MaxPool,
    Flatten,
    Dense { units: usize },
    Sigmoid,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }
        )
    }

    /// Output shape for a given input shape, or an error if the layer cannot
    /// consume it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Err(Error::param(format!("{self:?} cannot take input {input:?}: {what}")));
        match *self {
            LayerSpec::Conv3d { filters, kernel } => {
                if input.len() != 4 {
                    return bad("expected [channels, d, h, w]");
                }
                if filters == 0 || kernel == 0 || input[1..].iter().any(|&n| n < kernel) {
                    return bad("kernel larger than input");
                }
                Ok(vec![filters, input[1] - kernel + 1, input[2] - kernel + 1, input[3] - kernel + 1])
            }
            LayerSpec::Conv2d { filters, kernel } => {
                if input.len() != 3 {
                    return bad("expected [channels, h, w]");
                }
                if filters == 0 || kernel == 0 || input[1..].iter().any(|&n| n < kernel) {
                    return bad("kernel larger than input");
                }
                Ok(vec![filters, input[1] - kernel + 1, input[2] - kernel + 1])
            }
            LayerSpec::MaxPool => {
                if input.len() < 3 || input[1..].iter().any(|&n| n < 2) {
                    return bad("pooling needs spatial extent >= 2");
                }
                let mut out = input.to_vec();
                for n in &mut out[1..] {
                    *n /= 2;
                }
                Ok(out)
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units } => {
                if input.len() != 1 || units == 0 {
                    return bad("dense layers take a flat vector");
                }
                Ok(vec![units])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Sigmoid => {
                if input != [1] {
                    return bad("sigmoid output must be a single unit");
                }
                Ok(vec![1])
            }
        }
    }

    /// (weight count, bias count, fan-in) for parameterised layers.
    pub fn param_shape(&self, input: &[usize]) -> Option<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv3d { filters, kernel } => {
                let fan_in = input[0] * kernel.pow(3);
                Some((filters * fan_in, filters, fan_in))
            }
            LayerSpec::Conv2d { filters, kernel } => {
                let fan_in = input[0] * kernel.pow(2);
                Some((filters * fan_in, filters, fan_in))
            }
            LayerSpec::Dense { units } => Some((units * input[0], units, input[0])),
            _ => None,
        }
    }
}

/// Sequential architecture plus the index of the layer whose output is the
/// preclassification encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub preclassification: usize,
}

impl ModelSpec {
    /// Input shape followed by every layer's output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::param(format!("bad input shape {:?}", self.input_shape)));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.shapes()?;
        let n = self.layers.len();
        let sigmoids = self.layers.iter().filter(|l| **l == LayerSpec::Sigmoid).count();
        if sigmoids != 1 || self.layers.last() != Some(&LayerSpec::Sigmoid) {
            return Err(Error::param("model must end in exactly one sigmoid"));
        }
        if n < 2 || self.layers[n - 2] != (LayerSpec::Dense { units: 1 }) {
            return Err(Error::param("sigmoid must follow a single-unit dense layer"));
        }
        let hidden_dense = self.layers[..n - 2]
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
            .ok_or_else(|| Error::param("model needs a hidden dense layer for the preclassification tap"))?;
        if self.preclassification != hidden_dense {
            return Err(Error::param(format!(
                "preclassification tap {} must be the last hidden dense layer ({hidden_dense})",
                self.preclassification
            )));
        }
        Ok(shapes)
    }

    pub fn encoding_len(&self) -> Result<usize> {
        let shapes = self.validate()?;
        Ok(shapes[self.preclassification + 1].iter().product())
    }

    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.validate()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .filter_map(|(l, s)| l.param_shape(s))
            .map(|(w, b, _)| w + b)
            .sum())
    }
}

/// Widths of a small CNN: two conv/ReLU/pool stages and one hidden dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnWidths {
    pub conv1: usize,
    pub conv2: usize,
    pub kernel: usize,
    pub dense: usize,
}

impl Default for CnnWidths {
    fn default() -> Self {
        Self {
            conv1: 8,
            conv2: 16,
            kernel: 3,
            dense: 64,
        }
    }
}

fn small_cnn(input_shape: Vec<usize>, widths: CnnWidths, conv: fn(usize, usize) -> LayerSpec) -> ModelSpec {
    let layers = vec![
        conv(widths.conv1, widths.kernel),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        conv(widths.conv2, widths.kernel),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: widths.dense },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 1 },
        LayerSpec::Sigmoid,
    ];
    ModelSpec {
        input_shape,
        layers,
        preclassification: 7,
    }
}

/// Patch classifier over single-channel `[d, h, w]` patches.
pub fn patch_cnn(patch: [usize; 3], widths: CnnWidths) -> ModelSpec {
    small_cnn(vec![1, patch[0], patch[1], patch[2]], widths, |filters, kernel| {
        LayerSpec::Conv3d { filters, kernel }
    })
}

/// Persistence-image classifier over single-channel `[h, w]` rasters.
pub fn image_cnn(resolution: [usize; 2], widths: CnnWidths) -> ModelSpec {
    small_cnn(vec![1, resolution[0], resolution[1]], widths, |filters, kernel| {
        LayerSpec::Conv2d { filters, kernel }
    })
}
