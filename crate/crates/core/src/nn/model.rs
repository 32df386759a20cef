use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerSpec, ModelSpec};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Offsets of one parameterised layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    offset: usize,
    weights: usize,
    biases: usize,
    fan_in: usize,
}

/// Piecewise-linear switching state of one forward pass: which ReLU units
/// were active and which input won each pooling window. Replaying a pass
/// with frozen gates turns the network into a smooth function of its
/// parameters, which is what finite-difference checks need.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates {
    layers: Vec<Gate>,
}

#[derive(Debug, Clone, PartialEq)]
enum Gate {
    None,
    Relu(Vec<bool>),
    Pool(Vec<u32>),
}

/// Eval-mode output for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probability: f64,
    pub preclassification: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar = f32> {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    slots: Vec<Option<Slot>>,
    params: Vec<S>,
}

struct Trace<S> {
    acts: Vec<Vec<S>>,
    gates: Gates,
}

/// `(channels, [d, h, w])`, with 2D shapes given a unit depth.
fn spatial(shape: &[usize]) -> (usize, [usize; 3]) {
    match shape.len() {
        4 => (shape[0], [shape[1], shape[2], shape[3]]),
        3 => (shape[0], [1, shape[1], shape[2]]),
        _ => unreachable!("spatial layer on flat shape"),
    }
}

fn kernel_dims(layer: &LayerSpec) -> [usize; 3] {
    match *layer {
        LayerSpec::Conv3d { kernel, .. } => [kernel; 3],
        LayerSpec::Conv2d { kernel, .. } => [1, kernel, kernel],
        _ => unreachable!(),
    }
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Binary cross-entropy of one prediction with clamping.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// He-uniform weights on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, zero biases.
pub fn he_uniform_init(spec: &ModelSpec, seed: u64) -> Result<Model<f32>> {
    let mut model = Model::<f32>::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    for slot in model.slots.iter().flatten() {
        let limit = (6.0 / slot.fan_in as f64).sqrt() as f32;
        for w in &mut model.params[slot.offset..slot.offset + slot.weights] {
            *w = rng.random_range(-limit..=limit);
        }
    }
    Ok(model)
}

impl<S: Scalar> Model<S> {
    /// Model with every parameter zero.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut offset = 0;
        let slots = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, input)| {
                layer.param_shape(input).map(|(weights, biases, fan_in)| {
                    let slot = Slot {
                        offset,
                        weights,
                        biases,
                        fan_in,
                    };
                    offset += weights + biases;
                    slot
                })
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            shapes,
            slots,
            params: vec![S::zero(); offset],
        })
    }

    pub fn from_params(spec: &ModelSpec, params: Vec<S>) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        if params.len() != model.params.len() {
            return Err(Error::SizeMismatch {
                expected: model.params.len(),
                found: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Input shape followed by each layer's output shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].iter().product()
    }

    pub fn encoding_len(&self) -> usize {
        self.shapes[self.spec.preclassification + 1].iter().product()
    }

    /// The weights of layer `layer`, if it has any.
    pub fn weights(&self, layer: usize) -> Option<&[S]> {
        self.slots[layer].map(|s| &self.params[s.offset..s.offset + s.weights])
    }

    pub fn biases(&self, layer: usize) -> Option<&[S]> {
        self.slots[layer].map(|s| &self.params[s.offset + s.weights..s.offset + s.weights + s.biases])
    }

    pub fn weights_mut(&mut self, layer: usize) -> Option<&mut [S]> {
        self.slots[layer].map(|s| &mut self.params[s.offset..s.offset + s.weights])
    }

    pub fn biases_mut(&mut self, layer: usize) -> Option<&mut [S]> {
        self.slots[layer].map(|s| &mut self.params[s.offset + s.weights..s.offset + s.weights + s.biases])
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|p| T::of(p.f64())).collect(),
        }
    }

    fn check_input(&self, input: &[S]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Shape {
                expected: self.shapes[0].clone(),
                got: vec![input.len()],
            });
        }
        Ok(())
    }

    fn trace(&self, input: &[S], frozen: Option<&Gates>) -> Trace<S> {
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(input.to_vec());
        let mut gates = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &acts[i];
            let (in_shape, out_shape) = (&self.shapes[i], &self.shapes[i + 1]);
            let out_len: usize = out_shape.iter().product();
            let frozen_gate = frozen.map(|g| &g.layers[i]);
            let (y, gate) = match *layer {
                LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } => {
                    let slot = self.slots[i].expect("conv has params");
                    let w = &self.params[slot.offset..slot.offset + slot.weights];
                    let b = &self.params[slot.offset + slot.weights..slot.offset + slot.weights + slot.biases];
                    let mut y = vec![S::zero(); out_len];
                    conv_forward(x, in_shape, w, b, kernel_dims(layer), out_shape, &mut y);
                    (y, Gate::None)
                }
                LayerSpec::Dense { units } => {
                    let slot = self.slots[i].expect("dense has params");
                    let w = &self.params[slot.offset..slot.offset + slot.weights];
                    let b = &self.params[slot.offset + slot.weights..slot.offset + slot.weights + slot.biases];
                    let y = (0..units)
                        .map(|u| {
                            let row = &w[u * x.len()..(u + 1) * x.len()];
                            b[u] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<S>()
                        })
                        .collect();
                    (y, Gate::None)
                }
                LayerSpec::Relu => {
                    let mask = match frozen_gate {
                        Some(Gate::Relu(m)) => m.clone(),
                        _ => x.iter().map(|&v| v > S::zero()).collect(),
                    };
                    let y = x.iter().zip(&mask).map(|(&v, &on)| if on { v } else { S::zero() }).collect();
                    (y, Gate::Relu(mask))
                }
                LayerSpec::MaxPool => {
                    let arg = match frozen_gate {
                        Some(Gate::Pool(a)) => a.clone(),
                        _ => pool_argmax(x, in_shape, out_shape),
                    };
                    let y = arg.iter().map(|&k| x[k as usize]).collect();
                    (y, Gate::Pool(arg))
                }
                LayerSpec::Flatten => (x.clone(), Gate::None),
                LayerSpec::Sigmoid => (vec![sigmoid(x[0])], Gate::None),
            };
            acts.push(y);
            gates.push(gate);
        }
        Trace {
            acts,
            gates: Gates { layers: gates },
        }
    }

    /// Probability and preclassification activations for one raw input.
    pub fn forward_values(&self, input: &[S]) -> Result<(S, Vec<S>)> {
        self.check_input(input)?;
        let mut t = self.trace(input, None);
        let p = t.acts.last().expect("output")[0];
        let enc = std::mem::take(&mut t.acts[self.spec.preclassification + 1]);
        Ok((p, enc))
    }

    /// Switching state at the current parameters.
    pub fn gates(&self, input: &[S]) -> Result<Gates> {
        self.check_input(input)?;
        Ok(self.trace(input, None).gates)
    }

    /// Mean clamped BCE over a batch and its gradient with respect to every
    /// parameter. `frozen` replays fixed gates per sample.
    pub fn loss_and_gradient(&self, inputs: &[&[S]], labels: &[S], frozen: Option<&[Gates]>) -> Result<(S, Vec<S>)> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Data(format!(
                "batch has {} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let mut grad = vec![S::zero(); self.params.len()];
        let mut loss = 0.0f64;
        for (k, (&x, &y)) in inputs.iter().zip(labels).enumerate() {
            self.check_input(x)?;
            let trace = self.trace(x, frozen.map(|g| &g[k]));
            let p = trace.acts.last().expect("output")[0];
            loss += bce_loss(p.f64(), y.f64());
            self.backward(&trace, y, &mut grad);
        }
        let n = S::of(inputs.len() as f64);
        for g in &mut grad {
            *g = *g / n;
        }
        Ok((S::of(loss / inputs.len() as f64), grad))
    }

    fn backward(&self, trace: &Trace<S>, y: S, grad: &mut [S]) {
        let layers = &self.spec.layers;
        let n = layers.len();
        let p = trace.acts[n][0];
        let lo = S::of(PROB_CLAMP);
        // d loss / d logit; zero where the clamp is active.
        let dz = if p >= lo && p <= S::one() - lo { p - y } else { S::zero() };
        let mut delta = vec![dz];
        for i in (0..n - 1).rev() {
            let x = &trace.acts[i];
            let need_input_grad = i > 0;
            let layer = &layers[i];
            delta = match *layer {
                LayerSpec::Sigmoid => unreachable!("sigmoid is last"),
                LayerSpec::Dense { units } => {
                    let slot = self.slots[i].expect("dense has params");
                    let nin = x.len();
                    let (gw, gb) = grad[slot.offset..slot.offset + slot.weights + slot.biases].split_at_mut(slot.weights);
                    let w = &self.params[slot.offset..slot.offset + slot.weights];
                    let mut dx = vec![S::zero(); if need_input_grad { nin } else { 0 }];
                    for u in 0..units {
                        let d = delta[u];
                        gb[u] = gb[u] + d;
                        if d == S::zero() {
                            continue;
                        }
                        let grow = &mut gw[u * nin..(u + 1) * nin];
                        for (g, &v) in grow.iter_mut().zip(x) {
                            *g = *g + d * v;
                        }
                        if need_input_grad {
                            for (dxi, &wv) in dx.iter_mut().zip(&w[u * nin..(u + 1) * nin]) {
                                *dxi = *dxi + wv * d;
                            }
                        }
                    }
                    dx
                }
                LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } => {
                    let slot = self.slots[i].expect("conv has params");
                    let (gw, gb) = grad[slot.offset..slot.offset + slot.weights + slot.biases].split_at_mut(slot.weights);
                    let w = &self.params[slot.offset..slot.offset + slot.weights];
                    let mut dx = vec![S::zero(); if need_input_grad { x.len() } else { 0 }];
                    conv_backward(
                        x,
                        &self.shapes[i],
                        w,
                        kernel_dims(layer),
                        &self.shapes[i + 1],
                        &delta,
                        gw,
                        gb,
                        need_input_grad.then_some(dx.as_mut_slice()),
                    );
                    dx
                }
                LayerSpec::Relu => match &trace.gates.layers[i] {
                    Gate::Relu(mask) => delta
                        .iter()
                        .zip(mask)
                        .map(|(&d, &on)| if on { d } else { S::zero() })
                        .collect(),
                    _ => unreachable!(),
                },
                LayerSpec::MaxPool => match &trace.gates.layers[i] {
                    Gate::Pool(arg) => {
                        let mut dx = vec![S::zero(); x.len()];
                        for (&k, &d) in arg.iter().zip(&delta) {
                            dx[k as usize] = dx[k as usize] + d;
                        }
                        dx
                    }
                    _ => unreachable!(),
                },
                LayerSpec::Flatten => delta,
            };
        }
    }
}

impl Model<f32> {
    /// One forward pass. There is no stochastic layer, so both modes agree.
    pub fn forward(&self, input: &Tensor, _mode: Mode) -> Result<Forward> {
        if input.shape() != self.shapes[0].as_slice() {
            return Err(Error::Shape {
                expected: self.shapes[0].clone(),
                got: input.shape().to_vec(),
            });
        }
        let (p, enc) = self.forward_values(input.data())?;
        let shape = self.shapes[self.spec.preclassification + 1].clone();
        Ok(Forward {
            probability: p as f64,
            preclassification: Tensor::new(shape, enc)?,
        })
    }
}

/// Convolutions run on the input's own strides: output `(z, y, x)` lives at
/// flat offset `(z * hi + y) * wi + x`, so every kernel tap is one contiguous
/// shifted span. Offsets with `y` or `x` past the valid range are computed
/// and discarded (forward) or carry zero gradient (backward).
fn span_len(di: [usize; 3], d: [usize; 3]) -> usize {
    ((d[0] - 1) * di[1] + d[1] - 1) * di[2] + d[2]
}

fn conv_forward<S: Scalar>(
    x: &[S],
    in_shape: &[usize],
    w: &[S],
    b: &[S],
    k: [usize; 3],
    out_shape: &[usize],
    y: &mut [S],
) {
    let (cin, di) = spatial(in_shape);
    let (filters, d) = spatial(out_shape);
    let (vin, vout) = (di[0] * di[1] * di[2], d[0] * d[1] * d[2]);
    let kvol = k[0] * k[1] * k[2];
    let len = span_len(di, d);
    let mut full = vec![S::zero(); len];
    for f in 0..filters {
        full.fill(b[f]);
        for c in 0..cin {
            let xc = &x[c * vin..(c + 1) * vin];
            let wfc = &w[(f * cin + c) * kvol..(f * cin + c + 1) * kvol];
            for kz in 0..k[0] {
                for ky in 0..k[1] {
                    for kx in 0..k[2] {
                        let wv = wfc[(kz * k[1] + ky) * k[2] + kx];
                        let off = (kz * di[1] + ky) * di[2] + kx;
                        for (o, &v) in full.iter_mut().zip(&xc[off..off + len]) {
                            *o = *o + wv * v;
                        }
                    }
                }
            }
        }
        let out = &mut y[f * vout..(f + 1) * vout];
        for z in 0..d[0] {
            for yy in 0..d[1] {
                let src = (z * di[1] + yy) * di[2];
                out[(z * d[1] + yy) * d[2]..][..d[2]].copy_from_slice(&full[src..src + d[2]]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<S: Scalar>(
    x: &[S],
    in_shape: &[usize],
    w: &[S],
    k: [usize; 3],
    out_shape: &[usize],
    delta: &[S],
    gw: &mut [S],
    gb: &mut [S],
    mut dx: Option<&mut [S]>,
) {
    let (cin, di) = spatial(in_shape);
    let (filters, d) = spatial(out_shape);
    let (vin, vout) = (di[0] * di[1] * di[2], d[0] * d[1] * d[2]);
    let kvol = k[0] * k[1] * k[2];
    let len = span_len(di, d);
    let mut full = vec![S::zero(); len];
    for f in 0..filters {
        let g = &delta[f * vout..(f + 1) * vout];
        gb[f] = gb[f] + g.iter().copied().sum::<S>();
        for z in 0..d[0] {
            for yy in 0..d[1] {
                let dst = (z * di[1] + yy) * di[2];
                full[dst..dst + d[2]].copy_from_slice(&g[(z * d[1] + yy) * d[2]..][..d[2]]);
            }
        }
        for c in 0..cin {
            let xc = &x[c * vin..(c + 1) * vin];
            let base = (f * cin + c) * kvol;
            for kz in 0..k[0] {
                for ky in 0..k[1] {
                    for kx in 0..k[2] {
                        let widx = base + (kz * k[1] + ky) * k[2] + kx;
                        let off = (kz * di[1] + ky) * di[2] + kx;
                        let acc = full.iter().zip(&xc[off..off + len]).map(|(&a, &v)| a * v).sum::<S>();
                        gw[widx] = gw[widx] + acc;
                        if let Some(dx) = dx.as_deref_mut() {
                            let wv = w[widx];
                            for (o, &a) in dx[c * vin + off..c * vin + off + len].iter_mut().zip(&full) {
                                *o = *o + wv * a;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Flat input index of the maximum of each 2x2(x2) window; the first maximum
/// wins ties. Depth-1 (2D) inputs pool with a unit depth window.
fn pool_argmax<S: Scalar>(x: &[S], in_shape: &[usize], out_shape: &[usize]) -> Vec<u32> {
    let (c, di) = spatial(in_shape);
    let (_, d) = spatial(out_shape);
    let wz = if in_shape.len() == 4 { 2 } else { 1 };
    let vin = di[0] * di[1] * di[2];
    let mut arg = Vec::with_capacity(c * d[0] * d[1] * d[2]);
    for ch in 0..c {
        for z in 0..d[0] {
            for y in 0..d[1] {
                for xo in 0..d[2] {
                    let mut best = usize::MAX;
                    for dz in 0..wz {
                        for dy in 0..2 {
                            for dxo in 0..2 {
                                let idx = ch * vin + ((z * wz + dz) * di[1] + y * 2 + dy) * di[2] + xo * 2 + dxo;
                                if best == usize::MAX || x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                    }
                    arg.push(best as u32);
                }
            }
        }
    }
    arg
}
