//! The fully-convolutional encoder-decoder that maps a `[140, 140, 2]`
//! amplitude/phase stack to a `[140, 140, 1]` elevation map.
//!
//! Layer stack (name, kernel x out-channels, stride, padding, activation):
//!
//! | layer      | kernel      | stride | padding | activation |
//! |------------|-------------|--------|---------|------------|
//! | Conv1      | 3x3x64      | 1      | same    | ReLU       |
//! | Conv2      | 5x5x64      | 1      | same    | ReLU       |
//! | MaxPool    | 4x4         | 4      | -       | -          |
//! | Conv3..5   | 3x3x128     | 1      | valid   | ReLU       |
//! | Conv6      | 3x3x128     | 1      | valid   | linear     |
//! | T-Conv1    | 3x3x128     | 1      | valid   | PReLU      |
//! | T-Conv2    | 3x3x64      | 1      | valid   | PReLU      |
//! | T-Conv3    | 3x3x64      | 1      | valid   | PReLU      |
//! | T-Conv3b   | 3x3x32      | 1      | valid   | PReLU      |
//! | T-Conv4    | 3x3x32      | 4 (+1) | valid   | PReLU      |
//! | ConvOutput | 3x3x1       | 1      | same    | linear     |
//!
//! The stride-4 transposed convolution carries an output padding of one so
//! that 35 maps to 140 rather than 139.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, ArgMax, ConvSpec, Padding};
use crate::tensor::{Scalar, Tensor};

/// Input extent of the published network.
pub const INPUT_SIZE: usize = 140;
pub const INPUT_CHANNELS: usize = 2;
/// Initial negative slope of every PReLU channel.
pub const PRELU_INIT: f64 = 0.25;
/// L2 coefficient applied to every convolution kernel.
pub const DEFAULT_L2: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Prelu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LayerKind {
    Conv { spec: ConvSpec },
    Tconv { spec: ConvSpec },
    Maxpool { size: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerDef {
    fn conv(name: &str, spec: ConvSpec, activation: Activation) -> Self {
        Self { name: name.into(), kind: LayerKind::Conv { spec }, activation }
    }

    fn tconv(name: &str, spec: ConvSpec, activation: Activation) -> Self {
        Self { name: name.into(), kind: LayerKind::Tconv { spec }, activation }
    }

    pub fn spec(&self) -> Option<&ConvSpec> {
        match &self.kind {
            LayerKind::Conv { spec } | LayerKind::Tconv { spec } => Some(spec),
            LayerKind::Maxpool { .. } => None,
        }
    }

    fn weight_shape(&self) -> Option<[usize; 4]> {
        match &self.kind {
            LayerKind::Conv { spec } => Some(spec.conv_weight_shape()),
            LayerKind::Tconv { spec } => Some(spec.tconv_weight_shape()),
            LayerKind::Maxpool { .. } => None,
        }
    }

    /// Output shape for a given `[H, W, C]` input.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [h, w, c] = input;
        match &self.kind {
            LayerKind::Conv { spec } => {
                if c != spec.in_channels {
                    return Err(Error::Shape(format!(
                        "{}: input has {c} channels, expects {}",
                        self.name, spec.in_channels
                    )));
                }
                let (oh, ow) = spec.conv_output_dims(h, w)?;
                Ok([oh, ow, spec.out_channels])
            }
            LayerKind::Tconv { spec } => {
                if c != spec.in_channels {
                    return Err(Error::Shape(format!(
                        "{}: input has {c} channels, expects {}",
                        self.name, spec.in_channels
                    )));
                }
                let (oh, ow) = spec.tconv_output_dims(h, w)?;
                Ok([oh, ow, spec.out_channels])
            }
            LayerKind::Maxpool { size, stride } => {
                if *size != *stride || h % stride != 0 || w % stride != 0 {
                    return Err(Error::Shape(format!("{}: pool {size}/{stride} incompatible with {h}x{w}", self.name)));
                }
                Ok([h / stride, w / stride, c])
            }
        }
    }
}

/// Channel widths of the twelve-layer stack, from Conv1 to T-Conv4.
fn layer_stack(input_channels: usize, widths: [usize; 11]) -> Vec<LayerDef> {
    use Activation::*;
    use Padding::*;
    let [c1, c2, c3, c4, c5, c6, t1, t2, t3, t3b, t4] = widths;
    vec![
        LayerDef::conv("Conv1", ConvSpec::new(3, input_channels, c1, Same), Relu),
        LayerDef::conv("Conv2", ConvSpec::new(5, c1, c2, Same), Relu),
        LayerDef { name: "MaxPool".into(), kind: LayerKind::Maxpool { size: 4, stride: 4 }, activation: Linear },
        LayerDef::conv("Conv3", ConvSpec::new(3, c2, c3, Valid), Relu),
        LayerDef::conv("Conv4", ConvSpec::new(3, c3, c4, Valid), Relu),
        LayerDef::conv("Conv5", ConvSpec::new(3, c4, c5, Valid), Relu),
        LayerDef::conv("Conv6", ConvSpec::new(3, c5, c6, Valid), Linear),
        LayerDef::tconv("T-Conv1", ConvSpec::new(3, c6, t1, Valid), Prelu),
        LayerDef::tconv("T-Conv2", ConvSpec::new(3, t1, t2, Valid), Prelu),
        LayerDef::tconv("T-Conv3", ConvSpec::new(3, t2, t3, Valid), Prelu),
        LayerDef::tconv("T-Conv3b", ConvSpec::new(3, t3, t3b, Valid), Prelu),
        LayerDef::tconv("T-Conv4", ConvSpec::new(3, t3b, t4, Valid).with_stride(4).with_output_padding(1), Prelu),
        LayerDef::conv("ConvOutput", ConvSpec::new(3, t4, 1, Same), Linear),
    ]
}

/// The published stack: twelve convolutional layers plus the max-pooling
/// stage, thirteen entries in table order.
pub fn build_demnet() -> Vec<LayerDef> {
    layer_stack(INPUT_CHANNELS, [64, 64, 128, 128, 128, 128, 128, 64, 64, 32, 32])
}

/// Network topology together with the input extent it accepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerDef>,
}

impl Architecture {
    pub fn demnet() -> Self {
        Self { input_shape: [INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS], layers: build_demnet() }
    }

    /// Same layer kinds, kernels, strides, paddings and activations as
    /// [`Architecture::demnet`], with narrow channels and a 36x36 input. Used
    /// for whole-network finite-difference checks.
    pub fn reduced() -> Self {
        Self {
            input_shape: [36, 36, INPUT_CHANNELS],
            layers: layer_stack(INPUT_CHANNELS, [3, 3, 4, 4, 4, 4, 4, 3, 3, 2, 2]),
        }
    }

    pub fn new(input_shape: [usize; 3], layers: Vec<LayerDef>) -> Result<Self> {
        let arch = Self { input_shape, layers };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for layer in &self.layers {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate layer name {}", layer.name)));
            }
        }
        let out = self.output_shapes()?;
        if out.last().map(|s| s[2]) != Some(1) {
            return Err(Error::InvalidArgument("network must end in a single-channel layer".into()));
        }
        Ok(())
    }

    /// Output shape after every layer, in order.
    pub fn output_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input_shape;
        self.layers
            .iter()
            .map(|layer| {
                shape = layer.output_shape(shape)?;
                Ok(shape)
            })
            .collect()
    }

    pub fn output_shape(&self) -> Result<[usize; 3]> {
        self.output_shapes()?.last().copied().ok_or_else(|| Error::InvalidArgument("empty architecture".into()))
    }
}

/// Indices into [`ModelParams::tensors`] for one parametrised layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub weights: usize,
    pub bias: usize,
    pub slopes: Option<usize>,
}

/// All trainable tensors of a network, stored flat in a fixed order.
///
/// The same type carries parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    /// One entry per layer of the architecture; `None` for pooling.
    pub slots: Vec<Option<LayerSlots>>,
    pub init_seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    /// Zero-valued parameters laid out for `arch`.
    pub fn zeros(arch: &Architecture) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut slots = Vec::new();
        for layer in &arch.layers {
            let Some(wshape) = layer.weight_shape() else {
                slots.push(None);
                continue;
            };
            let cout = layer.spec().map(|s| s.out_channels).unwrap_or(1);
            let mut push = |suffix: &str, shape: &[usize]| {
                names.push(format!("{}.{suffix}", layer.name));
                tensors.push(Tensor::zeros(shape).expect("layer shapes are positive"));
                tensors.len() - 1
            };
            let weights = push("weight", &wshape);
            let bias = push("bias", &[cout]);
            let slopes = (layer.activation == Activation::Prelu).then(|| push("slope", &[cout]));
            slots.push(Some(LayerSlots { weights, bias, slopes }));
        }
        Self { names, tensors, slots, init_seed: 0 }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::zeros_like).collect(),
            slots: self.slots.clone(),
            init_seed: self.init_seed,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Indices of convolution kernels (the tensors that carry the L2 penalty).
    pub fn weight_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().flatten().map(|s| s.weights)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape("parameter sets differ in tensor count".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.axpy(T::one(), b)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            slots: self.slots.clone(),
            init_seed: self.init_seed,
        }
    }
}

/// Seeded initialisation.
///
/// Kernels feeding ReLU/PReLU draw from He-normal (`std = sqrt(2 / fan_in)`),
/// linear-output kernels from Glorot-normal (`std = sqrt(2 / (fan_in + fan_out))`),
/// where `fan_in = kh * kw * input_channels` and `fan_out = kh * kw * output_channels`
/// of the layer itself. Biases start at zero and PReLU slopes at 0.25.
/// Tensors are filled in layer order from a single ChaCha8 stream.
pub fn init_params<T: Scalar>(arch: &Architecture, seed: u64) -> ModelParams<T> {
    let mut params = ModelParams::zeros(arch);
    params.init_seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (layer, slot) in arch.layers.iter().zip(params.slots.clone()) {
        let (Some(slot), Some(spec)) = (slot, layer.spec()) else { continue };
        let taps = (spec.kernel_h * spec.kernel_w) as f64;
        let fan_in = taps * spec.in_channels as f64;
        let fan_out = taps * spec.out_channels as f64;
        let std = match layer.activation {
            Activation::Relu | Activation::Prelu => (2.0 / fan_in).sqrt(),
            Activation::Linear => (2.0 / (fan_in + fan_out)).sqrt(),
        };
        for w in params.tensors[slot.weights].data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = T::lit(z * std);
        }
        if let Some(s) = slot.slopes {
            params.tensors[s].data_mut().fill(T::lit(PRELU_INIT));
        }
    }
    params
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv { input: Tensor<T>, pre_activation: Option<Tensor<T>> },
    Pool { argmax: ArgMax, input_shape: Vec<usize> },
}

/// Per-layer intermediates retained by a [`Mode::Train`] forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

/// An architecture with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DemNet<T> {
    pub arch: Architecture,
    pub params: ModelParams<T>,
}

impl<T: Scalar> DemNet<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = init_params(&arch, seed);
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: ModelParams<T>) -> Result<Self> {
        arch.validate()?;
        let expected = ModelParams::<T>::zeros(&arch);
        if expected.names != params.names {
            return Err(Error::Shape("parameter names do not match the architecture".into()));
        }
        for ((name, want), have) in expected.names.iter().zip(&expected.tensors).zip(&params.tensors) {
            have.expect_shape(want.shape(), name)?;
        }
        Ok(Self { arch, params })
    }

    /// Run the network. `Mode::Infer` keeps no intermediates and returns `None`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        self.forward_impl(input, mode, &mut |_| {})
    }

    /// Shape of every layer's output for `input`.
    pub fn forward_shapes(&self, input: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::new();
        self.forward_impl(input, Mode::Infer, &mut |t| shapes.push(t.shape().to_vec()))?;
        Ok(shapes)
    }

    fn forward_impl(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        observe: &mut dyn FnMut(&Tensor<T>),
    ) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        input.expect_shape(&self.arch.input_shape, "network input")?;
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(if train { self.arch.layers.len() } else { 0 });
        let mut x = input.clone();
        for (layer, slot) in self.arch.layers.iter().zip(&self.params.slots) {
            x = match (&layer.kind, slot) {
                (LayerKind::Maxpool { size, stride }, _) => {
                    let (y, argmax) = ops::maxpool_forward(&x, *size, *stride)?;
                    if train {
                        caches.push(LayerCache::Pool { argmax, input_shape: x.shape().to_vec() });
                    }
                    y
                }
                (LayerKind::Conv { spec } | LayerKind::Tconv { spec }, Some(slot)) => {
                    let w = &self.params.tensors[slot.weights];
                    let b = &self.params.tensors[slot.bias];
                    let z = match layer.kind {
                        LayerKind::Conv { .. } => ops::conv2d_forward(&x, w, b, spec)?,
                        _ => ops::tconv2d_forward(&x, w, b, spec)?,
                    };
                    let (y, pre) = match layer.activation {
                        Activation::Linear => (z, None),
                        Activation::Relu => (ops::relu(&z), Some(z)),
                        Activation::Prelu => {
                            let slopes = slot
                                .slopes
                                .map(|i| &self.params.tensors[i])
                                .ok_or_else(|| Error::Shape(format!("{} is PReLU but has no slopes", layer.name)))?;
                            (ops::prelu(&z, slopes)?, Some(z))
                        }
                    };
                    if train {
                        caches.push(LayerCache::Conv { input: x, pre_activation: pre });
                    }
                    y
                }
                (_, None) => return Err(Error::Shape(format!("{} has no parameters", layer.name))),
            };
            observe(&x);
        }
        Ok((x, train.then_some(ForwardCache { layers: caches })))
    }

    /// Parameter gradients of a loss whose gradient with respect to the
    /// network output is `grad_out`, plus the L2 term `2 * l2 * w` on every kernel.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>, l2: T) -> Result<ModelParams<T>> {
        let mut grads = self.params.zeros_like();
        self.accumulate_gradients(cache, grad_out, &mut grads)?;
        self.add_l2_gradient(l2, &mut grads)?;
        Ok(grads)
    }

    /// Adds data-term gradients into `grads` without the L2 term.
    pub fn accumulate_gradients(
        &self,
        cache: &ForwardCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut ModelParams<T>,
    ) -> Result<()> {
        if cache.layers.len() != self.arch.layers.len() || grads.tensors.len() != self.params.tensors.len() {
            return Err(Error::CorruptCache(format!(
                "cache has {} layers and gradient set {} tensors for a {}-layer network with {} tensors",
                cache.layers.len(),
                grads.tensors.len(),
                self.arch.layers.len(),
                self.params.tensors.len()
            )));
        }
        grad_out.expect_shape(&self.arch.output_shape()?, "grad_out")?;
        let mut g = grad_out.clone();
        for ((layer, slot), entry) in self.arch.layers.iter().zip(&self.params.slots).zip(&cache.layers).rev() {
            g = match (&layer.kind, slot, entry) {
                (LayerKind::Maxpool { .. }, _, LayerCache::Pool { argmax, input_shape }) => {
                    ops::maxpool_backward(&g, argmax, input_shape)?
                }
                (
                    LayerKind::Conv { spec } | LayerKind::Tconv { spec },
                    Some(slot),
                    LayerCache::Conv { input, pre_activation },
                ) => {
                    let g_pre = match (layer.activation, pre_activation) {
                        (Activation::Linear, _) => g,
                        (Activation::Relu, Some(z)) => ops::relu_backward(&g, z)?,
                        (Activation::Prelu, Some(z)) => {
                            let si = slot
                                .slopes
                                .ok_or_else(|| Error::CorruptCache(format!("{} lacks slopes", layer.name)))?;
                            let (gz, gs) = ops::prelu_backward(&g, z, &self.params.tensors[si])?;
                            grads.tensors[si].axpy(T::one(), &gs)?;
                            gz
                        }
                        _ => return Err(Error::CorruptCache(format!("{} cache lacks pre-activation", layer.name))),
                    };
                    let w = &self.params.tensors[slot.weights];
                    let lg = match layer.kind {
                        LayerKind::Conv { .. } => ops::conv2d_backward(&g_pre, input, w, spec)?,
                        _ => ops::tconv2d_backward(&g_pre, input, w, spec)?,
                    };
                    grads.tensors[slot.weights].axpy(T::one(), &lg.weights)?;
                    grads.tensors[slot.bias].axpy(T::one(), &lg.bias)?;
                    lg.input
                }
                _ => return Err(Error::CorruptCache(format!("cache entry does not match layer {}", layer.name))),
            };
        }
        Ok(())
    }

    pub fn add_l2_gradient(&self, l2: T, grads: &mut ModelParams<T>) -> Result<()> {
        let two_l2 = l2 + l2;
        for i in self.params.weight_indices() {
            grads.tensors[i].axpy(two_l2, &self.params.tensors[i])?;
        }
        Ok(())
    }

    pub fn l2_penalty(&self, l2: T) -> T {
        l2_penalty(&self.params, l2)
    }
}

/// `l2 * sum(w^2)` over convolution and transposed-convolution kernels only.
pub fn l2_penalty<T: Scalar>(params: &ModelParams<T>, l2: T) -> T {
    let total = params.weight_indices().fold(T::zero(), |acc, i| acc + params.tensors[i].sum_sq());
    l2 * total
}
