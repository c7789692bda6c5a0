use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_strided, matmul, Scalar, Tensor};

pub const NET_FILTERS: usize = 64;
pub const NET_CLASSES: usize = 88;
/// Frames of a 30 s, 32 kHz clip with a 512-point window and 256 hop.
pub const FULL_CLIP_FRAMES: usize = 3749;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
    },
    GlobalAveragePool,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    fn conv(filters: usize, kh: usize, kw: usize, stride: (usize, usize)) -> Self {
        LayerSpec::Conv2d { filters, kernel: (kh, kw), stride, activation: Activation::Relu }
    }

    fn activation(&self) -> Option<Activation> {
        match self {
            LayerSpec::Conv2d { activation, .. } | LayerSpec::Dense { activation, .. } => Some(*activation),
            LayerSpec::GlobalAveragePool => None,
        }
    }
}

/// Layer list plus the `(channels, freq_bins, time_frames)` input it expects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNetSpec {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Feature {
    Map(usize, usize, usize),
    Vector(usize),
}

impl ConvNetSpec {
    /// Checks layer ordering and spatial extents; errors name the 1-based
    /// index of the first failing layer.
    pub fn validate(&self) -> Result<()> {
        self.feature_shapes().map(|_| ())
    }

    fn feature_shapes(&self) -> Result<Vec<Feature>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("input shape must be positive"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        let last = self.layers.len() - 1;
        let mut cur = Feature::Map(c, h, w);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let idx = i + 1;
            if layer.activation() == Some(Activation::Softmax) && i != last {
                return Err(Error::config(format!("layer {idx}: softmax is only allowed on the final layer")));
            }
            cur = match (layer, cur) {
                (LayerSpec::Conv2d { filters, kernel: (kh, kw), stride: (sh, sw), .. }, Feature::Map(_, h, w)) => {
                    if *filters == 0 || *sh == 0 || *sw == 0 {
                        return Err(Error::config(format!("layer {idx}: filters and strides must be positive")));
                    }
                    if *kh > h || *kw > w {
                        return Err(Error::config(format!(
                            "layer {idx}: conv2d kernel {kh}x{kw} does not fit its {h}x{w} input"
                        )));
                    }
                    Feature::Map(*filters, (h - kh) / sh + 1, (w - kw) / sw + 1)
                }
                (LayerSpec::Conv2d { .. }, Feature::Vector(_)) => {
                    return Err(Error::config(format!("layer {idx}: conv2d cannot follow pooling")));
                }
                (LayerSpec::GlobalAveragePool, Feature::Map(c, _, _)) => Feature::Vector(c),
                (LayerSpec::GlobalAveragePool, Feature::Vector(_)) => {
                    return Err(Error::config(format!("layer {idx}: input is already pooled")));
                }
                (LayerSpec::Dense { units, .. }, Feature::Vector(n)) => {
                    if *units == 0 {
                        return Err(Error::config(format!("layer {idx}: dense layer needs units")));
                    }
                    let _ = n;
                    Feature::Vector(*units)
                }
                (LayerSpec::Dense { .. }, Feature::Map(..)) => {
                    return Err(Error::config(format!("layer {idx}: dense must follow a pooling layer")));
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Trainable parameter count (weights plus biases).
    pub fn param_count(&self) -> usize {
        let mut channels = self.input_shape.0;
        let mut total = 0;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv2d { filters, kernel: (kh, kw), .. } => {
                    total += filters * (channels * kh * kw + 1);
                    channels = *filters;
                }
                LayerSpec::GlobalAveragePool => {}
                LayerSpec::Dense { units, .. } => {
                    total += units * (channels + 1);
                    channels = *units;
                }
            }
        }
        total
    }

    pub fn output_dim(&self) -> Result<usize> {
        match self.feature_shapes()?.last() {
            Some(Feature::Vector(n)) => Ok(*n),
            _ => Err(Error::config("network does not end in a vector output")),
        }
    }

    pub fn conv_depth(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv2d { .. })).count()
    }

    pub fn with_time_frames(mut self, frames: usize) -> Result<Self> {
        self.input_shape.2 = frames;
        self.validate()?;
        Ok(self)
    }
}

pub fn param_count(spec: &ConvNetSpec) -> usize {
    spec.param_count()
}

fn head() -> [LayerSpec; 2] {
    [
        LayerSpec::GlobalAveragePool,
        LayerSpec::Dense { units: NET_CLASSES, activation: Activation::Softmax },
    ]
}

/// Conv2D(64, (20, 3)) then four Conv2D(64, (3, 3)), all ReLU with (2, 2)
/// stride, global average pooling and an 88-way softmax.
///
/// The input is one channel of `n_freq_bins` by [`FULL_CLIP_FRAMES`] frames;
/// use [`ConvNetSpec::with_time_frames`] for other clip lengths.
pub fn build_paper_net(n_freq_bins: usize) -> Result<ConvNetSpec> {
    let mut layers = vec![LayerSpec::conv(NET_FILTERS, 20, 3, (2, 2))];
    layers.extend((0..4).map(|_| LayerSpec::conv(NET_FILTERS, 3, 3, (2, 2))));
    layers.extend(head());
    let spec = ConvNetSpec { input_shape: (1, n_freq_bins, FULL_CLIP_FRAMES), layers };
    spec.validate()?;
    Ok(spec)
}

/// Network with `depth` convolution layers for the overhead sweep.
///
/// Same filters and kernel sizes as [`build_paper_net`]: the first layer is
/// 20x3 and the rest 3x3. Only the first two layers downsample (stride 2);
/// later layers use stride 1, so each extra layer adds a comparable amount
/// of work instead of vanishing on an ever smaller feature map.
pub fn build_depth_net(n_freq_bins: usize, n_frames: usize, depth: usize) -> Result<ConvNetSpec> {
    if depth == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    let mut layers = vec![LayerSpec::conv(NET_FILTERS, 20, 3, (2, 2))];
    for i in 1..depth {
        let stride = if i == 1 { (2, 2) } else { (1, 1) };
        layers.push(LayerSpec::conv(NET_FILTERS, 3, 3, stride));
    }
    layers.extend(head());
    let spec = ConvNetSpec { input_shape: (1, n_freq_bins, n_frames), layers };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone)]
enum Params<T> {
    /// `[filters, c_in, kh, kw]` weights and one bias per filter.
    Conv(Tensor<T>, Vec<T>),
    /// `[units, inputs]` weights and one bias per unit.
    Dense(Tensor<T>, Vec<T>),
    None,
}

/// A [`ConvNetSpec`] with concrete weights.
#[derive(Debug, Clone)]
pub struct ConvNet<T = f32> {
    spec: ConvNetSpec,
    params: Vec<Params<T>>,
}

impl<T: Scalar> ConvNet<T> {
    /// He-uniform weights from `seed`, zero biases.
    pub fn seeded(spec: ConvNetSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, |fan_in| {
            let bound = (6.0 / fan_in as f64).sqrt();
            T::from_f64(rng.gen_range(-bound..bound))
        })
    }

    pub fn zeros(spec: ConvNetSpec) -> Result<Self> {
        Self::build(spec, |_| T::zero())
    }

    fn build(spec: ConvNetSpec, mut init: impl FnMut(usize) -> T) -> Result<Self> {
        spec.validate()?;
        let mut channels = spec.input_shape.0;
        let mut params = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            params.push(match layer {
                LayerSpec::Conv2d { filters, kernel: (kh, kw), .. } => {
                    let fan_in = channels * kh * kw;
                    let w = Tensor::from_fn(&[*filters, channels, *kh, *kw], |_| init(fan_in))?;
                    channels = *filters;
                    Params::Conv(w, vec![T::zero(); *filters])
                }
                LayerSpec::GlobalAveragePool => Params::None,
                LayerSpec::Dense { units, .. } => {
                    let w = Tensor::from_fn(&[*units, channels], |_| init(channels))?;
                    channels = *units;
                    Params::Dense(w, vec![T::zero(); *units])
                }
            });
        }
        Ok(ConvNet { spec, params })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (c, h, w) = self.spec.input_shape;
        if input.rank() != 4 || input.dims()[1..] != [c, h, w] {
            return Err(Error::domain(format!(
                "layer 1: expected input [batch, {c}, {h}, {w}], got {}",
                input.shape()
            )));
        }
        Ok(())
    }

    fn forward_item(&self, item: Tensor<T>) -> Result<Tensor<T>> {
        let mut x = item;
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let wrap = |e: Error| match e {
                Error::Domain(m) => Error::domain(format!("layer {}: {m}", i + 1)),
                other => other,
            };
            x = match (layer, params) {
                (LayerSpec::Conv2d { stride, activation, .. }, Params::Conv(w, b)) => {
                    let mut y = conv2d_strided(&x, w, *stride).map_err(wrap)?;
                    let plane = y.dims()[1] * y.dims()[2];
                    for (chunk, &bias) in y.data_mut().chunks_mut(plane).zip(b) {
                        for v in chunk.iter_mut() {
                            *v = *v + bias;
                        }
                    }
                    activate(y, *activation)
                }
                (LayerSpec::GlobalAveragePool, _) => {
                    let (c, plane) = (x.dims()[0], x.dims()[1] * x.dims()[2]);
                    let means = x
                        .data()
                        .chunks(plane)
                        .map(|ch| T::from_f64(ch.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
                        .collect();
                    Tensor::new(&[c, 1], means).map_err(wrap)?
                }
                (LayerSpec::Dense { activation, .. }, Params::Dense(w, b)) => {
                    let mut y = matmul(w, &x).map_err(wrap)?;
                    for (v, &bias) in y.data_mut().iter_mut().zip(b) {
                        *v = *v + bias;
                    }
                    activate(y, *activation)
                }
                _ => unreachable!("parameters are built from the layer list"),
            };
        }
        let n = x.len();
        x.reshape(&[n])
    }

    /// Class probabilities `[batch, classes]` for a `[batch, C, H, W]` input.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let rows = (0..input.dims()[0])
            .map(|b| self.forward_item(input.slice_outer(b)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&rows)
    }

    /// [`ConvNet::forward`] with batch items evaluated in parallel.
    pub fn forward_parallel(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let rows = (0..input.dims()[0])
            .into_par_iter()
            .map(|b| self.forward_item(input.slice_outer(b)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&rows)
    }
}

fn activate<T: Scalar>(t: Tensor<T>, activation: Activation) -> Tensor<T> {
    match activation {
        Activation::Linear => t,
        Activation::Relu => t.map(|v| v.max(T::zero())),
        Activation::Softmax => {
            let top = t.max().as_f64();
            let exps: Vec<f64> = t.data().iter().map(|v| (v.as_f64() - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut out = t;
            for (o, e) in out.data_mut().iter_mut().zip(exps) {
                *o = T::from_f64(e / total);
            }
            out
        }
    }
}
