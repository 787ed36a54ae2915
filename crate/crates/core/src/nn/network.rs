use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::init::glorot_normal;
use super::layers::{Layer, LayerSpec, Mode, Param};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Sliding-window CNN predicting the center sample's class.
    Cnn,
    /// Per-window CNN encoder followed by an LSTM over the window sequence.
    CnnLstm,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::CnnLstm => "cnn_lstm",
        }
    }
}

/// Input geometry plus the ordered layer list of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub family: Family,
    /// Samples per input window.
    pub window_samples: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Per-window `(len, channels)` after every layer.
    pub fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut shape = (self.window_samples, self.in_channels);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(shape.0, shape.1)?;
            out.push(shape);
        }
        Ok(out)
    }

    /// Temporal size entering the first non-temporal layer (the receptive
    /// field check: 1 means the last pooling stage sees the whole window).
    pub fn trunk_output_len(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let idx = self.trunk_len();
        Ok(if idx == 0 { self.window_samples } else { shapes[idx - 1].0 })
    }

    /// Number of leading time-local layers.
    pub fn trunk_len(&self) -> usize {
        self.layers.iter().take_while(|l| l.is_temporal()).count()
    }

    pub fn param_count(&self) -> Result<usize> {
        let mut shape = (self.window_samples, self.in_channels);
        let mut total = 0;
        for layer in &self.layers {
            total += param_shapes(layer, shape.1)
                .iter()
                .filter(|(_, _, trainable)| *trainable)
                .map(|(_, s, _)| s.iter().product::<usize>())
                .sum::<usize>();
            shape = layer.output_shape(shape.0, shape.1)?;
        }
        Ok(total)
    }
}

/// `(name, shape, trainable)` of a layer's parameters given its input channels.
pub(crate) fn param_shapes(spec: &LayerSpec, cin: usize) -> Vec<(&'static str, Vec<usize>, bool)> {
    match *spec {
        LayerSpec::Conv1d { filters, .. } => {
            vec![("kernel", vec![3, cin, filters], true), ("bias", vec![filters], true)]
        }
        LayerSpec::BatchNorm { .. } => vec![
            ("gamma", vec![cin], true),
            ("beta", vec![cin], true),
            ("moving_mean", vec![cin], false),
            ("moving_variance", vec![cin], false),
        ],
        LayerSpec::Dense { units } => vec![("kernel", vec![cin, units], true), ("bias", vec![units], true)],
        LayerSpec::Softmax { classes } => {
            vec![("kernel", vec![cin, classes], true), ("bias", vec![classes], true)]
        }
        LayerSpec::Lstm { hidden } => vec![
            ("kernel", vec![cin, 4 * hidden], true),
            ("recurrent_kernel", vec![hidden, 4 * hidden], true),
            ("bias", vec![4 * hidden], true),
        ],
        _ => Vec::new(),
    }
}

fn init_params<F: Scalar>(spec: &LayerSpec, cin: usize, rng: &mut ChaCha8Rng) -> Vec<Param<F>> {
    param_shapes(spec, cin)
        .into_iter()
        .map(|(name, shape, trainable)| {
            let n: usize = shape.iter().product();
            let value: Vec<F> = match (spec, name) {
                (LayerSpec::Conv1d { filters, .. }, "kernel") => {
                    glorot_normal(n, 3 * cin, 3 * filters, rng)
                }
                (LayerSpec::Dense { .. } | LayerSpec::Softmax { .. }, "kernel")
                | (LayerSpec::Lstm { .. }, "kernel" | "recurrent_kernel") => {
                    glorot_normal(n, shape[0], shape[1], rng)
                }
                (LayerSpec::BatchNorm { .. }, "gamma" | "moving_variance") => vec![F::one(); n],
                (&LayerSpec::Lstm { hidden }, "bias") => {
                    // Unit forget-gate bias.
                    (0..n).map(|i| if (hidden..2 * hidden).contains(&i) { F::one() } else { F::zero() }).collect()
                }
                _ => vec![F::zero(); n],
            };
            Param::new(name, shape, value, trainable)
        })
        .collect()
}

/// A network instance: spec, parameters and (during training) forward caches.
#[derive(Debug, Clone)]
pub struct Network<F> {
    spec: NetworkSpec,
    layers: Vec<Layer<F>>,
    forward_done: bool,
}

impl<F: Scalar> Network<F> {
    /// Fresh parameters: Glorot-normal kernels, zero biases, identity batch norm.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ch = spec.in_channels;
        let mut len = spec.window_samples;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            layers.push(Layer::new(ls.clone(), init_params(ls, ch, &mut rng)));
            (len, ch) = ls.output_shape(len, ch)?;
        }
        Ok(Self { spec, layers, forward_done: false })
    }

    /// Builds a network from explicit parameter tensors (checkpoint loading).
    pub fn from_params(spec: NetworkSpec, params: Vec<Vec<Param<F>>>) -> Result<Self> {
        if params.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        let mut ch = spec.in_channels;
        let mut len = spec.window_samples;
        let mut layers = Vec::with_capacity(params.len());
        for (i, (ls, ps)) in spec.layers.iter().zip(params).enumerate() {
            let want = param_shapes(ls, ch);
            if want.len() != ps.len()
                || want.iter().zip(&ps).any(|((n, s, _), p)| *n != p.name || *s != p.shape)
            {
                return Err(Error::Shape(format!("layer {i} ({ls:?}) parameter shapes do not match")));
            }
            layers.push(Layer::new(ls.clone(), ps));
            (len, ch) = ls.output_shape(len, ch)?;
        }
        Ok(Self { spec, layers, forward_done: false })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer::new(l.spec.clone(), l.params.iter().map(Param::cast).collect()))
                .collect(),
            forward_done: false,
        }
    }

    /// All parameters in declaration order, including batch-norm statistics.
    pub fn params(&self) -> impl Iterator<Item = &Param<F>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params_mut().filter(|p| p.trainable)
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().for_each(Param::zero_grad);
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        if x.channels() != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.spec.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Pure inference. `sequences` groups CNN-LSTM windows into sequences
    /// (ignored by CNNs).
    pub fn infer(&self, x: &Tensor<F>, sequences: usize) -> Result<Tensor<F>> {
        self.check_input(x)?;
        self.infer_layers(x.clone(), 0..self.layers.len(), sequences)
    }

    /// Inference through a contiguous range of layers.
    pub fn infer_layers(
        &self,
        mut x: Tensor<F>,
        range: std::ops::Range<usize>,
        sequences: usize,
    ) -> Result<Tensor<F>> {
        for layer in &self.layers[range] {
            x = layer.infer(&x, sequences)?;
        }
        Ok(x)
    }

    /// Forward pass that keeps the intermediates [`Network::backward`] needs.
    pub fn forward(
        &mut self,
        x: &Tensor<F>,
        mode: Mode,
        sequences: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<F>> {
        self.check_input(x)?;
        self.forward_done = false;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode, sequences, rng)?;
        }
        self.forward_done = true;
        Ok(h)
    }

    /// Accumulates parameter gradients for `d loss / d output`; returns the
    /// gradient with respect to the network input.
    pub fn backward(&mut self, gout: &Tensor<F>) -> Result<Tensor<F>> {
        if !self.forward_done {
            return Err(Error::NoForwardCache);
        }
        self.forward_done = false;
        let mut g = gout.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Drops any forward caches (e.g. after an aborted step).
    pub fn clear_caches(&mut self) {
        self.forward_done = false;
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}
