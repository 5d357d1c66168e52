use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output `a`.
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

/// Weights are stored `fan_in x fan_out` so a batch propagates as `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Shape description of one layer, as stored in checkpoint manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

/// Entries drawn from U(-sqrt(3/fan_in), sqrt(3/fan_in)).
pub fn lecun_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let bound = (3.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

pub fn init_lecun_uniform(shape: (usize, usize), seed: u64) -> Array2<f64> {
    lecun_uniform(shape.0, shape.1, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Intermediate values of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the net output.
    pub activations: Vec<Array2<f64>>,
    /// Inverted-dropout masks (already scaled by 1/(1-p)) for hidden layers.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("nonempty cache")
    }
}

/// Per-layer parameter gradients in the same order as [`DenseNet::param_slices_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl NetGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// LeCun-uniform weights and zero biases for the given widths; `widths`
    /// includes the input width, `activations` has one entry per layer.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::config("need at least one layer and one activation per layer"));
        }
        if widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weights: lecun_uniform(w[0], w[1], rng),
                bias: Array1::zeros(w[1]),
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("network has no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].fan_out(),
                    actual: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::DimensionMismatch {
                    expected: l.fan_out(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation,
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weight then bias of each layer, row-major.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn flatten_params_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
    }

    /// Rebuilds a network from its spec and a flat parameter vector laid out
    /// as in [`DenseNet::flatten_params_into`]. Returns the net and the
    /// number of values consumed.
    pub fn from_spec(spec: &[LayerSpec], params: &[f64]) -> Result<(Self, usize)> {
        let mut offset = 0;
        let mut layers = Vec::with_capacity(spec.len());
        for s in spec {
            let nw = s.fan_in * s.fan_out;
            let need = offset + nw + s.fan_out;
            if params.len() < need {
                return Err(Error::NotEnoughSamples {
                    what: "checkpoint parameters",
                    requested: need,
                    available: params.len(),
                });
            }
            let weights = Array2::from_shape_vec((s.fan_in, s.fan_out), params[offset..offset + nw].to_vec())
                .expect("sizes checked");
            let bias = Array1::from(params[offset + nw..need].to_vec());
            offset = need;
            layers.push(Layer {
                weights,
                bias,
                activation: s.activation,
            });
        }
        let net = Self::from_layers(layers)?;
        if net.layers.iter().any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
            return Err(Error::Format {
                what: "checkpoint parameters",
                detail: "non-finite value".into(),
            });
        }
        Ok((net, offset))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights);
        z += &layer.bias;
        z.mapv_inplace(|v| layer.activation.apply(v));
        z
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            a = Self::affine(layer, &a.view());
        }
        Ok(a)
    }

    /// Forward pass keeping every activation. With `dropout > 0` an inverted
    /// dropout mask is drawn for each hidden layer output.
    pub fn forward<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, dropout: f64, rng: &mut R) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut masks = Vec::with_capacity(n);
        activations.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = Self::affine(layer, &activations[l].view());
            let mask = if dropout > 0.0 && l + 1 < n {
                let keep = 1.0 - dropout;
                let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a *= &m;
                Some(m)
            } else {
                None
            };
            masks.push(mask);
            activations.push(a);
        }
        Ok(ForwardCache { activations, masks })
    }

    /// Gradients of a loss with respect to all parameters and to the input,
    /// given the loss gradient at the network output.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> (NetGrads, Array2<f64>) {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = output_grad.clone();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let out = &cache.activations[l + 1];
            match &cache.masks[l] {
                // out = act(z) * mask, so d out / d z = act'(z) * mask where
                // act' is evaluated on the unmasked output.
                Some(mask) => ndarray::Zip::from(&mut delta).and(out).and(mask).for_each(|d, &a, &m| {
                    if m == 0.0 {
                        *d = 0.0;
                    } else {
                        *d *= m * layer.activation.derivative_from_output(a / m);
                    }
                }),
                None => {
                    if layer.activation != Activation::Linear {
                        ndarray::Zip::from(&mut delta)
                            .and(out)
                            .for_each(|d, &a| *d *= layer.activation.derivative_from_output(a));
                    }
                }
            }
            let input = &cache.activations[l];
            let dw = input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights.t());
            grads.push((dw, db));
            delta = next;
        }
        grads.reverse();
        (NetGrads { layers: grads }, delta)
    }
}
