//! Dense feed-forward classifier with exact backpropagation.
//!
//! Parameters live in one flat `Vec<f64>`: for each layer, the weight matrix
//! (row-major, `out × in`) followed by the bias vector. Gradients use the same
//! layout, which lets the optimizers treat the network as a single vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_FORMAT: &str = "adaptive-kd/densenet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }
}

fn layer_shapes(sizes: &[usize]) -> Vec<LayerShape> {
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += w[0] * w[1] + w[1];
            shape
        })
        .collect()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "a network needs at least 2 layer sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid(format!("layer sizes must be >= 1: {sizes:?}")));
    }
    Ok(())
}

/// Number of parameters for the given layer sizes.
pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Gradient accumulator with the same flat layout as [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            values: vec![0.0; net.params.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl DenseNet {
    /// Fan-in scaled uniform weights in `[−1/√fan_in, 1/√fan_in)`, zero biases.
    /// Each layer draws from its own ChaCha stream of `seed`.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut params = vec![0.0; parameter_count(layer_sizes)];
        for (l, shape) in layer_shapes(layer_sizes).iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(l as u64);
            let bound = (1.0 / shape.inputs as f64).sqrt();
            for w in &mut params[shape.weights()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params,
        })
    }

    /// Builds a network from explicit parameters in the flat layout.
    pub fn from_params(layer_sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let expected = parameter_count(layer_sizes);
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameters for {layer_sizes:?}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let shape = layer_shapes(&self.layer_sizes)[l];
        (&self.params[shape.weights()], &self.params[shape.biases()])
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_size() {
            return Err(Error::invalid(format!(
                "network expects {} features, got {}",
                self.input_size(),
                features.len()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry is the logit vector.
    fn forward_trace(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let shapes = layer_shapes(&self.layer_sizes);
        let last = shapes.len() - 1;
        let mut pre = Vec::with_capacity(shapes.len());
        let mut input: Vec<f64> = features.to_vec();
        for (l, shape) in shapes.iter().enumerate() {
            let w = &self.params[shape.weights()];
            let b = &self.params[shape.biases()];
            let z: Vec<f64> = (0..shape.outputs)
                .map(|o| {
                    let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
                    row.iter().zip(&input).map(|(wi, xi)| wi * xi).sum::<f64>() + b[o]
                })
                .collect();
            if l < last {
                input = z.iter().map(|&v| self.activation.apply(v)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        Ok(self.forward_trace(features).pop().unwrap())
    }

    /// Gradient of `upstream · logits(features)` with respect to every parameter.
    pub fn backward(&self, features: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_into(features, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`DenseNet::backward`] but adds into an existing accumulator.
    pub fn backward_into(&self, features: &[f64], upstream: &[f64], grads: &mut GradientSet) -> Result<()> {
        self.check_input(features)?;
        if upstream.len() != self.output_size() {
            return Err(Error::invalid(format!(
                "upstream gradient has {} entries, network has {} outputs",
                upstream.len(),
                self.output_size()
            )));
        }
        if grads.values.len() != self.params.len() {
            return Err(Error::invalid("gradient accumulator does not match network"));
        }
        let shapes = layer_shapes(&self.layer_sizes);
        let pre = self.forward_trace(features);
        let mut delta = upstream.to_vec();
        for l in (0..shapes.len()).rev() {
            let shape = shapes[l];
            let input: Vec<f64> = if l == 0 {
                features.to_vec()
            } else {
                pre[l - 1].iter().map(|&z| self.activation.apply(z)).collect()
            };
            let gw = &mut grads.values[shape.weights()];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (g, x) in gw[o * shape.inputs..(o + 1) * shape.inputs].iter_mut().zip(&input) {
                    *g += d * x;
                }
            }
            for (g, d) in grads.values[shape.biases()].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let w = &self.params[shape.weights()];
                delta = (0..shape.inputs)
                    .map(|i| {
                        let back: f64 = (0..shape.outputs)
                            .map(|o| w[o * shape.inputs + i] * delta[o])
                            .sum();
                        back * self.activation.derivative(pre[l - 1][i])
                    })
                    .collect();
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &Checkpoint::from(self))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        ckpt.into_net()
    }
}

/// On-disk checkpoint: a versioned header followed by the flat parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl From<&DenseNet> for Checkpoint {
    fn from(net: &DenseNet) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: net.layer_sizes.clone(),
            activation: net.activation,
            params: net.params.clone(),
        }
    }
}

impl Checkpoint {
    pub fn into_net(self) -> Result<DenseNet> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema(format!("unknown checkpoint format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        DenseNet::from_params(&self.layer_sizes, self.activation, self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_determinism() {
        assert_eq!(parameter_count(&[2, 64, 64, 3]), 4547);
        let a = DenseNet::init(&[2, 64, 64, 3], Activation::Relu, 7).unwrap();
        let b = DenseNet::init(&[2, 64, 64, 3], Activation::Relu, 7).unwrap();
        assert_eq!(a.num_params(), 4547);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = DenseNet::init(&[2, 64, 64, 3], Activation::Relu, 8).unwrap();
        assert_ne!(a.params(), c.params());

        let (w, bias) = a.layer(1);
        assert!(w.iter().all(|v| v.abs() <= 0.125));
        assert!(bias.iter().all(|v| *v == 0.0));

        assert!(DenseNet::init(&[3], Activation::Relu, 0).is_err());
        assert!(DenseNet::init(&[3, 0, 2], Activation::Relu, 0).is_err());
    }

    #[test]
    fn linear_net_is_affine_map() {
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5];
        let net = DenseNet::from_params(&[3, 2], Activation::Relu, params).unwrap();
        let y = net.forward(&[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0 - 2.0 + 6.0 + 0.5, 4.0 - 5.0 + 12.0 - 0.5]);
        assert!(net.forward(&[1.0]).is_err());

        let g = net.backward(&[1.0, -1.0, 2.0], &[2.0, -1.0]).unwrap();
        assert_eq!(g.as_slice(), &[2.0, -2.0, 4.0, -1.0, 1.0, -2.0, 2.0, -1.0]);
        assert!(net.backward(&[1.0, -1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_network_and_zero_upstream() {
        let zeros = vec![0.0; parameter_count(&[2, 4, 3])];
        let net = DenseNet::from_params(&[2, 4, 3], Activation::Tanh, zeros).unwrap();
        assert_eq!(net.forward(&[0.3, -2.0]).unwrap(), vec![0.0; 3]);

        let net = DenseNet::init(&[2, 4, 3], Activation::Tanh, 1).unwrap();
        let g = net.backward(&[0.3, -2.0], &[0.0; 3]).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn checkpoint_rejects_foreign_header() {
        let net = DenseNet::init(&[2, 3], Activation::Relu, 0).unwrap();
        let mut ckpt = Checkpoint::from(&net);
        ckpt.version = 99;
        assert!(matches!(ckpt.into_net(), Err(Error::Schema(_))));
        let mut ckpt = Checkpoint::from(&net);
        ckpt.params.pop();
        assert!(ckpt.into_net().is_err());
    }
}
