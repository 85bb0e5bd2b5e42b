//! Small dense feed-forward networks with hand-written backpropagation.

mod adam;
mod checkpoint;
mod gradcheck;

pub use self::adam::Adam;
pub use self::checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use self::gradcheck::{gradient_check, relative_error, GradCheckReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative; relu uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform fan-in scaled initialisation: ±√(6/fan_in) for relu layers,
    /// ±√(3/fan_in) otherwise. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let gain = match activation {
            Activation::Relu => 6.0,
            Activation::Identity => 3.0,
        };
        let limit = (gain / inputs.max(1) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            weights,
            ..Dense::zeros(inputs, outputs, activation)
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Sign of every relu pre-activation; changes mark a kink crossing.
    pub fn relu_pattern(&self, net: &DenseNet) -> Vec<i8> {
        net.layers
            .iter()
            .zip(&self.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.partial_cmp(&0.0).map(|o| o as i8).unwrap_or(0)))
            .collect()
    }
}

/// Per-layer parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    /// Flattened in parameter visiting order (per layer: weights, then bias).
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Anything whose trainable parameters can be walked in a fixed order.
pub trait Parameters {
    fn visit_params(&self, f: &mut dyn FnMut(f64));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_| n += 1);
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.visit_params_mut(&mut |p| *p = *it.next().expect("parameter count"));
    }

    fn params_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |p| ok &= p.is_finite());
        ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

impl DenseNet {
    /// Network with layer widths `sizes` (input first), relu on hidden
    /// layers and `output` on the last.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape {
                expected: 2,
                actual: sizes.len(),
            });
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { Activation::Relu };
                Dense::init(w[0], w[1], act, rng)
            })
            .collect();
        DenseNet::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape { expected: 1, actual: 0 });
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs {
                return Err(Error::Shape {
                    expected: l.inputs * l.outputs,
                    actual: l.weights.len(),
                });
            }
            if l.bias.len() != l.outputs {
                return Err(Error::Shape {
                    expected: l.outputs,
                    actual: l.bias.len(),
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape {
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut x, a));
            cache.pre.push(z);
        }
        Ok((x, cache))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer
                .pre_activation(&x)
                .into_iter()
                .map(|v| layer.activation.apply(v))
                .collect();
        }
        Ok(x)
    }

    /// Reverse-mode gradients of the forward map given dL/d(output).
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::Shape {
                expected: self.layers.len(),
                actual: cache.pre.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (x, z) = (&cache.inputs[i], &cache.pre[i]);
            if z.len() != layer.outputs || x.len() != layer.inputs {
                return Err(Error::Shape {
                    expected: layer.outputs,
                    actual: z.len(),
                });
            }
            let delta: Vec<f64> = upstream
                .iter()
                .zip(z)
                .map(|(g, &zv)| g * layer.activation.derivative(zv))
                .collect();
            let gw = &mut grads.weights[i];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g = d * xi);
            }
            grads.bias[i].copy_from_slice(&delta);
            let mut down = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                down.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
            }
            upstream = down;
        }
        grads.input = upstream;
        Ok(grads)
    }
}

impl Parameters for DenseNet {
    fn visit_params(&self, f: &mut dyn FnMut(f64)) {
        for l in &self.layers {
            l.weights.iter().chain(&l.bias).for_each(|&p| f(p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(&mut *f);
        }
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}
