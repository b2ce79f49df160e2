//! Fully-connected networks with hand-written backpropagation and Adam.
//!
//! Weights are stored row-major per layer (`outputs x inputs`).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, reused by backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Vec<f64>>,
    pub preactivations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }

    /// Pre-activation of the final layer.
    pub fn logits(&self) -> &[f64] {
        self.preactivations.last().map_or(&[], Vec::as_slice)
    }
}

/// Parameter-shaped buffer: gradients, Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn same_shape(&self, other: &Gradients) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.len() == b.len())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| *v == 0.0)
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: Gradients,
    /// Gradient with respect to the network input.
    pub input: Vec<f64>,
}

impl Mlp {
    /// Fan-in uniform weights `U(-1/sqrt(n_in), 1/sqrt(n_in))`, zero biases.
    pub fn new(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        Self::check_shape(layer_sizes, activations)?;
        let mut rng = rng::seeded(seed);
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(io, &activation)| {
                let (inputs, outputs) = (io[0], io[1]);
                let bound = 1.0 / libm::sqrt(inputs as f64);
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect(),
                    biases: vec![0.0; outputs],
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        let mut net = Self::new(layer_sizes, activations, 0)?;
        net.params_mut().for_each(|p| *p = 0.0);
        Ok(net)
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layer_sizes", "need at least two sizes"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::invalid("layer_sizes", "sizes must be positive"));
            }
            if l.weights.len() != l.inputs * l.outputs {
                return Err(Error::dim("layer weights", l.inputs * l.outputs, l.weights.len()));
            }
            if l.biases.len() != l.outputs {
                return Err(Error::dim("layer biases", l.outputs, l.biases.len()));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::dim("layer chain", layers[i - 1].outputs, l.inputs));
            }
        }
        Ok(Mlp { layers })
    }

    fn check_shape(layer_sizes: &[usize], activations: &[Activation]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("layer_sizes", "need at least two sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes", "sizes must be positive"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::dim(
                "activations",
                layer_sizes.len() - 1,
                activations.len(),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("forward input", self.input_dim(), input.len()));
        }
        let mut x = input.to_vec();
        for l in &self.layers {
            x = l.affine(&x).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("forward input", self.input_dim(), input.len()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preactivations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for l in &self.layers {
            let z = l.affine(activations.last().unwrap());
            activations.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            preactivations.push(z);
        }
        Ok(ForwardTrace {
            activations,
            preactivations,
        })
    }

    /// Reverse-mode gradients for `output_gradient` = dL/d(output).
    pub fn backward(&self, input: &[f64], output_gradient: &[f64]) -> Result<Backprop> {
        let trace = self.forward_trace(input)?;
        self.backward_trace(&trace, output_gradient, false)
    }

    /// Backward pass from a cached forward trace.
    ///
    /// With `at_logits`, `gradient` is taken with respect to the final layer's
    /// pre-activation, skipping its activation derivative (stable
    /// sigmoid + cross-entropy).
    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        gradient: &[f64],
        at_logits: bool,
    ) -> Result<Backprop> {
        if gradient.len() != self.output_dim() {
            return Err(Error::dim("output gradient", self.output_dim(), gradient.len()));
        }
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::dim(
                "forward trace",
                self.layers.len() + 1,
                trace.activations.len(),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta_out = gradient.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.preactivations[li];
            let a = &trace.activations[li + 1];
            let delta: Vec<f64> = if li == last && at_logits {
                delta_out
            } else {
                delta_out
                    .iter()
                    .zip(z.iter().zip(a))
                    .map(|(g, (&z, &a))| g * l.activation.derivative(z, a))
                    .collect()
            };
            let x = &trace.activations[li];
            let gw = &mut grads.weights[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g = d * xv;
                }
            }
            grads.biases[li].copy_from_slice(&delta);
            let mut prev = vec![0.0; l.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta_out = prev;
        }
        Ok(Backprop {
            params: grads,
            input: delta_out,
        })
    }

    /// `self <- tau * online + (1 - tau) * self`, element-wise.
    pub fn soft_update(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !self.same_shape(online) {
            return Err(Error::invalid("soft_update", "target and online shapes differ"));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid("tau", "must lie in [0, 1]"));
        }
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    /// Applies one descent step along `gradients`.
    pub fn step(&mut self, net: &mut Mlp, gradients: &Gradients) -> Result<()> {
        if !self.first.same_shape(gradients) || !gradients.same_shape(&Gradients::zeros_like(net)) {
            return Err(Error::invalid("adam", "gradient shape does not match parameters"));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let moments = self.first.values_mut().zip(self.second.values_mut());
        for ((p, g), (m, v)) in net.params_mut().zip(gradients.values()).zip(moments) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use Activation::*;

    #[test]
    fn init_zero_biases_and_determinism() {
        let net = Mlp::new(&[3, 1], &[Sigmoid], 9).unwrap();
        assert_eq!(net.layers()[0].biases, vec![0.0]);
        assert_eq!(net, Mlp::new(&[3, 1], &[Sigmoid], 9).unwrap());
        assert_ne!(net, Mlp::new(&[3, 1], &[Sigmoid], 10).unwrap());
    }

    #[test]
    fn parameter_count() {
        let net = Mlp::new(&[19, 64, 64, 3], &[Relu, Relu, Tanh], 0).unwrap();
        assert_eq!(net.param_count(), 5635);
        assert_eq!(net.layer_sizes(), vec![19, 64, 64, 3]);
    }

    #[test]
    fn shape_errors() {
        assert!(Mlp::new(&[], &[], 0).is_err());
        assert!(Mlp::new(&[3], &[], 0).is_err());
        assert!(Mlp::new(&[3, 2], &[Relu, Relu], 0).is_err());
        let net = Mlp::new(&[3, 2], &[Relu], 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_net_sigmoid_is_half() {
        let net = Mlp::zeros(&[4, 5, 2], &[Relu, Sigmoid]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = Mlp::from_layers(vec![Layer {
            inputs: 3,
            outputs: 3,
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            biases: vec![0.0; 3],
            activation: Identity,
        }])
        .unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 2.5]).unwrap(), vec![0.3, -1.0, 2.5]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let net = Mlp::new(&[4, 8, 2], &[Tanh, Sigmoid], 3).unwrap();
        let b = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(b.params.is_zero());
        assert!(b.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_linear_chain_rule() {
        let net = Mlp::from_layers(vec![Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![0.7],
            biases: vec![0.0],
            activation: Identity,
        }])
        .unwrap();
        let b = net.backward(&[3.0], &[2.0]).unwrap();
        assert_eq!(b.params.weights[0], vec![6.0]);
        assert_eq!(b.params.biases[0], vec![2.0]);
        assert_eq!(b.input, vec![1.4]);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut net = Mlp::new(&[3, 4, 1], &[Relu, Identity], 1).unwrap();
        let before = net.clone();
        let mut opt = AdamState::new(&net, AdamConfig::default());
        opt.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_constant_gradient_moves_by_learning_rate() {
        // With a constant gradient g the bias-corrected moments are exactly g
        // and g^2, so each step is lr * g / (|g| + eps).
        let mut net = Mlp::zeros(&[1, 1], &[Identity]).unwrap();
        let mut opt = AdamState::new(&net, AdamConfig::default());
        let mut g = Gradients::zeros_like(&net);
        g.weights[0][0] = 0.25;
        g.biases[0][0] = -4.0;
        let step = 1e-3 * 0.25 / (0.25 + 1e-8);
        for k in 1..=500 {
            opt.step(&mut net, &g).unwrap();
            let w = net.layers()[0].weights[0];
            assert!((w + k as f64 * step).abs() < 1e-12 * k as f64, "{w}");
        }
        let b = net.layers()[0].biases[0];
        assert!((b - 500.0 * 1e-3 * 4.0 / (4.0 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut net = Mlp::new(&[2, 3, 1], &[Tanh, Identity], 5).unwrap();
            let mut opt = AdamState::new(&net, AdamConfig::default());
            for i in 0..50 {
                let x = [i as f64 * 0.1, 1.0];
                let y = net.forward(&x).unwrap()[0];
                let b = net.backward(&x, &[y - 0.5]).unwrap();
                opt.step(&mut net, &b.params).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut net = Mlp::new(&[2, 1], &[Identity], 0).unwrap();
        let other = Mlp::new(&[3, 1], &[Identity], 0).unwrap();
        let mut opt = AdamState::new(&net, AdamConfig::default());
        assert!(opt.step(&mut net, &Gradients::zeros_like(&other)).is_err());
    }

    #[test]
    fn adam_stays_finite_on_bounded_gradients() {
        let mut net = Mlp::new(&[3, 16, 1], &[Relu, Sigmoid], 2).unwrap();
        let mut opt = AdamState::new(&net, AdamConfig::default());
        let mut r = seeded(4);
        for _ in 0..10_000 {
            let x = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            let g = [r.random_range(-1.0..1.0)];
            let b = net.backward(&x, &g).unwrap();
            opt.step(&mut net, &b.params).unwrap();
        }
        assert!(net.is_finite());
    }

    #[test]
    fn soft_update_cases() {
        let online = Mlp::from_layers(vec![Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![2.0],
            biases: vec![2.0],
            activation: Identity,
        }])
        .unwrap();
        let mut target = Mlp::zeros(&[1, 1], &[Identity]).unwrap();
        let zero = target.clone();
        target.soft_update(&online, 0.0).unwrap();
        assert_eq!(target, zero);
        target.soft_update(&online, 0.5).unwrap();
        assert_eq!(target.layers()[0].weights, vec![1.0]);
        target.soft_update(&online, 1.0).unwrap();
        assert_eq!(target, online);
        let wrong = Mlp::zeros(&[2, 1], &[Identity]).unwrap();
        assert!(target.soft_update(&wrong, 0.5).is_err());
    }

    #[test]
    fn forward_does_not_mutate() {
        let net = Mlp::new(&[3, 4, 2], &[Tanh, Sigmoid], 6).unwrap();
        let copy = net.clone();
        let _ = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let _ = net.backward(&[1.0, 2.0, 3.0], &[1.0, -1.0]).unwrap();
        assert_eq!(net, copy);
    }
}
