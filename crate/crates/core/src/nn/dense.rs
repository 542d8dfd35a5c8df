use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Fully connected feed-forward network.
///
/// All parameters live in one flat vector so optimizers and checkpoints can
/// treat the network as a plain parameter array. Per layer the layout is the
/// row-major weight matrix (`outputs x inputs`) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Activations recorded by [`DenseNet::forward_record`], consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }
}

impl DenseNet {
    /// Builds a network with layer widths `sizes` (input first). Hidden layers
    /// use `hidden`, the last layer is linear. Weights are drawn from
    /// N(0, 1/fan_in); the output layer is additionally scaled by
    /// `output_gain` and all biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output_gain: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("a network needs an input and an output width"));
        }
        if sizes.contains(&0) {
            return Err(Error::config("layer widths must be >= 1"));
        }
        let layers: Vec<LayerShape> = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                inputs: w[0],
                outputs: w[1],
                activation: if i + 2 == sizes.len() {
                    Activation::Identity
                } else {
                    hidden
                },
            })
            .collect();
        let mut params = Vec::with_capacity(layers.iter().map(LayerShape::num_params).sum());
        for (i, layer) in layers.iter().enumerate() {
            let gain = if i + 1 == layers.len() { output_gain } else { 1.0 };
            let normal =
                Normal::new(0.0, gain / (layer.inputs as f64).sqrt()).map_err(|e| Error::config(e.to_string()))?;
            params.extend((0..layer.inputs * layer.outputs).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, layer.outputs));
        }
        Ok(Self { layers, params })
    }

    /// Rebuilds a network from explicit shapes and parameters.
    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape {
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                    context: "consecutive layer widths",
                });
            }
        }
        let expected: usize = layers.iter().map(LayerShape::num_params).sum();
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: params.len(),
                context: "parameter count",
            });
        }
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
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

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Mutable view of the output layer's bias.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.output_dim();
        let len = self.params.len();
        &mut self.params[len - n..]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        self.forward_record(input, &mut tape)?;
        Ok(tape.values.pop().unwrap_or_default())
    }

    /// Forward pass that keeps every layer output for a later backward pass.
    pub fn forward_record<'t>(&self, input: &[f64], tape: &'t mut Tape) -> Result<&'t [f64]> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: input.len(),
                context: "network input",
            });
        }
        tape.values.clear();
        tape.values.push(input.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let (w, rest) = self.params[offset..].split_at(layer.inputs * layer.outputs);
            let b = &rest[..layer.outputs];
            let x = tape.values.last().expect("tape holds the input");
            let y: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    let z = b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                    layer.activation.apply(z)
                })
                .collect();
            tape.values.push(y);
            offset += layer.num_params();
        }
        Ok(tape.output())
    }

    /// Reverse-mode pass: accumulates d(loss)/d(params) into `grads`, given
    /// d(loss)/d(output) for the pass recorded on `tape`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<()> {
        if tape.values.len() != self.layers.len() + 1 {
            return Err(Error::contract("backward called without a matching forward pass"));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                actual: upstream.len(),
                context: "upstream gradient",
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                actual: grads.len(),
                context: "gradient buffer",
            });
        }
        let mut offset = self.params.len();
        let mut delta_out = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.num_params();
            let x = &tape.values[i];
            let y = &tape.values[i + 1];
            // gradient w.r.t. pre-activation
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(y)
                .map(|(d, &yo)| d * layer.activation.derivative_from_output(yo))
                .collect();
            let w_len = layer.inputs * layer.outputs;
            let (gw, gb) = grads[offset..offset + layer.num_params()].split_at_mut(w_len);
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d != 0.0 {
                    for (g, &xi) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if i > 0 {
                let w = &self.params[offset..offset + w_len];
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        for (n, &wi) in next.iter_mut().zip(&w[o * layer.inputs..(o + 1) * layer.inputs]) {
                            *n += d * wi;
                        }
                    }
                }
                delta_out = next;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line forward pass written independently of the flat layout
    /// helpers: explicit nested loops over an owned weight table.
    fn reference_forward(net: &DenseNet, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut p = net.params().iter().copied();
        for layer in net.layers() {
            let mut w = vec![vec![0.0; layer.inputs]; layer.outputs];
            for row in w.iter_mut() {
                for v in row.iter_mut() {
                    *v = p.next().unwrap();
                }
            }
            let b: Vec<f64> = (0..layer.outputs).map(|_| p.next().unwrap()).collect();
            let mut y = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let mut z = b[o];
                for i in 0..layer.inputs {
                    z += w[o][i] * x[i];
                }
                y[o] = match layer.activation {
                    Activation::Identity => z,
                    Activation::Tanh => z.tanh(),
                    Activation::Relu => z.max(0.0),
                };
            }
            x = y;
        }
        x
    }

    #[test]
    fn zero_weights_output_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = DenseNet::new(&[3, 4, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        net.output_bias_mut().copy_from_slice(&[0.5, -2.0]);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -2.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let layers = vec![LayerShape {
            inputs: 3,
            outputs: 3,
            activation: Activation::Identity,
        }];
        let mut params = vec![0.0; 12];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = DenseNet::from_parts(layers, params).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 7.0]).unwrap(), vec![0.3, -1.0, 7.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(&[5, 7, 6, 3], Activation::Tanh, 1.0, &mut rng).unwrap();
        let x = [0.1, -0.4, 0.9, 1.5, -2.0];
        let a = net.forward(&x).unwrap();
        let b = reference_forward(&net, &x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_squared_loss_gradient_closed_form() {
        // y = w·x + b, loss = (y - t)^2 -> dL/dw = 2(y - t) x, dL/db = 2(y - t)
        let layers = vec![LayerShape {
            inputs: 2,
            outputs: 1,
            activation: Activation::Identity,
        }];
        let net = DenseNet::from_parts(layers, vec![0.5, -1.0, 0.25]).unwrap();
        let x = [2.0, 3.0];
        let target = 1.0;
        let mut tape = Tape::new();
        let y = net.forward_record(&x, &mut tape).unwrap()[0];
        let mut grads = vec![0.0; 3];
        net.backward(&tape, &[2.0 * (y - target)], &mut grads).unwrap();
        let r = y - target;
        assert_eq!(grads, vec![2.0 * r * 2.0, 2.0 * r * 3.0, 2.0 * r]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[4, 8, 3], Activation::Tanh, 1.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        net.forward_record(&[1.0, 0.0, -1.0, 0.5], &mut tape).unwrap();
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&tape, &[0.0; 3], &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[2, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        let mut grads = vec![0.0; net.num_params()];
        assert!(matches!(
            net.backward(&Tape::new(), &[1.0, 1.0], &mut grads),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[2, 3], Activation::Tanh, 1.0, &mut rng).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        let bad = vec![
            LayerShape {
                inputs: 2,
                outputs: 3,
                activation: Activation::Tanh,
            },
            LayerShape {
                inputs: 4,
                outputs: 1,
                activation: Activation::Identity,
            },
        ];
        assert!(DenseNet::from_parts(bad, vec![0.0; 13]).is_err());
        assert!(DenseNet::new(&[3], Activation::Tanh, 1.0, &mut rng).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = DenseNet::new(
            &[6, 64, 64, 10],
            Activation::Tanh,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = DenseNet::new(
            &[6, 64, 64, 10],
            Activation::Tanh,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
