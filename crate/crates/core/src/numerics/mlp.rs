//! Dense feed-forward network with hand-written backpropagation.
//!
//! Parameters live in one flat buffer; for each layer the weight matrix
//! (`out_dim × in_dim`, row-major) is followed by its bias vector. Gradients share
//! that layout, so optimizers work on plain slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn num_params(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Per-sample activations kept between a forward and a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    outputs: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Builds a network from layer shapes and a flat parameter buffer.
    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Dimension {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            offsets.push(total);
            total += layer.num_params();
        }
        if params.len() != total {
            return Err(Error::Dimension {
                expected: total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self {
            layers,
            params,
            offsets,
        })
    }

    fn shapes(sizes: &[usize], hidden: Activation, output: Activation) -> Vec<LayerShape> {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerShape {
                in_dim: w[0],
                out_dim: w[1],
                activation: if k + 2 == sizes.len() { output } else { hidden },
            })
            .collect()
    }

    /// All-zero network with the given layer sizes (`[input, hidden.., output]`).
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = Self::shapes(sizes, hidden, output);
        let total = layers.iter().map(LayerShape::num_params).sum();
        Self::from_parts(layers, vec![0.0; total]).expect("consistent shapes")
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        for k in 0..net.layers.len() {
            let shape = net.layers[k];
            let limit = (6.0 / (shape.in_dim + shape.out_dim) as f64).sqrt();
            let start = net.offsets[k];
            for w in &mut net.params[start..start + shape.in_dim * shape.out_dim] {
                *w = rng.uniform_range(-limit, limit);
            }
        }
        net
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
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

    pub fn layer_weights(&self, k: usize) -> &[f64] {
        let s = self.layers[k];
        &self.params[self.offsets[k]..self.offsets[k] + s.in_dim * s.out_dim]
    }

    pub fn layer_bias(&self, k: usize) -> &[f64] {
        let s = self.layers[k];
        let start = self.offsets[k] + s.in_dim * s.out_dim;
        &self.params[start..start + s.out_dim]
    }

    pub fn layer_weights_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.layers[k];
        let start = self.offsets[k];
        &mut self.params[start..start + s.in_dim * s.out_dim]
    }

    pub fn layer_bias_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.layers[k];
        let start = self.offsets[k] + s.in_dim * s.out_dim;
        &mut self.params[start..start + s.out_dim]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Pure forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut ws = Workspace::default();
        self.forward_with(input, &mut ws);
        Ok(ws.output().to_vec())
    }

    /// Forward pass that records activations into `ws`. Panics on a dimension mismatch.
    pub fn forward_with<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        assert_eq!(input.len(), self.input_dim(), "input dimension");
        ws.outputs.resize_with(self.layers.len(), Vec::new);
        for (k, shape) in self.layers.iter().enumerate() {
            let (before, rest) = ws.outputs.split_at_mut(k);
            let x: &[f64] = if k == 0 { input } else { &before[k - 1] };
            let out = &mut rest[0];
            out.clear();
            let w = self.layer_weights(k);
            let b = self.layer_bias(k);
            for (row, bias) in w.chunks_exact(shape.in_dim).zip(b) {
                let z = row.iter().zip(x).fold(*bias, |acc, (wi, xi)| acc + wi * xi);
                out.push(shape.activation.apply(z));
            }
        }
        ws.output()
    }

    /// Accumulates `∂(upstream · output)/∂params` into `grad`, using activations from
    /// the preceding [`Mlp::forward_with`] call on the same `input`. When `input_grad`
    /// is given it receives `∂(upstream · output)/∂input`.
    pub fn backward_with(
        &self,
        input: &[f64],
        ws: &mut Workspace,
        upstream: &[f64],
        grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        assert_eq!(upstream.len(), self.output_dim(), "upstream dimension");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let Workspace {
            outputs,
            delta,
            delta_prev,
        } = ws;
        delta.clear();
        delta.extend_from_slice(upstream);
        for k in (0..self.layers.len()).rev() {
            let shape = self.layers[k];
            let out = &outputs[k];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= shape.activation.derivative_from_output(*y);
            }
            let x: &[f64] = if k == 0 { input } else { &outputs[k - 1] };
            let start = self.offsets[k];
            let nw = shape.in_dim * shape.out_dim;
            let (gw, gb) = grad[start..start + nw + shape.out_dim].split_at_mut(nw);
            for ((grow, d), gbias) in gw.chunks_exact_mut(shape.in_dim).zip(delta.iter()).zip(gb) {
                *gbias += d;
                if *d != 0.0 {
                    for (g, xi) in grow.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let need_prev = k > 0 || input_grad.is_some();
            if need_prev {
                delta_prev.clear();
                delta_prev.resize(shape.in_dim, 0.0);
                let w = self.layer_weights(k);
                for (row, d) in w.chunks_exact(shape.in_dim).zip(delta.iter()) {
                    if *d != 0.0 {
                        for (p, wi) in delta_prev.iter_mut().zip(row) {
                            *p += d * wi;
                        }
                    }
                }
                if k == 0 {
                    if let Some(ig) = input_grad.as_deref_mut() {
                        ig.copy_from_slice(delta_prev);
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }

    /// Gradient of `upstream · forward(input)` with respect to the parameters.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut ws = Workspace::default();
        self.forward_with(input, &mut ws);
        let mut grad = vec![0.0; self.params.len()];
        self.backward_with(input, &mut ws, upstream, &mut grad, None);
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::StreamId;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        assert_eq!(net.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], Activation::Identity, Activation::Identity);
        let w = net.layer_weights_mut(0);
        w[0] = 1.0;
        w[4] = 1.0;
        w[8] = 1.0;
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn hand_evaluated_1_2_1_tanh_net() {
        // h = tanh(W1 x + b1), y = W2 h + b2
        let layers = vec![
            LayerShape { in_dim: 1, out_dim: 2, activation: Activation::Tanh },
            LayerShape { in_dim: 2, out_dim: 1, activation: Activation::Identity },
        ];
        let params = vec![0.5, -1.0, 0.1, 0.2, 2.0, 3.0, -0.5];
        let net = Mlp::from_parts(layers, params).unwrap();
        let x = 0.8;
        let h1 = (0.5f64 * x + 0.1).tanh();
        let h2 = (-1.0f64 * x + 0.2).tanh();
        let expected = 2.0 * h1 + 3.0 * h2 - 0.5;
        let got = net.forward(&[x]).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
        // Frozen from the hand evaluation above.
        assert!((got - (-1.186_914_386_474_086_8_f64)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = RngStream::new(1, StreamId::Init);
        let net = Mlp::glorot(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let g = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut rng = RngStream::new(2, StreamId::Init);
        let net = Mlp::glorot(&[3, 2], Activation::Identity, Activation::Identity, &mut rng);
        let x = [1.0, -2.0, 0.5];
        let g_up = [0.3, -0.7];
        let g = net.backward(&x, &g_up).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(g[i * 3 + j], g_up[i] * x[j]);
            }
            assert_eq!(g[6 + i], g_up[i]);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = RngStream::new(9, StreamId::Init);
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::glorot(&[4, 6, 5, 2], act, Activation::Identity, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let up = [rng.normal(), rng.normal()];
            let g = net.backward(&x, &up).unwrap();
            let h = 1e-5;
            for i in 0..net.num_params() {
                let mut p = net.clone();
                p.params_mut()[i] += h;
                let fp: f64 = p.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum();
                p.params_mut()[i] -= 2.0 * h;
                let fm: f64 = p.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum();
                let fd = (fp - fm) / (2.0 * h);
                let denom = g[i].abs().max(fd.abs()).max(1e-6);
                assert!((g[i] - fd).abs() / denom < 1e-4, "param {i}: {} vs {}", g[i], fd);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(4, StreamId::Init);
        let net = Mlp::glorot(&[3, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let x = vec![0.3, -0.1, 0.7];
        let mut ws = Workspace::default();
        net.forward_with(&x, &mut ws);
        let mut grad = vec![0.0; net.num_params()];
        let mut gx = vec![0.0; 3];
        net.backward_with(&x, &mut ws, &[1.0], &mut grad, Some(&mut gx));
        for j in 0..3 {
            let mut xp = x.clone();
            xp[j] += 1e-6;
            let mut xm = x.clone();
            xm[j] -= 1e-6;
            let fd = (net.forward(&xp).unwrap()[0] - net.forward(&xm).unwrap()[0]) / 2e-6;
            assert!((fd - gx[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh, Activation::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { expected: 3, got: 1 })));
        let bad = Mlp::from_parts(
            vec![
                LayerShape { in_dim: 2, out_dim: 3, activation: Activation::Tanh },
                LayerShape { in_dim: 4, out_dim: 1, activation: Activation::Identity },
            ],
            vec![0.0; 14],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = RngStream::new(5, StreamId::Init);
        let net = Mlp::glorot(&[10, 64, 64, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let limit = (6.0f64 / 74.0).sqrt();
        assert!(net.layer_weights(0).iter().all(|w| w.abs() <= limit));
        assert!(net.layer_bias(1).iter().all(|b| *b == 0.0));
    }
}
