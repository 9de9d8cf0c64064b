//! Dense multilayer perceptrons.
//!
//! Weights are stored `[out×in]` so a layer computes `act(x·Wᵀ + b)` on a
//! `[batch×in]` input. [`Mlp::forward`] evaluates directly on tensors;
//! [`Mlp::bind`] registers the parameters on a [`Graph`] for training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_RELU_SLOPE * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    fn apply_var(self, g: &Graph, v: Var) -> Var {
        match self {
            Activation::Relu => g.relu(v),
            Activation::LeakyRelu => g.leaky_relu(v, LEAKY_RELU_SLOPE),
            Activation::Tanh => g.tanh(v),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        weight.expect_rank(2, "Linear weight")?;
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::dim(
                "Linear bias",
                format!("[{}]", weight.shape()[0]),
                format!("{:?}", bias.shape()),
            ));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::new(vec![out_dim, in_dim], data).expect("shape matches"),
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// An ordered stack of [`Linear`] layers whose dimensions chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    format!("layer {} input", k + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Builds `sizes.len() - 1` Glorot-initialised layers; every layer but
    /// the last uses `hidden`, the last uses `output`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Linear::glorot(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Linear::zeros(sizes[k], sizes[k + 1], act)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Deterministic forward pass on a `[batch×in]` tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.rank() != 2 {
            return Err(Error::dim("mlp input", "rank-2 [batch×in]", format!("{:?}", input.shape())));
        }
        let mut h = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            if h.cols() != layer.in_dim() {
                return Err(Error::dim(format!("layer {k} input"), layer.in_dim(), h.cols()));
            }
            h = h.matmul_t(&layer.weight)?.add_row(&layer.bias)?;
            if layer.activation != Activation::Identity {
                h = h.map(|v| layer.activation.apply(v));
            }
        }
        Ok(h)
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &Graph) -> BoundMlp {
        self.bind_from(&mut self.params().into_iter().map(|t| g.leaf(t.clone())))
    }

    /// Builds a bound view from already-registered vars, consumed in
    /// [`Mlp::params`] order.
    pub fn bind_from(&self, vars: &mut impl Iterator<Item = Var>) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLinear {
                weight: vars.next().expect("weight var"),
                bias: vars.next().expect("bias var"),
                activation: l.activation,
                in_dim: l.in_dim(),
            })
            .collect();
        BoundMlp { layers }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
    in_dim: usize,
}

/// An [`Mlp`] whose parameters live on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn forward(&self, g: &Graph, input: Var) -> Var {
        let mut h = input;
        for layer in &self.layers {
            h = g.add_row(g.matmul_t(h, layer.weight), layer.bias);
            h = layer.activation.apply_var(g, h);
        }
        h
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Tensor, bias: Tensor, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Linear::new(weight, bias, act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = single(Tensor::eye(2), Tensor::zeros(&[2]), Activation::Identity);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_layer_zeroes_negatives() {
        let mlp = single(Tensor::eye(2), Tensor::zeros(&[2]), Activation::Relu);
        let x = Tensor::from_rows(&[vec![-1.0, 3.0]]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap().data(), &[0.0, 3.0]);
    }

    #[test]
    fn two_layer_net_matches_hand_evaluation() {
        // h = relu(W1 x + b1), out = W2 h + b2 with x = [1, -2]
        let w1 = Tensor::from_rows(&[vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let b1 = Tensor::vector(vec![0.5, 1.0, -0.5]);
        let w2 = Tensor::from_rows(&[vec![2.0, -1.0, 3.0]]).unwrap();
        let b2 = Tensor::vector(vec![0.25]);
        let mlp = Mlp::from_layers(vec![
            Linear::new(w1, b1, Activation::Relu).unwrap(),
            Linear::new(w2, b2, Activation::Identity).unwrap(),
        ])
        .unwrap();
        // pre-activations: [1 - 1 + 0.5, -1 - 4 + 1, 0 + 2 - 0.5] = [0.5, -4, 1.5]
        // hidden: [0.5, 0, 1.5]; output: 1 - 0 + 4.5 + 0.25 = 5.75
        let out = mlp.forward(&Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[5.75]);
    }

    #[test]
    fn mismatched_input_names_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let err = mlp.forward(&Tensor::zeros(&[1, 5])).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        let bad = Mlp::from_layers(vec![
            Linear::zeros(3, 4, Activation::Relu),
            Linear::zeros(5, 2, Activation::Identity),
        ]);
        assert!(bad.unwrap_err().to_string().contains("layer 1"));
    }

    #[test]
    fn glorot_init_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Linear::glorot(10, 6, Activation::Relu, &mut rng);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn graph_forward_matches_tensor_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Relu, Activation::LeakyRelu, Activation::Tanh] {
            let mlp = Mlp::new(&[4, 7, 3], act, Activation::Identity, &mut rng);
            let x = Tensor::matrix(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
            let g = Graph::new();
            let bound = mlp.bind(&g);
            let input = g.constant(x.clone());
            let out = bound.forward(&g, input);
            let direct = mlp.forward(&x).unwrap();
            for (a, b) in g.value(out).data().iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_is_batch_order_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Identity, &mut rng);
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64).cos()).collect()).unwrap();
        let perm = [2, 0, 3, 1];
        let out = mlp.forward(&x).unwrap();
        let permuted = mlp.forward(&x.select_rows(&perm)).unwrap();
        assert_eq!(permuted, out.select_rows(&perm));
        assert_eq!(mlp.forward(&x).unwrap(), out);
    }
}
