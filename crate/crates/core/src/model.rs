//! The two-latent encoder/decoder network, its pair forward pass, and
//! checkpoint I/O.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::PairBatch;
use crate::error::{Error, Result};
use crate::mlp::{Activation, BoundMlp, Mlp};
use crate::probdist::{reparameterize_var, DiagGaussian, GaussianVars};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "farcon-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub x_dim: usize,
    pub s_dim: usize,
    pub y_dim: usize,
    pub zx_dim: usize,
    pub zs_dim: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn encoder_in(&self) -> usize {
        self.x_dim + self.s_dim + self.y_dim
    }

    pub fn decoder_in(&self) -> usize {
        self.zx_dim + self.zs_dim
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("x_dim", self.x_dim),
            ("s_dim", self.s_dim),
            ("y_dim", self.y_dim),
            ("zx_dim", self.zx_dim),
            ("zs_dim", self.zs_dim),
            ("hidden", self.hidden),
        ];
        match named.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::InvalidArgument(format!("model dimension {name} must be positive"))),
            None => Ok(()),
        }
    }
}

/// What the encoder sees in its y slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderY {
    /// The supplied label (true y in training, ŷ at evaluation).
    #[default]
    Label,
    /// A constant 0.5, so the posterior carries no label information.
    Uninformative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarconModel {
    pub dims: ModelDims,
    /// Per x column: `true` for a Bernoulli likelihood, `false` for a
    /// unit-variance Gaussian.
    pub x_bernoulli: Vec<bool>,
    #[serde(default)]
    pub encoder_y: EncoderY,
    pub encoder_body: Mlp,
    pub encoder_head_x: Mlp,
    pub encoder_head_s: Mlp,
    pub decoder_body: Mlp,
    pub decoder_head_x: Mlp,
    pub decoder_head_s: Mlp,
    pub predictor_y: Mlp,
}

const PART_NAMES: [&str; 7] = [
    "encoder_body",
    "encoder_head_x",
    "encoder_head_s",
    "decoder_body",
    "decoder_head_x",
    "decoder_head_s",
    "predictor_y",
];

impl FarconModel {
    /// One relu hidden layer in encoder and decoder bodies, linear heads, and
    /// a logistic-regression predictor on `z_x`.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, x_bernoulli: Vec<bool>, rng: &mut R) -> Result<Self> {
        Self::build(dims, x_bernoulli, |sizes, out| Mlp::new(sizes, Activation::Relu, out, rng))
    }

    pub fn zeros(dims: ModelDims, x_bernoulli: Vec<bool>) -> Result<Self> {
        Self::build(dims, x_bernoulli, |sizes, out| Mlp::zeros(sizes, Activation::Relu, out))
    }

    fn build(dims: ModelDims, x_bernoulli: Vec<bool>, mut make: impl FnMut(&[usize], Activation) -> Mlp) -> Result<Self> {
        dims.validate()?;
        if x_bernoulli.len() != dims.x_dim {
            return Err(Error::dim("x likelihood mask", dims.x_dim, x_bernoulli.len()));
        }
        let (h, id) = (dims.hidden, Activation::Identity);
        let relu = Activation::Relu;
        Ok(Self {
            encoder_body: make(&[dims.encoder_in(), h], relu),
            encoder_head_x: make(&[h, 2 * dims.zx_dim], id),
            encoder_head_s: make(&[h, 2 * dims.zs_dim], id),
            decoder_body: make(&[dims.decoder_in(), h], relu),
            decoder_head_x: make(&[h, dims.x_dim], id),
            decoder_head_s: make(&[h, dims.s_dim], id),
            predictor_y: make(&[dims.zx_dim, dims.y_dim], id),
            dims,
            x_bernoulli,
            encoder_y: EncoderY::Label,
        })
    }

    fn parts(&self) -> [&Mlp; 7] {
        [
            &self.encoder_body,
            &self.encoder_head_x,
            &self.encoder_head_s,
            &self.decoder_body,
            &self.decoder_head_x,
            &self.decoder_head_s,
            &self.predictor_y,
        ]
    }

    /// All parameter tensors in a fixed order shared with [`Self::params_mut`]
    /// and [`Self::bind`].
    pub fn params(&self) -> Vec<&Tensor> {
        self.parts().into_iter().flat_map(|m| m.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        [
            &mut self.encoder_body,
            &mut self.encoder_head_x,
            &mut self.encoder_head_s,
            &mut self.decoder_body,
            &mut self.decoder_head_x,
            &mut self.decoder_head_s,
            &mut self.predictor_y,
        ]
        .into_iter()
        .flat_map(|m| m.params_mut())
        .collect()
    }

    /// `("encoder_body.0.weight", tensor)` style names, in [`Self::params`] order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, part) in PART_NAMES.iter().zip(self.parts()) {
            for (k, layer) in part.layers().iter().enumerate() {
                out.push((format!("{name}.{k}.weight"), &layer.weight));
                out.push((format!("{name}.{k}.bias"), &layer.bias));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    fn encoder_input(&self, x: &Tensor, s: &Tensor, y: &Tensor) -> Result<Tensor> {
        let n = x.rows();
        for (name, t, d) in [("x", x, self.dims.x_dim), ("s", s, self.dims.s_dim), ("y", y, self.dims.y_dim)] {
            if t.rank() != 2 || t.rows() != n || t.cols() != d {
                return Err(Error::dim(format!("encoder input {name}"), format!("[{n}×{d}]"), format!("{:?}", t.shape())));
            }
        }
        let y = match self.encoder_y {
            EncoderY::Label => y.clone(),
            EncoderY::Uninformative => Tensor::full(y.shape(), 0.5),
        };
        x.concat_cols(s)?.concat_cols(&y)
    }

    /// Posteriors `q(z_x | x, s, y)` and `q(z_s | x, s, y)`, batched.
    pub fn encode(&self, x: &Tensor, s: &Tensor, y: &Tensor) -> Result<(DiagGaussian, DiagGaussian)> {
        let h = self.encoder_body.forward(&self.encoder_input(x, s, y)?)?;
        let split = |head: &Mlp, d: usize| -> Result<DiagGaussian> {
            let out = head.forward(&h)?;
            DiagGaussian::new(out.slice_cols(0, d)?, out.slice_cols(d, 2 * d)?)
        };
        Ok((split(&self.encoder_head_x, self.dims.zx_dim)?, split(&self.encoder_head_s, self.dims.zs_dim)?))
    }

    /// Decoder outputs `(x_params, s_logits)`: Gaussian means or Bernoulli
    /// logits per x column according to `x_bernoulli`.
    pub fn decode(&self, zx: &Tensor, zs: &Tensor) -> Result<(Tensor, Tensor)> {
        if zx.cols() != self.dims.zx_dim || zs.cols() != self.dims.zs_dim || zx.rows() != zs.rows() {
            return Err(Error::dim(
                "decoder input",
                format!("[n×{}] and [n×{}]", self.dims.zx_dim, self.dims.zs_dim),
                format!("{:?} and {:?}", zx.shape(), zs.shape()),
            ));
        }
        let h = self.decoder_body.forward(&zx.concat_cols(zs)?)?;
        Ok((self.decoder_head_x.forward(&h)?, self.decoder_head_s.forward(&h)?))
    }

    /// y logits from `z_x` alone.
    pub fn predict_y(&self, zx: &Tensor) -> Result<Tensor> {
        if zx.rank() != 2 || zx.cols() != self.dims.zx_dim {
            return Err(Error::dim("predictor input", format!("[n×{}]", self.dims.zx_dim), format!("{:?}", zx.shape())));
        }
        self.predictor_y.forward(zx)
    }

    /// Registers every parameter on `g`, returning the bound network and the
    /// parameter vars in [`Self::params`] order.
    pub fn bind(&self, g: &Graph) -> (BoundModel, Vec<Var>) {
        let vars: Vec<Var> = self.params().into_iter().map(|t| g.leaf(t.clone())).collect();
        (self.bind_from(&vars), vars)
    }

    pub fn bind_from(&self, vars: &[Var]) -> BoundModel {
        let mut it = vars.iter().copied();
        BoundModel {
            dims: self.dims,
            encoder_y: self.encoder_y,
            encoder_body: self.encoder_body.bind_from(&mut it),
            encoder_head_x: self.encoder_head_x.bind_from(&mut it),
            encoder_head_s: self.encoder_head_s.bind_from(&mut it),
            decoder_body: self.decoder_body.bind_from(&mut it),
            decoder_head_x: self.decoder_head_x.bind_from(&mut it),
            decoder_head_s: self.decoder_head_s.bind_from(&mut it),
            predictor_y: self.predictor_y.bind_from(&mut it),
        }
    }

    /// Tensor-valued pair forward pass (evaluation and tests).
    pub fn forward_pair(&self, batch: &PairBatch, noise: &PairNoise) -> Result<PairOutputs> {
        let g = Graph::new();
        let (bound, _) = self.bind(&g);
        let inputs = BatchVars::new(&g, batch);
        let vars = bound.forward_pair(&g, &inputs, &noise.constants(&g))?;
        g.check()?;
        Ok(vars.extract(&g))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: self.clone(),
        };
        let text = serde_json::to_string(&doc)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", doc.format)));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }

    /// Re-checks every invariant that deserialization cannot.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = &self.dims;
        let expect = [
            (d.encoder_in(), d.hidden),
            (d.hidden, 2 * d.zx_dim),
            (d.hidden, 2 * d.zs_dim),
            (d.decoder_in(), d.hidden),
            (d.hidden, d.x_dim),
            (d.hidden, d.s_dim),
            (d.zx_dim, d.y_dim),
        ];
        for ((name, part), (i, o)) in PART_NAMES.iter().zip(self.parts()).zip(expect) {
            let rebuilt = Mlp::from_layers(part.layers().to_vec())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            for l in rebuilt.layers() {
                if l.weight.rank() != 2 || l.bias.shape() != [l.weight.rows()] {
                    return Err(Error::Checkpoint(format!("{name}: malformed layer")));
                }
            }
            if rebuilt.in_dim() != i || rebuilt.out_dim() != o {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected {i}→{o}, found {}→{}",
                    rebuilt.in_dim(),
                    rebuilt.out_dim()
                )));
            }
        }
        if self.x_bernoulli.len() != d.x_dim {
            return Err(Error::Checkpoint("x likelihood mask length".into()));
        }
        if !self.params().iter().all(|t| t.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: FarconModel,
}

/// A [`FarconModel`] with its parameters registered on a graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub dims: ModelDims,
    encoder_y: EncoderY,
    encoder_body: BoundMlp,
    encoder_head_x: BoundMlp,
    encoder_head_s: BoundMlp,
    decoder_body: BoundMlp,
    decoder_head_x: BoundMlp,
    decoder_head_s: BoundMlp,
    predictor_y: BoundMlp,
}

impl BoundModel {
    pub fn encode(&self, g: &Graph, x: Var, s: Var, y: Var) -> (GaussianVars, GaussianVars) {
        let y = match self.encoder_y {
            EncoderY::Label => y,
            EncoderY::Uninformative => {
                let shape = g.value(y).shape().to_vec();
                g.constant(Tensor::full(&shape, 0.5))
            }
        };
        let input = g.concat_cols(g.concat_cols(x, s), y);
        let h = self.encoder_body.forward(g, input);
        (
            GaussianVars::from_head(g, self.encoder_head_x.forward(g, h), self.dims.zx_dim),
            GaussianVars::from_head(g, self.encoder_head_s.forward(g, h), self.dims.zs_dim),
        )
    }

    pub fn decode(&self, g: &Graph, zx: Var, zs: Var) -> (Var, Var) {
        let h = self.decoder_body.forward(g, g.concat_cols(zx, zs));
        (self.decoder_head_x.forward(g, h), self.decoder_head_s.forward(g, h))
    }

    pub fn predict_y(&self, g: &Graph, zx: Var) -> Var {
        self.predictor_y.forward(g, zx)
    }

    pub fn forward_pair(&self, g: &Graph, batch: &BatchVars, noise: &NoiseVars) -> Result<PairVars> {
        let (qzx, qzs) = self.encode(g, batch.x, batch.s, batch.y);
        let (qzx_cf, qzs_cf) = self.encode(g, batch.x_cf, batch.s_cf, batch.y);
        let zx = reparameterize_var(g, qzx, noise.zx);
        let zs = reparameterize_var(g, qzs, noise.zs);
        let zx_cf = reparameterize_var(g, qzx_cf, noise.zx_cf);
        let zs_cf = reparameterize_var(g, qzs_cf, noise.zs_cf);
        let (recon_x, recon_s) = self.decode(g, zx, zs);
        let (recon_x_cf, recon_s_cf) = self.decode(g, zx_cf, zs_cf);
        let (swap_x, swap_s) = self.decode(g, zx_cf, zs);
        let (swap_x_cf, swap_s_cf) = self.decode(g, zx, zs_cf);
        let out = PairVars {
            qzx,
            qzs,
            qzx_cf,
            qzs_cf,
            zx,
            zs,
            zx_cf,
            zs_cf,
            recon_x,
            recon_s,
            recon_x_cf,
            recon_s_cf,
            swap_x,
            swap_s,
            swap_x_cf,
            swap_s_cf,
            y_logit: self.predict_y(g, zx),
            y_logit_cf: self.predict_y(g, zx_cf),
        };
        g.check()?;
        Ok(out)
    }
}

/// A [`PairBatch`] registered as graph constants.
#[derive(Debug, Clone, Copy)]
pub struct BatchVars {
    pub x: Var,
    pub s: Var,
    pub y: Var,
    pub x_cf: Var,
    pub s_cf: Var,
}

impl BatchVars {
    pub fn new(g: &Graph, b: &PairBatch) -> Self {
        Self {
            x: g.constant(b.x.clone()),
            s: g.constant(b.s.clone()),
            y: g.constant(b.y.clone()),
            x_cf: g.constant(b.x_cf.clone()),
            s_cf: g.constant(b.s_cf.clone()),
        }
    }
}

/// Standard-normal draws for the four reparameterized latents.
#[derive(Debug, Clone, PartialEq)]
pub struct PairNoise {
    pub zx: Tensor,
    pub zs: Tensor,
    pub zx_cf: Tensor,
    pub zs_cf: Tensor,
}

impl PairNoise {
    pub fn zeros(n: usize, dims: &ModelDims) -> Self {
        Self {
            zx: Tensor::zeros(&[n, dims.zx_dim]),
            zs: Tensor::zeros(&[n, dims.zs_dim]),
            zx_cf: Tensor::zeros(&[n, dims.zx_dim]),
            zs_cf: Tensor::zeros(&[n, dims.zs_dim]),
        }
    }

    pub fn sample<R: Rng + ?Sized>(n: usize, dims: &ModelDims, rng: &mut R) -> Self {
        let mut draw = |d: usize| {
            let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::matrix(n, d, data).expect("sized")
        };
        Self {
            zx: draw(dims.zx_dim),
            zs: draw(dims.zs_dim),
            zx_cf: draw(dims.zx_dim),
            zs_cf: draw(dims.zs_dim),
        }
    }

    pub fn constants(&self, g: &Graph) -> NoiseVars {
        NoiseVars {
            zx: g.constant(self.zx.clone()),
            zs: g.constant(self.zs.clone()),
            zx_cf: g.constant(self.zx_cf.clone()),
            zs_cf: g.constant(self.zs_cf.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseVars {
    pub zx: Var,
    pub zs: Var,
    pub zx_cf: Var,
    pub zs_cf: Var,
}

/// Every intermediate of the pair forward pass, as graph vars. `swap_*`
/// decodes `(z_x̃, z_s)` and targets `(x, s)`; `swap_*_cf` decodes
/// `(z_x, z_s̃)` and targets `(x̃, s̃)`.
#[derive(Debug, Clone, Copy)]
pub struct PairVars {
    pub qzx: GaussianVars,
    pub qzs: GaussianVars,
    pub qzx_cf: GaussianVars,
    pub qzs_cf: GaussianVars,
    pub zx: Var,
    pub zs: Var,
    pub zx_cf: Var,
    pub zs_cf: Var,
    pub recon_x: Var,
    pub recon_s: Var,
    pub recon_x_cf: Var,
    pub recon_s_cf: Var,
    pub swap_x: Var,
    pub swap_s: Var,
    pub swap_x_cf: Var,
    pub swap_s_cf: Var,
    pub y_logit: Var,
    pub y_logit_cf: Var,
}

impl PairVars {
    pub fn extract(&self, g: &Graph) -> PairOutputs {
        let t = |v: Var| g.value(v).clone();
        PairOutputs {
            qzx: self.qzx.to_gaussian(g),
            qzs: self.qzs.to_gaussian(g),
            qzx_cf: self.qzx_cf.to_gaussian(g),
            qzs_cf: self.qzs_cf.to_gaussian(g),
            zx: t(self.zx),
            zs: t(self.zs),
            zx_cf: t(self.zx_cf),
            zs_cf: t(self.zs_cf),
            recon_x: t(self.recon_x),
            recon_s: t(self.recon_s),
            recon_x_cf: t(self.recon_x_cf),
            recon_s_cf: t(self.recon_s_cf),
            swap_x: t(self.swap_x),
            swap_s: t(self.swap_s),
            swap_x_cf: t(self.swap_x_cf),
            swap_s_cf: t(self.swap_s_cf),
            y_logit: t(self.y_logit),
            y_logit_cf: t(self.y_logit_cf),
        }
    }
}

/// Tensor-valued counterpart of [`PairVars`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutputs {
    pub qzx: DiagGaussian,
    pub qzs: DiagGaussian,
    pub qzx_cf: DiagGaussian,
    pub qzs_cf: DiagGaussian,
    pub zx: Tensor,
    pub zs: Tensor,
    pub zx_cf: Tensor,
    pub zs_cf: Tensor,
    pub recon_x: Tensor,
    pub recon_s: Tensor,
    pub recon_x_cf: Tensor,
    pub recon_s_cf: Tensor,
    pub swap_x: Tensor,
    pub swap_s: Tensor,
    pub swap_x_cf: Tensor,
    pub swap_s_cf: Tensor,
    pub y_logit: Tensor,
    pub y_logit_cf: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            x_dim: 3,
            s_dim: 1,
            y_dim: 1,
            zx_dim: 2,
            zs_dim: 2,
            hidden: 4,
        }
    }

    fn random_model(seed: u64) -> FarconModel {
        FarconModel::new(dims(), vec![false, false, true], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn batch() -> PairBatch {
        PairBatch::new(
            Tensor::matrix(2, 3, vec![0.5, -1.0, 1.0, 1.5, 0.2, 0.0]).unwrap(),
            Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap(),
            Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap(),
            Tensor::matrix(2, 3, vec![0.4, -0.8, 1.0, 1.2, 0.1, 1.0]).unwrap(),
            Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn single(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Linear::new(Tensor::matrix(rows, cols, w).unwrap(), Tensor::vector(b), act).unwrap()])
            .unwrap()
    }

    #[test]
    fn zero_network_gives_standard_posteriors() {
        let m = FarconModel::zeros(dims(), vec![false; 3]).unwrap();
        let b = batch();
        let (qx, qs) = m.encode(&b.x, &b.s, &b.y).unwrap();
        for q in [&qx, &qs] {
            assert!(q.mu().data().iter().all(|&v| v == 0.0));
            assert!(q.log_var().data().iter().all(|&v| v == 0.0));
        }
        let (xo, so) = m.decode(&qx.mu().clone(), &qs.mu().clone()).unwrap();
        assert!(xo.data().iter().chain(so.data()).all(|&v| v == 0.0));
        assert!(m.predict_y(qx.mu()).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic() {
        let m = random_model(3);
        let b = batch();
        assert_eq!(m.encode(&b.x, &b.s, &b.y).unwrap(), m.encode(&b.x, &b.s, &b.y).unwrap());
    }

    #[test]
    fn hand_set_encoder_matches_manual_evaluation() {
        // x = [1, 2], s = [0], y = [1]; body relu(W·[x,s,y] + b) with
        // W = [[1,0,0,0],[0,1,0,1]], b = [0,-1] → h = [1, 2]
        let d = ModelDims {
            x_dim: 2,
            s_dim: 1,
            y_dim: 1,
            zx_dim: 1,
            zs_dim: 1,
            hidden: 2,
        };
        let mut m = FarconModel::zeros(d, vec![false; 2]).unwrap();
        m.encoder_body = single(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0], 2, 4, vec![0.0, -1.0], Activation::Relu);
        // head_x: mu = h0 + h1 = 3, log_var = h0 − h1 + 0.5 = −0.5
        m.encoder_head_x = single(vec![1.0, 1.0, 1.0, -1.0], 2, 2, vec![0.0, 0.5], Activation::Identity);
        // head_s: mu = 2·h1 − 1 = 3, log_var = −h0 = −1
        m.encoder_head_s = single(vec![0.0, 2.0, -1.0, 0.0], 2, 2, vec![-1.0, 0.0], Activation::Identity);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let s = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let y = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let (qx, qs) = m.encode(&x, &s, &y).unwrap();
        assert_eq!(qx.mu().data(), &[3.0]);
        assert_eq!(qx.log_var().data(), &[-0.5]);
        assert_eq!(qs.mu().data(), &[3.0]);
        assert_eq!(qs.log_var().data(), &[-1.0]);
    }

    #[test]
    fn hand_set_decoder_and_predictor() {
        let d = ModelDims {
            x_dim: 1,
            s_dim: 1,
            y_dim: 1,
            zx_dim: 1,
            zs_dim: 1,
            hidden: 2,
        };
        let mut m = FarconModel::zeros(d, vec![false]).unwrap();
        // h = relu([zx + zs, zx − zs]); x = h0 − h1 + 0.25; s = 2·h1
        m.decoder_body = single(vec![1.0, 1.0, 1.0, -1.0], 2, 2, vec![0.0, 0.0], Activation::Relu);
        m.decoder_head_x = single(vec![1.0, -1.0], 1, 2, vec![0.25], Activation::Identity);
        m.decoder_head_s = single(vec![0.0, 2.0], 1, 2, vec![0.0], Activation::Identity);
        m.predictor_y = single(vec![-1.5], 1, 1, vec![0.5], Activation::Identity);
        let zx = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let zs = Tensor::matrix(1, 1, vec![0.5]).unwrap();
        let (xo, so) = m.decode(&zx, &zs).unwrap();
        // h = [2.5, 1.5]
        assert_eq!(xo.data(), &[1.25]);
        assert_eq!(so.data(), &[3.0]);
        assert_eq!(m.predict_y(&zx).unwrap().data(), &[-2.5]);
    }

    #[test]
    fn width_mismatches_are_errors() {
        let m = random_model(1);
        let b = batch();
        assert!(m.encode(&b.x.slice_cols(0, 2).unwrap(), &b.s, &b.y).is_err());
        assert!(m.decode(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 2])).is_err());
        assert!(m.predict_y(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn zero_noise_samples_are_posterior_means() {
        let m = random_model(5);
        let out = m.forward_pair(&batch(), &PairNoise::zeros(2, &dims())).unwrap();
        assert_eq!(&out.zx, out.qzx.mu());
        assert_eq!(&out.zs, out.qzs.mu());
        assert_eq!(&out.zx_cf, out.qzx_cf.mu());
        assert_eq!(&out.zs_cf, out.qzs_cf.mu());
    }

    #[test]
    fn degenerate_pair_swaps_equal_ordinary_reconstructions() {
        let m = random_model(6);
        let b = batch();
        let same = PairBatch::new(b.x.clone(), b.s.clone(), b.y.clone(), b.x.clone(), b.s.clone()).unwrap();
        let mut noise = PairNoise::sample(2, &dims(), &mut ChaCha8Rng::seed_from_u64(2));
        noise.zx_cf = noise.zx.clone();
        noise.zs_cf = noise.zs.clone();
        let out = m.forward_pair(&same, &noise).unwrap();
        assert_eq!(out.swap_x, out.recon_x);
        assert_eq!(out.swap_s, out.recon_s);
        assert_eq!(out.swap_x_cf, out.recon_x_cf);
        assert_eq!(out.recon_x, out.recon_x_cf);
    }

    #[test]
    fn pair_outputs_compose_encode_decode_predict() {
        let m = random_model(8);
        let b = batch();
        let noise = PairNoise::sample(2, &dims(), &mut ChaCha8Rng::seed_from_u64(4));
        let out = m.forward_pair(&b, &noise).unwrap();
        let (qx, qs) = m.encode(&b.x, &b.s, &b.y).unwrap();
        let (qxc, qsc) = m.encode(&b.x_cf, &b.s_cf, &b.y).unwrap();
        let close = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(u, v)| (u - v).abs() < 1e-12);
        assert!(close(out.qzx.mu(), qx.mu()) && close(out.qzs.log_var(), qs.log_var()));
        let zx = crate::probdist::reparameterize(&qx, &noise.zx).unwrap();
        let zs = crate::probdist::reparameterize(&qs, &noise.zs).unwrap();
        let zxc = crate::probdist::reparameterize(&qxc, &noise.zx_cf).unwrap();
        let zsc = crate::probdist::reparameterize(&qsc, &noise.zs_cf).unwrap();
        assert!(close(&out.zx, &zx));
        let (sx, ss) = m.decode(&zxc, &zs).unwrap();
        assert!(close(&out.swap_x, &sx) && close(&out.swap_s, &ss));
        let (sxc, _) = m.decode(&zx, &zsc).unwrap();
        assert!(close(&out.swap_x_cf, &sxc));
        assert!(close(&out.y_logit, &m.predict_y(&zx).unwrap()));
        assert!(close(&out.y_logit_cf, &m.predict_y(&zxc).unwrap()));
    }

    #[test]
    fn y_logits_ignore_the_sensitive_head() {
        let m = random_model(9);
        let b = batch();
        let noise = PairNoise::sample(2, &dims(), &mut ChaCha8Rng::seed_from_u64(1));
        let base = m.forward_pair(&b, &noise).unwrap();
        let mut perturbed = m.clone();
        for t in perturbed.encoder_head_s.params_mut() {
            *t = t.map(|v| v + 0.37);
        }
        let mut noise2 = noise.clone();
        noise2.zs = noise2.zs.map(|v| v * -3.0);
        let out = perturbed.forward_pair(&b, &noise2).unwrap();
        assert_eq!(base.y_logit, out.y_logit);
        assert_ne!(base.zs, out.zs);
    }

    #[test]
    fn uninformative_encoder_ignores_y() {
        let mut m = random_model(10);
        m.encoder_y = EncoderY::Uninformative;
        let b = batch();
        let flipped = b.y.map(|v| 1.0 - v);
        assert_eq!(m.encode(&b.x, &b.s, &b.y).unwrap(), m.encode(&b.x, &b.s, &flipped).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = random_model(11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(FarconModel::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let mut m = random_model(12);
        m.decoder_head_x = Mlp::zeros(&[4, 5], Activation::Relu, Activation::Identity);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        m.save(&path).unwrap();
        assert!(matches!(FarconModel::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn named_params_follow_param_order() {
        let m = random_model(13);
        let named = m.named_params();
        assert_eq!(named.len(), m.params().len());
        assert_eq!(named[0].0, "encoder_body.0.weight");
        assert_eq!(named.last().unwrap().0, "predictor_y.0.bias");
    }
}
