use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp};
use crate::probdist::bernoulli_nll_rows;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Coefficient of `‖W‖²` over weight matrices (biases excluded).
    pub l2: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_accuracy: Option<f64>,
}

pub fn predict_logits(mlp: &Mlp, x: &Tensor) -> Result<Vec<f64>> {
    Ok(mlp.forward(x)?.into_data())
}

/// Percentage of rows where `logit > 0` matches `y == 1`.
pub fn binary_accuracy(logits: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = logits.iter().zip(y).filter(|(&l, &t)| (l > 0.0) == (t == 1.0)).count();
    100.0 * hits as f64 / y.len() as f64
}

/// Inverse-frequency weights `n / (2·n_c)`; each class gets half the mass.
pub fn balanced_weights(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v == 1.0).count() as f64;
    let neg = n - pos;
    y.iter()
        .map(|&v| {
            let c = if v == 1.0 { pos } else { neg };
            if c > 0.0 {
                n / (2.0 * c)
            } else {
                1.0
            }
        })
        .collect()
}

/// Minimizes the (optionally weighted) mean Bernoulli NLL of a one-output
/// network with Adam. With `valid` and `patience`, the best-validation
/// parameters are kept.
pub fn fit_binary(
    mlp: &mut Mlp,
    x: &Tensor,
    y: &[f64],
    weights: Option<&[f64]>,
    valid: Option<(&Tensor, &[f64])>,
    opts: &ClassifierOptions,
    seed: u64,
) -> Result<FitReport> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyDataset("classifier training data".into()));
    }
    if y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::dim("classifier labels", n, y.len()));
    }
    if mlp.out_dim() != 1 {
        return Err(Error::dim("classifier output", 1, mlp.out_dim()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(&mlp.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut epochs_run = 0;
    let y_all = Tensor::matrix(n, 1, y.to_vec())?;
    let w_all = weights.map(|w| Tensor::vector(w.to_vec()));
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size) {
            let g = Graph::new();
            let bound = mlp.bind(&g);
            let xb = g.constant(x.select_rows(chunk));
            let yb = g.constant(y_all.select_rows(chunk));
            let nll = bernoulli_nll_rows(&g, bound.forward(&g, xb), yb);
            let mut loss = match &w_all {
                Some(w) => {
                    let wb = w.select_rows(chunk);
                    let total = wb.sum();
                    g.scale(g.sum(g.mul(nll, g.constant(wb))), 1.0 / total)
                }
                None => g.mean(nll),
            };
            let vars: Vec<_> = bound.vars().collect();
            if opts.l2 > 0.0 {
                for w in vars.iter().step_by(2) {
                    loss = g.add(loss, g.scale(g.sum(g.square(*w)), opts.l2));
                }
            }
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            adam_step(&mut mlp.params_mut(), &grads, &mut state, opts.lr, opts.weight_decay, AdamHyper::default())?;
        }
        epochs_run = epoch + 1;
        if let Some((vx, vy)) = valid {
            let acc = binary_accuracy(&predict_logits(mlp, vx)?, vy);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, mlp.clone()));
            }
            if let (Some(p), Some((_, be, _))) = (opts.patience, &best) {
                if epoch - be >= p {
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((acc, epoch, params)) => {
            *mlp = params;
            FitReport {
                epochs_run,
                best_epoch: epoch,
                best_valid_accuracy: Some(acc),
            }
        }
        None => FitReport {
            epochs_run,
            best_epoch: epochs_run.saturating_sub(1),
            best_valid_accuracy: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            patience: 10,
        }
    }
}

/// The x → y network whose predictions replace y as encoder input at
/// evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxClassifier {
    pub mlp: Mlp,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
}

impl AuxClassifier {
    /// Hard 0/1 predictions as an `[n×1]` column.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let logits = predict_logits(&self.mlp, x)?;
        Tensor::matrix(logits.len(), 1, logits.iter().map(|&l| (l > 0.0) as u8 as f64).collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(binary_accuracy(&predict_logits(&self.mlp, &data.x)?, data.y.data()))
    }
}

pub fn train_aux_classifier(cfg: &AuxConfig, train: &Dataset, valid: Option<&Dataset>, seed: u64) -> Result<AuxClassifier> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::new(&[train.x_dim(), cfg.hidden, 1], Activation::Relu, Activation::Identity, &mut rng);
    let opts = ClassifierOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        l2: 0.0,
        patience: Some(cfg.patience),
    };
    let valid = valid.filter(|v| !v.is_empty());
    let report = fit_binary(
        &mut mlp,
        &train.x,
        train.y.data(),
        None,
        valid.map(|v| (&v.x, v.y.data())),
        &opts,
        seed.wrapping_add(1),
    )?;
    let train_accuracy = binary_accuracy(&predict_logits(&mlp, &train.x)?, train.y.data());
    Ok(AuxClassifier {
        mlp,
        train_accuracy,
        valid_accuracy: report.best_valid_accuracy,
    })
}
