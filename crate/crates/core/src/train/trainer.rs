use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::classifier::binary_accuracy;
use super::{beta_schedule, FarconConfig};
use crate::autodiff::Graph;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::model::{BatchVars, FarconModel, PairNoise, PairVars};
use crate::objectives::{total_loss_vars, LossBreakdown, LossVars, LossWeights};
use crate::tensor::Tensor;

/// A differentiable training loss over one pair forward pass.
pub trait Objective {
    fn build(&self, g: &Graph, out: &PairVars, batch: &BatchVars, beta: f64, x_bernoulli: &[bool]) -> LossVars;
}

/// The full FarconVAE loss; β is supplied per epoch by the schedule.
#[derive(Debug, Clone, Copy)]
pub struct FarconObjective {
    pub weights: LossWeights,
}

impl Objective for FarconObjective {
    fn build(&self, g: &Graph, out: &PairVars, batch: &BatchVars, beta: f64, x_bernoulli: &[bool]) -> LossVars {
        let w = LossWeights { beta, ..self.weights };
        total_loss_vars(g, out, batch, &w, x_bernoulli)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub beta_anneal_fraction: f64,
    pub patience: Option<usize>,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(cfg: &FarconConfig) -> Self {
        Self {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            beta: cfg.beta,
            beta_anneal_fraction: cfg.beta_anneal_fraction,
            patience: cfg.patience,
            seed: cfg.seed,
        }
    }
}

/// Validation rows with the y column the encoder should see.
#[derive(Debug, Clone)]
pub struct ValidSet {
    pub x: Tensor,
    pub s: Tensor,
    /// `[n×1]` encoder y input (ŷ or true y).
    pub y_input: Tensor,
    pub y: Vec<f64>,
}

impl ValidSet {
    /// Accuracy of the y predictor on the posterior mean of `z_x`.
    pub fn accuracy(&self, model: &FarconModel) -> Result<f64> {
        let (qzx, _) = model.encode(&self.x, &self.s, &self.y_input)?;
        let logits = model.predict_y(qzx.mu())?;
        Ok(binary_accuracy(logits.data(), &self.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    /// Row-weighted mean of the batch losses.
    pub loss: LossBreakdown,
    pub valid_y_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn diverged(epoch: usize, component: impl Into<String>, model: &FarconModel) -> Error {
    Error::Diverged {
        epoch,
        component: component.into(),
        last_good: Some(Box::new(model.clone())),
    }
}

/// Mini-batch Adam on `objective`. With a validation set and a patience,
/// the parameters with the best validation y-accuracy are returned (the
/// latest on ties) and training stops after `patience` epochs without
/// strict improvement; otherwise the final parameters are returned.
pub fn train_farcon(
    mut model: FarconModel,
    data: &PairedDataset,
    valid: Option<&ValidSet>,
    objective: &dyn Objective,
    opts: &TrainOptions,
) -> Result<(FarconModel, TrainHistory)> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset("training data".into()));
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be at least 1".into()));
    }
    if data.data.x_dim() != model.dims.x_dim {
        return Err(Error::dim("training features", model.dims.x_dim, data.data.x_dim()));
    }
    let mask = model.x_bernoulli.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = AdamState::new(&model.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, FarconModel)> = None;
    let mut last_improvement = 0;

    for epoch in 0..opts.epochs {
        let beta = beta_schedule(epoch, opts.epochs, opts.beta, opts.beta_anneal_fraction);
        order.shuffle(&mut rng);
        let mut mean = LossBreakdown::default();
        for chunk in order.chunks(opts.batch_size) {
            let batch = data.batch(chunk);
            let noise = PairNoise::sample(chunk.len(), &model.dims, &mut rng);
            let g = Graph::new();
            let (bound, vars) = model.bind(&g);
            let bv = BatchVars::new(&g, &batch);
            let out = match bound.forward_pair(&g, &bv, &noise.constants(&g)) {
                Ok(out) => out,
                Err(Error::NonFinite { primitive }) => return Err(diverged(epoch, format!("forward pass ({primitive})"), &model)),
                Err(e) => return Err(e),
            };
            let loss = objective.build(&g, &out, &bv, beta, &mask);
            let values = loss.values(&g);
            if let Some(component) = values.first_non_finite() {
                return Err(diverged(epoch, component, &model));
            }
            let mut grads = match g.backward(loss.total) {
                Ok(grads) => grads,
                Err(Error::NonFinite { primitive }) => return Err(diverged(epoch, format!("gradient ({primitive})"), &model)),
                Err(e) => return Err(e),
            };
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            if let Some(k) = grads.iter().position(|t| !t.is_finite()) {
                let (name, _) = &model.named_params()[k];
                return Err(diverged(epoch, format!("gradient of {name}"), &model));
            }
            adam_step(&mut model.params_mut(), &grads, &mut state, opts.lr, opts.weight_decay, AdamHyper::default())?;
            mean.accumulate(&values, chunk.len() as f64 / n as f64);
            history.step_losses.push(values.total);
        }
        let valid_y_accuracy = valid.map(|v| v.accuracy(&model)).transpose()?;
        debug!("epoch {epoch}: beta {beta:.4} loss {:.6} valid {valid_y_accuracy:?}", mean.total);
        history.epochs.push(EpochRecord {
            epoch,
            beta,
            loss: mean,
            valid_y_accuracy,
        });
        match (valid_y_accuracy, opts.patience) {
            (Some(acc), Some(patience)) => {
                // ŷ-fed predictors plateau early; on a tie the later
                // parameters have had longer under the contrastive terms
                let prev = best.as_ref().map(|(b, _)| *b);
                if prev.is_none_or(|b| acc >= b) {
                    if prev.is_none_or(|b| acc > b) {
                        last_improvement = epoch;
                    }
                    best = Some((acc, model.clone()));
                    history.best_epoch = epoch;
                }
                if epoch - last_improvement >= patience {
                    info!("early stop at epoch {epoch}; best epoch {}", history.best_epoch);
                    history.stopped_early = true;
                    break;
                }
            }
            _ => history.best_epoch = epoch,
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_counterfactual_pairs, PairingStrategy, SyntheticSpec};
    use crate::model::ModelDims;
    use crate::objectives::Kernel;
    use crate::probdist::GaussianVars;

    fn synthetic_pairs(n: usize) -> PairedDataset {
        let spec = SyntheticSpec {
            n_train: n,
            n_test: 100,
            seed: 2,
            ..SyntheticSpec::default()
        };
        let (train, _) = spec.generate().unwrap();
        build_counterfactual_pairs(&train, PairingStrategy::MatchedNeighbor).unwrap()
    }

    fn model_for(data: &PairedDataset, seed: u64) -> FarconModel {
        let dims = ModelDims {
            x_dim: data.data.x_dim(),
            s_dim: 1,
            y_dim: 1,
            zx_dim: 3,
            zs_dim: 3,
            hidden: 16,
        };
        FarconModel::new(dims, data.data.x_bernoulli(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn opts(epochs: usize, lr: f64) -> TrainOptions {
        TrainOptions {
            lr,
            weight_decay: 1e-4,
            epochs,
            batch_size: 32,
            beta: 0.2,
            beta_anneal_fraction: 0.0,
            patience: None,
            seed: 11,
        }
    }

    fn farcon(alpha: f64, gamma: f64) -> FarconObjective {
        FarconObjective {
            weights: LossWeights {
                alpha,
                beta: 0.2,
                gamma,
                kernel: Kernel::Gaussian,
            },
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let data = synthetic_pairs(200);
        let init = model_for(&data, 0);
        let (trained, hist) = train_farcon(init.clone(), &data, None, &farcon(1.0, 1.0), &opts(1, 0.0)).unwrap();
        assert_eq!(trained, init);
        assert_eq!(hist.epochs.len(), 1);
        assert_eq!(hist.step_losses.len(), 7);
    }

    #[test]
    fn training_is_deterministic() {
        let data = synthetic_pairs(200);
        let run = || train_farcon(model_for(&data, 4), &data, None, &farcon(1.0, 0.5), &opts(3, 1e-3)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn epoch_loss_is_non_increasing_up_to_noise() {
        let data = synthetic_pairs(1000);
        let (_, hist) = train_farcon(model_for(&data, 1), &data, None, &farcon(1.0, 0.0), &opts(15, 1e-3)).unwrap();
        let totals: Vec<f64> = hist.epochs.iter().map(|e| e.loss.total).collect();
        for w in totals.windows(2) {
            assert!(w[1] <= 1.05 * w[0], "{totals:?}");
        }
        assert!(totals[totals.len() - 1] < totals[0]);
    }

    /// Conditional β-VAE written directly against graph primitives: per
    /// member, Bernoulli/Gaussian NLLs of x, Bernoulli NLLs of s and y, and
    /// the closed-form `½Σ(μ² + σ² − 1 − log σ²)` prior KL.
    struct BetaVae;

    impl BetaVae {
        fn kl(g: &Graph, q: GaussianVars) -> Var {
            let terms = g.sub(g.add(g.square(q.mu), g.exp(q.log_var)), g.add_scalar(q.log_var, 1.0));
            g.mean(g.scale(g.sum_cols(terms), 0.5))
        }

        fn bern(g: &Graph, logit: Var, t: Var) -> Var {
            g.sub(g.softplus(logit), g.mul(t, logit))
        }

        fn member(g: &Graph, x_out: Var, s_out: Var, y_out: Var, x: Var, s: Var, y: Var, mask: &[bool]) -> Var {
            let n = g.value(x).rows();
            let m = Tensor::matrix(1, mask.len(), mask.iter().map(|&b| b as u8 as f64).collect()).unwrap();
            let m = g.constant(Tensor::matrix(n, mask.len(), (0..n).flat_map(|_| m.data().to_vec()).collect()).unwrap());
            let one_minus = g.add_scalar(g.neg(m), 1.0);
            let gauss = g.scale(g.square(g.sub(x_out, x)), 0.5);
            let x_nll = g.add(g.mul(m, Self::bern(g, x_out, x)), g.mul(one_minus, gauss));
            let total = g.add(g.add(g.sum_cols(x_nll), g.sum_cols(Self::bern(g, s_out, s))), g.sum_cols(Self::bern(g, y_out, y)));
            g.mean(total)
        }
    }

    use crate::autodiff::Var;

    impl Objective for BetaVae {
        fn build(&self, g: &Graph, o: &PairVars, b: &BatchVars, beta: f64, mask: &[bool]) -> LossVars {
            let a = Self::member(g, o.recon_x, o.recon_s, o.y_logit, b.x, b.s, b.y, mask);
            let c = Self::member(g, o.recon_x_cf, o.recon_s_cf, o.y_logit_cf, b.x_cf, b.s_cf, b.y, mask);
            let kl_a = g.add(Self::kl(g, o.qzx), Self::kl(g, o.qzs));
            let kl_c = g.add(Self::kl(g, o.qzx_cf), Self::kl(g, o.qzs_cf));
            let total = g.scale(g.add(g.add(a, c), g.scale(g.add(kl_a, kl_c), beta)), 0.5);
            let zero = g.constant(Tensor::scalar(0.0));
            LossVars {
                recon_x: zero,
                recon_s: zero,
                pred_y: zero,
                kld_x: zero,
                kld_s: zero,
                dc_positive: zero,
                dc_negative: zero,
                sr: zero,
                total,
            }
        }
    }

    #[test]
    fn unpaired_zero_weight_run_matches_beta_vae_trace() {
        let pairs = synthetic_pairs(300);
        let data = PairedDataset::self_paired(&pairs.data);
        let o = opts(3, 1e-3);
        let (m1, h1) = train_farcon(model_for(&data, 7), &data, None, &farcon(0.0, 0.0), &o).unwrap();
        let (m2, h2) = train_farcon(model_for(&data, 7), &data, None, &BetaVae, &o).unwrap();
        assert_eq!(h1.step_losses.len(), h2.step_losses.len());
        for (k, (a, b)) in h1.step_losses.iter().zip(&h2.step_losses).enumerate() {
            assert!((a - b).abs() <= 1e-8, "step {k}: {a} vs {b}");
        }
        for (p, q) in m1.params().iter().zip(m2.params()) {
            for (u, v) in p.data().iter().zip(q.data()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn divergence_reports_component_and_last_good_model() {
        let mut data = synthetic_pairs(200);
        data.data.x.data_mut()[0] = 1e200;
        data.x_cf.data_mut()[0] = 1e200;
        let init = model_for(&data, 3);
        let one_batch = TrainOptions {
            batch_size: 256,
            ..opts(2, 1e-3)
        };
        match train_farcon(init.clone(), &data, None, &farcon(1.0, 1.0), &one_batch) {
            Err(Error::Diverged {
                epoch,
                component,
                last_good: Some(model),
            }) => {
                assert_eq!(epoch, 0);
                assert!(!component.is_empty());
                assert_eq!(*model, init);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let data = synthetic_pairs(400);
        let v = data.data.select(&(0..100).collect::<Vec<_>>());
        let valid = ValidSet {
            x: v.x.clone(),
            s: v.s.clone(),
            y_input: v.y_column(),
            y: v.y.data().to_vec(),
        };
        let o = TrainOptions {
            patience: Some(2),
            ..opts(40, 1e-3)
        };
        let (model, hist) = train_farcon(model_for(&data, 5), &data, Some(&valid), &farcon(1.0, 1.0), &o).unwrap();
        let best = hist.epochs.iter().filter_map(|e| e.valid_y_accuracy).fold(f64::MIN, f64::max);
        let accs: Vec<f64> = hist.epochs.iter().map(|e| e.valid_y_accuracy.unwrap()).collect();
        let first = accs.iter().position(|&a| a == best).unwrap();
        let last = accs.iter().rposition(|&a| a == best).unwrap();
        assert_eq!(hist.best_epoch, last);
        assert_eq!(valid.accuracy(&model).unwrap(), best);
        if hist.stopped_early {
            assert_eq!(hist.epochs.len(), first + 3);
        }
    }
}
