use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_means, linear_probe, mrg, random_guess_rate, ClassWeighting, YSource};
use crate::error::Result;
use crate::mlp::{Activation, Mlp};
use crate::model::FarconModel;
use crate::train::classifier::{binary_accuracy, fit_binary, predict_logits, ClassifierOptions};
use crate::train::{
    prepare_data, train_aux_classifier, train_farcon, AuxClassifier, EvalY, FarconConfig, FarconObjective,
    PreparedData, TrainHistory, TrainOptions, ValidSet,
};

/// Scores of one trained model. Percentages throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Test y-accuracy of the predictor on the posterior mean of `z_x`.
    pub y_accuracy: f64,
    pub valid_y_accuracy: Option<f64>,
    pub aux_test_accuracy: Option<f64>,
    /// Plain logistic probe for `s` on `z_x`.
    pub s_probe_accuracy: f64,
    /// Class-balanced probe for `s` on `z_x`, scored by balanced accuracy.
    pub s_probe_balanced_accuracy: f64,
    /// Class-balanced probe for `s` on `z_s`.
    pub zs_probe_balanced_accuracy: f64,
    /// Matching with random guess, from the balanced probe.
    pub mrg: f64,
    pub random_guess_s: f64,
    pub majority_rate_s: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: FarconModel,
    pub aux: Option<AuxClassifier>,
    pub history: TrainHistory,
    pub metrics: RunMetrics,
    pub data: PreparedData,
}

fn y_source(aux: &Option<AuxClassifier>) -> YSource<'_> {
    match aux {
        Some(a) => YSource::Aux(a),
        None => YSource::TrueY,
    }
}

/// Scores an already trained model on prepared data.
pub fn evaluate(
    cfg: &FarconConfig,
    model: &FarconModel,
    aux: &Option<AuxClassifier>,
    data: &PreparedData,
    history: &TrainHistory,
) -> Result<RunMetrics> {
    let ys = y_source(aux);
    let (zx_test, _) = encode_means(model, &data.test, ys)?;
    let y_accuracy = binary_accuracy(model.predict_y(&zx_test)?.data(), data.test.y.data());
    let (zx, zs) = encode_means(model, &data.probe, ys)?;
    let s = data.probe.s_values();
    let plain = linear_probe(&zx, s, ClassWeighting::Uniform, &cfg.probe, cfg.seed)?;
    let balanced = linear_probe(&zx, s, ClassWeighting::Balanced, &cfg.probe, cfg.seed)?;
    let zs_probe = linear_probe(&zs, s, ClassWeighting::Balanced, &cfg.probe, cfg.seed)?;
    let random_guess_s = random_guess_rate(2);
    let pos = s.iter().filter(|&&v| v == 1.0).count() as f64 / s.len().max(1) as f64;
    Ok(RunMetrics {
        y_accuracy,
        valid_y_accuracy: history.epochs.get(history.best_epoch).and_then(|e| e.valid_y_accuracy),
        aux_test_accuracy: aux.as_ref().map(|a| a.accuracy(&data.test)).transpose()?,
        s_probe_accuracy: plain.accuracy,
        s_probe_balanced_accuracy: balanced.accuracy,
        zs_probe_balanced_accuracy: zs_probe.accuracy,
        mrg: mrg(balanced.accuracy, random_guess_s)?,
        random_guess_s,
        majority_rate_s: 100.0 * pos.max(1.0 - pos),
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
        final_train_loss: history.epochs.last().map_or(f64::NAN, |e| e.loss.total),
    })
}

/// Prepare data, fit the ŷ classifier if needed, train, and score.
pub fn run_experiment(cfg: &FarconConfig, data_dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg, data_dir)?;
    let aux = match cfg.eval_y {
        EvalY::Aux => Some(train_aux_classifier(&cfg.aux, &data.train_clean, Some(&data.valid), cfg.seed)?),
        EvalY::TrueY => None,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(2);
    let mut model = FarconModel::new(cfg.dims(data.train.data.x_dim()), data.train.data.x_bernoulli(), &mut init_rng)?;
    model.encoder_y = cfg.encoder_y;
    let valid = if data.valid.is_empty() {
        None
    } else {
        Some(ValidSet {
            x: data.valid.x.clone(),
            s: data.valid.s.clone(),
            y_input: y_source(&aux).column(&data.valid)?,
            y: data.valid.y.data().to_vec(),
        })
    };
    let objective = FarconObjective { weights: cfg.weights() };
    let (model, history) = train_farcon(model, &data.train, valid.as_ref(), &objective, &TrainOptions::from_config(cfg))?;
    let metrics = evaluate(cfg, &model, &aux, &data, &history)?;
    info!(
        "{} seed {}: y {:.2} s-probe {:.2} mrg {:.2}",
        cfg.name, cfg.seed, metrics.y_accuracy, metrics.s_probe_accuracy, metrics.mrg
    );
    Ok(RunOutput {
        model,
        aux,
        history,
        metrics,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

/// Retrains for every `(ε, seed)`, corrupting training `s` only; scores on
/// the clean splits.
pub fn noise_sweep(cfg: &FarconConfig, data_dir: &Path, epsilons: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(epsilons.len() * seeds.len());
    for &epsilon in epsilons {
        for &seed in seeds {
            let c = FarconConfig {
                sensitive_noise: epsilon,
                seed,
                ..cfg.clone()
            };
            rows.push(SweepRow {
                epsilon,
                seed,
                metrics: run_experiment(&c, data_dir)?.metrics,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_dc: bool,
    pub use_sr: bool,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

/// The four `(use_dc, use_sr)` combinations: α and γ are kept or zeroed.
pub fn ablation_run(cfg: &FarconConfig, data_dir: &Path, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(4 * seeds.len());
    for (use_dc, use_sr) in [(false, false), (true, false), (false, true), (true, true)] {
        for &seed in seeds {
            let c = FarconConfig {
                alpha: if use_dc { cfg.alpha } else { 0.0 },
                gamma: if use_sr { cfg.gamma } else { 0.0 },
                seed,
                ..cfg.clone()
            };
            rows.push(AblationRow {
                use_dc,
                use_sr,
                seed,
                metrics: run_experiment(&c, data_dir)?.metrics,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmBaseline {
    pub y_accuracy: f64,
    /// Plain probe for `s` on the hidden layer.
    pub s_probe_accuracy: f64,
}

/// An MLP on `[x, s]` fit to y by plain risk minimization; its hidden layer
/// is the baseline representation.
pub fn erm_baseline(cfg: &FarconConfig, data: &PreparedData) -> Result<ErmBaseline> {
    let input = |d: &crate::data::Dataset| d.x.concat_cols(&d.s);
    let train = &data.train_clean;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut mlp = Mlp::new(&[train.x_dim() + 1, cfg.aux.hidden, 1], Activation::Relu, Activation::Identity, &mut rng);
    let opts = ClassifierOptions {
        epochs: cfg.aux.epochs,
        batch_size: cfg.aux.batch_size,
        lr: cfg.aux.lr,
        weight_decay: cfg.aux.weight_decay,
        l2: 0.0,
        patience: Some(cfg.aux.patience),
    };
    let vx = input(&data.valid)?;
    let valid = (!data.valid.is_empty()).then_some((&vx, data.valid.y.data()));
    fit_binary(&mut mlp, &input(train)?, train.y.data(), None, valid, &opts, cfg.seed)?;
    let y_accuracy = binary_accuracy(&predict_logits(&mlp, &input(&data.test)?)?, data.test.y.data());
    let hidden = Mlp::from_layers(vec![mlp.layers()[0].clone()])?;
    let rep = hidden.forward(&input(&data.probe)?)?;
    let probe = linear_probe(&rep, data.probe.s_values(), ClassWeighting::Uniform, &cfg.probe, cfg.seed)?;
    Ok(ErmBaseline {
        y_accuracy,
        s_probe_accuracy: probe.accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousReport {
    pub seed: u64,
    pub farcon: RunMetrics,
    pub erm: ErmBaseline,
}

/// FarconVAE against the ERM baseline on the same prepared data.
pub fn spurious_experiment(cfg: &FarconConfig, data_dir: &Path) -> Result<SpuriousReport> {
    let run = run_experiment(cfg, data_dir)?;
    let erm = erm_baseline(cfg, &run.data)?;
    Ok(SpuriousReport {
        seed: cfg.seed,
        farcon: run.metrics,
        erm,
    })
}
