//! Metrics and experiment harnesses.

mod harness;

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use harness::{
    ablation_run, erm_baseline, evaluate, noise_sweep, run_experiment, spurious_experiment, AblationRow, ErmBaseline, RunMetrics,
    RunOutput, SpuriousReport, SweepRow,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp};
use crate::model::FarconModel;
use crate::tensor::Tensor;
use crate::train::classifier::{balanced_weights, binary_accuracy, fit_binary, predict_logits, ClassifierOptions};
use crate::train::AuxClassifier;

/// Where the encoder's y input comes from when embedding rows.
#[derive(Debug, Clone, Copy)]
pub enum YSource<'a> {
    TrueY,
    Aux(&'a AuxClassifier),
}

impl YSource<'_> {
    pub fn column(&self, data: &Dataset) -> Result<Tensor> {
        match self {
            YSource::TrueY => Ok(data.y_column()),
            YSource::Aux(aux) => aux.predict(&data.x),
        }
    }
}

/// Posterior means of `(z_x, z_s)` for every row.
pub fn encode_means(model: &FarconModel, data: &Dataset, y: YSource<'_>) -> Result<(Tensor, Tensor)> {
    let (qzx, qzs) = model.encode(&data.x, &data.s, &y.column(data)?)?;
    Ok((qzx.mu().clone(), qzs.mu().clone()))
}

/// Row `i` is the posterior mean of `q(z_x | x_i, s_i, y_i)`.
pub fn encode_dataset(model: &FarconModel, data: &Dataset, y: YSource<'_>) -> Result<Tensor> {
    Ok(encode_means(model, data, y)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// Plain mean loss; scored by accuracy.
    #[default]
    Uniform,
    /// Inverse-frequency loss weights; scored by balanced accuracy, whose
    /// chance level is 50% for any class ratio.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Coefficient of `‖w‖²`.
    pub l2: f64,
    pub holdout: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-2,
            l2: 1e-4,
            holdout: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Share of the most frequent class among the held-out rows.
    pub majority_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Mean per-class recall in percent.
pub fn balanced_accuracy(logits: &[f64], y: &[f64]) -> f64 {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&l, &t) in logits.iter().zip(y) {
        let c = (t == 1.0) as usize;
        totals[c] += 1;
        hits[c] += ((l > 0.0) == (t == 1.0)) as usize;
    }
    let recalls: Vec<f64> = (0..2).filter(|&c| totals[c] > 0).map(|c| hits[c] as f64 / totals[c] as f64).collect();
    100.0 * recalls.iter().sum::<f64>() / recalls.len().max(1) as f64
}

fn majority(y: &[f64]) -> f64 {
    let pos = y.iter().filter(|&&v| v == 1.0).count() as f64;
    let n = y.len().max(1) as f64;
    100.0 * pos.max(y.len() as f64 - pos) / n
}

/// Holds out `holdout` of each class, seeded.
fn stratified_holdout(labels: &[f64], holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [0.0, 1.0] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        let k = (holdout * rows.len() as f64).round() as usize;
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn fit_probe(emb: &Tensor, labels: &[f64], weighting: ClassWeighting, cfg: &ProbeConfig, seed: u64) -> Result<Mlp> {
    let mut mlp = Mlp::zeros(&[emb.cols(), 1], Activation::Identity, Activation::Identity);
    let weights = match weighting {
        ClassWeighting::Uniform => None,
        ClassWeighting::Balanced => Some(balanced_weights(labels)),
    };
    let opts = ClassifierOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: 0.0,
        l2: cfg.l2,
        patience: None,
    };
    fit_binary(&mut mlp, emb, labels, weights.as_deref(), None, &opts, seed)?;
    Ok(mlp)
}

fn score(logits: &[f64], labels: &[f64], weighting: ClassWeighting) -> f64 {
    match weighting {
        ClassWeighting::Uniform => binary_accuracy(logits, labels),
        ClassWeighting::Balanced => balanced_accuracy(logits, labels),
    }
}

fn check_probe_input(emb: &Tensor, labels: &[f64]) -> Result<()> {
    if emb.rank() != 2 || emb.rows() != labels.len() {
        return Err(Error::dim("probe embeddings", labels.len(), format!("{:?}", emb.shape())));
    }
    if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("probe labels must be 0/1".into()));
    }
    Ok(())
}

/// L2-regularized logistic regression on a stratified train/holdout split
/// of `emb`; returns the held-out score.
pub fn linear_probe(
    emb: &Tensor,
    labels: &[f64],
    weighting: ClassWeighting,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    check_probe_input(emb, labels)?;
    let pos = labels.iter().filter(|&&v| v == 1.0).count();
    if pos == 0 || pos == labels.len() {
        warn!("probe labels are a single class; reporting 100%");
        return Ok(ProbeResult {
            accuracy: 100.0,
            majority_rate: 100.0,
            n_train: labels.len(),
            n_test: 0,
        });
    }
    let small = pos.min(labels.len() - pos);
    if small < 10 {
        warn!("probe minority class has only {small} rows");
    }
    let (tr, te) = stratified_holdout(labels, cfg.holdout, seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let (ytr, yte) = (pick(&tr), pick(&te));
    let mlp = fit_probe(&emb.select_rows(&tr), &ytr, weighting, cfg, seed)?;
    let logits = predict_logits(&mlp, &emb.select_rows(&te))?;
    Ok(ProbeResult {
        accuracy: score(&logits, &yte, weighting),
        majority_rate: majority(&yte),
        n_train: tr.len(),
        n_test: te.len(),
    })
}

/// Fits on one set of embeddings and scores on another.
pub fn transfer_probe(
    train: (&Tensor, &[f64]),
    test: (&Tensor, &[f64]),
    weighting: ClassWeighting,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    check_probe_input(train.0, train.1)?;
    check_probe_input(test.0, test.1)?;
    let mlp = fit_probe(train.0, train.1, weighting, cfg, seed)?;
    let logits = predict_logits(&mlp, test.0)?;
    Ok(ProbeResult {
        accuracy: score(&logits, test.1, weighting),
        majority_rate: majority(test.1),
        n_train: train.1.len(),
        n_test: test.1.len(),
    })
}

/// Matching with random guess: `100 − |a − b|`.
pub fn mrg(s_acc_model: f64, s_acc_random_guess: f64) -> Result<f64> {
    for v in [s_acc_model, s_acc_random_guess] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("accuracy must lie in [0, 100], got {v}")));
        }
    }
    Ok(100.0 - (s_acc_model - s_acc_random_guess).abs())
}

/// Random-guess accuracy for `classes` equiprobable classes.
pub fn random_guess_rate(classes: usize) -> f64 {
    100.0 / classes as f64
}

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON form.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

/// Mean and std of every numeric top-level field across records.
pub fn aggregate<T: Serialize>(records: &[T]) -> Result<BTreeMap<String, MeanStd>> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Value::Object(map) = serde_json::to_value(r)? {
            for (k, v) in map {
                if let Some(x) = v.as_f64() {
                    columns.entry(k).or_default().push(x);
                }
            }
        }
    }
    Ok(columns.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect())
}

/// A metrics document: `{"command", "config", "config_fingerprint",
/// "results", "seed", "summary"}` with all object keys sorted.
pub fn metrics_document<C: Serialize, R: Serialize>(command: &str, config: &C, seed: u64, results: &[R]) -> Result<Value> {
    let mut doc = serde_json::Map::new();
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("config".into(), serde_json::to_value(config)?);
    doc.insert("config_fingerprint".into(), Value::String(fingerprint(config)?));
    doc.insert("results".into(), serde_json::to_value(results)?);
    doc.insert("seed".into(), Value::from(seed));
    doc.insert("summary".into(), serde_json::to_value(aggregate(results)?)?);
    Ok(Value::Object(doc))
}

pub fn write_json(value: &Value, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// CSV with header `z_0, …, z_{d−1}, y, s`.
pub fn export_embeddings(emb: &Tensor, y: &[f64], s: &[f64], path: &Path) -> Result<()> {
    if emb.rank() != 2 || emb.rows() != y.len() || y.len() != s.len() {
        return Err(Error::dim("embedding export", emb.rows(), format!("y {} / s {}", y.len(), s.len())));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let d = emb.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("z_{j}")).collect();
    header.extend(["y".to_string(), "s".to_string()]);
    w.write_record(&header)?;
    for i in 0..emb.rows() {
        let mut row: Vec<String> = emb.row(i).iter().map(|v| v.to_string()).collect();
        row.push(y[i].to_string());
        row.push(s[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::Rng;
    use rand_distr::StandardNormal;

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

    fn rows() -> Dataset {
        crate::data::toy_dataset(&[
            (vec![0.1, 0.2, 0.3], 0.0, 1.0),
            (vec![-1.0, 0.5, 2.0], 1.0, 0.0),
            (vec![0.0, 0.0, 1.0], 1.0, 1.0),
        ])
    }

    #[test]
    fn zero_model_embeds_to_zero_and_is_deterministic() {
        let m = FarconModel::zeros(dims(), vec![false; 3]).unwrap();
        let e = encode_dataset(&m, &rows(), YSource::TrueY).unwrap();
        assert_eq!(e.shape(), &[3, 2]);
        assert!(e.data().iter().all(|&v| v == 0.0));
        let m = FarconModel::new(dims(), vec![false; 3], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let d = rows();
        assert_eq!(encode_dataset(&m, &d, YSource::TrueY).unwrap(), encode_dataset(&m, &d, YSource::TrueY).unwrap());
    }

    #[test]
    fn single_row_matches_manual_encode() {
        let m = FarconModel::new(dims(), vec![false; 3], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let d = rows();
        let e = encode_dataset(&m, &d, YSource::TrueY).unwrap();
        let input = Tensor::matrix(1, 5, vec![-1.0, 0.5, 2.0, 1.0, 0.0]).unwrap();
        let h = m.encoder_body.forward(&input).unwrap();
        let head = m.encoder_head_x.forward(&h).unwrap();
        for j in 0..2 {
            assert!((e.at(1, j) - head.at(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn aux_and_true_y_differ_only_where_predictions_differ() {
        let m = FarconModel::new(dims(), vec![false; 3], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let d = rows();
        let aux = AuxClassifier {
            mlp: Mlp::zeros(&[3, 1], Activation::Identity, Activation::Identity),
            train_accuracy: 0.0,
            valid_accuracy: None,
        };
        // a zero network predicts 0 everywhere
        let a = encode_dataset(&m, &d, YSource::Aux(&aux)).unwrap();
        let t = encode_dataset(&m, &d, YSource::TrueY).unwrap();
        assert_eq!(a.row(1), t.row(1));
        assert_ne!(a.row(0), t.row(0));
        assert_ne!(a.row(2), t.row(2));
    }

    #[test]
    fn probe_constant_labels_is_100() {
        let emb = Tensor::zeros(&[30, 2]);
        assert_eq!(linear_probe(&emb, &[1.0; 30], ClassWeighting::Uniform, &ProbeConfig::default(), 0).unwrap().accuracy, 100.0);
    }

    #[test]
    fn probe_perfect_feature_is_100() {
        let y: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let emb = Tensor::matrix(200, 1, y.clone()).unwrap();
        for w in [ClassWeighting::Uniform, ClassWeighting::Balanced] {
            assert_eq!(linear_probe(&emb, &y, w, &ProbeConfig::default(), 1).unwrap().accuracy, 100.0);
        }
    }

    #[test]
    fn probe_on_noise_is_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let emb = Tensor::matrix(n, 3, (0..3 * n).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let r = linear_probe(&emb, &y, ClassWeighting::Uniform, &ProbeConfig::default(), 2).unwrap();
        assert!((r.accuracy - 50.0).abs() <= 5.0, "{}", r.accuracy);
        assert_eq!(r.n_test, 400);
    }

    #[test]
    fn balanced_probe_sits_at_half_on_imbalanced_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 2000;
        let emb = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_bool(0.7) as u8 as f64).collect();
        let plain = linear_probe(&emb, &y, ClassWeighting::Uniform, &ProbeConfig::default(), 3).unwrap();
        let bal = linear_probe(&emb, &y, ClassWeighting::Balanced, &ProbeConfig::default(), 3).unwrap();
        assert!((plain.accuracy - plain.majority_rate).abs() <= 3.0);
        assert!((bal.accuracy - 50.0).abs() <= 5.0, "{}", bal.accuracy);
    }

    #[test]
    fn probes_are_deterministic() {
        let y: Vec<f64> = (0..100).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let emb = Tensor::matrix(100, 1, (0..100).map(|i| (i % 5) as f64).collect()).unwrap();
        let cfg = ProbeConfig::default();
        let a = linear_probe(&emb, &y, ClassWeighting::Uniform, &cfg, 4).unwrap();
        assert_eq!(a, linear_probe(&emb, &y, ClassWeighting::Uniform, &cfg, 4).unwrap());
    }

    #[test]
    fn mrg_examples() {
        assert_eq!(mrg(50.0, 50.0).unwrap(), 100.0);
        assert!((mrg(67.36, 50.0).unwrap() - 82.64).abs() < 1e-12);
        assert_eq!(mrg(30.0, 50.0).unwrap(), mrg(50.0, 30.0).unwrap());
        assert!(mrg(101.0, 50.0).is_err());
        assert_eq!(random_guess_rate(2), 50.0);
    }

    #[test]
    fn balanced_accuracy_by_hand() {
        // class 1: 2/2 right, class 0: 1/4 right
        let logits = [1.0, 1.0, 1.0, 1.0, 1.0, -1.0];
        let y = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((balanced_accuracy(&logits, &y) - 62.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_takes_mean_and_sample_std() {
        #[derive(Serialize)]
        struct R {
            a: f64,
            label: &'static str,
        }
        let agg = aggregate(&[R { a: 1.0, label: "x" }, R { a: 3.0, label: "y" }]).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg["a"].mean, 2.0);
        assert!((agg["a"].std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn metrics_document_keys_are_sorted_and_round_trip() {
        let doc = metrics_document::<_, f64>("sweep", &crate::train::FarconConfig::german(), 3, &[]).unwrap();
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(doc["results"], Value::Array(vec![]));
        assert_eq!(doc["config_fingerprint"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = crate::train::FarconConfig::german();
        let b = crate::train::FarconConfig { seed: 1, ..a.clone() };
        assert_eq!(fingerprint(&a).unwrap(), fingerprint(&a.clone()).unwrap());
        assert_ne!(fingerprint(&a).unwrap(), fingerprint(&b).unwrap());
    }

    fn read_back(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut r = csv::Reader::from_path(path).unwrap();
        let header = r.headers().unwrap().iter().map(String::from).collect();
        let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
        (header, rows)
    }

    #[test]
    fn export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.csv");
        let emb = Tensor::matrix(2, 2, vec![0.1234567890123456, -3.0e-7, 1.0 / 3.0, 2.5]).unwrap();
        export_embeddings(&emb, &[1.0, 0.0], &[0.0, 1.0], &p).unwrap();
        let (header, rows) = read_back(&p);
        assert_eq!(header, ["z_0", "z_1", "y", "s"]);
        assert_eq!(rows.len(), 2);
        for i in 0..2 {
            for j in 0..2 {
                let (a, b) = (rows[i][j], emb.at(i, j));
                assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
        assert_eq!(rows[1][2..], [0.0, 1.0]);
    }

    #[test]
    fn export_empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        export_embeddings(&Tensor::zeros(&[0, 3]), &[], &[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "z_0,z_1,z_2,y,s\n");
    }

    #[test]
    fn export_to_missing_directory_fails() {
        let emb = Tensor::zeros(&[1, 1]);
        assert!(export_embeddings(&emb, &[0.0], &[0.0], Path::new("/nonexistent/dir/e.csv")).is_err());
    }
}
