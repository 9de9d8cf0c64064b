//! Command-line front end: argument parsing, run directories and exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::Value;

use farcon::data::{write_tabular, SyntheticSpec};
use farcon::eval::{
    ablation_run, encode_dataset, evaluate, export_embeddings, metrics_document, noise_sweep, run_experiment,
    spurious_experiment, write_json, AblationRow, SweepRow, YSource,
};
use farcon::objectives::{verify_propositions, PropositionGrid};
use farcon::train::{prepare_data, AuxClassifier, DataSource, FarconConfig, PRESETS};
use farcon::{FarconModel, TrainHistory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "farcon", version, about = "Fair representation learning with distributional contrastive disentanglement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and score it
    Train(ConfigArgs),
    /// Re-score a trained run directory
    Eval(RunArgs),
    /// Retrain across sensitive-attribute noise rates and seeds
    SweepNoise {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.3])]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
    },
    /// Train with each combination of the contrastive and swap losses
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
    },
    /// FarconVAE against an ERM baseline under a spurious correlation
    Spurious(ConfigArgs),
    /// Check the kernel-gap properties on a KL grid
    VerifyProps {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write posterior-mean z_x embeddings of a trained run as CSV
    ExportEmbeddings {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Write the synthetic spurious-correlation data as CSV plus schema
    MakeSynthetic {
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        n_train: usize,
        #[arg(long, default_value_t = 2000)]
        n_test: usize,
        #[arg(long, default_value_t = 0.9)]
        corr_train: f64,
        #[arg(long, default_value_t = 0.1)]
        corr_test: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config JSON file or preset name (adult, german, synthetic, synthetic-sr)
    #[arg(long)]
    pub config: String,
    /// Override a config field, e.g. `--set alpha=0.5 --set aux.epochs=50`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Directory that relative tabular paths resolve against
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Directory written by `train`
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; defaults to the run directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
    Probe,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(farcon::Error),
}

impl From<farcon::Error> for CliError {
    fn from(e: farcon::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(farcon::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Parses argv and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `farcon --help` for usage.");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Resolves `--config`, applies `--set` overrides then `--seed`.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<FarconConfig> {
    let base = match FarconConfig::preset(&args.config) {
        Some(cfg) => cfg,
        None => {
            let path = Path::new(&args.config);
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "config `{}` is neither a file nor a preset ({})",
                    args.config,
                    PRESETS.join(", ")
                )));
            }
            FarconConfig::load(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?
        }
    };
    let mut cfg = base.with_overrides(&args.overrides).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    write_json(&serde_json::to_value(value).map_err(farcon::Error::from)?, path)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&text).map_err(farcon::Error::from)?)
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(args) => train(&args),
        Command::Eval(args) => eval(&args),
        Command::SweepNoise { config, epsilons, seeds } => sweep(&config, &epsilons, &seeds),
        Command::Ablate { config, seeds } => ablate(&config, &seeds),
        Command::Spurious(args) => spurious(&args),
        Command::VerifyProps { out } => verify_props(out.as_deref()),
        Command::ExportEmbeddings { run, split } => export(&run, split),
        Command::MakeSynthetic {
            out,
            n_train,
            n_test,
            corr_train,
            corr_test,
            seed,
        } => make_synthetic(&out, n_train, n_test, corr_train, corr_test, seed),
    }
}

fn train(args: &ConfigArgs) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    ensure_dir(&args.out)?;
    let out = run_experiment(&cfg, &args.data_dir)?;
    save_json(&cfg, &args.out.join("config.json"))?;
    out.model.save(&args.out.join("model.json"))?;
    if let Some(aux) = &out.aux {
        save_json(aux, &args.out.join("aux.json"))?;
    }
    save_json(&out.history, &args.out.join("history.json"))?;
    let doc = metrics_document("train", &cfg, cfg.seed, std::slice::from_ref(&out.metrics))?;
    write_json(&doc, &args.out.join("metrics.json"))?;
    print_metrics(&doc["results"][0]);
    Ok(())
}

struct LoadedRun {
    cfg: FarconConfig,
    model: FarconModel,
    aux: Option<AuxClassifier>,
    history: TrainHistory,
}

fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    let cfg_path = dir.join("config.json");
    if !cfg_path.is_file() {
        return Err(CliError::Usage(format!("{} is not a run directory (no config.json)", dir.display())));
    }
    let aux_path = dir.join("aux.json");
    Ok(LoadedRun {
        cfg: FarconConfig::load(&cfg_path)?,
        model: FarconModel::load(&dir.join("model.json"))?,
        aux: if aux_path.is_file() { Some(read_json(&aux_path)?) } else { None },
        history: read_json(&dir.join("history.json"))?,
    })
}

fn eval(args: &RunArgs) -> CliResult<()> {
    let run = load_run(&args.run)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.run.clone());
    ensure_dir(&out_dir)?;
    let data = prepare_data(&run.cfg, &args.data_dir)?;
    let metrics = evaluate(&run.cfg, &run.model, &run.aux, &data, &run.history)?;
    let doc = metrics_document("eval", &run.cfg, run.cfg.seed, std::slice::from_ref(&metrics))?;
    write_json(&doc, &out_dir.join("eval_metrics.json"))?;
    print_metrics(&doc["results"][0]);
    Ok(())
}

fn sweep(args: &ConfigArgs, epsilons: &[f64], seeds: &[u64]) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    if let Some(e) = epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(CliError::Usage(format!("noise rate {e} is outside [0, 1]")));
    }
    ensure_dir(&args.out)?;
    let rows: Vec<SweepRow> = noise_sweep(&cfg, &args.data_dir, epsilons, seeds)?;
    let mut doc = metrics_document("sweep-noise", &cfg, cfg.seed, &rows)?;
    let mut by_eps = serde_json::Map::new();
    for &eps in epsilons {
        let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.epsilon == eps).collect();
        let summary = farcon::eval::aggregate(&cell.iter().map(|r| &r.metrics).collect::<Vec<_>>())?;
        by_eps.insert(format!("{eps}"), serde_json::to_value(summary).map_err(farcon::Error::from)?);
    }
    doc["summary_by_epsilon"] = Value::Object(by_eps);
    write_json(&doc, &args.out.join("metrics.json"))?;
    for eps in epsilons {
        let s = &doc["summary_by_epsilon"][format!("{eps}")];
        println!(
            "eps {eps:<4}  y {:>6.2}  s-probe {:>6.2}  mrg {:>6.2}",
            s["y_accuracy"]["mean"].as_f64().unwrap_or(f64::NAN),
            s["s_probe_accuracy"]["mean"].as_f64().unwrap_or(f64::NAN),
            s["mrg"]["mean"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn ablate(args: &ConfigArgs, seeds: &[u64]) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    ensure_dir(&args.out)?;
    let rows: Vec<AblationRow> = ablation_run(&cfg, &args.data_dir, seeds)?;
    let mut doc = metrics_document("ablate", &cfg, cfg.seed, &rows)?;
    let mut by_toggle = serde_json::Map::new();
    for (dc, sr) in [(false, false), (true, false), (false, true), (true, true)] {
        let cell: Vec<_> = rows.iter().filter(|r| r.use_dc == dc && r.use_sr == sr).map(|r| &r.metrics).collect();
        let label = format!("dc={dc},sr={sr}");
        let summary = farcon::eval::aggregate(&cell)?;
        println!(
            "{label:<18}  y {:>6.2}  s-probe {:>6.2}  mrg {:>6.2}",
            summary["y_accuracy"].mean, summary["s_probe_accuracy"].mean, summary["mrg"].mean
        );
        by_toggle.insert(label, serde_json::to_value(summary).map_err(farcon::Error::from)?);
    }
    doc["summary_by_toggle"] = Value::Object(by_toggle);
    write_json(&doc, &args.out.join("metrics.json"))?;
    Ok(())
}

fn spurious(args: &ConfigArgs) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    if !matches!(cfg.data, DataSource::Synthetic { .. }) {
        return Err(CliError::Usage("spurious needs a synthetic data source".into()));
    }
    ensure_dir(&args.out)?;
    let report = spurious_experiment(&cfg, &args.data_dir)?;
    let doc = metrics_document("spurious", &cfg, cfg.seed, std::slice::from_ref(&report))?;
    write_json(&doc, &args.out.join("metrics.json"))?;
    println!(
        "farcon  y {:>6.2}  s-probe {:>6.2}\nerm     y {:>6.2}  s-probe {:>6.2}",
        report.farcon.y_accuracy, report.farcon.s_probe_accuracy, report.erm.y_accuracy, report.erm.s_probe_accuracy
    );
    Ok(())
}

fn verify_props(out: Option<&Path>) -> CliResult<()> {
    let report = verify_propositions(&PropositionGrid::default())?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!("grid points: {}", report.points);
    println!(
        "[{}] equal variances: min gap {:.3e} (>= -1e-12)",
        verdict(report.equal_variance_holds),
        report.equal_variance.min_gap
    );
    println!(
        "[{}] equal means: min gap {:.3e} at sigma ratio {}",
        verdict(report.equal_means_minimum_is_zero),
        report.equal_means.min_gap,
        report.equal_means_argmin_ratio
    );
    println!(
        "[{}] sigma ratio >= 100: min gap {:.3e} (> 0)",
        verdict(report.large_ratio_positive),
        report.large_ratio.min_gap
    );
    println!("closed-form max abs error: {:.3e}", report.closed_form_max_abs_err);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        save_json(&report, &dir.join("props.json"))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime(farcon::Error::InvalidArgument("proposition check failed".into())))
    }
}

fn export(args: &RunArgs, split: SplitName) -> CliResult<()> {
    let run = load_run(&args.run)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.run.clone());
    ensure_dir(&out_dir)?;
    let data = prepare_data(&run.cfg, &args.data_dir)?;
    let rows = match split {
        SplitName::Train => &data.train_clean,
        SplitName::Valid => &data.valid,
        SplitName::Test => &data.test,
        SplitName::Probe => &data.probe,
    };
    let ys = match &run.aux {
        Some(a) => YSource::Aux(a),
        None => YSource::TrueY,
    };
    let emb = encode_dataset(&run.model, rows, ys)?;
    let name = format!("embeddings_{}.csv", format!("{split:?}").to_lowercase());
    let path = out_dir.join(name);
    export_embeddings(&emb, rows.y.data(), rows.s_values(), &path)?;
    info!("wrote {} rows to {}", rows.len(), path.display());
    println!("{}", path.display());
    Ok(())
}

fn make_synthetic(out: &Path, n_train: usize, n_test: usize, corr_train: f64, corr_test: f64, seed: u64) -> CliResult<()> {
    let spec = SyntheticSpec {
        n_train,
        n_test,
        corr_train,
        corr_test,
        seed,
        ..SyntheticSpec::default()
    };
    let (train, test) = spec.generate().map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_dir(out)?;
    let mut schema = None;
    for (name, data) in [("train", &train), ("test", &test), ("probe", &spec.probe_set()?)] {
        schema = Some(write_tabular(data, &out.join(format!("{name}.csv")), "s", "y")?);
    }
    save_json(&schema, &out.join("schema.json"))?;
    save_json(&spec, &out.join("spec.json"))?;
    println!("wrote {} train / {} test / {} probe rows to {}", train.len(), test.len(), spec.n_probe, out.display());
    Ok(())
}

fn print_metrics(m: &Value) {
    let get = |k: &str| m[k].as_f64().unwrap_or(f64::NAN);
    println!(
        "y {:.2}  s-probe {:.2} (majority {:.2})  balanced s-probe {:.2}  mrg {:.2}",
        get("y_accuracy"),
        get("s_probe_accuracy"),
        get("majority_rate_s"),
        get("s_probe_balanced_accuracy"),
        get("mrg")
    );
}
