//! Acceptance suite: runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each, and exits non-zero if any criterion fails.
//!
//! Needs `data/adult.csv` and `data/german.csv` (see `scripts/prepare_uci.py`).
//! `FARCON_ACCEPT=3,5` runs a subset.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use farcon::data::PairBatch;
use farcon::eval::{ablation_run, noise_sweep, spurious_experiment, RunMetrics};
use farcon::model::{BatchVars, PairNoise};
use farcon::objectives::{total_loss_vars, verify_propositions, PropositionGrid};
use farcon::probdist::kl_diag_gaussian;
use farcon::{finite_diff_check, DiagGaussian, FarconConfig, FarconModel, Kernel, LossWeights, ModelDims, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_of<'a>(rows: impl IntoIterator<Item = &'a RunMetrics>, f: fn(&RunMetrics) -> f64) -> f64 {
    mean(rows.into_iter().map(f))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let dims = ModelDims {
        x_dim: 5,
        s_dim: 1,
        y_dim: 1,
        zx_dim: 3,
        zs_dim: 3,
        hidden: 6,
    };
    let mask = vec![false, false, true, false, true];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let model = FarconModel::new(dims, mask.clone(), &mut rng).unwrap();
    let n = 8;
    let mut column = |binary: &dyn Fn(usize) -> bool, c: usize| {
        let data = (0..n * c)
            .map(|k| if binary(k % c) { rng.random_range(0..2) as f64 } else { rng.random_range(-1.5..1.5) })
            .collect();
        Tensor::matrix(n, c, data).unwrap()
    };
    let x = column(&|j| mask[j], 5);
    let x_cf = column(&|j| mask[j], 5);
    let s = column(&|_| true, 1);
    let y = column(&|_| true, 1);
    let s_cf = Tensor::matrix(n, 1, s.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let batch = PairBatch::new(x, s, y, x_cf, s_cf).unwrap();
    let noise = PairNoise::sample(n, &dims, &mut rng);

    let mut worst: f64 = 0.0;
    let mut passed = true;
    for kernel in [Kernel::Gaussian, Kernel::StudentT] {
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.2,
            gamma: 1.0,
            kernel,
        };
        let report = finite_diff_check(
            &model.params(),
            |g, vars| {
                let bound = model.bind_from(vars);
                let bv = BatchVars::new(g, &batch);
                let out = bound.forward_pair(g, &bv, &noise.constants(g))?;
                Ok(total_loss_vars(g, &out, &bv, &w, &mask).total)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        worst = worst.max(report.max_rel_err);
        passed &= report.passed && report.max_rel_err <= 1e-4;
    }
    let elapsed = start.elapsed();
    outcome(
        passed && elapsed < Duration::from_secs(10),
        format!("max rel err {worst:.2e} (<= 1e-4), {:.2}s (< 10s)", elapsed.as_secs_f64()),
    )
}

fn proposition_grid() -> Outcome {
    let start = Instant::now();
    let grid = PropositionGrid::default();
    let r = verify_propositions(&grid).unwrap();
    let elapsed = start.elapsed();
    let equal_means_ok = r.equal_means.min_gap.abs() <= 1e-9 && r.equal_means_argmin_ratio == 1.0;
    let passed = grid.len() >= 10_000
        && r.equal_variance.min_gap >= -1e-12
        && equal_means_ok
        && r.large_ratio.points > 0
        && r.large_ratio.min_gap > 0.0
        && elapsed < Duration::from_secs(5);
    outcome(
        passed,
        format!(
            "{} points; equal-variance min gap {:.1e}; equal-mean min gap {:.1e} at ratio {}; ratio>=100 min gap {:.3e}; {:.3}s",
            r.points,
            r.equal_variance.min_gap,
            r.equal_means.min_gap,
            r.equal_means_argmin_ratio,
            r.large_ratio.min_gap,
            elapsed.as_secs_f64()
        ),
    )
}

fn kl_monte_carlo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples = 100_000;
    let mut worst_z: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let mut draw = |lo: f64, hi: f64| Tensor::vector((0..d).map(|_| rng.random_range(lo..hi)).collect());
        let (m1, lv1, m2, lv2) = (draw(-2.0, 2.0), draw(-1.5, 1.5), draw(-2.0, 2.0), draw(-1.5, 1.5));
        let p = DiagGaussian::new(m1, lv1).unwrap();
        let q = DiagGaussian::new(m2, lv2).unwrap();
        let closed = kl_diag_gaussian(&p, &q).unwrap();
        let sd: Vec<f64> = p.log_var().data().iter().map(|lv| (0.5 * lv).exp()).collect();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut z = vec![0.0; d];
        for _ in 0..samples {
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                z[j] = p.mu().data()[j] + sd[j] * e;
            }
            let v = p.log_density(&z) - q.log_density(&z);
            sum += v;
            sum_sq += v * v;
        }
        let n = samples as f64;
        let m = sum / n;
        let se = ((sum_sq / n - m * m) * n / (n - 1.0) / n).sqrt();
        worst_z = worst_z.max((closed - m).abs() / se.max(1e-300));
    }
    outcome(worst_z <= 3.0, format!("worst |closed - MC| = {worst_z:.2} SE over 100 draws at 1e5 samples (<= 3)"))
}

fn adult() -> Outcome {
    let seeds = [0, 1, 2, 3, 4];
    let rows = noise_sweep(&FarconConfig::adult(), &data_dir(), &[0.0], &seeds).unwrap();
    let m: Vec<&RunMetrics> = rows.iter().map(|r| &r.metrics).collect();
    let y = mean_of(m.iter().copied(), |r| r.y_accuracy);
    let s = mean_of(m.iter().copied(), |r| r.s_probe_accuracy);
    let majority = m[0].majority_rate_s;
    outcome(
        y >= 83.5 && s <= majority + 1.5,
        format!("mean y {y:.2} (>= 83.5); mean s-probe {s:.2} (<= majority {majority:.2} + 1.5)"),
    )
}

fn german() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let rows = noise_sweep(&FarconConfig::german(), &data_dir(), &[0.0], &seeds).unwrap();
    let y = mean_of(rows.iter().map(|r| &r.metrics), |r| r.y_accuracy);
    let mrg = mean_of(rows.iter().map(|r| &r.metrics), |r| r.mrg);
    outcome(y >= 78.0 && mrg >= 85.0, format!("mean y {y:.2} (>= 78); mean MRG {mrg:.2} (>= 85)"))
}

fn german_noise() -> Outcome {
    let seeds = [0, 1, 2, 3, 4];
    let cfg = FarconConfig::german();
    let full = noise_sweep(&cfg, &data_dir(), &[0.0, 0.3], &seeds).unwrap();
    let ablated = FarconConfig {
        alpha: 0.0,
        gamma: 0.0,
        ..cfg
    };
    let off = noise_sweep(&ablated, &data_dir(), &[0.3], &seeds).unwrap();
    let at = |eps: f64| mean_of(full.iter().filter(|r| r.epsilon == eps).map(|r| &r.metrics), |r| r.mrg);
    let (clean, noisy) = (at(0.0), at(0.3));
    let off_noisy = mean_of(off.iter().map(|r| &r.metrics), |r| r.mrg);
    outcome(
        noisy > off_noisy && clean - noisy <= 10.0,
        format!("MRG at 0.3: {noisy:.2} vs alpha=gamma=0 {off_noisy:.2}; degradation {:.2}pp (<= 10)", clean - noisy),
    )
}

fn ablation() -> Outcome {
    let rows = ablation_run(&FarconConfig::synthetic_sr(), &data_dir(), &[0, 1, 2, 3, 4]).unwrap();
    let cell = |dc: bool, sr: bool, f: fn(&RunMetrics) -> f64| {
        mean_of(rows.iter().filter(|r| r.use_dc == dc && r.use_sr == sr).map(|r| &r.metrics), f)
    };
    let probe = |r: &RunMetrics| r.s_probe_accuracy;
    let mrg = |r: &RunMetrics| r.mrg;
    let (off, dc, both) = (cell(false, false, probe), cell(true, false, probe), cell(true, true, probe));
    let (mrg_dc, mrg_both) = (cell(true, false, mrg), cell(true, true, mrg));
    outcome(
        off > dc && dc >= both && mrg_both >= mrg_dc,
        format!("s-probe off {off:.2} > +DC {dc:.2} >= +DC+SR {both:.2}; MRG +DC+SR {mrg_both:.2} >= +DC {mrg_dc:.2}"),
    )
}

fn spurious() -> Outcome {
    let start = Instant::now();
    let cfg = FarconConfig::synthetic();
    let report = spurious_experiment(&cfg, &data_dir()).unwrap();
    let elapsed = start.elapsed();
    let (f, e) = (&report.farcon, &report.erm);
    outcome(
        f.y_accuracy >= 85.0
            && e.y_accuracy <= 50.0
            && f.s_probe_accuracy <= 60.0
            && e.s_probe_accuracy >= 85.0
            && elapsed < Duration::from_secs(120),
        format!(
            "FarconVAE y {:.2} (>= 85), s-probe {:.2} (<= 60); ERM y {:.2} (<= 50), s-probe {:.2} (>= 85); {:.1}s",
            f.y_accuracy,
            f.s_probe_accuracy,
            e.y_accuracy,
            e.s_probe_accuracy,
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        std::process::Command::new(env!("CARGO_BIN_EXE_farcon"))
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .args(["train", "--config", "german", "--seed", "7", "--out", out, "--data-dir"])
            .arg(data_dir())
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap()
            .success()
    };
    let ok = run("a") && run("b");
    let read = |d: &str| std::fs::read(dir.path().join(d).join("metrics.json")).unwrap_or_default();
    let (a, b) = (read("a"), read("b"));
    outcome(
        ok && !a.is_empty() && a == b,
        format!("`train --config german --seed 7` twice: {} vs {} bytes, identical = {}", a.len(), b.len(), a == b),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "gradient correctness", gradient_check),
    (2, "kernel-gap propositions", proposition_grid),
    (3, "KL against Monte Carlo", kl_monte_carlo),
    (4, "Adult reproduction", adult),
    (5, "German reproduction", german),
    (6, "noise robustness", german_noise),
    (7, "ablation direction", ablation),
    (8, "spurious-correlation generalization", spurious),
    (9, "determinism", determinism),
];

fn main() {
    let wanted: Option<Vec<u32>> = std::env::var("FARCON_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, name, check) in CRITERIA {
        if wanted.as_ref().is_some_and(|w| !w.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("[{verdict}] {id}. {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failures += usize::from(!o.passed);
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
