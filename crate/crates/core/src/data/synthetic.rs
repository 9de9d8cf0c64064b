use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Feature, FeatureKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two-block tabular data with a controllable label/attribute correlation.
///
/// The clean label `y*` is a fair coin. The core block is
/// `(2y* − 1)·core_shift + N(0, I)` in every dimension, so its Bayes accuracy
/// is `Φ(core_shift·√core_dim)`. Training labels are `y*` with symmetric
/// noise `label_noise`; test labels are clean. `s` agrees with the observed
/// label with probability `corr_train` (train) or `corr_test` (test), and the
/// spurious block is exactly `(2s − 1)·spurious_scale`. A third draw, the
/// probe set, has clean labels and `s` independent of `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub n_probe: usize,
    pub core_dim: usize,
    pub core_shift: f64,
    pub spurious_dim: usize,
    pub spurious_scale: f64,
    pub label_noise: f64,
    pub corr_train: f64,
    pub corr_test: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_test: 2000,
            n_probe: 2000,
            core_dim: 4,
            core_shift: 1.0,
            spurious_dim: 2,
            spurious_scale: 1.0,
            label_noise: 0.2,
            corr_train: 0.9,
            corr_test: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let probs = [("label_noise", self.label_noise), ("corr_train", self.corr_train), ("corr_test", self.corr_test)];
        if let Some((name, v)) = probs.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
        }
        if self.n_train < 100 {
            return Err(Error::InvalidArgument(format!("synthetic train size must be at least 100, got {}", self.n_train)));
        }
        if self.core_dim == 0 {
            return Err(Error::InvalidArgument("core_dim must be positive".into()));
        }
        Ok(())
    }

    fn features(&self) -> Vec<Feature> {
        let block = |prefix: &'static str, d: usize| {
            (0..d).map(move |j| Feature {
                name: format!("{prefix}_{j}"),
                source: prefix.to_string(),
                kind: FeatureKind::Continuous,
            })
        };
        block("core", self.core_dim).chain(block("spurious", self.spurious_dim)).collect()
    }

    fn draw<R: Rng>(&self, n: usize, corr: f64, noise: f64, rng: &mut R) -> Result<Dataset> {
        let d = self.core_dim + self.spurious_dim;
        let mut x = Vec::with_capacity(n * d);
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let clean = rng.random_bool(0.5);
            let sign = if clean { 1.0 } else { -1.0 };
            for _ in 0..self.core_dim {
                x.push(sign * self.core_shift + rng.sample::<f64, _>(StandardNormal));
            }
            let observed = clean ^ rng.random_bool(noise);
            let sv = if rng.random_bool(corr) { observed } else { !observed };
            let ssign = if sv { 1.0 } else { -1.0 };
            x.extend(std::iter::repeat_n(ssign * self.spurious_scale, self.spurious_dim));
            s.push(sv as u8 as f64);
            y.push(observed as u8 as f64);
        }
        Dataset::new(Tensor::matrix(n, d, x)?, Tensor::matrix(n, 1, s)?, Tensor::vector(y), self.features())
    }

    /// `(train, test)`, deterministic per `seed`.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.draw(self.n_train, self.corr_train, self.label_noise, &mut rng)?;
        let test = self.draw(self.n_test, self.corr_test, 0.0, &mut rng)?;
        Ok((train, test))
    }

    /// `n_probe` clean rows with `s` independent of `y`, drawn from a
    /// separate stream so it never perturbs [`Self::generate`].
    pub fn probe_set(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        self.draw(self.n_probe, 0.5, 0.0, &mut rng)
    }
}

/// `n` training and `n` test rows with the default block layout.
pub fn make_synthetic_spurious(n: usize, corr_train: f64, corr_test: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    SyntheticSpec {
        n_train: n,
        n_test: n,
        corr_train,
        corr_test,
        seed,
        ..SyntheticSpec::default()
    }
    .generate()
}
