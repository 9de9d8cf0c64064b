//! Diagonal Gaussians and the likelihood/divergence terms built on them.
//!
//! Every quantity exists twice: as a plain function on [`Tensor`]s (used for
//! evaluation and as a reference in tests) and as a graph builder on
//! [`GaussianVars`] (used for training). Graph builders return one value per
//! batch row; reductions over the batch happen in `objectives`.

use crate::autodiff::{softplus, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Log-variances are clamped to this range at construction.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// A diagonal Gaussian `N(mu, diag(exp(log_var)))`.
///
/// The tensors may be a single `[dim]` vector or a `[batch×dim]` stack of
/// independent posteriors; the KL helpers sum over every element.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mu: Tensor,
    log_var: Tensor,
}

impl DiagGaussian {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        mu.expect_same_shape(&log_var, "DiagGaussian mu/log_var")?;
        Ok(Self {
            mu,
            log_var: log_var.map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)),
        })
    }

    pub fn standard(shape: &[usize]) -> Self {
        Self {
            mu: Tensor::zeros(shape),
            log_var: Tensor::zeros(shape),
        }
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn log_var(&self) -> &Tensor {
        &self.log_var
    }

    pub fn variance(&self) -> Tensor {
        self.log_var.map(f64::exp)
    }

    /// Size of the last axis.
    pub fn dim(&self) -> usize {
        self.mu.shape().last().copied().unwrap_or(1)
    }

    /// Selects one row of a batched posterior as a `[dim]` Gaussian.
    pub fn row(&self, i: usize) -> Self {
        Self {
            mu: Tensor::vector(self.mu.row(i).to_vec()),
            log_var: Tensor::vector(self.log_var.row(i).to_vec()),
        }
    }

    /// `log N(x; mu, diag σ²)` summed over all elements.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.837_877_066_409_345_3;
        self.mu
            .data()
            .iter()
            .zip(self.log_var.data())
            .zip(x)
            .map(|((&m, &lv), &xi)| -0.5 * (LN_2PI + lv + (xi - m).powi(2) / lv.exp()))
            .sum()
    }
}

/// The standard normal prior `N(0, I_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandardPrior {
    pub dim: usize,
}

impl StandardPrior {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("prior dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn as_gaussian(&self) -> DiagGaussian {
        DiagGaussian::standard(&[self.dim])
    }
}

/// Closed-form `KL(p ‖ q)` between diagonal Gaussians, summed over dimensions:
/// `Σ ½[log σ²_q − log σ²_p + (σ²_p + (μ_p − μ_q)²)/σ²_q − 1]`.
pub fn kl_diag_gaussian(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    p.mu.expect_same_shape(&q.mu, "kl_diag_gaussian")?;
    Ok(kl_terms(p, q).sum())
}

/// Per-element KL terms; `kl_diag_gaussian` is their sum.
pub fn kl_terms(p: &DiagGaussian, q: &DiagGaussian) -> Tensor {
    let data = p
        .mu
        .data()
        .iter()
        .zip(p.log_var.data())
        .zip(q.mu.data().iter().zip(q.log_var.data()))
        .map(|((&mp, &lp), (&mq, &lq))| 0.5 * (lq - lp + (lp.exp() + (mp - mq).powi(2)) / lq.exp() - 1.0))
        .collect();
    Tensor::new(p.mu.shape().to_vec(), data).expect("same shape as mu")
}

/// Unclamped `KL(N(μ₁, σ₁²) ‖ N(μ₂, σ₂²))` for univariate Gaussians given by
/// standard deviations.
pub fn kl_univariate(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    (sigma2 / sigma1).ln() + (sigma1 * sigma1 + (mu1 - mu2).powi(2)) / (2.0 * sigma2 * sigma2) - 0.5
}

/// `(KL(p‖q) + KL(q‖p)) / 2`.
pub fn symmetrized_kl(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    Ok(0.5 * (kl_diag_gaussian(p, q)? + kl_diag_gaussian(q, p)?))
}

/// `KL(p ‖ N(0, I)) = Σ ½[σ² + μ² − 1 − log σ²]`.
pub fn kl_to_standard_prior(p: &DiagGaussian) -> f64 {
    p.mu
        .data()
        .iter()
        .zip(p.log_var.data())
        .map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

/// `mu + exp(½·log_var) ⊙ noise`.
pub fn reparameterize(p: &DiagGaussian, noise: &Tensor) -> Result<Tensor> {
    let std = p.log_var.map(|lv| (0.5 * lv).exp());
    p.mu.add(&std.mul(noise)?)
}

/// Bernoulli negative log-likelihood from logits, summed over elements:
/// `Σ softplus(l) − t·l`.
pub fn bernoulli_nll(logits: &Tensor, target: &Tensor) -> Result<f64> {
    logits.expect_same_shape(target, "bernoulli_nll")?;
    if let Some(bad) = target.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidArgument(format!("bernoulli target must be 0 or 1, got {bad}")));
    }
    Ok(logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&l, &t)| softplus(l) - t * l)
        .sum())
}

/// Unit-variance Gaussian negative log-likelihood without constants:
/// `½‖mean − target‖²`.
pub fn gaussian_nll(mean: &Tensor, target: &Tensor) -> Result<f64> {
    mean.expect_same_shape(target, "gaussian_nll")?;
    Ok(0.5
        * mean
            .data()
            .iter()
            .zip(target.data())
            .map(|(&m, &t)| (m - t).powi(2))
            .sum::<f64>())
}

/// Batched posterior parameters on a graph, each `[batch×dim]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_var: Var,
}

impl GaussianVars {
    /// Splits a head output `[batch×2d]` into `(mu, log_var)` and clamps the
    /// log-variance.
    pub fn from_head(g: &Graph, head: Var, dim: usize) -> Self {
        let mu = g.slice_cols(head, 0, dim);
        let raw = g.slice_cols(head, dim, 2 * dim);
        Self {
            mu,
            log_var: g.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX),
        }
    }

    pub fn to_gaussian(self, g: &Graph) -> DiagGaussian {
        DiagGaussian {
            mu: g.value(self.mu).clone(),
            log_var: g.value(self.log_var).clone(),
        }
    }
}

/// Per-row `KL(p ‖ q)`, `[batch]`.
pub fn kl_rows(g: &Graph, p: GaussianVars, q: GaussianVars) -> Var {
    let diff = g.sub(p.mu, q.mu);
    let num = g.add(g.exp(p.log_var), g.square(diff));
    let ratio = g.mul(num, g.exp(g.neg(q.log_var)));
    let terms = g.add(g.sub(q.log_var, p.log_var), g.add_scalar(ratio, -1.0));
    g.scale(g.sum_cols(terms), 0.5)
}

/// Per-row symmetrized KL, `[batch]`.
pub fn symmetrized_kl_rows(g: &Graph, p: GaussianVars, q: GaussianVars) -> Var {
    g.scale(g.add(kl_rows(g, p, q), kl_rows(g, q, p)), 0.5)
}

/// Per-row `KL(p ‖ N(0, I))`, `[batch]`.
pub fn kl_to_standard_prior_rows(g: &Graph, p: GaussianVars) -> Var {
    let terms = g.sub(g.add(g.exp(p.log_var), g.square(p.mu)), g.add_scalar(p.log_var, 1.0));
    g.scale(g.sum_cols(terms), 0.5)
}

pub fn reparameterize_var(g: &Graph, p: GaussianVars, noise: Var) -> Var {
    let std = g.exp(g.scale(p.log_var, 0.5));
    g.add(p.mu, g.mul(std, noise))
}

/// Per-row Bernoulli NLL from logits, `[batch]`.
pub fn bernoulli_nll_rows(g: &Graph, logits: Var, target: Var) -> Var {
    g.sum_cols(g.sub(g.softplus(logits), g.mul(target, logits)))
}

/// Per-row `½‖mean − target‖²`, `[batch]`.
pub fn gaussian_nll_rows(g: &Graph, mean: Var, target: Var) -> Var {
    g.scale(g.sum_cols(g.square(g.sub(mean, target))), 0.5)
}
