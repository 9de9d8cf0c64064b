//! Loss terms. Every component is a minimization loss: reconstruction and
//! prediction terms are negative log-likelihoods, KL terms are non-negative,
//! and per-row values are averaged over the batch.
//!
//! The graph builders ([`total_loss_vars`]) train the model; the tensor
//! functions ([`total_loss`] and friends) evaluate the same quantities
//! directly and serve as their reference.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Graph, Var};
use crate::error::{Error, Result};
use crate::data::PairBatch;
use crate::model::{BatchVars, PairOutputs, PairVars};
use crate::probdist::{
    bernoulli_nll_rows, gaussian_nll_rows, kl_to_standard_prior, kl_to_standard_prior_rows,
    kl_univariate, symmetrized_kl, symmetrized_kl_rows, DiagGaussian,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−d)`
    #[default]
    Gaussian,
    /// `1 / (1 + d)`
    StudentT,
}

impl Kernel {
    fn eval(self, d: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-d).exp(),
            Kernel::StudentT => 1.0 / (1.0 + d),
        }
    }

    fn apply(self, g: &Graph, d: Var) -> Var {
        match self {
            Kernel::Gaussian => g.exp(g.neg(d)),
            Kernel::StudentT => g.recip(g.add_scalar(d, 1.0)),
        }
    }
}

/// Similarity in `(0, 1]` of a divergence `d ≥ 0`.
pub fn kernel_similarity(d: f64, kernel: Kernel) -> Result<f64> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::InvalidArgument(format!("kernel input must be a non-negative divergence, got {d}")));
    }
    Ok(kernel.eval(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel: Kernel,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Batch-mean loss components. Reconstruction, prediction and KL fields
/// average the original and counterfactual members, so
/// `total = recon_x + recon_s + pred_y + β(kld_x + kld_s) + α(dc_positive + dc_negative) + γ·sr`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_x: f64,
    pub recon_s: f64,
    pub pred_y: f64,
    pub kld_x: f64,
    pub kld_s: f64,
    pub dc_positive: f64,
    pub dc_negative: f64,
    pub sr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(&self, w: &LossWeights) -> f64 {
        self.recon_x
            + self.recon_s
            + self.pred_y
            + w.beta * (self.kld_x + self.kld_s)
            + w.alpha * (self.dc_positive + self.dc_negative)
            + w.gamma * self.sr
    }

    pub fn components(&self) -> [(&'static str, f64); 9] {
        [
            ("recon_x", self.recon_x),
            ("recon_s", self.recon_s),
            ("pred_y", self.pred_y),
            ("kld_x", self.kld_x),
            ("kld_s", self.kld_s),
            ("dc_positive", self.dc_positive),
            ("dc_negative", self.dc_negative),
            ("sr", self.sr),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.components().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }

    pub(crate) fn accumulate(&mut self, other: &Self, weight: f64) {
        self.recon_x += weight * other.recon_x;
        self.recon_s += weight * other.recon_s;
        self.pred_y += weight * other.pred_y;
        self.kld_x += weight * other.kld_x;
        self.kld_s += weight * other.kld_s;
        self.dc_positive += weight * other.dc_positive;
        self.dc_negative += weight * other.dc_negative;
        self.sr += weight * other.sr;
        self.total += weight * other.total;
    }
}

// ---------------------------------------------------------------- tensors

/// Per-row reconstruction NLL of `target` under decoder output `out`: a
/// Bernoulli on logits where `bernoulli[j]`, else a unit Gaussian.
pub fn x_nll_per_row(out: &Tensor, target: &Tensor, bernoulli: &[bool]) -> Result<Vec<f64>> {
    out.expect_same_shape(target, "reconstruction")?;
    if bernoulli.len() != out.cols() {
        return Err(Error::dim("likelihood mask", out.cols(), bernoulli.len()));
    }
    Ok((0..out.rows())
        .map(|i| {
            out.row(i)
                .iter()
                .zip(target.row(i))
                .zip(bernoulli)
                .map(|((&o, &t), &b)| if b { softplus(o) - t * o } else { 0.5 * (o - t).powi(2) })
                .sum()
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Batch-mean `KL(q ‖ N(0, I))` of a batched posterior.
fn mean_prior_kl(q: &DiagGaussian) -> f64 {
    let n = q.mu().rows();
    mean(&(0..n).map(|i| kl_to_standard_prior(&q.row(i))).collect::<Vec<_>>())
}

/// One ELBO member's components, batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub recon_x: f64,
    pub recon_s: f64,
    pub pred_y: f64,
    pub kld_x: f64,
    pub kld_s: f64,
}

impl ElboTerms {
    /// `recon_x + recon_s + pred_y + β(kld_x + kld_s)`.
    pub fn loss(&self, beta: f64) -> f64 {
        self.recon_x + self.recon_s + self.pred_y + beta * (self.kld_x + self.kld_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Member {
    Original,
    Counterfactual,
}

/// Negated β-ELBO components for one member of the pair.
pub fn elbo_loss(out: &PairOutputs, batch: &PairBatch, member: Member, x_bernoulli: &[bool]) -> Result<ElboTerms> {
    let s_mask = vec![true; batch.s.cols()];
    let (rx, rs, x, s, qx, qs, logit) = match member {
        Member::Original => (&out.recon_x, &out.recon_s, &batch.x, &batch.s, &out.qzx, &out.qzs, &out.y_logit),
        Member::Counterfactual => (
            &out.recon_x_cf,
            &out.recon_s_cf,
            &batch.x_cf,
            &batch.s_cf,
            &out.qzx_cf,
            &out.qzs_cf,
            &out.y_logit_cf,
        ),
    };
    Ok(ElboTerms {
        recon_x: mean(&x_nll_per_row(rx, x, x_bernoulli)?),
        recon_s: mean(&x_nll_per_row(rs, s, &s_mask)?),
        pred_y: mean(&x_nll_per_row(logit, &batch.y, &vec![true; batch.y.cols()])?),
        kld_x: mean_prior_kl(qx),
        kld_s: mean_prior_kl(qs),
    })
}

/// `(positive, negative)` parts of the distributional contrastive loss,
/// batch means: `K̄L(z_x, z_x̃)` and `Σ k(K̄L)` over the pairs
/// `(z_s, z_s̃)`, `(z_x, z_s)`, `(z_x̃, z_s̃)`.
pub fn distributional_contrastive_parts(
    qzx: &DiagGaussian,
    qzx_cf: &DiagGaussian,
    qzs: &DiagGaussian,
    qzs_cf: &DiagGaussian,
    kernel: Kernel,
) -> Result<(f64, f64)> {
    let shape = qzx.mu().shape();
    for q in [qzx_cf, qzs, qzs_cf] {
        if q.mu().shape() != shape {
            return Err(Error::dim("distributional contrastive posteriors", format!("{shape:?}"), format!("{:?}", q.mu().shape())));
        }
    }
    let rows = if qzx.mu().rank() == 1 { 1 } else { qzx.mu().rows() };
    let pick = |q: &DiagGaussian, i: usize| if qzx.mu().rank() == 1 { q.clone() } else { q.row(i) };
    let (mut pos, mut neg) = (0.0, 0.0);
    for i in 0..rows {
        let (x, xc, s, sc) = (pick(qzx, i), pick(qzx_cf, i), pick(qzs, i), pick(qzs_cf, i));
        pos += symmetrized_kl(&x, &xc)?;
        for (a, b) in [(&s, &sc), (&x, &s), (&xc, &sc)] {
            neg += kernel_similarity(symmetrized_kl(a, b)?, kernel)?;
        }
    }
    Ok((pos / rows as f64, neg / rows as f64))
}

pub fn distributional_contrastive(
    qzx: &DiagGaussian,
    qzx_cf: &DiagGaussian,
    qzs: &DiagGaussian,
    qzs_cf: &DiagGaussian,
    kernel: Kernel,
) -> Result<f64> {
    let (p, n) = distributional_contrastive_parts(qzx, qzx_cf, qzs, qzs_cf, kernel)?;
    Ok(p + n)
}

/// `½[NLL(x, s | z_x̃, z_s) + NLL(x̃, s̃ | z_x, z_s̃)]`, batch mean.
pub fn swap_recon_loss(out: &PairOutputs, batch: &PairBatch, x_bernoulli: &[bool]) -> Result<f64> {
    let s_mask = vec![true; batch.s.cols()];
    let a = mean(&x_nll_per_row(&out.swap_x, &batch.x, x_bernoulli)?) + mean(&x_nll_per_row(&out.swap_s, &batch.s, &s_mask)?);
    let b = mean(&x_nll_per_row(&out.swap_x_cf, &batch.x_cf, x_bernoulli)?)
        + mean(&x_nll_per_row(&out.swap_s_cf, &batch.s_cf, &s_mask)?);
    Ok(0.5 * (a + b))
}

/// `½(ELBO + ELBÕ) + α·L_DC + γ·L_SR`, every term a minimization loss.
pub fn total_loss(out: &PairOutputs, batch: &PairBatch, w: &LossWeights, x_bernoulli: &[bool]) -> Result<LossBreakdown> {
    w.validate()?;
    let a = elbo_loss(out, batch, Member::Original, x_bernoulli)?;
    let b = elbo_loss(out, batch, Member::Counterfactual, x_bernoulli)?;
    let (dc_positive, dc_negative) = distributional_contrastive_parts(&out.qzx, &out.qzx_cf, &out.qzs, &out.qzs_cf, w.kernel)?;
    let sr = swap_recon_loss(out, batch, x_bernoulli)?;
    let total = 0.5 * (a.loss(w.beta) + b.loss(w.beta)) + w.alpha * (dc_positive + dc_negative) + w.gamma * sr;
    Ok(LossBreakdown {
        recon_x: 0.5 * (a.recon_x + b.recon_x),
        recon_s: 0.5 * (a.recon_s + b.recon_s),
        pred_y: 0.5 * (a.pred_y + b.pred_y),
        kld_x: 0.5 * (a.kld_x + b.kld_x),
        kld_s: 0.5 * (a.kld_s + b.kld_s),
        dc_positive,
        dc_negative,
        sr,
        total,
    })
}

// ------------------------------------------------------------------ graph

/// Graph counterpart of [`x_nll_per_row`], `[batch]`.
pub fn x_nll_rows(g: &Graph, out: Var, target: Var, bernoulli: &[bool]) -> Var {
    if bernoulli.iter().all(|&b| b) {
        return bernoulli_nll_rows(g, out, target);
    }
    if bernoulli.iter().all(|&b| !b) {
        return gaussian_nll_rows(g, out, target);
    }
    let n = g.value(out).rows();
    let d = bernoulli.len();
    let mask: Vec<f64> = (0..n).flat_map(|_| bernoulli.iter().map(|&b| b as u8 as f64)).collect();
    let m = g.constant(Tensor::matrix(n, d, mask.clone()).expect("sized"));
    let inv = g.constant(Tensor::matrix(n, d, mask.iter().map(|v| 1.0 - v).collect()).expect("sized"));
    let bern = g.sub(g.softplus(out), g.mul(target, out));
    let gauss = g.scale(g.square(g.sub(out, target)), 0.5);
    g.sum_cols(g.add(g.mul(bern, m), g.mul(gauss, inv)))
}

/// Scalar vars for every [`LossBreakdown`] field.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub recon_x: Var,
    pub recon_s: Var,
    pub pred_y: Var,
    pub kld_x: Var,
    pub kld_s: Var,
    pub dc_positive: Var,
    pub dc_negative: Var,
    pub sr: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossBreakdown {
        let v = |x: Var| g.scalar_value(x);
        LossBreakdown {
            recon_x: v(self.recon_x),
            recon_s: v(self.recon_s),
            pred_y: v(self.pred_y),
            kld_x: v(self.kld_x),
            kld_s: v(self.kld_s),
            dc_positive: v(self.dc_positive),
            dc_negative: v(self.dc_negative),
            sr: v(self.sr),
            total: v(self.total),
        }
    }
}

/// Builds the full training loss on `g`.
pub fn total_loss_vars(g: &Graph, out: &PairVars, batch: &BatchVars, w: &LossWeights, x_bernoulli: &[bool]) -> LossVars {
    let avg = |a: Var, b: Var| g.scale(g.add(g.mean(a), g.mean(b)), 0.5);
    let s_mask = [true];
    let recon_x = avg(x_nll_rows(g, out.recon_x, batch.x, x_bernoulli), x_nll_rows(g, out.recon_x_cf, batch.x_cf, x_bernoulli));
    let recon_s = avg(x_nll_rows(g, out.recon_s, batch.s, &s_mask), x_nll_rows(g, out.recon_s_cf, batch.s_cf, &s_mask));
    let pred_y = avg(bernoulli_nll_rows(g, out.y_logit, batch.y), bernoulli_nll_rows(g, out.y_logit_cf, batch.y));
    let kld_x = avg(kl_to_standard_prior_rows(g, out.qzx), kl_to_standard_prior_rows(g, out.qzx_cf));
    let kld_s = avg(kl_to_standard_prior_rows(g, out.qzs), kl_to_standard_prior_rows(g, out.qzs_cf));

    let dc_positive = g.mean(symmetrized_kl_rows(g, out.qzx, out.qzx_cf));
    let negs = [(out.qzs, out.qzs_cf), (out.qzx, out.qzs), (out.qzx_cf, out.qzs_cf)]
        .map(|(a, b)| w.kernel.apply(g, symmetrized_kl_rows(g, a, b)));
    let dc_negative = g.mean(g.add(g.add(negs[0], negs[1]), negs[2]));

    let swap_a = g.add(x_nll_rows(g, out.swap_x, batch.x, x_bernoulli), x_nll_rows(g, out.swap_s, batch.s, &s_mask));
    let swap_b = g.add(x_nll_rows(g, out.swap_x_cf, batch.x_cf, x_bernoulli), x_nll_rows(g, out.swap_s_cf, batch.s_cf, &s_mask));
    let sr = avg(swap_a, swap_b);

    let mut total = g.add(g.add(recon_x, recon_s), pred_y);
    if w.beta != 0.0 {
        total = g.add(total, g.scale(g.add(kld_x, kld_s), w.beta));
    }
    if w.alpha != 0.0 {
        total = g.add(total, g.scale(g.add(dc_positive, dc_negative), w.alpha));
    }
    if w.gamma != 0.0 {
        total = g.add(total, g.scale(sr, w.gamma));
    }
    LossVars {
        recon_x,
        recon_s,
        pred_y,
        kld_x,
        kld_s,
        dc_positive,
        dc_negative,
        sr,
        total,
    }
}

// ----------------------------------------------------------- propositions

/// Evaluation grid: directed, unclamped `KL(N(μ₁, σ₁²) ‖ N(μ₂, σ₂²))` at every
/// combination of mean gap `μ₁ − μ₂`, ratio `σ₂/σ₁` and base `σ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionGrid {
    pub mean_gaps: Vec<f64>,
    pub sigma_ratios: Vec<f64>,
    pub base_sigmas: Vec<f64>,
}

impl Default for PropositionGrid {
    /// 101 mean gaps in `[0, 10]` × 101 log-spaced ratios in `[10⁻², 10²]`
    /// (exactly 1 at the centre) × base σ ∈ {0.5, 1, 2}: 30 603 points.
    fn default() -> Self {
        Self {
            mean_gaps: (0..=100).map(|k| k as f64 / 10.0).collect(),
            sigma_ratios: (0..=100).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 100.0)).collect(),
            base_sigmas: vec![0.5, 1.0, 2.0],
        }
    }
}

impl PropositionGrid {
    pub fn len(&self) -> usize {
        self.mean_gaps.len() * self.sigma_ratios.len() * self.base_sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    pub points: usize,
    pub min_gap: f64,
    pub max_gap: f64,
}

impl RegimeStats {
    fn empty() -> Self {
        Self {
            points: 0,
            min_gap: f64::INFINITY,
            max_gap: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, gap: f64) {
        self.points += 1;
        self.min_gap = self.min_gap.min(gap);
        self.max_gap = self.max_gap.max(gap);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub points: usize,
    /// Gap `(1+D)⁻¹ − e^{−D}` over the whole grid.
    pub all: RegimeStats,
    /// Equal variances, any mean gap.
    pub equal_variance: RegimeStats,
    /// Equal means, any ratio.
    pub equal_means: RegimeStats,
    /// Ratio `σ₂/σ₁` at which the equal-mean minimum is attained.
    pub equal_means_argmin_ratio: f64,
    /// Equal means with `σ₂/σ₁ ≥ 100`.
    pub large_ratio: RegimeStats,
    /// Largest deviation between the generic KL and the univariate closed
    /// forms `t²/(2σ²)` and `log t + 1/(2t²) − ½`.
    pub closed_form_max_abs_err: f64,
    pub equal_variance_holds: bool,
    pub equal_means_minimum_is_zero: bool,
    pub large_ratio_positive: bool,
    pub passed: bool,
}

pub fn kernel_gap(d: f64) -> f64 {
    1.0 / (1.0 + d) - (-d).exp()
}

pub fn verify_propositions(grid: &PropositionGrid) -> Result<PropositionReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("proposition grid is empty".into()));
    }
    let mut all = RegimeStats::empty();
    let mut equal_variance = RegimeStats::empty();
    let mut equal_means = RegimeStats::empty();
    let mut large_ratio = RegimeStats::empty();
    let mut argmin = (f64::INFINITY, f64::NAN);
    let mut closed_err: f64 = 0.0;
    for &sigma in &grid.base_sigmas {
        for &ratio in &grid.sigma_ratios {
            for &t in &grid.mean_gaps {
                let d = kl_univariate(t, sigma, 0.0, sigma * ratio);
                let gap = kernel_gap(d);
                all.push(gap);
                if ratio == 1.0 {
                    equal_variance.push(gap);
                    closed_err = closed_err.max((d - t * t / (2.0 * sigma * sigma)).abs());
                }
                if t == 0.0 {
                    equal_means.push(gap);
                    closed_err = closed_err.max((d - (ratio.ln() + 1.0 / (2.0 * ratio * ratio) - 0.5)).abs());
                    if gap < argmin.0 {
                        argmin = (gap, ratio);
                    }
                    if ratio >= 100.0 * (1.0 - 1e-12) {
                        large_ratio.push(gap);
                    }
                }
            }
        }
    }
    let equal_variance_holds = equal_variance.points > 0 && equal_variance.min_gap >= -1e-12;
    let equal_means_minimum_is_zero = equal_means.points > 0 && equal_means.min_gap.abs() <= 1e-9 && (argmin.1 - 1.0).abs() < 1e-9;
    let large_ratio_positive = large_ratio.points > 0 && large_ratio.min_gap > 0.0;
    Ok(PropositionReport {
        points: all.points,
        all,
        equal_variance,
        equal_means,
        equal_means_argmin_ratio: argmin.1,
        large_ratio,
        closed_form_max_abs_err: closed_err,
        equal_variance_holds,
        equal_means_minimum_is_zero,
        large_ratio_positive,
        passed: equal_variance_holds && equal_means_minimum_is_zero && large_ratio_positive,
    })
}
