use serde::{Deserialize, Serialize};

use super::{Dataset, PairBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingStrategy {
    /// Nearest row with the same y and opposite s, falling back to a flip.
    #[default]
    MatchedNeighbor,
    /// Same features, sensitive attribute flipped.
    SFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    MatchedNeighbor,
    SFlip,
}

/// A dataset with one counterfactual partner per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub data: Dataset,
    pub x_cf: Tensor,
    pub s_cf: Tensor,
    /// Partner row index for matched rows.
    pub partner: Vec<Option<usize>>,
    pub source: Vec<PairSource>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> PairBatch {
        PairBatch {
            x: self.data.x.select_rows(idx),
            s: self.data.s.select_rows(idx),
            y: Tensor::matrix(idx.len(), 1, idx.iter().map(|&i| self.data.y.data()[i]).collect()).expect("sized"),
            x_cf: self.x_cf.select_rows(idx),
            s_cf: self.s_cf.select_rows(idx),
        }
    }

    /// Every row paired with itself (the unpaired β-VAE setting).
    pub fn self_paired(data: &Dataset) -> Self {
        Self {
            x_cf: data.x.clone(),
            s_cf: data.s.clone(),
            partner: (0..data.len()).map(Some).collect(),
            source: vec![PairSource::MatchedNeighbor; data.len()],
            data: data.clone(),
        }
    }
}

const QUERY_BLOCK: usize = 256;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
}

/// Index into `cands` of the nearest candidate for each query row; ties go to
/// the lowest candidate position.
fn nearest(x: &Tensor, queries: &[usize], cands: &[usize]) -> Vec<usize> {
    let q_all = x.select_rows(queries);
    let c = x.select_rows(cands);
    let c_norm: Vec<f64> = (0..cands.len()).map(|j| c.row(j).iter().map(|v| v * v).sum()).collect();
    let mut out = Vec::with_capacity(queries.len());
    for start in (0..queries.len()).step_by(QUERY_BLOCK) {
        let end = (start + QUERY_BLOCK).min(queries.len());
        let q = q_all.select_rows(&(start..end).collect::<Vec<_>>());
        let dots = q.matmul_t(&c).expect("same width");
        for i in 0..end - start {
            let qn: f64 = q.row(i).iter().map(|v| v * v).sum();
            let row = dots.row(i);
            let approx: Vec<f64> = row.iter().zip(&c_norm).map(|(d, cn)| qn + cn - 2.0 * d).collect();
            let min = approx.iter().copied().fold(f64::INFINITY, f64::min);
            // The expanded form loses precision; settle near-ties exactly.
            let slack = 1e-9 * (1.0 + qn + min.abs());
            let mut best = (f64::INFINITY, 0usize);
            for (j, &a) in approx.iter().enumerate() {
                if a <= min + slack {
                    let exact = sq_dist(q.row(i), c.row(j));
                    if exact < best.0 {
                        best = (exact, j);
                    }
                }
            }
            out.push(best.1);
        }
    }
    out
}

/// Pairs every row with a counterfactual partner sharing its label.
///
/// `MatchedNeighbor` searches rows with the same y and opposite s by
/// Euclidean distance on `x` (standardize first); strata without any
/// opposite-s row fall back to `SFlip`, where `x̃ = x` and `s̃ = 1 − s`.
/// The search is deterministic, so no seed is involved.
pub fn build_counterfactual_pairs(data: &Dataset, strategy: PairingStrategy) -> Result<PairedDataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("cannot pair an empty dataset".into()));
    }
    let n = data.len();
    let mut partner = vec![None; n];
    if strategy == PairingStrategy::MatchedNeighbor {
        for y in [0.0, 1.0] {
            for s in [0.0, 1.0] {
                let rows = |sv: f64| -> Vec<usize> {
                    (0..n).filter(|&i| data.y.data()[i] == y && data.s.data()[i] == sv).collect()
                };
                let (queries, cands) = (rows(s), rows(1.0 - s));
                if queries.is_empty() || cands.is_empty() {
                    continue;
                }
                for (q, j) in queries.iter().zip(nearest(&data.x, &queries, &cands)) {
                    partner[*q] = Some(cands[j]);
                }
            }
        }
    }
    let d = data.x_dim();
    let mut x_cf = Vec::with_capacity(n * d);
    let mut s_cf = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    for (i, p) in partner.iter().enumerate() {
        match p {
            Some(j) => {
                x_cf.extend_from_slice(data.x.row(*j));
                s_cf.push(data.s.data()[*j]);
                source.push(PairSource::MatchedNeighbor);
            }
            None => {
                x_cf.extend_from_slice(data.x.row(i));
                s_cf.push(1.0 - data.s.data()[i]);
                source.push(PairSource::SFlip);
            }
        }
    }
    let flips = source.iter().filter(|s| **s == PairSource::SFlip).count();
    if strategy == PairingStrategy::MatchedNeighbor && flips > 0 {
        log::info!("{flips} of {n} rows had no opposite-s partner and were paired by flipping s");
    }
    Ok(PairedDataset {
        data: data.clone(),
        x_cf: Tensor::matrix(n, d, x_cf)?,
        s_cf: Tensor::matrix(n, 1, s_cf)?,
        partner,
        source,
    })
}
