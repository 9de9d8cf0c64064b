use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Original row indices of each split, ascending.
    pub indices: [Vec<usize>; 3],
}

/// Disjoint, exhaustive split stratified by `(y, s)`.
///
/// Rows are shuffled inside each stratum and given the fractional rank
/// `(i + ½)/n_k`; sorting all rows by that rank interleaves strata evenly, so
/// cutting the sorted order at `round(f₀·n)` and `round((f₀+f₁)·n)` yields
/// per-split proportions that track the global ones.
pub fn split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f) || !f.is_finite()) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions must be in [0,1] and sum to 1, got {fractions:?}")));
    }
    if fractions[0] <= 0.0 {
        return Err(Error::InvalidArgument("the train fraction must be positive".into()));
    }
    let n = data.len();
    let mut strata: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        strata.entry((data.y.data()[i] as u8, data.s.data()[i] as u8)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (key, rows) in strata.iter_mut() {
        rows.shuffle(&mut rng);
        let nk = rows.len() as f64;
        for (pos, &f) in fractions.iter().enumerate() {
            if f > 0.0 && (f * nk) < 1.0 {
                log::warn!("stratum (y={}, s={}) has {} rows; split {pos} may receive none", key.0, key.1, rows.len());
            }
        }
        ranked.extend(rows.iter().enumerate().map(|(i, &r)| ((i as f64 + 0.5) / nk, r)));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cut0 = (fractions[0] * n as f64).round() as usize;
    let cut1 = (((fractions[0] + fractions[1]) * n as f64).round() as usize).clamp(cut0, n);
    let mut indices: [Vec<usize>; 3] = Default::default();
    for (k, (_, r)) in ranked.into_iter().enumerate() {
        let which = if k < cut0 {
            0
        } else if k < cut1 {
            1
        } else {
            2
        };
        indices[which].push(r);
    }
    for idx in indices.iter_mut() {
        idx.sort_unstable();
    }
    Ok(Splits {
        train: data.select(&indices[0]),
        valid: data.select(&indices[1]),
        test: data.select(&indices[2]),
        indices,
    })
}
