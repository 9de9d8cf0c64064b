use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Flips `s` on exactly `round(ε·n)` rows drawn uniformly without
/// replacement.
pub fn corrupt_sensitive(data: &Dataset, epsilon: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("noise rate must lie in [0, 1], got {epsilon}")));
    }
    let n = data.len();
    let k = ((epsilon * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    let s = out.s.data_mut();
    for i in rand::seq::index::sample(&mut rng, n, k) {
        s[i] = 1.0 - s[i];
    }
    Ok(out)
}
