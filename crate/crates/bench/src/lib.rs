//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use farcon::{FarconModel, ModelDims, PairBatch, PairNoise, Tensor};

pub struct Fixture {
    pub model: FarconModel,
    pub batch: PairBatch,
    pub noise: PairNoise,
    pub mask: Vec<bool>,
}

/// Random model and paired batch with Adult-like widths.
pub fn fixture(n: usize, x_dim: usize, zdim: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        x_dim,
        s_dim: 1,
        y_dim: 1,
        zx_dim: zdim,
        zs_dim: zdim,
        hidden: 64,
    };
    let mask: Vec<bool> = (0..x_dim).map(|j| j >= 6).collect();
    let model = FarconModel::new(dims, mask.clone(), &mut rng).unwrap();
    let mut matrix = |c: usize, binary: &dyn Fn(usize) -> bool| {
        let data = (0..n * c)
            .map(|k| if binary(k % c) { rng.random_range(0..2) as f64 } else { rng.random_range(-2.0..2.0) })
            .collect();
        Tensor::matrix(n, c, data).unwrap()
    };
    let x = matrix(x_dim, &|j| mask[j]);
    let x_cf = matrix(x_dim, &|j| mask[j]);
    let s = matrix(1, &|_| true);
    let y = matrix(1, &|_| true);
    let s_cf = Tensor::matrix(n, 1, s.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let batch = PairBatch::new(x, s, y, x_cf, s_cf).unwrap();
    let noise = PairNoise::sample(n, &dims, &mut rng);
    Fixture { model, batch, noise, mask }
}
