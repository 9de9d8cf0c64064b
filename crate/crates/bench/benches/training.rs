use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use farcon::data::{build_counterfactual_pairs, SyntheticSpec};
use farcon::model::BatchVars;
use farcon::objectives::{total_loss_vars, verify_propositions, PropositionGrid};
use farcon::probdist::kl_diag_gaussian;
use farcon::{loss_and_grads, DiagGaussian, Kernel, LossWeights, PairingStrategy, Tensor};
use farcon_bench::fixture;

fn loss_and_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradient");
    for kernel in [Kernel::Gaussian, Kernel::StudentT] {
        let f = fixture(64, 100, 15, 1);
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.2,
            gamma: 1.0,
            kernel,
        };
        group.bench_function(BenchmarkId::from_parameter(format!("{kernel:?}")), |b| {
            b.iter(|| {
                loss_and_grads(&f.model.params(), |g, vars| {
                    let bound = f.model.bind_from(vars);
                    let bv = BatchVars::new(g, &f.batch);
                    let out = bound.forward_pair(g, &bv, &f.noise.constants(g))?;
                    Ok(total_loss_vars(g, &out, &bv, &w, &f.mask).total)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn kl(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = || Tensor::vector((0..15).map(|_| rng.random_range(-1.0..1.0)).collect());
    let p = DiagGaussian::new(draw(), draw()).unwrap();
    let q = DiagGaussian::new(draw(), draw()).unwrap();
    c.bench_function("kl_diag_gaussian_15d", |b| b.iter(|| kl_diag_gaussian(&p, &q).unwrap()));
}

fn pairing(c: &mut Criterion) {
    let spec = SyntheticSpec {
        n_train: 4000,
        ..SyntheticSpec::default()
    };
    let (train, _) = spec.generate().unwrap();
    c.bench_function("matched_neighbor_pairs_4000", |b| {
        b.iter(|| build_counterfactual_pairs(&train, PairingStrategy::MatchedNeighbor).unwrap())
    });
}

fn propositions(c: &mut Criterion) {
    let grid = PropositionGrid::default();
    c.bench_function("verify_propositions_default_grid", |b| b.iter(|| verify_propositions(&grid).unwrap()));
}

criterion_group!(benches, loss_and_gradient, kl, pairing, propositions);
criterion_main!(benches);
