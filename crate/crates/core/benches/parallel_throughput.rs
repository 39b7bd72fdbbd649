//! Seed-batch throughput: work-stealing executor vs the sequential
//! fallback on the workloads the harness actually runs.
//!
//! With `--no-default-features` the parallel path compiles to the
//! sequential loop, so the comparison also documents the fallback cost.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rfs_core::embedding::{Embedding, GuidanceParams};
use rfs_core::exec::{run_indexed, run_indexed_seq};
use rfs_core::fields::{EmbedMap, GaussianMixtureField, GmPosterior, Latent, TimePoint};
use rfs_core::numerics::{RealVec, Rng};
use rfs_core::sampler::{rf_sample, MaskPolicy, SamplerConfig};
use rfs_core::theory::NOISE_STREAM;

fn bench_field() -> GaussianMixtureField {
    GaussianMixtureField::new(
        vec![RealVec::new(vec![0.0, 0.0]), RealVec::new(vec![0.5, 0.0])],
        vec![0.25, 4.0],
        vec![0.5, 0.5],
        EmbedMap::Softmax { sharpness: 2.0 },
    )
    .unwrap()
}

fn bench_config() -> SamplerConfig {
    SamplerConfig::new(
        16,
        GuidanceParams::default(),
        Embedding::one_hot(0, 2),
        Embedding::uniform(2),
        &MaskPolicy::All,
    )
    .unwrap()
}

fn run_one(
    field: &GaussianMixtureField,
    cfg: &SamplerConfig,
    objective: &GmPosterior,
    seed: u64,
) -> f64 {
    let mut rng = Rng::new(seed, NOISE_STREAM);
    let noise = Latent::new(rng.normal_vec(2));
    let traj = rf_sample(field, &noise, cfg, None).unwrap();
    use rfs_core::fields::AlignmentObjective;
    objective.value(traj.final_latent().vec(), TimePoint::new(1.0).unwrap())
}

fn seed_batch(c: &mut Criterion) {
    let field = bench_field();
    let cfg = bench_config();
    let objective = field.posterior_objective(0).unwrap();
    let mut group = c.benchmark_group("rf_sample_seed_batch");
    for &seeds in &[64usize, 512] {
        group.bench_with_input(BenchmarkId::new("sequential", seeds), &seeds, |b, &n| {
            b.iter(|| {
                run_indexed_seq(n, |i| run_one(&field, &cfg, &objective, i as u64))
                    .iter()
                    .sum::<f64>()
            })
        });
        group.bench_with_input(BenchmarkId::new("parallel", seeds), &seeds, |b, &n| {
            b.iter(|| {
                run_indexed(n, 0, |i| run_one(&field, &cfg, &objective, i as u64))
                    .iter()
                    .sum::<f64>()
            })
        });
    }
    group.finish();
}

fn normal_draws(c: &mut Criterion) {
    let mut group = c.benchmark_group("normal_draw_blocks");
    let block = 1usize << 16;
    group.bench_function(BenchmarkId::new("sequential", block), |b| {
        b.iter(|| {
            run_indexed_seq(8, |stream| {
                let mut rng = Rng::new(1, stream as u64);
                (0..block).map(|_| rng.normal()).sum::<f64>()
            })
            .iter()
            .sum::<f64>()
        })
    });
    group.bench_function(BenchmarkId::new("parallel", block), |b| {
        b.iter(|| {
            run_indexed(8, 0, |stream| {
                let mut rng = Rng::new(1, stream as u64);
                (0..block).map(|_| rng.normal()).sum::<f64>()
            })
            .iter()
            .sum::<f64>()
        })
    });
    group.finish();
}

criterion_group!(benches, seed_batch, normal_draws);
criterion_main!(benches);
