//! One worker against the default pool on the data-parallel hot spots.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plc_core::datagen::{make_gaussian_mixture, MixtureSpec};
use plc_core::harness::{run_pipeline, RunConfig};
use plc_core::model::{Architecture, SoftmaxClassifier, TrainConfig};
use plc_core::noise::{calibrate_noise_level, PmdNoiseType};
use plc_core::par;

/// Runs `f` on a one-worker pool (`Some`) or the default pool (`None`).
struct Pool(Option<rayon::ThreadPool>);

impl Pool {
    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.0 {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }
}

fn pools() -> Vec<(&'static str, Pool)> {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    vec![
        ("one_thread", Pool(Some(single))),
        ("default_pool", Pool(None)),
    ]
}

fn bench(c: &mut Criterion) {
    let (train, _, oracle) =
        make_gaussian_mixture(MixtureSpec::default_blobs(), 20_000, 1, 1).unwrap();
    let model =
        SoftmaxClassifier::new(Architecture::default_mlp(2, 2), TrainConfig::default(), 2).unwrap();
    let small_run = RunConfig::parse(
        "data.n_train = 1000\ndata.n_test = 500\nschedule.rounds = 10\nschedule.warmup = 3",
    )
    .unwrap();

    let mut group = c.benchmark_group("parallel");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("posteriors", name), |b| {
            b.iter(|| pool.run(|| oracle.posteriors(&train.features).unwrap()))
        });
        group.bench_function(BenchmarkId::new("predict_proba", name), |b| {
            b.iter(|| pool.run(|| model.predict_proba(&train.features).unwrap()))
        });
        group.bench_function(BenchmarkId::new("calibrate", name), |b| {
            b.iter(|| {
                pool.run(|| {
                    calibrate_noise_level(&oracle, &train, PmdNoiseType::TypeI, 0.35).unwrap()
                })
            })
        });
        group.bench_function(BenchmarkId::new("four_seed_runs", name), |b| {
            b.iter(|| {
                pool.run(|| {
                    par::run_jobs((0..4u64).collect(), |seed| {
                        let mut config = small_run.clone();
                        config.seed = seed;
                        run_pipeline(&config, true)
                            .unwrap()
                            .report
                            .summary
                            .final_purity
                    })
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
