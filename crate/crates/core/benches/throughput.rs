//! Suite throughput with one worker versus every core. Build with
//! `--no-default-features` to measure the sequential fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use trackattack::attack::spark::SparkConfig;
use trackattack::harness::{run_suite, AttackSpec, ExperimentConfig, RunOptions, SuiteSpec};
use trackattack::objective::ObjectiveKind;
use trackattack::par;
use trackattack::scene::SceneConfig;

fn config() -> ExperimentConfig {
    ExperimentConfig {
        suite: SuiteSpec {
            count: 4,
            scene: SceneConfig {
                num_frames: 20,
                ..SceneConfig::default()
            },
        },
        attacks: vec![AttackSpec::spark("spark", SparkConfig::default())],
        objectives: vec![ObjectiveKind::Ua],
        ..ExperimentConfig::default()
    }
}

fn suite(c: &mut Criterion) {
    let cfg = config();
    let mut group = c.benchmark_group(if par::is_parallel() { "suite" } else { "suite_sequential_build" });
    group.sample_size(10);
    for (label, workers) in [("sequential", 1), ("parallel", 0)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &workers, |b, &w| {
            b.iter(|| {
                run_suite(
                    &cfg,
                    &RunOptions {
                        out: None,
                        workers: Some(w),
                    },
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, suite);
criterion_main!(benches);
