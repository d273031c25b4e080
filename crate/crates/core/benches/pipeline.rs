//! Criterion benches comparing parallel and sequential pipeline execution.
//!
//! With the default `parallel` feature, `sequential` pins a one-worker pool
//! and `parallel` uses the default pool; built with `--no-default-features`
//! both names run the plain-iterator fallback, which makes the two builds
//! directly comparable.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grmfilter_core::actors::SamplingParams;
use grmfilter_core::dataset::{collect_dataset, ActorBundle, OutputPaths, TaskSpec};
use grmfilter_core::filtering::{EngineHooks, RunConfig};
use grmfilter_core::par;
use grmfilter_core::rubrics::RubricSet;
use grmfilter_core::seeds;
use grmfilter_core::simenv::{
    make_task_spec, OracleGrm, ScriptedPolicy, ScriptedPolicyConfig, SimEnvProvider,
};
use grmfilter_core::trajectory::Strategy;

fn fixture(count: usize) -> (Vec<TaskSpec>, ScriptedPolicy, OracleGrm, RubricSet) {
    let specs: Vec<TaskSpec> = (0..count)
        .map(|i| make_task_spec(seeds::derive(7000, i as u64), 1))
        .collect();
    let rubrics = RubricSet::default_turn();
    let policy = ScriptedPolicy::for_specs(
        &specs,
        ScriptedPolicyConfig::new(0.6),
        SamplingParams::default(),
    )
    .expect("valid policy config");
    let judge = OracleGrm::for_specs(&specs, &rubrics).expect("sim tasks");
    (specs, policy, judge, rubrics)
}

fn run_collect(
    specs: &[TaskSpec],
    policy: &ScriptedPolicy,
    judge: &OracleGrm,
    rubrics: &RubricSet,
    cfg: &RunConfig,
    budget: usize,
) {
    let dir = tempfile::tempdir().expect("tempdir");
    let paths = OutputPaths::in_dir(dir.path());
    let bundle = ActorBundle {
        policy,
        judge,
        env_provider: &SimEnvProvider,
        rubrics,
    };
    par::with_budget(budget, || {
        collect_dataset(specs, cfg, 0, &bundle, &paths, &EngineHooks::default())
            .expect("collection succeeds");
    });
}

fn bench_collect(c: &mut Criterion) {
    let (specs, policy, judge, rubrics) = fixture(24);
    let mut group = c.benchmark_group("collect_turn_level");
    group.sample_size(10);
    for (label, budget) in [("sequential", 1usize), ("parallel", 0usize)] {
        let mut cfg = RunConfig::new(Strategy::TurnLevel, 3, None, 20);
        cfg.cap = specs.len();
        group.bench_with_input(BenchmarkId::from_parameter(label), &budget, |b, &budget| {
            b.iter(|| run_collect(&specs, &policy, &judge, &rubrics, &cfg, budget));
        });
    }
    group.finish();
}

fn bench_segment_collect(c: &mut Criterion) {
    let (specs, policy, judge, rubrics) = fixture(12);
    let mut group = c.benchmark_group("collect_segment_level");
    group.sample_size(10);
    for (label, budget) in [("sequential", 1usize), ("parallel", 0usize)] {
        let mut cfg = RunConfig::new(Strategy::SegmentLevel, 3, Some(5), 20);
        cfg.cap = specs.len();
        group.bench_with_input(BenchmarkId::from_parameter(label), &budget, |b, &budget| {
            b.iter(|| run_collect(&specs, &policy, &judge, &rubrics, &cfg, budget));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_collect, bench_segment_collect);
criterion_main!(benches);
