use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plandec::decode::beam_search;
use plandec::harness::synthetic::SUITE_MAX_LEN;
use plandec::model::TokenModel;
use plandec::{run_pgtd, GenerationBudget, SearchConfig};
use plandec_bench::Workload;

fn pgtd(c: &mut Criterion) {
    let w = Workload::synthetic();
    let problem = &w.problems[0];
    let reward = w.reward(problem);
    let mut group = c.benchmark_group("pgtd");
    for (tree, seq) in [(false, false), (true, true)] {
        let config = SearchConfig {
            max_rollouts: 64,
            max_len: SUITE_MAX_LEN,
            tree_cache: tree,
            seq_cache: seq,
            ..SearchConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("caches", format!("{tree}-{seq}")), &config, |b, cfg| {
            b.iter(|| run_pgtd(&w.model, &reward, &problem.id, cfg, &GenerationBudget::unlimited()).unwrap())
        });
    }
    group.finish();
}

fn beam(c: &mut Criterion) {
    let w = Workload::synthetic();
    let root = w.model.vocab().root(&w.problems[0].id);
    let mut group = c.benchmark_group("beam");
    for width in [1, 5] {
        group.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, &width| {
            b.iter(|| beam_search(&w.model, &root, width, SUITE_MAX_LEN, &GenerationBudget::unlimited()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, pgtd, beam);
criterion_main!(benches);
