use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tafa_bench::fixture;
use tafa_core::policy::{TafaPolicy, TemplateLossCache};
use tafa_core::predictor::{SubsetScorer, TaskLoss};
use tafa_core::search::{greedy_search, sample_candidates, LossCache, LossMatrix, TemplateLibrary};

fn benches(c: &mut Criterion) {
    let f = fixture(4000, 0).expect("fixture");
    let exp = &f.exp;
    let scorer = exp.scorer(TaskLoss::CrossEntropy);
    let o_init = f.bundle.library.o_init;

    let mut g = c.benchmark_group("subset_loss");
    for size in [2usize, 5, 10] {
        let set: Vec<usize> = (0..20).filter(|&d| d != o_init).take(size - 1).chain([o_init]).collect();
        g.bench_with_input(BenchmarkId::from_parameter(size), &set, |b, set| {
            b.iter(|| scorer.prediction_losses(black_box(set)))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("greedy_search");
    for candidates in [250usize, 1000] {
        let cands = sample_candidates(20, o_init, candidates, 0).expect("candidates");
        let m = LossMatrix::build(&scorer, &exp.costs, 0.04, cands, &mut LossCache::new());
        g.bench_with_input(BenchmarkId::from_parameter(candidates), &m, |b, m| {
            b.iter(|| greedy_search(black_box(m), 16).expect("greedy"))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("decision");
    for size in [2usize, 4, 8, 16] {
        let lib = TemplateLibrary::with_templates(o_init, 0.04, f.bundle.library.templates[..size].to_vec());
        let cache = TemplateLossCache::build(&scorer, &lib.templates);
        let policy = TafaPolicy::new(&lib, &exp.model, &cache, &exp.train.features, &exp.costs, 0.04, 10)
            .expect("policy");
        g.bench_with_input(BenchmarkId::from_parameter(size), &f.states, |b, states| {
            b.iter(|| {
                for s in states {
                    black_box(policy.decide(black_box(s)));
                }
            })
        });
    }
    g.finish();
}

criterion_group! {
    name = hot_paths;
    config = Criterion::default().sample_size(20);
    targets = benches
}
criterion_main!(hot_paths);
