//! Run once per backend to compare them:
//! `cargo bench -p sofa-core` (rayon) and
//! `cargo bench -p sofa-core --no-default-features` (sequential).

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sofa_core::baselines::{compare_modes, Mode};
use sofa_core::enumerator::{optimize, EnumerationConfig};
use sofa_core::fixtures::load_fixture;
use sofa_core::interpreter::{check_equivalence, CorpusConfig};
use sofa_core::par;

fn backend() -> &'static str {
    if par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group(backend());
    g.sample_size(10);
    for name in ["running-example", "q7-shape"] {
        let f = load_fixture(name).unwrap();
        let t = f.taxonomy();
        let m = f.model(&t);
        g.bench_with_input(BenchmarkId::new("optimize-unpruned", name), &f, |b, f| {
            b.iter(|| optimize(&f.plan, &t, &m, &EnumerationConfig::unpruned()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("compare-modes", name), &f, |b, f| {
            b.iter(|| compare_modes(&f.plan, &t, &m, &Mode::ALL, None).unwrap())
        });
    }
    let f = load_fixture("fig5").unwrap();
    let t = f.taxonomy();
    let best = optimize(&f.plan, &t, &f.model(&t), &EnumerationConfig::default()).unwrap().best.plan;
    let cfgs: BTreeMap<String, CorpusConfig> = f.manifest.corpus.clone();
    let seeds: Vec<u64> = (0..8).collect();
    g.bench_function("check-equivalence/fig5", |b| {
        b.iter(|| check_equivalence(&f.plan, &best, &t, &cfgs, &seeds).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
