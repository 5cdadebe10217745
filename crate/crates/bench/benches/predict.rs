use criterion::{criterion_group, criterion_main, Criterion};
use semaquery_bench::ablation::{workload_session, Workload, QUERY};
use semaquery_bench::{sweep, LatencyModel};

fn predict_operator(c: &mut Criterion) {
    let w = Workload { latency_ms: 0.0, ..Workload::default() };
    let mut g = c.benchmark_group("predict_operator");
    for (name, settings) in
        [("optimized", ""), ("no_dedup", "SET use_dedup = false;"), ("unoptimized", "SET optimizer_rules = 'none';")]
    {
        let mut s = workload_session(&w).unwrap();
        if !settings.is_empty() {
            s.run(settings).unwrap();
        }
        g.bench_function(name, |b| b.iter(|| s.query(QUERY).unwrap()));
    }
    g.finish();
}

fn cost_model(c: &mut Criterion) {
    let m = LatencyModel::synthetic(Some(500.0), 1, 10_000);
    c.bench_function("sweep_10k_tuples", |b| b.iter(|| sweep(&m, &[1, 2, 4, 8, 16], &[1, 4, 16, 64])));
}

criterion_group!(benches, predict_operator, cost_model);
criterion_main!(benches);
