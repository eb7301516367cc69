use criterion::{criterion_group, criterion_main, Criterion};
use inmap_bench::{cosine_logits, proxy_problem};
use inmap_core::{learn_proxies, sinkhorn_refine, PgdConfig, ReferenceDistribution, SinkhornConfig};

fn sinkhorn(c: &mut Criterion) {
    let m = cosine_logits(7, 10_000, 100);
    let q = ReferenceDistribution::uniform(100).unwrap();
    let cfg = SinkhornConfig {
        temperature: 0.01,
        iterations: 20,
    };
    c.bench_function("sinkhorn_10000x100_20it", |b| {
        b.iter(|| sinkhorn_refine(&m, &q, &cfg).unwrap())
    });
}

fn pgd(c: &mut Criterion) {
    let p = proxy_problem(11, 5000, 64, 50);
    let mut group = c.benchmark_group("pgd");
    group.sample_size(10);
    for iterations in [20, 200] {
        let cfg = PgdConfig {
            learning_rate: 0.01,
            iterations,
            ..PgdConfig::default()
        };
        group.bench_function(format!("n5000_d64_c50_{iterations}it"), |b| {
            b.iter(|| learn_proxies(&p.features, &p.labels, &p.text_proxies, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sinkhorn, pgd);
criterion_main!(benches);
