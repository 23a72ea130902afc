use std::collections::HashSet;
use std::hint::black_box;

use bcalign_bench::{desk_graph, random_chain, random_table};
use bcalign_core::compat::to_version;
use bcalign_core::encoder::{encode_all, init_params, GraphView};
use bcalign_core::evaluation::recall_at_k;
use bcalign_core::{EncoderSchedule, GrowthSchedule};
use criterion::{criterion_group, criterion_main, Criterion};

fn encode(c: &mut Criterion) {
    let (graph, snapshot) = desk_graph();
    let view = GraphView::new(&graph, &snapshot);
    let schedule = EncoderSchedule {
        base_layers: 2,
        base_hidden_dim: 32,
        growth: GrowthSchedule {
            dim_step: 8,
            ..GrowthSchedule::default()
        },
    };
    let mut group = c.benchmark_group("encode_all");
    for k in [0, 4] {
        let params = init_params(schedule.config_at(k, graph.feature_dim()), 1).unwrap();
        group.bench_function(format!("desk_v{k}"), |b| b.iter(|| encode_all(black_box(&params), &view).unwrap()));
    }
    group.finish();
}

fn compose(c: &mut Criterion) {
    let dims = [256, 320, 384, 448, 512];
    let table = random_table(4, 2000, 1000, 512, 2);
    c.bench_function("register_chain_256_to_512", |b| b.iter(|| random_chain(black_box(&dims), 3)));
    let reg = random_chain(&dims, 3);
    c.bench_function("to_version_0_from_4_3000_rows", |b| {
        b.iter(|| to_version(black_box(&reg), black_box(&table), 0).unwrap())
    });
}

fn recall(c: &mut Criterion) {
    let table = random_table(0, 500, 200, 64, 4);
    let eval: Vec<(u32, u32)> = (0..5000u32).map(|n| (n % 500, (n * 7) % 200)).collect();
    let seen: HashSet<(u32, u32)> = (0..5000u32).map(|n| (n % 500, (n * 13 + 1) % 200)).collect();
    let items: Vec<u32> = (0..200).collect();
    c.bench_function("recall_at_50_500_users", |b| {
        b.iter(|| recall_at_k(black_box(&table), &eval, 50, &items, &seen).unwrap())
    });
}

criterion_group!(benches, encode, compose, recall);
criterion_main!(benches);
