use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fedbayes_bench::chess_like;
use fedbayes_core::federation::{local_round, run_federation, ClientState, FederationConfig};
use fedbayes_core::{cll, fit_counts, init_global_weights, normalize, OptimizerConfig, WeightVector};

fn bench_cll(c: &mut Criterion) {
    let mut group = c.benchmark_group("cll");
    for m in [256usize, 2048, 8192] {
        let data = chess_like(m);
        let rows: Vec<usize> = (0..m).collect();
        let params = normalize(&fit_counts(&data, &rows).unwrap(), 1.0).unwrap();
        let w = WeightVector::ones(params.dimension());
        group.throughput(Throughput::Elements(m as u64));
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| cll(&params, &w, &data, &rows).unwrap())
        });
    }
    group.finish();
}

fn bench_local_round(c: &mut Criterion) {
    let data = chess_like(640);
    let rows: Vec<usize> = (0..640).collect();
    let mut client = ClientState::fit(0, &data, rows, Vec::new(), 1.0).unwrap();
    let global = init_global_weights(client.dimension(), 1);
    let mut group = c.benchmark_group("local_round");
    for iters in [5usize, 50] {
        let opt = OptimizerConfig::with_max_iterations(iters);
        group.bench_with_input(BenchmarkId::from_parameter(iters), &iters, |b, _| {
            b.iter(|| local_round(&mut client, &global, 1, &opt).unwrap())
        });
    }
    group.finish();
}

fn bench_federation(c: &mut Criterion) {
    let data = chess_like(3200);
    let clients: Vec<ClientState<'_>> = (0..5)
        .map(|i| {
            let train: Vec<usize> = (0..3200).filter(|r| r % 5 == i).collect();
            ClientState::fit(i as u32, &data, train, Vec::new(), 1.0).unwrap()
        })
        .collect();
    let cfg = FederationConfig {
        rounds: 5,
        ..FederationConfig::default()
    };
    c.bench_function("federation/5_clients_5_rounds", |b| {
        b.iter(|| {
            let mut fresh = clients.clone();
            run_federation(&mut fresh, &cfg).unwrap()
        })
    });
}

criterion_group!(benches, bench_cll, bench_local_round, bench_federation);
criterion_main!(benches);
