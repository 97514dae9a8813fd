mod common;

use common::*;
use fedbayes_core::federation::{
    aggregate, init_global_weights, local_round, personalize, run_federation, transport, Aggregation,
    ClientState, FederationConfig, MessageFormat, RoundExpectation, WeightMessage,
};
use fedbayes_core::optimizer::{minimize, OptimizerConfig};
use fedbayes_core::seed::{derive_seed, SeedPurpose};
use fedbayes_core::{make_folds, partition_clients, DiscreteDataset, WeightVector};
use proptest::prelude::*;

fn clients_for(data: &DiscreteDataset, c: usize, seed: u64) -> Vec<ClientState<'_>> {
    let part = partition_clients(data, c, seed, 5).unwrap();
    part.shards()
        .iter()
        .enumerate()
        .map(|(i, shard)| {
            let f = make_folds(data, shard, 5, seed + i as u64).unwrap();
            ClientState::fit(i as u32, data, f.train_rows(0), f.test_rows(0), 1.0).unwrap()
        })
        .collect()
}

fn config(rounds: u32, iters: usize, seed: u64) -> FederationConfig {
    FederationConfig {
        rounds,
        optimizer: OptimizerConfig::with_max_iterations(iters),
        aggregation: Aggregation::Uniform,
        message_format: MessageFormat::Binary,
        seed,
    }
}

#[test]
fn zero_iteration_round_echoes_global() {
    let mut r = rng(1);
    let data = random_dataset(&mut r, &[3, 2], 2, 60);
    let mut clients = clients_for(&data, 2, 4);
    let global = init_global_weights(clients[0].dimension(), 9);
    let out = local_round(&mut clients[0], &global, 1, &OptimizerConfig::with_max_iterations(0)).unwrap();
    assert_eq!(out.message.payload, global.to_vec());
    assert_eq!(personalize(&clients[1], &global, &OptimizerConfig::with_max_iterations(0)).unwrap(), global);
}

#[test]
fn stationary_client_returns_global() {
    let mut r = rng(2);
    let data = random_dataset(&mut r, &[3, 3], 3, 90);
    let clients = clients_for(&data, 1, 2);
    let start = WeightVector::ones(clients[0].dimension());
    let tight = OptimizerConfig {
        max_iterations: 500,
        grad_tolerance: 1e-9,
        ..OptimizerConfig::default()
    };
    let opt = minimize(&mut clients[0].objective(), &start, &tight).unwrap();
    let stationary = WeightVector::new(opt.final_point).unwrap();
    let again = personalize(&clients[0], &stationary, &OptimizerConfig::with_max_iterations(5)).unwrap();
    assert_eq!(again, stationary);
}

#[test]
fn single_client_single_round_is_centralized() {
    let mut r = rng(3);
    let data = random_dataset(&mut r, &[2, 4, 3], 3, 120);
    let mut clients = clients_for(&data, 1, 3);
    let cfg = config(1, 7, 42);
    let central_client = clients[0].clone();
    let fed = run_federation(&mut clients, &cfg).unwrap();
    let start = init_global_weights(central_client.dimension(), derive_seed(42, SeedPurpose::WeightInit, 0));
    assert_eq!(fed.initial, start);
    let central = minimize(&mut central_client.objective(), &start, &cfg.optimizer).unwrap();
    assert_eq!(fed.global.as_slice(), central.final_point.as_slice());
    assert_eq!(fed.records[0].clients[0].objective_trace, central.objective_trace);
}

#[test]
fn single_client_rounds_chain_restarted_optimizations() {
    let mut r = rng(4);
    let data = random_dataset(&mut r, &[3, 3], 2, 80);
    let mut clients = clients_for(&data, 1, 4);
    let solo = clients[0].clone();
    let cfg = config(4, 3, 8);
    let fed = run_federation(&mut clients, &cfg).unwrap();
    let mut w = fed.initial.to_vec();
    for _ in 0..4 {
        w = minimize(&mut solo.objective(), &w, &cfg.optimizer).unwrap().final_point;
    }
    assert_eq!(fed.global.as_slice(), w.as_slice());
}

#[test]
fn identical_shards_aggregate_to_either_message() {
    let mut r = rng(5);
    let data = random_dataset(&mut r, &[3, 2, 2], 2, 50);
    let rows = all_rows(&data);
    let mut clients: Vec<_> = (0..2)
        .map(|i| ClientState::fit(i, &data, rows.clone(), Vec::new(), 1.0).unwrap())
        .collect();
    let fed = run_federation(&mut clients, &config(5, 4, 1)).unwrap();
    assert_eq!(clients[0].local_weights, clients[1].local_weights);
    assert_eq!(fed.global, clients[0].local_weights);
}

#[test]
fn every_client_improves_within_every_round() {
    let mut r = rng(6);
    let data = random_dataset(&mut r, &[3, 3, 2, 4], 3, 400);
    let mut clients = clients_for(&data, 4, 6);
    let fed = run_federation(&mut clients, &config(10, 5, 2)).unwrap();
    assert_eq!(fed.records.len(), 10);
    for rec in &fed.records {
        assert_eq!(rec.clients.len(), 4);
        for c in &rec.clients {
            assert!(c.objective <= c.objective_start);
            assert!(c.iterations <= 5);
            assert!(c.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

#[test]
fn federation_is_bit_identical_across_thread_counts_and_formats() {
    let mut r = rng(7);
    let data = random_dataset(&mut r, &[4, 3, 2], 3, 2000);
    let run = |threads: usize, format: MessageFormat| {
        let mut clients = clients_for(&data, 3, 7);
        let cfg = FederationConfig {
            message_format: format,
            ..config(3, 5, 11)
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_federation(&mut clients, &cfg).unwrap())
    };
    let a = run(1, MessageFormat::Binary);
    let b = run(4, MessageFormat::Binary);
    let c = run(2, MessageFormat::Json);
    assert_eq!(a.global, b.global);
    assert_eq!(a.records, b.records);
    assert_eq!(a.global, c.global);
}

#[test]
fn uniform_and_weighted_agree_on_equal_shards() {
    let mut r = rng(8);
    let data = random_dataset(&mut r, &[3, 3], 2, 100);
    let run = |aggregation| {
        let mut clients = clients_for(&data, 4, 8);
        assert!(clients.windows(2).all(|w| w[0].train_rows().len() == w[1].train_rows().len()));
        run_federation(&mut clients, &FederationConfig { aggregation, ..config(3, 5, 3) }).unwrap().global
    };
    assert_eq!(run(Aggregation::Uniform), run(Aggregation::ShardWeighted));
}

#[test]
fn messages_never_carry_probability_tables() {
    let mut r = rng(9);
    let data = random_dataset(&mut r, &[5, 4, 3], 4, 300);
    let mut clients = clients_for(&data, 2, 9);
    let global = WeightVector::ones(clients[0].dimension());
    let table = clients[0].params().as_slice().to_vec();
    let out = local_round(&mut clients[0], &global, 1, &OptimizerConfig::with_max_iterations(3)).unwrap();
    let bytes = out.message.encode();
    assert_eq!(bytes.len(), 30 + 8 * clients[0].dimension());
    for v in table {
        assert!(!out.message.payload.contains(&v));
        let needle = v.to_le_bytes();
        assert!(!bytes.windows(8).any(|w| w == needle));
    }
}

#[test]
fn aggregate_rejects_clients_outside_roster() {
    let m = WeightMessage {
        round: 2,
        client_id: 3,
        schema_hash: 1,
        payload: vec![0.0],
    };
    let expected = RoundExpectation {
        round: 2,
        schema_hash: 1,
        dimension: 1,
        clients: vec![(0, 10)],
    };
    assert!(aggregate(&[m], &expected, Aggregation::Uniform).is_err());
}

#[test]
fn optimizer_failures_name_the_client() {
    let mut r = rng(10);
    let data = random_dataset(&mut r, &[2], 2, 30);
    let mut clients = clients_for(&data, 1, 10);
    let wrong = WeightVector::ones(3);
    let err = local_round(&mut clients[0], &wrong, 1, &OptimizerConfig::default()).unwrap_err();
    assert!(matches!(err, fedbayes_core::Error::Client { client_id: 0, .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn messages_round_trip(round in any::<u32>(), id in any::<u32>(), hash in any::<u64>(),
                           payload in prop::collection::vec(-1e6f64..1e6, 0..64)) {
        let m = WeightMessage { round, client_id: id, schema_hash: hash, payload };
        prop_assert_eq!(WeightMessage::decode(&m.encode()).unwrap(), m.clone());
        prop_assert_eq!(transport(&m, MessageFormat::Json).unwrap(), m);
    }

    #[test]
    fn aggregate_of_copies_is_identity(payload in prop::collection::vec(-1e3f64..1e3, 1..20), c in 1u32..40) {
        let msgs: Vec<_> = (0..c).map(|i| WeightMessage { round: 1, client_id: i, schema_hash: 0, payload: payload.clone() }).collect();
        let exp = RoundExpectation { round: 1, schema_hash: 0, dimension: payload.len(), clients: (0..c).map(|i| (i, 1 + i as usize)).collect() };
        prop_assert_eq!(aggregate(&msgs, &exp, Aggregation::Uniform).unwrap().into_vec(), payload.clone());
        prop_assert_eq!(aggregate(&msgs, &exp, Aggregation::ShardWeighted).unwrap().into_vec(), payload.clone());
    }

    #[test]
    fn aggregate_is_within_payload_hull(payloads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..10)) {
        let msgs: Vec<_> = payloads.iter().enumerate().map(|(i, p)| WeightMessage { round: 1, client_id: i as u32, schema_hash: 0, payload: p.clone() }).collect();
        let exp = RoundExpectation { round: 1, schema_hash: 0, dimension: 4, clients: (0..payloads.len()).map(|i| (i as u32, 3)).collect() };
        let w = aggregate(&msgs, &exp, Aggregation::Uniform).unwrap();
        for d in 0..4 {
            let lo = payloads.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
            let hi = payloads.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(w[d] >= lo - 1e-12 && w[d] <= hi + 1e-12);
            let direct = payloads.iter().map(|p| p[d]).sum::<f64>() / payloads.len() as f64;
            prop_assert!((w[d] - direct).abs() < 1e-12);
        }
    }
}
