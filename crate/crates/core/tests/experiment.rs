mod common;

use common::*;
use fedbayes_core::experiment::{
    read_records_csv, run_experiment_on, write_outputs, Algorithm, ExperimentConfig, IterationCap, Split,
    MEAN_ROW,
};
use fedbayes_core::generative::{accuracy, fit_counts, normalize};
use fedbayes_core::seed::{derive_seed, SeedPurpose};
use fedbayes_core::{make_folds, partition_clients, DiscreteDataset};

fn small_config(algorithms: Vec<Algorithm>) -> ExperimentConfig {
    ExperimentConfig {
        algorithms,
        client_counts: vec![3],
        repetitions: 2,
        rounds: 4,
        optimizer_caps: vec![IterationCap::Finite(3)],
        master_seed: 17,
        ..ExperimentConfig::new(Vec::new())
    }
}

fn corpus() -> Vec<(String, DiscreteDataset)> {
    let mut r = rng(21);
    vec![
        ("alpha".into(), random_dataset(&mut r, &[3, 2, 4], 2, 150)),
        ("beta".into(), random_dataset(&mut r, &[2, 2], 3, 90)),
    ]
}

#[test]
fn record_counts_follow_the_protocol() {
    let cfg = small_config(Algorithm::ALL.to_vec());
    let out = run_experiment_on(&corpus(), &cfg).unwrap();
    // per dataset: R*K folds * C clients * 2 splits for nb, nb_fed, nbw(3), fednbw(3-g, 3-l)
    let per_variant = cfg.repetitions * cfg.folds * 3 * 2;
    assert_eq!(out.records.len(), 2 * 5 * per_variant);
    for row in out.summary.iter().filter(|r| r.dataset != MEAN_ROW) {
        assert_eq!(row.runs, cfg.repetitions * cfg.folds * 3);
        assert!((0.0..=100.0).contains(&row.test_accuracy));
    }
}

#[test]
fn pooled_counts_match_centralized_fold_geometry() {
    let data = corpus().remove(0);
    let cfg = small_config(vec![Algorithm::NbFed]);
    let out = run_experiment_on(std::slice::from_ref(&data), &cfg).unwrap();
    let (_, d) = &data;
    for rep in 0..cfg.repetitions {
        let rep_seed = derive_seed(cfg.master_seed, SeedPurpose::Repetition, rep as u64);
        let part = partition_clients(d, 3, derive_seed(rep_seed, SeedPurpose::Partition, 3), cfg.min_client_size).unwrap();
        let folds: Vec<_> = part
            .shards()
            .iter()
            .enumerate()
            .map(|(c, s)| make_folds(d, s, cfg.folds, derive_seed(rep_seed, SeedPurpose::Folds, c as u64)).unwrap())
            .collect();
        for fold in 0..cfg.folds {
            let train: Vec<usize> = folds.iter().flat_map(|f| f.train_rows(fold)).collect();
            let central = normalize(&fit_counts(d, &train).unwrap(), cfg.alpha).unwrap();
            for (c, f) in folds.iter().enumerate() {
                let expected = accuracy(&central, d, &f.test_rows(fold));
                let got = out
                    .records
                    .iter()
                    .find(|r| r.repetition == rep && r.fold == fold && r.client_id as usize == c && r.split == Split::Test)
                    .unwrap();
                assert_eq!(got.accuracy, expected);
            }
        }
    }
}

#[test]
fn final_trace_point_matches_summary() {
    let cfg = small_config(Algorithm::ALL.to_vec());
    let out = run_experiment_on(&corpus(), &cfg).unwrap();
    for table in &out.traces {
        for ((alg, variant), curve) in &table.curves {
            assert_eq!(curve.len(), cfg.rounds as usize);
            let row = out.summary_row(&table.dataset, alg, variant, table.client_count).unwrap();
            let (train, test) = *curve.last().unwrap();
            assert_eq!(test, row.test_accuracy, "{alg} {variant}");
            assert_eq!(train, row.train_accuracy, "{alg} {variant}");
            if variant == "-" || !variant.contains('-') {
                assert!(curve.iter().all(|p| *p == curve[0]));
            }
        }
    }
}

#[test]
fn too_small_cells_are_skipped_not_fatal() {
    let cfg = ExperimentConfig {
        client_counts: vec![3, 40],
        ..small_config(vec![Algorithm::Nb])
    };
    let out = run_experiment_on(&corpus(), &cfg).unwrap();
    assert_eq!(out.skipped.len(), 2);
    assert!(out.skipped.iter().all(|s| s.client_count == 40));
    assert!(out.skipped[0].reason.contains("at least 200"));
    assert!(out.records.iter().all(|r| r.client_count == 3));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let base = small_config(Algorithm::ALL.to_vec());
    let a = run_experiment_on(&corpus(), &ExperimentConfig { threads: Some(1), ..base.clone() }).unwrap();
    let b = run_experiment_on(&corpus(), &ExperimentConfig { threads: Some(3), ..base }).unwrap();
    write_outputs(&a, dir_a.path()).unwrap();
    write_outputs(&b, dir_b.path()).unwrap();
    for f in ["summary.csv", "records.csv", "summary.txt", "traces/alpha_3.csv"] {
        let x = std::fs::read(dir_a.path().join(f)).unwrap();
        let y = std::fs::read(dir_b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    assert_eq!(read_records_csv(&dir_a.path().join("records.csv")).unwrap(), a.records);
}
