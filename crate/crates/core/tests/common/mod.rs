#![allow(dead_code)]

use fedbayes_core::{DiscreteDataset, ParamLayout, ParamTable, Schema};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random fully observed dataset with every class present when `m >= o`.
pub fn random_dataset(rng: &mut ChaCha8Rng, cards: &[usize], classes: usize, m: usize) -> DiscreteDataset {
    let schema = Schema::synthetic(cards, classes).unwrap();
    let rows: Vec<Vec<u32>> = (0..m)
        .map(|_| cards.iter().map(|&c| rng.random_range(0..c) as u32).collect())
        .collect();
    let labels = (0..m)
        .map(|i| if i < classes { i as u32 } else { rng.random_range(0..classes) as u32 })
        .collect();
    DiscreteDataset::from_rows(schema, &rows, labels).unwrap()
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let n = rng.random_range(1..=4);
    let cards = (0..n).map(|_| rng.random_range(1..=4)).collect();
    (cards, rng.random_range(2..=4))
}

/// Strictly positive distributions drawn independently for every row.
pub fn random_table(rng: &mut ChaCha8Rng, layout: &ParamLayout) -> ParamTable {
    let o = layout.class_count();
    let mut lp = vec![0.0; layout.dimension()];
    let mut dist = |n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| (v / s).ln()).collect()
    };
    lp[..o].copy_from_slice(&dist(o));
    for j in 0..layout.feature_count() {
        for k in 0..o {
            for (l, v) in dist(layout.cardinality(j)).into_iter().enumerate() {
                lp[layout.cond_index(j, l, k)] = v;
            }
        }
    }
    ParamTable::from_log_params(layout.clone(), lp, 0.0).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn all_rows(data: &DiscreteDataset) -> Vec<usize> {
    (0..data.len()).collect()
}

/// Standard NB posterior from the joint, by direct exponentiation.
pub fn generative_posterior(joint: &[f64]) -> Vec<f64> {
    let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = joint.iter().map(|j| (j - max).exp()).sum();
    joint.iter().map(|j| (j - max).exp() / z).collect()
}
