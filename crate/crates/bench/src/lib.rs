//! Synthetic fixtures shared by the benchmarks.

use fedbayes_core::{DiscreteDataset, Schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `m` rows over `cards`, labels correlated with the first feature so the
/// weighted model has something to learn.
pub fn synthetic(cards: &[usize], classes: usize, m: usize, seed: u64) -> DiscreteDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::synthetic(cards, classes).expect("valid shape");
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let row: Vec<u32> = cards.iter().map(|&c| rng.random_range(0..c) as u32).collect();
        let label = if rng.random_bool(0.8) {
            row[0] as usize % classes
        } else {
            rng.random_range(0..classes)
        };
        rows.push(row);
        labels.push(label as u32);
    }
    DiscreteDataset::from_rows(schema, &rows, labels).expect("consistent rows")
}

/// Roughly the shape of Kr-vs-Kp: 36 mostly binary features, 2 classes.
pub fn chess_like(m: usize) -> DiscreteDataset {
    let mut cards = vec![2; 35];
    cards.push(3);
    synthetic(&cards, 2, m, 7)
}
