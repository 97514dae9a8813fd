//! The canonical flat indexing shared by parameter tables, weight vectors and
//! weight messages.
//!
//! Entries `0..o` are the class-prior cells. They are followed by the
//! conditional cells in feature-major, value-major, class-minor order, so the
//! cell for `(feature j, value l, class k)` sits at
//! `o + (offset_j + l) * o + k`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Schema;

pub const LAYOUT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    class_count: usize,
    cardinalities: Vec<usize>,
    offsets: Vec<usize>,
    value_total: usize,
}

impl ParamLayout {
    pub fn new(cardinalities: Vec<usize>, class_count: usize) -> Self {
        let mut offsets = Vec::with_capacity(cardinalities.len());
        let mut acc = 0;
        for &c in &cardinalities {
            offsets.push(acc);
            acc += c;
        }
        Self {
            class_count,
            cardinalities,
            offsets,
            value_total: acc,
        }
    }

    pub fn from_schema(schema: &Schema) -> Self {
        Self::new(schema.cardinalities(), schema.class_count())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cardinality(&self, feature: usize) -> usize {
        self.cardinalities[feature]
    }

    /// `o + o * sum_j |X_j|`.
    pub fn dimension(&self) -> usize {
        self.class_count * (1 + self.value_total)
    }

    #[inline]
    pub fn prior_index(&self, class: usize) -> usize {
        class
    }

    /// Index of the first class cell for `(feature, value)`; the `o` class
    /// cells for that pair are contiguous from here.
    #[inline]
    pub fn cond_base(&self, feature: usize, value: usize) -> usize {
        self.class_count * (1 + self.offsets[feature] + value)
    }

    #[inline]
    pub fn cond_index(&self, feature: usize, value: usize, class: usize) -> usize {
        self.cond_base(feature, value) + class
    }

    /// Human-readable name of a flat index, used in error messages.
    pub fn describe(&self, index: usize) -> String {
        let o = self.class_count;
        if index < o {
            return format!("prior[class {index}]");
        }
        let cell = index / o - 1;
        let class = index % o;
        let feature = match self.offsets.binary_search(&cell) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        let value = cell - self.offsets[feature];
        format!("cond[feature {feature}, value {value}, class {class}]")
    }

    /// 64-bit digest of the cardinalities, class count and layout version.
    pub fn schema_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"fedbayes-layout");
        h.update(LAYOUT_VERSION.to_le_bytes());
        h.update((self.class_count as u64).to_le_bytes());
        h.update((self.cardinalities.len() as u64).to_le_bytes());
        for &c in &self.cardinalities {
            h.update((c as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(first)
    }
}
