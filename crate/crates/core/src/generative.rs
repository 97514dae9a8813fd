//! Counting-based naive Bayes: tallies, (smoothed) maximum-likelihood
//! normalization and MAP prediction.

use serde::{Deserialize, Serialize};

use crate::dataset::{DiscreteDataset, Row};
use crate::error::{Error, Result};
use crate::layout::{ParamLayout, LAYOUT_VERSION};

/// Class and (feature, value, class) tallies over a set of rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    layout: ParamLayout,
    class_counts: Vec<u64>,
    /// Indexed like the conditional part of [`ParamLayout`], i.e. flat index minus `o`.
    cond_counts: Vec<u64>,
    total: u64,
}

impl CountTable {
    pub fn empty(layout: ParamLayout) -> Self {
        let o = layout.class_count();
        let cond = layout.dimension() - o;
        Self {
            class_counts: vec![0; o],
            cond_counts: vec![0; cond],
            total: 0,
            layout,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn class_count(&self, class: usize) -> u64 {
        self.class_counts[class]
    }

    /// `#(x_j = value, y = class)`.
    pub fn cond_count(&self, feature: usize, value: usize, class: usize) -> u64 {
        self.cond_counts[self.layout.cond_index(feature, value, class) - self.layout.class_count()]
    }

    /// Rows of `class` with `feature` observed.
    pub fn observed_count(&self, feature: usize, class: usize) -> u64 {
        (0..self.layout.cardinality(feature))
            .map(|l| self.cond_count(feature, l, class))
            .sum()
    }

    pub fn add_row(&mut self, row: Row<'_>, label: usize) {
        let o = self.layout.class_count();
        self.total += 1;
        self.class_counts[label] += 1;
        for (j, v) in row.observed() {
            self.cond_counts[self.layout.cond_index(j, v, label) - o] += 1;
        }
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &CountTable) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Pool(format!(
                "layout mismatch: {:016x} vs {:016x}",
                self.layout.schema_hash(),
                other.layout.schema_hash()
            )));
        }
        self.total += other.total;
        for (a, b) in self.class_counts.iter_mut().zip(&other.class_counts) {
            *a += b;
        }
        for (a, b) in self.cond_counts.iter_mut().zip(&other.cond_counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn fit_counts(data: &DiscreteDataset, rows: &[usize]) -> Result<CountTable> {
    if rows.is_empty() {
        return Err(Error::Fit("cannot fit counts on an empty row set".into()));
    }
    let mut table = CountTable::empty(ParamLayout::from_schema(data.schema()));
    for &i in rows {
        if i >= data.len() {
            return Err(Error::Fit(format!("row {i} out of range ({} rows)", data.len())));
        }
        table.add_row(data.row(i), data.label(i));
    }
    Ok(table)
}

/// Sum of per-client count tables (the pooled-counts baseline).
pub fn pool_counts(tables: &[CountTable]) -> Result<CountTable> {
    let (first, rest) = tables
        .split_first()
        .ok_or_else(|| Error::Pool("no tables to pool".into()))?;
    let mut pooled = first.clone();
    for t in rest {
        pooled.merge(t)?;
    }
    Ok(pooled)
}

/// Log-probabilities of a naive Bayes model in the canonical flat layout.
///
/// Zero probabilities are stored as `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    layout: ParamLayout,
    log_params: Vec<f64>,
    smoothing: f64,
}

impl ParamTable {
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn dimension(&self) -> usize {
        self.log_params.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.log_params
    }

    #[inline]
    pub fn log_prior(&self, class: usize) -> f64 {
        self.log_params[class]
    }

    #[inline]
    pub fn log_cond(&self, feature: usize, value: usize, class: usize) -> f64 {
        self.log_params[self.layout.cond_index(feature, value, class)]
    }

    /// Uniform table: every prior `1/o`, every conditional `1/|X_j|`.
    pub fn uniform(layout: ParamLayout) -> Self {
        let o = layout.class_count();
        let mut log_params = vec![(1.0 / o as f64).ln(); layout.dimension()];
        for j in 0..layout.feature_count() {
            let lp = (1.0 / layout.cardinality(j) as f64).ln();
            for l in 0..layout.cardinality(j) {
                let base = layout.cond_base(j, l);
                log_params[base..base + o].fill(lp);
            }
        }
        Self {
            layout,
            log_params,
            smoothing: 0.0,
        }
    }

    /// Builds a table from raw log-probabilities in the canonical layout.
    pub fn from_log_params(layout: ParamLayout, log_params: Vec<f64>, smoothing: f64) -> Result<Self> {
        if log_params.len() != layout.dimension() {
            return Err(Error::Dimension {
                expected: layout.dimension(),
                actual: log_params.len(),
            });
        }
        if log_params.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Schema("log-probabilities must be finite or -inf".into()));
        }
        Ok(Self {
            layout,
            log_params,
            smoothing,
        })
    }

    pub fn to_document(&self) -> ParamTableDocument {
        let o = self.layout.class_count();
        let enc = |v: f64| if v == f64::NEG_INFINITY { None } else { Some(v) };
        ParamTableDocument {
            schema_hash: format!("{:016x}", self.layout.schema_hash()),
            layout_version: LAYOUT_VERSION,
            alpha: self.smoothing,
            class_count: o,
            cardinalities: self.layout.cardinalities().to_vec(),
            log_prior: self.log_params[..o].iter().copied().map(enc).collect(),
            log_cond: self.log_params[o..].iter().copied().map(enc).collect(),
        }
    }

    pub fn from_document(doc: &ParamTableDocument) -> Result<Self> {
        let layout = ParamLayout::new(doc.cardinalities.clone(), doc.class_count);
        if doc.schema_hash != format!("{:016x}", layout.schema_hash()) {
            return Err(Error::Schema("schema hash does not match the stored shape".into()));
        }
        let dec = |v: &Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
        let params = doc.log_prior.iter().chain(&doc.log_cond).map(dec).collect();
        Self::from_log_params(layout, params, doc.alpha)
    }
}

/// JSON form of a [`ParamTable`]. `null` encodes a zero probability.
///
/// `log_cond` is flat in feature-major, value-major, class-minor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTableDocument {
    pub schema_hash: String,
    pub layout_version: u16,
    pub alpha: f64,
    pub class_count: usize,
    pub cardinalities: Vec<usize>,
    pub log_prior: Vec<Option<f64>>,
    pub log_cond: Vec<Option<f64>>,
}

#[inline]
fn log_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        f64::NEG_INFINITY
    } else {
        (num / den).ln()
    }
}

/// Smoothed maximum-likelihood estimate from counts.
///
/// `theta_k = (#k + a) / (m + a*o)` and
/// `theta_{l|k} = (#(l,k) + a) / (#k_j + a*|X_j|)` where `#k_j` counts class-k
/// rows with feature j observed (equal to `#k` without missing cells).
/// With `a = 0` a class that never occurs gets uniform conditionals; its
/// prior is already `-inf`.
pub fn normalize(counts: &CountTable, smoothing: f64) -> Result<ParamTable> {
    if counts.total == 0 {
        return Err(Error::EmptyCounts);
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("invalid smoothing {smoothing}")));
    }
    let layout = counts.layout.clone();
    let o = layout.class_count();
    let mut log_params = vec![0.0; layout.dimension()];

    let prior_den = counts.total as f64 + smoothing * o as f64;
    for k in 0..o {
        log_params[layout.prior_index(k)] =
            log_ratio(counts.class_counts[k] as f64 + smoothing, prior_den);
    }
    for j in 0..layout.feature_count() {
        let card = layout.cardinality(j);
        for k in 0..o {
            let den = counts.observed_count(j, k) as f64 + smoothing * card as f64;
            for l in 0..card {
                log_params[layout.cond_index(j, l, k)] = if den == 0.0 {
                    -(card as f64).ln()
                } else {
                    log_ratio(counts.cond_count(j, l, k) as f64 + smoothing, den)
                };
            }
        }
    }
    Ok(ParamTable {
        layout,
        log_params,
        smoothing,
    })
}

/// `log P(y_k) + sum_j log P(x_j | y_k)` per class; missing features are skipped.
pub fn log_joint(params: &ParamTable, row: Row<'_>) -> Vec<f64> {
    let o = params.layout.class_count();
    let mut scores: Vec<f64> = (0..o).map(|k| params.log_prior(k)).collect();
    for (j, v) in row.observed() {
        let base = params.layout.cond_base(j, v);
        for (k, s) in scores.iter_mut().enumerate() {
            *s += params.log_params[base + k];
        }
    }
    scores
}

/// Index of the largest entry, lowest index on ties; `None` if every entry is `-inf`.
pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    (values[best] > f64::NEG_INFINITY).then_some(best)
}

/// MAP class. When every joint is zero the class prior decides.
pub fn predict(params: &ParamTable, row: Row<'_>) -> usize {
    let joint = log_joint(params, row);
    argmax(&joint).unwrap_or_else(|| {
        let prior: Vec<f64> = (0..params.layout.class_count())
            .map(|k| params.log_prior(k))
            .collect();
        argmax(&prior).unwrap_or(0)
    })
}

/// Fraction of `rows` whose MAP class matches the label.
pub fn accuracy(params: &ParamTable, data: &DiscreteDataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .filter(|&&i| predict(params, data.row(i)) == data.label(i))
        .count();
    correct as f64 / rows.len() as f64
}
