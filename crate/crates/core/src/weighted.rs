//! Weighted naive Bayes: one exponent per parameter cell, learned
//! discriminatively with the probability table held fixed.
//!
//! Scores are `s_k = w_k log theta_k + sum_j w_{j,x_j,k} log theta_{j,x_j,k}` and
//! the posterior is `softmax(s)`. A weight of exactly zero on a zero-probability
//! cell contributes nothing; any other weight on such a cell is an error.

use std::ops::{Deref, DerefMut};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DiscreteDataset, Row};
use crate::error::{Error, Result};
use crate::generative::{argmax, ParamTable};
use crate::layout::ParamLayout;

/// Rows per parallel work unit. Fixed so the reduction tree, and therefore
/// every rounding, is independent of the thread count.
const CHUNK_ROWS: usize = 256;

/// Flat weights in the canonical [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("non-finite weight at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn ones(dimension: usize) -> Self {
        Self(vec![1.0; dimension])
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CllEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

fn check_dimension(params: &ParamTable, weights: &[f64]) -> Result<()> {
    if weights.len() != params.dimension() {
        return Err(Error::Dimension {
            expected: params.dimension(),
            actual: weights.len(),
        });
    }
    Ok(())
}

#[inline]
fn weighted_term(layout: &ParamLayout, lp: f64, w: f64, index: usize) -> Result<f64> {
    if lp == f64::NEG_INFINITY {
        if w == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::ZeroProbabilityCell {
                cell: layout.describe(index),
                weight: w,
            })
        }
    } else {
        Ok(w * lp)
    }
}

fn scores_into(params: &ParamTable, weights: &[f64], row: Row<'_>, out: &mut [f64]) -> Result<()> {
    let layout = params.layout();
    let lp = params.as_slice();
    for (k, s) in out.iter_mut().enumerate() {
        *s = weighted_term(layout, lp[k], weights[k], k)?;
    }
    for (j, v) in row.observed() {
        let base = layout.cond_base(j, v);
        for (k, s) in out.iter_mut().enumerate() {
            let i = base + k;
            *s += weighted_term(layout, lp[i], weights[i], i)?;
        }
    }
    Ok(())
}

/// Turns scores into log-posteriors in place; returns the log-sum-exp.
fn log_softmax_in_place(scores: &mut [f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let lse = max + sum.ln();
    for s in scores.iter_mut() {
        *s -= lse;
    }
    lse
}

pub fn weighted_scores(params: &ParamTable, weights: &[f64], row: Row<'_>) -> Result<Vec<f64>> {
    check_dimension(params, weights)?;
    let mut out = vec![0.0; params.layout().class_count()];
    scores_into(params, weights, row, &mut out)?;
    Ok(out)
}

/// `s - logsumexp(s)`, computed with the max shift.
pub fn log_posterior(params: &ParamTable, weights: &[f64], row: Row<'_>) -> Result<Vec<f64>> {
    let mut s = weighted_scores(params, weights, row)?;
    log_softmax_in_place(&mut s);
    Ok(s)
}

/// Highest-scoring class, lowest index on ties.
pub fn predict_weighted(params: &ParamTable, weights: &[f64], row: Row<'_>) -> Result<usize> {
    let s = weighted_scores(params, weights, row)?;
    Ok(argmax(&s).unwrap_or(0))
}

pub fn accuracy_weighted(
    params: &ParamTable,
    weights: &[f64],
    data: &DiscreteDataset,
    rows: &[usize],
) -> Result<f64> {
    check_dimension(params, weights)?;
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut s = vec![0.0; params.layout().class_count()];
    let mut correct = 0usize;
    for &i in rows {
        scores_into(params, weights, data.row(i), &mut s)?;
        if argmax(&s).unwrap_or(0) == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

fn cll_chunk(
    params: &ParamTable,
    weights: &[f64],
    data: &DiscreteDataset,
    rows: &[usize],
) -> Result<CllEvaluation> {
    let layout = params.layout();
    let lp = params.as_slice();
    let o = layout.class_count();
    let mut gradient = vec![0.0; params.dimension()];
    let mut value = 0.0;
    let mut post = vec![0.0; o];
    for &i in rows {
        let row = data.row(i);
        let label = data.label(i);
        scores_into(params, weights, row, &mut post)?;
        log_softmax_in_place(&mut post);
        value += post[label];
        // post becomes the residual 1[y=k] - P(k|x)
        for (k, p) in post.iter_mut().enumerate() {
            *p = f64::from(u8::from(k == label)) - p.exp();
        }
        for k in 0..o {
            if lp[k] != f64::NEG_INFINITY {
                gradient[k] += post[k] * lp[k];
            }
        }
        for (j, v) in row.observed() {
            let base = layout.cond_base(j, v);
            for k in 0..o {
                let l = lp[base + k];
                if l != f64::NEG_INFINITY {
                    gradient[base + k] += post[k] * l;
                }
            }
        }
    }
    Ok(CllEvaluation { value, gradient })
}

fn merge(mut a: CllEvaluation, b: CllEvaluation) -> CllEvaluation {
    a.value += b.value;
    for (x, y) in a.gradient.iter_mut().zip(&b.gradient) {
        *x += y;
    }
    a
}

fn tree_reduce(mut parts: Vec<CllEvaluation>) -> CllEvaluation {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => merge(a, b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("at least one chunk")
}

/// Conditional log-likelihood over `rows` and its gradient in `w`.
///
/// Cells whose log-probability is `-inf` (only possible with zero weight) get a
/// zero gradient, so they stay frozen at zero.
pub fn cll(
    params: &ParamTable,
    weights: &[f64],
    data: &DiscreteDataset,
    rows: &[usize],
) -> Result<CllEvaluation> {
    check_dimension(params, weights)?;
    if rows.is_empty() {
        return Err(Error::Fit("conditional log-likelihood over an empty row set".into()));
    }
    let parts = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| cll_chunk(params, weights, data, chunk))
        .collect::<Result<Vec<_>>>()?;
    Ok(tree_reduce(parts))
}
