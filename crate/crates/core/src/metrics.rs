//! Precision at a cutoff, dataset evaluation and multi-run aggregation.
//!
//! Documents are ranked by descending score with ties broken by ascending
//! document index. A document counts as relevant when its label is at least
//! the configured threshold (1 by default, so grades 1 and 2 both count).
//! Queries shorter than the cutoff still divide by the cutoff.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ranker::{score_query, Dataset, LinearModel, QueryInstance};

/// Default minimum label counted as relevant.
pub const DEFAULT_MIN_RELEVANT: u8 = 1;

/// Cutoffs reported by default.
pub const DEFAULT_CUTOFFS: [usize; 2] = [1, 10];

pub fn precision_at(query: &QueryInstance, scores: &[f64], cutoff: usize) -> Result<f64> {
    precision_at_with(query, scores, cutoff, DEFAULT_MIN_RELEVANT)
}

pub fn precision_at_with(
    query: &QueryInstance,
    scores: &[f64],
    cutoff: usize,
    min_relevant: u8,
) -> Result<f64> {
    if cutoff == 0 {
        return Err(Error::domain("cutoff must be at least 1"));
    }
    if scores.len() != query.len() {
        return Err(Error::config(format!(
            "{} scores for a query with {} documents",
            scores.len(),
            query.len()
        )));
    }
    let docs = query.documents();
    let hits = rank_by_score(scores)
        .into_iter()
        .take(cutoff)
        .filter(|&j| docs[j].label >= min_relevant)
        .count();
    Ok(hits as f64 / cutoff as f64)
}

/// Document indices by descending score; equal scores keep index order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean precision over queries, keyed by cutoff.
    pub means: BTreeMap<usize, f64>,
    /// Per-query precision in dataset order, keyed by cutoff.
    pub per_query: BTreeMap<usize, Vec<f64>>,
}

impl EvalResult {
    pub fn mean(&self, cutoff: usize) -> Option<f64> {
        self.means.get(&cutoff).copied()
    }
}

pub fn evaluate(dataset: &Dataset, model: &LinearModel, cutoffs: &[usize]) -> Result<EvalResult> {
    evaluate_with(dataset, model, cutoffs, DEFAULT_MIN_RELEVANT, Execution::preferred())
}

pub fn evaluate_with(
    dataset: &Dataset,
    model: &LinearModel,
    cutoffs: &[usize],
    min_relevant: u8,
    exec: Execution,
) -> Result<EvalResult> {
    let rows: Vec<Result<Vec<f64>>> = exec.map(dataset.queries(), |q| {
        let scores = score_query(model, q)?;
        cutoffs
            .iter()
            .map(|&c| precision_at_with(q, &scores, c, min_relevant))
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut means = BTreeMap::new();
    let mut per_query = BTreeMap::new();
    for (i, &c) in cutoffs.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        means.insert(c, values.iter().sum::<f64>() / values.len() as f64);
        per_query.insert(c, values);
    }
    Ok(EvalResult { means, per_query })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cutoff: usize,
    pub mean: f64,
    /// Sample standard deviation across runs; 0 for a single run.
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate_runs(results: &[EvalResult]) -> Result<Vec<RunSummary>> {
    let Some(first) = results.first() else {
        return Err(Error::domain("no runs to aggregate"));
    };
    first
        .means
        .keys()
        .map(|&cutoff| {
            let values = results
                .iter()
                .map(|r| {
                    r.mean(cutoff)
                        .ok_or_else(|| Error::domain(format!("run lacks cutoff {cutoff}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let runs = values.len();
            let mean = values.iter().sum::<f64>() / runs as f64;
            let std = if runs > 1 {
                let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
                (ss / (runs - 1) as f64).sqrt()
            } else {
                0.0
            };
            Ok(RunSummary {
                cutoff,
                mean,
                std,
                runs,
            })
        })
        .collect()
}

pub const SUMMARY_CSV_HEADER: &str = "split,cutoff,mean,std,runs";

/// CSV rows for one split, without the header.
pub fn summary_csv_rows(split: &str, summaries: &[RunSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let _ = writeln!(out, "{split},{},{},{},{}", s.cutoff, s.mean, s.std, s.runs);
    }
    out
}
