//! Core domain types and the score / softmax kernels.
//!
//! Documents are addressed by their 0-based position inside a query. Formulas
//! written with 1-based positions `j_1..j_n` map to `ordering[0..n]` here; the
//! only 1-based argument in the API is the position `f` of [`partial_softmax`].

use std::ops::Deref;

use crate::error::{Error, Result};

/// Highest relevance grade accepted in LETOR MQ2008-style data.
pub const MAX_LABEL: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    /// Relevance grade in `{0, 1, 2}`.
    pub label: u8,
    pub doc_id: String,
}

impl Document {
    pub fn new(features: Vec<f64>, label: u8, doc_id: impl Into<String>) -> Result<Self> {
        if label > MAX_LABEL {
            return Err(Error::domain(format!("label {label} outside {{0,1,2}}")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("feature {i} is not finite")));
        }
        Ok(Document {
            features,
            label,
            doc_id: doc_id.into(),
        })
    }
}

/// The candidate documents of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInstance {
    pub query_id: String,
    documents: Vec<Document>,
}

impl QueryInstance {
    pub fn new(query_id: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let query_id = query_id.into();
        let Some(first) = documents.first() else {
            return Err(Error::domain(format!("query {query_id} has no documents")));
        };
        let dim = first.features.len();
        if let Some(bad) = documents.iter().find(|d| d.features.len() != dim) {
            return Err(Error::config(format!(
                "query {query_id}: document {:?} has {} features, expected {dim}",
                bad.doc_id,
                bad.features.len()
            )));
        }
        Ok(QueryInstance {
            query_id,
            documents,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.documents[0].features.len()
    }

    /// Human labels as real-valued scores, used directly as the target `y`.
    pub fn label_scores(&self) -> ScoreVector {
        ScoreVector(self.documents.iter().map(|d| d.label as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    queries: Vec<QueryInstance>,
    dim: usize,
}

impl Dataset {
    pub fn new(queries: Vec<QueryInstance>) -> Result<Self> {
        let Some(first) = queries.first() else {
            return Err(Error::domain("dataset has no queries"));
        };
        let dim = first.dim();
        if let Some(q) = queries.iter().find(|q| q.dim() != dim) {
            return Err(Error::config(format!(
                "query {} has dimension {}, expected {dim}",
                q.query_id,
                q.dim()
            )));
        }
        Ok(Dataset { queries, dim })
    }

    pub fn queries(&self) -> &[QueryInstance] {
        &self.queries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_documents(&self) -> usize {
        self.queries.iter().map(QueryInstance::len).sum()
    }
}

/// Linear scorer `z_j = w · x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("model weights must be finite"));
        }
        Ok(LinearModel { weights })
    }

    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features)
    }
}

/// One score per document of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(v: Vec<f64>) -> Self {
        ScoreVector(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dims(model: &LinearModel, query: &QueryInstance) -> Result<()> {
    if model.dim() != query.dim() {
        return Err(Error::config(format!(
            "model has {} weights but query {} has {} features",
            model.dim(),
            query.query_id,
            query.dim()
        )));
    }
    Ok(())
}

pub fn score_query(model: &LinearModel, query: &QueryInstance) -> Result<ScoreVector> {
    check_dims(model, query)?;
    Ok(ScoreVector(
        query
            .documents()
            .iter()
            .map(|d| model.score(&d.features))
            .collect(),
    ))
}

/// `ln Σ e^{s_i}` with max subtraction. `-inf` for an empty slice.
pub fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln(e^a + e^b)`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn softmax(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Natural log of [`softmax`], without the round trip through `exp`.
pub fn log_softmax(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    let lse = log_sum_exp(s);
    Ok(s.iter().map(|v| v - lse).collect())
}

/// `e^{s_{j_f}} / Σ_{t=f..n} e^{s_{j_t}}` for a full ordering `j` and a
/// 1-based position `f`.
pub fn partial_softmax(s: &[f64], ordering: &[usize], f: usize) -> Result<f64> {
    let n = s.len();
    if ordering.len() != n || !is_permutation(ordering) {
        return Err(Error::domain(format!(
            "ordering {ordering:?} is not a permutation of 0..{n}"
        )));
    }
    if f == 0 || f > n {
        return Err(Error::domain(format!("position {f} outside 1..={n}")));
    }
    let tail: Vec<f64> = ordering[f - 1..].iter().map(|&j| s[j]).collect();
    Ok((tail[0] - log_sum_exp(&tail)).exp())
}

fn is_permutation(ordering: &[usize]) -> bool {
    let mut seen = vec![false; ordering.len()];
    ordering.iter().all(|&j| {
        j < seen.len() && !std::mem::replace(&mut seen[j], true)
    })
}
