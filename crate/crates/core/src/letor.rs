//! LETOR text format and a seeded synthetic generator.
//!
//! One document per line:
//!
//! ```text
//! <label> qid:<id> <index>:<value> <index>:<value> ... #<comment>
//! ```
//!
//! Feature indices are 1-based and strictly increasing; missing indices read
//! as 0.0 and the dimension is the largest index in the file. Lines are
//! grouped by qid in order of first appearance. The trailing comment becomes
//! the document id.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ranker::{Dataset, Document, QueryInstance, MAX_LABEL};

/// One parsed line, before densification.
#[derive(Debug, Clone, PartialEq)]
pub struct LetorLine {
    pub label: u8,
    pub qid: String,
    /// `(index, value)` pairs with 1-based, strictly increasing indices.
    pub features: Vec<(usize, f64)>,
    pub comment: Option<String>,
}

impl LetorLine {
    /// Parse a single non-empty line; `line_no` is only used in errors.
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b, Some(c.trim().to_string())),
            None => (line, None),
        };
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().ok_or_else(|| err("missing label".into()))?;
        let label: i64 = label_tok
            .parse()
            .map_err(|_| err(format!("label {label_tok:?} is not an integer")))?;
        if !(0..=MAX_LABEL as i64).contains(&label) {
            return Err(err(format!("label {label} outside {{0,1,2}}")));
        }
        let qid_tok = tokens.next().ok_or_else(|| err("missing qid".into()))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .filter(|q| !q.is_empty())
            .ok_or_else(|| err(format!("expected qid:<id>, found {qid_tok:?}")))?;
        let mut features = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed feature pair {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("malformed feature index in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("malformed feature value in {tok:?}")))?;
            if idx == 0 || idx <= last {
                return Err(err(format!("feature index {idx} is not strictly increasing from 1")));
            }
            if !val.is_finite() {
                return Err(err(format!("feature {idx} is not finite")));
            }
            last = idx;
            features.push((idx, val));
        }
        Ok(LetorLine {
            label: label as u8,
            qid: qid.to_string(),
            features,
            comment,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Per-query min-max scaling of every feature to `[0, 1]`.
    pub normalize: bool,
}

pub fn parse_letor<R: BufRead>(reader: R) -> Result<Dataset> {
    parse_letor_with(reader, ParseOptions::default())
}

pub fn parse_letor_str(text: &str) -> Result<Dataset> {
    parse_letor(text.as_bytes())
}

pub fn parse_letor_with<R: BufRead>(reader: R, options: ParseOptions) -> Result<Dataset> {
    let mut groups: Vec<(String, Vec<LetorLine>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dim = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parsed = LetorLine::parse(line, i + 1)?;
        if let Some(&(idx, _)) = parsed.features.last() {
            dim = dim.max(idx);
        }
        let slot = *index.entry(parsed.qid.clone()).or_insert_with(|| {
            groups.push((parsed.qid.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(parsed);
    }
    if groups.is_empty() {
        return Err(Error::domain("no documents in LETOR input"));
    }
    let mut queries = Vec::with_capacity(groups.len());
    for (qid, lines) in groups {
        if lines.is_empty() {
            log::warn!("dropping query {qid} with no documents");
            continue;
        }
        let mut docs = Vec::with_capacity(lines.len());
        for line in lines {
            let mut features = vec![0.0; dim];
            for (idx, v) in line.features {
                features[idx - 1] = v;
            }
            docs.push(Document::new(features, line.label, line.comment.unwrap_or_default())?);
        }
        if options.normalize {
            normalize_min_max(&mut docs);
        }
        queries.push(QueryInstance::new(qid, docs)?);
    }
    Dataset::new(queries)
}

fn normalize_min_max(docs: &mut [Document]) {
    let dim = docs[0].features.len();
    for c in 0..dim {
        let (lo, hi) = docs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d.features[c]), hi.max(d.features[c]))
        });
        let span = hi - lo;
        for d in docs.iter_mut() {
            d.features[c] = if span > 0.0 {
                (d.features[c] - lo) / span
            } else {
                0.0
            };
        }
    }
}

/// Write every feature index explicitly, grouped by query.
pub fn write_letor<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for q in dataset.queries() {
        for d in q.documents() {
            write!(out, "{} qid:{}", d.label, q.query_id)?;
            for (i, v) in d.features.iter().enumerate() {
                // Debug formatting is the shortest exact round-trip form.
                write!(out, " {}:{:?}", i + 1, v)?;
            }
            if !d.doc_id.is_empty() {
                write!(out, " #{}", d.doc_id)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_letor_string(dataset: &Dataset) -> String {
    let mut buf = Vec::new();
    write_letor(dataset, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("LETOR output is UTF-8")
}

/// Parameters of a synthetic, linearly graded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_queries: usize,
    pub docs_per_query: usize,
    pub dim: usize,
    /// Ground-truth weights defining the latent score `w · x`.
    pub weights: Vec<f64>,
    /// Probability that a label is replaced by a uniform draw from `{0,1,2}`.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Synthetic setup whose ground-truth weights are drawn uniformly from `[-1, 1]`
    /// by a generator derived from `seed`.
    pub fn with_seeded_weights(
        num_queries: usize,
        docs_per_query: usize,
        dim: usize,
        noise: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_7E16_u64);
        let weights = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        SyntheticSpec {
            num_queries,
            docs_per_query,
            dim,
            weights,
            noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.docs_per_query == 0 || self.dim == 0 {
            return Err(Error::config("synthetic counts must all be at least 1"));
        }
        if self.weights.len() != self.dim {
            return Err(Error::config(format!(
                "{} ground-truth weights for dimension {}",
                self.weights.len(),
                self.dim
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::config(format!("noise {} outside [0, 1)", self.noise)));
        }
        Ok(())
    }
}

/// Features uniform on `[0,1)^d`; per query, documents ranked by latent score
/// get label 2 in the top third, 1 in the middle third and 0 otherwise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.docs_per_query;
    let mut queries = Vec::with_capacity(spec.num_queries);
    for qi in 0..spec.num_queries {
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..spec.dim).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let latent: Vec<f64> = features
            .iter()
            .map(|x| x.iter().zip(&spec.weights).map(|(a, b)| a * b).sum())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
        let mut labels = vec![0u8; n];
        for (rank, &j) in order.iter().enumerate() {
            labels[j] = if 3 * rank < n {
                2
            } else if 3 * rank < 2 * n {
                1
            } else {
                0
            };
        }
        for label in labels.iter_mut() {
            if rng.gen::<f64>() < spec.noise {
                *label = rng.gen_range(0..=MAX_LABEL);
            }
        }
        let docs = features
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(j, (x, y))| Document::new(x, y, format!("q{}-d{j}", qi + 1)))
            .collect::<Result<Vec<_>>>()?;
        queries.push(QueryInstance::new((qi + 1).to_string(), docs)?);
    }
    Dataset::new(queries)
}
