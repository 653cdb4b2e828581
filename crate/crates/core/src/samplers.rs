//! Sampling Top-k permutation classes for stochastic training.
//!
//! Every sampler kind reduces to a per-document distribution. A list is drawn
//! position by position without replacement, each pick proportional to the
//! distribution restricted to the documents not yet chosen. Under the `fixed`
//! kind that is exactly the Plackett-Luce law of the labels, so sampled class
//! frequencies converge to the class probabilities of the label scores.
//!
//! With retention enabled, a drawn list is kept with probability
//! `Σ labels / (k·S)` and redrawn otherwise, up to a bounded number of
//! attempts; the last attempt is always kept, so a set always holds exactly
//! `lists` classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::permutation::{ClassSet, PermutationClass};
use crate::ranker::{score_query, softmax, LinearModel, QueryInstance, MAX_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Every document equally likely.
    Uniform,
    /// Softmax of the human labels.
    Fixed,
    /// Softmax of the current model scores.
    Adaptive,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "fixed" => Ok(SamplerKind::Fixed),
            "adaptive" => Ok(SamplerKind::Adaptive),
            other => Err(Error::config(format!("unknown sampler kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Fixed => "fixed",
            SamplerKind::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Number of lists `l` drawn per query.
    pub lists: usize,
    pub resample: bool,
    pub max_retention_attempts: usize,
    /// Maximum label value `S` in the retention probability.
    pub max_label: f64,
    pub seed: u64,
}

impl SamplerConfig {
    /// Defaults for order `k`: retention is on for `k ≥ 2` and off for Top-1.
    pub fn for_order(kind: SamplerKind, lists: usize, k: usize, seed: u64) -> Self {
        SamplerConfig {
            kind,
            lists,
            resample: k >= 2,
            max_retention_attempts: 20,
            max_label: MAX_LABEL as f64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lists == 0 {
            return Err(Error::config("list count must be at least 1"));
        }
        if self.max_retention_attempts == 0 {
            return Err(Error::config("max retention attempts must be at least 1"));
        }
        if !(self.max_label > 0.0) {
            return Err(Error::config("maximum label must be positive"));
        }
        Ok(())
    }
}

/// Draw `k` distinct documents sequentially, each proportional to
/// `probabilities` restricted to the documents not yet drawn.
pub fn sample_class<R: Rng + ?Sized>(
    probabilities: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<PermutationClass> {
    let n = probabilities.len();
    if k == 0 || k > n {
        return Err(Error::domain(format!("cannot draw {k} of {n} documents")));
    }
    let mut taken = vec![false; n];
    let mut prefix = Vec::with_capacity(k);
    for _ in 0..k {
        let mass: f64 = (0..n).filter(|&j| !taken[j]).map(|j| probabilities[j]).sum();
        let pick = if mass > 0.0 {
            let u = rng.gen::<f64>() * mass;
            let mut acc = 0.0;
            let mut last = None;
            let mut chosen = None;
            for j in (0..n).filter(|&j| !taken[j]) {
                if probabilities[j] <= 0.0 {
                    continue;
                }
                last = Some(j);
                acc += probabilities[j];
                if u < acc {
                    chosen = Some(j);
                    break;
                }
            }
            // Rounding can leave u just above the accumulated mass.
            chosen.or(last).expect("positive mass has a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|&j| !taken[j]).collect();
            free[rng.gen_range(0..free.len())]
        };
        taken[pick] = true;
        prefix.push(pick);
    }
    Ok(PermutationClass::from_unchecked(prefix))
}

pub fn document_distribution(
    kind: SamplerKind,
    query: &QueryInstance,
    model: &LinearModel,
) -> Result<Vec<f64>> {
    match kind {
        SamplerKind::Uniform => Ok(vec![1.0 / query.len() as f64; query.len()]),
        SamplerKind::Fixed => softmax(&query.label_scores()),
        SamplerKind::Adaptive => softmax(&score_query(model, query)?),
    }
}

/// `Σ_{t} label(j_t) / (k·S)`, clamped to `[0, 1]`.
pub fn retention_probability(
    class: &PermutationClass,
    query: &QueryInstance,
    max_label: f64,
) -> Result<f64> {
    if !(max_label > 0.0) {
        return Err(Error::config(format!("maximum label must be positive, got {max_label}")));
    }
    class.validate(query.len())?;
    let docs = query.documents();
    let total: f64 = class.prefix().iter().map(|&j| docs[j].label as f64).sum();
    Ok((total / (class.k() as f64 * max_label)).clamp(0.0, 1.0))
}

/// Seeded sampler; owns its generator for the length of a training run.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: SamplerConfig,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Sampler { config, rng })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Draw `lists` Top-k classes for `query`. Queries shorter than `k` use
    /// order `n`.
    pub fn sample_class_set(
        &mut self,
        query: &QueryInstance,
        model: &LinearModel,
        k: usize,
    ) -> Result<ClassSet> {
        if k == 0 {
            return Err(Error::config("order k must be at least 1"));
        }
        let k = k.min(query.len());
        let probs = document_distribution(self.config.kind, query, model)?;
        let mut classes = Vec::with_capacity(self.config.lists);
        for _ in 0..self.config.lists {
            let mut attempt = 1;
            let class = loop {
                let class = sample_class(&probs, k, &mut self.rng)?;
                if !self.config.resample || attempt >= self.config.max_retention_attempts {
                    break class;
                }
                let keep = retention_probability(&class, query, self.config.max_label)?;
                if self.rng.gen::<f64>() < keep {
                    break class;
                }
                attempt += 1;
            };
            classes.push(class);
        }
        ClassSet::sampled(k, classes)
    }
}

/// One-shot form of [`Sampler::sample_class_set`] seeded from `config`.
pub fn sample_class_set(
    config: &SamplerConfig,
    query: &QueryInstance,
    model: &LinearModel,
    k: usize,
) -> Result<ClassSet> {
    Sampler::new(config.clone())?.sample_class_set(query, model, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permutation::{class_probability, enumerate_classes};
    use crate::ranker::Document;
    use approx::assert_abs_diff_eq;
    use std::collections::HashMap;

    fn query_with_labels(labels: &[u8]) -> QueryInstance {
        let docs = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| Document::new(vec![i as f64, 1.0], y, format!("d{i}")).unwrap())
            .collect();
        QueryInstance::new("q", docs).unwrap()
    }

    #[test]
    fn forced_single_document() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_class(&[1.0], 1, &mut rng).unwrap().prefix(), &[0]);
        }
        assert!(sample_class(&[0.5, 0.5], 3, &mut rng).is_err());
        let q = query_with_labels(&[1]);
        let cfg = SamplerConfig::for_order(SamplerKind::Uniform, 1, 1, 0);
        let set = sample_class_set(&cfg, &q, &LinearModel::zeros(2), 1).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.classes()[0].prefix(), &[0]);
    }

    #[test]
    fn uniform_full_orderings_are_equally_likely() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let c = sample_class(&[1.0 / 3.0; 3], 3, &mut rng).unwrap();
            *counts.entry(c.prefix().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.02);
        }
    }

    #[test]
    fn near_one_hot_picks_hot_index() {
        let eps = 1e-12;
        let probs = [eps, eps, 1.0 - 3.0 * eps, eps];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..10_000)
            .filter(|_| sample_class(&probs, 1, &mut rng).unwrap().prefix()[0] == 2)
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn zero_mass_tail_falls_back_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = sample_class(&[1.0, 0.0, 0.0], 3, &mut rng).unwrap();
        assert_eq!(c.prefix()[0], 0);
        let mut rest = c.prefix()[1..].to_vec();
        rest.sort();
        assert_eq!(rest, vec![1, 2]);
    }

    #[test]
    fn distributions() {
        let q = query_with_labels(&[2, 0, 1, 1]);
        assert_eq!(
            document_distribution(SamplerKind::Uniform, &q, &LinearModel::zeros(2)).unwrap(),
            vec![0.25; 4]
        );
        let q2 = query_with_labels(&[2, 0]);
        let p = document_distribution(SamplerKind::Fixed, &q2, &LinearModel::zeros(2)).unwrap();
        assert_abs_diff_eq!(p[0], 0.88080, epsilon = 1e-5);
        assert_abs_diff_eq!(p[1], 0.11920, epsilon = 1e-5);
        let p = document_distribution(SamplerKind::Adaptive, &q, &LinearModel::zeros(2)).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = document_distribution(SamplerKind::Adaptive, &q, &LinearModel::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert!(p[3] > p[0]);
    }

    #[test]
    fn retention_examples() {
        let q = query_with_labels(&[2, 1, 0, 2]);
        let c = PermutationClass::new(vec![0, 1], 4).unwrap();
        assert_abs_diff_eq!(retention_probability(&c, &q, 2.0).unwrap(), 0.75);
        let top = PermutationClass::new(vec![3, 0], 4).unwrap();
        assert_eq!(retention_probability(&top, &q, 2.0).unwrap(), 1.0);
        let none = PermutationClass::new(vec![2], 4).unwrap();
        assert_eq!(retention_probability(&none, &q, 2.0).unwrap(), 0.0);
        assert!(matches!(retention_probability(&c, &q, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn retention_cap_keeps_list_count() {
        let q = query_with_labels(&[0, 0, 0, 0, 0]);
        let mut cfg = SamplerConfig::for_order(SamplerKind::Uniform, 7, 2, 3);
        assert!(cfg.resample);
        cfg.max_retention_attempts = 5;
        let set = sample_class_set(&cfg, &q, &LinearModel::zeros(2), 2).unwrap();
        assert_eq!(set.len(), 7);
        assert!(set.classes().iter().all(|c| c.k() == 2));
    }

    #[test]
    fn short_queries_clamp_order() {
        let q = query_with_labels(&[1, 2]);
        let cfg = SamplerConfig::for_order(SamplerKind::Fixed, 4, 3, 9);
        let set = sample_class_set(&cfg, &q, &LinearModel::zeros(2), 3).unwrap();
        assert_eq!(set.k(), 2);
    }

    #[test]
    fn determinism() {
        let q = query_with_labels(&[2, 0, 1, 0, 0, 1]);
        let m = LinearModel::new(vec![0.2, -0.1]).unwrap();
        let cfg = SamplerConfig::for_order(SamplerKind::Adaptive, 30, 3, 17);
        let a = sample_class_set(&cfg, &q, &m, 3).unwrap();
        let b = sample_class_set(&cfg, &q, &m, 3).unwrap();
        assert_eq!(a, b);
        for c in a.classes() {
            assert!(c.validate(6).is_ok());
        }
    }

    #[test]
    fn fixed_top1_marginal() {
        let q = query_with_labels(&[2, 0, 0, 0]);
        let mut cfg = SamplerConfig::for_order(SamplerKind::Fixed, 10_000, 1, 5);
        cfg.resample = false;
        let set = sample_class_set(&cfg, &q, &LinearModel::zeros(2), 1).unwrap();
        let hits = set.classes().iter().filter(|c| c.prefix()[0] == 0).count();
        let e2 = 2f64.exp();
        assert!((hits as f64 / 1e4 - e2 / (e2 + 3.0)).abs() < 0.02);
    }

    #[test]
    fn fixed_law_matches_class_probabilities() {
        let q = query_with_labels(&[2, 1, 0, 1]);
        let mut cfg = SamplerConfig::for_order(SamplerKind::Fixed, 100_000, 2, 6);
        cfg.resample = false;
        let set = sample_class_set(&cfg, &q, &LinearModel::zeros(2), 2).unwrap();
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for c in set.classes() {
            *counts.entry(c.prefix().to_vec()).or_default() += 1;
        }
        let y = q.label_scores();
        let tv: f64 = enumerate_classes(4, 2)
            .unwrap()
            .classes()
            .iter()
            .map(|c| {
                let emp = *counts.get(c.prefix()).unwrap_or(&0) as f64 / 1e5;
                (emp - class_probability(&y, c).unwrap()).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn retention_raises_mean_label() {
        let q = query_with_labels(&[2, 0, 1, 0, 0, 2]);
        let mean_label = |resample: bool| {
            let mut cfg = SamplerConfig::for_order(SamplerKind::Uniform, 100_000, 2, 12);
            cfg.resample = resample;
            let set = sample_class_set(&cfg, &q, &LinearModel::zeros(2), 2).unwrap();
            let total: f64 = set
                .classes()
                .iter()
                .flat_map(|c| c.prefix().iter().map(|&j| q.documents()[j].label as f64))
                .sum();
            total / (2.0 * set.len() as f64)
        };
        assert!(mean_label(true) >= mean_label(false));
    }
}
