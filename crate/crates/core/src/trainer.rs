//! Gradient-descent training of a linear Top-k ListNet scorer.
//!
//! Each iteration visits the queries in dataset order. For every query a class
//! set is obtained (the full enumeration in conventional mode, `l` sampled
//! lists in stochastic mode), the Top-k gradient is computed and the weights
//! are updated immediately with `w ← w - η Δw`. After the iteration the
//! monitored loss is compared with the previous one and `η` is multiplied by
//! 0.1 whenever the loss got worse.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gradients::{top1_gradient, topk_gradient_with};
use crate::metrics::{evaluate_with, EvalResult, DEFAULT_CUTOFFS, DEFAULT_MIN_RELEVANT};
use crate::permutation::{
    class_count, cross_entropy_unchecked, enumerate_classes_capped, ClassSet,
};
use crate::ranker::{log_softmax, score_query, softmax, Dataset, LinearModel, QueryInstance};
use crate::samplers::{Sampler, SamplerConfig, SamplerKind};

/// Per-query class budget for conventional training.
pub const DEFAULT_MAX_CLASSES: u128 = 10_000;

/// Default initial learning rate for order `k`.
pub fn default_eta(k: usize) -> f64 {
    if k <= 1 {
        1e-3
    } else {
        1e-5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Full enumeration of all `n!/(n-k)!` classes per query.
    Conventional,
    /// `l` sampled classes per query.
    Stochastic,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(TrainMode::Conventional),
            "stochastic" => Ok(TrainMode::Stochastic),
            other => Err(Error::config(format!("unknown training mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Conventional => "conventional",
            TrainMode::Stochastic => "stochastic",
        })
    }
}

/// Loss that drives learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    /// Sum over queries of the full Top-1 cross entropy. Deterministic.
    Top1Full,
    /// Sum of the cross entropies over the iteration's own class sets.
    Sampled,
}

impl std::str::FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(Monitor::Top1Full),
            "sampled" => Ok(Monitor::Sampled),
            other => Err(Error::config(format!("unknown loss monitor {other:?}"))),
        }
    }
}

impl std::fmt::Display for Monitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Monitor::Top1Full => "top1",
            Monitor::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub mode: TrainMode,
    /// Used in stochastic mode only.
    pub sampler: SamplerConfig,
    pub eta: f64,
    pub iterations: usize,
    /// Initial weights are uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    /// Overrides random initialization when set.
    pub initial_weights: Option<Vec<f64>>,
    pub monitor: Monitor,
    /// Seeds the weight initialization.
    pub seed: u64,
    /// Stop once `|L(t) - L(t-1)| < tol`.
    pub early_stop: Option<f64>,
    /// Per-query class budget in conventional mode.
    pub max_classes: u128,
    pub execution: Execution,
    /// Minimum label counted as relevant in the report's metrics.
    pub min_relevant: u8,
}

impl TrainConfig {
    /// Defaults for order `k` and `mode`: learning rate from [`default_eta`],
    /// adaptive sampling with 50 lists, retention on for `k ≥ 2`.
    pub fn new(k: usize, mode: TrainMode, seed: u64) -> Self {
        TrainConfig {
            k,
            mode,
            sampler: SamplerConfig::for_order(SamplerKind::Adaptive, 50, k, sampler_seed(seed)),
            eta: default_eta(k),
            iterations: 100,
            init_range: 0.01,
            initial_weights: None,
            monitor: Monitor::Top1Full,
            seed,
            early_stop: None,
            max_classes: DEFAULT_MAX_CLASSES,
            execution: Execution::preferred(),
            min_relevant: DEFAULT_MIN_RELEVANT,
        }
    }

    /// Reseed both the initialization and the sampler from one run seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sampler.seed = sampler_seed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("order k must be at least 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.iterations == 0 {
            return Err(Error::config("iteration count must be at least 1"));
        }
        if !(self.init_range >= 0.0) {
            return Err(Error::config("initialization range must be non-negative"));
        }
        if self.mode == TrainMode::Stochastic {
            self.sampler.validate()?;
        }
        Ok(())
    }
}

/// Sampler seed derived from a run seed (splitmix64 finalizer).
pub fn sampler_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Supplies the class set used for a query's gradient.
pub trait ClassSource {
    fn class_set<'a>(
        &'a mut self,
        query: &QueryInstance,
        model: &LinearModel,
        k: usize,
    ) -> Result<Cow<'a, ClassSet>>;
}

impl ClassSource for Sampler {
    fn class_set<'a>(
        &'a mut self,
        query: &QueryInstance,
        model: &LinearModel,
        k: usize,
    ) -> Result<Cow<'a, ClassSet>> {
        self.sample_class_set(query, model, k).map(Cow::Owned)
    }
}

/// Exact enumeration, cached per `(n, k)`.
#[derive(Debug, Clone)]
pub struct FullEnumeration {
    cap: u128,
    cache: HashMap<(usize, usize), ClassSet>,
}

impl FullEnumeration {
    pub fn new(cap: u128) -> Self {
        FullEnumeration {
            cap,
            cache: HashMap::new(),
        }
    }
}

impl ClassSource for FullEnumeration {
    fn class_set<'a>(
        &'a mut self,
        query: &QueryInstance,
        _model: &LinearModel,
        k: usize,
    ) -> Result<Cow<'a, ClassSet>> {
        let n = query.len();
        let k = k.min(n);
        if !self.cache.contains_key(&(n, k)) {
            let set = enumerate_classes_capped(n, k, self.cap)?;
            self.cache.insert((n, k), set);
        }
        Ok(Cow::Borrowed(&self.cache[&(n, k)]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Monitored loss after each iteration.
    pub losses: Vec<f64>,
    /// Learning rate used during each iteration.
    pub etas: Vec<f64>,
    /// Wall-clock seconds per iteration.
    pub seconds: Vec<f64>,
    pub final_eta: f64,
    pub decay_events: usize,
    pub model: LinearModel,
    /// P@1 and P@10 on the training data with the final model.
    pub train_metrics: EvalResult,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.losses.len()
    }

    pub fn mean_seconds_per_iteration(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len().max(1) as f64
    }

    /// `iteration,loss,eta,seconds` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,eta,seconds\n");
        for (i, ((l, e), s)) in self.losses.iter().zip(&self.etas).zip(&self.seconds).enumerate() {
            let _ = writeln!(out, "{},{l},{e},{s}", i + 1);
        }
        out
    }

    /// Key-value document with array-valued traces.
    pub fn to_key_value(&self) -> String {
        let list = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "iterations = {}", self.iterations());
        let _ = writeln!(out, "final_eta = {}", self.final_eta);
        let _ = writeln!(out, "decay_events = {}", self.decay_events);
        let _ = writeln!(out, "weights = [{}]", list(&self.model.weights));
        let _ = writeln!(out, "loss = [{}]", list(&self.losses));
        let _ = writeln!(out, "eta = [{}]", list(&self.etas));
        let _ = writeln!(out, "seconds = [{}]", list(&self.seconds));
        for (c, m) in &self.train_metrics.means {
            let _ = writeln!(out, "train.p_at_{c} = {m}");
        }
        out
    }
}

/// Sum over queries of the full Top-1 cross entropy, `O(n)` per query.
pub fn monitor_loss(dataset: &Dataset, model: &LinearModel) -> Result<f64> {
    dataset
        .queries()
        .iter()
        .map(|q| {
            let z = score_query(model, q)?;
            let log_pz = log_softmax(&z)?;
            let py = softmax(&q.label_scores())?;
            Ok(-py.iter().zip(&log_pz).map(|(p, l)| p * l).sum::<f64>())
        })
        .sum()
}

fn sampled_loss(dataset: &Dataset, model: &LinearModel, sets: &[ClassSet]) -> Result<f64> {
    dataset
        .queries()
        .iter()
        .zip(sets)
        .map(|(q, set)| {
            let z = score_query(model, q)?;
            Ok(cross_entropy_unchecked(&q.label_scores(), &z, set))
        })
        .sum()
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    match config.mode {
        TrainMode::Conventional => {
            let max_n = dataset.queries().iter().map(QueryInstance::len).max().unwrap_or(0);
            let required = class_count(max_n, config.k.min(max_n));
            if required > config.max_classes {
                return Err(Error::Resource {
                    required,
                    cap: config.max_classes,
                });
            }
            if config.k == 1 {
                run(dataset, config, None)
            } else {
                let mut source = FullEnumeration::new(config.max_classes);
                run(dataset, config, Some(&mut source))
            }
        }
        TrainMode::Stochastic => {
            let mut sampler = Sampler::new(config.sampler.clone())?;
            run(dataset, config, Some(&mut sampler))
        }
    }
}

/// Train with a caller-supplied class source in place of the mode's default.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    source: &mut dyn ClassSource,
) -> Result<TrainReport> {
    config.validate()?;
    run(dataset, config, Some(source))
}

/// `source = None` selects the closed-form Top-1 gradient.
fn run(
    dataset: &Dataset,
    config: &TrainConfig,
    mut source: Option<&mut dyn ClassSource>,
) -> Result<TrainReport> {
    let dim = dataset.dim();
    let mut model = match &config.initial_weights {
        Some(w) if w.len() != dim => {
            return Err(Error::config(format!(
                "{} initial weights for dimension {dim}",
                w.len()
            )))
        }
        Some(w) => LinearModel::new(w.clone())?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let r = config.init_range;
            LinearModel {
                weights: (0..dim)
                    .map(|_| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 })
                    .collect(),
            }
        }
    };

    let mut eta = config.eta;
    let mut losses = Vec::with_capacity(config.iterations);
    let mut etas = Vec::with_capacity(config.iterations);
    let mut seconds = Vec::with_capacity(config.iterations);
    let mut decay_events = 0;
    let keep_sets = config.monitor == Monitor::Sampled;

    for t in 0..config.iterations {
        let start = Instant::now();
        let mut sets = Vec::new();
        for q in dataset.queries() {
            let grad = match source.as_deref_mut() {
                None => {
                    if keep_sets {
                        sets.push(enumerate_classes_capped(q.len(), 1, u128::MAX)?);
                    }
                    top1_gradient(q, &model)?
                }
                Some(src) => {
                    let set = src.class_set(q, &model, config.k)?;
                    let g = topk_gradient_with(q, &model, &set, config.execution)?;
                    if keep_sets {
                        sets.push(set.into_owned());
                    }
                    g
                }
            };
            for (w, g) in model.weights.iter_mut().zip(grad.iter()) {
                *w -= eta * g;
            }
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain(format!("weights diverged in iteration {}", t + 1)));
        }
        let loss = match config.monitor {
            Monitor::Top1Full => monitor_loss(dataset, &model)?,
            Monitor::Sampled => sampled_loss(dataset, &model, &sets)?,
        };
        seconds.push(start.elapsed().as_secs_f64());
        etas.push(eta);
        losses.push(loss);
        if let Some(&prev) = losses.iter().rev().nth(1) {
            if loss > prev {
                eta *= 0.1;
                decay_events += 1;
            }
            if config.early_stop.is_some_and(|tol| (loss - prev).abs() < tol) {
                log::debug!("early stop after iteration {}", t + 1);
                break;
            }
        }
    }

    let train_metrics = evaluate_with(
        dataset,
        &model,
        &DEFAULT_CUTOFFS,
        config.min_relevant,
        config.execution,
    )?;
    Ok(TrainReport {
        losses,
        etas,
        seconds,
        final_eta: eta,
        decay_events,
        model,
        train_metrics,
    })
}

/// Independent runs seeded `seed_base, seed_base + 1, ...`, returned in seed
/// order.
pub fn train_repeats(
    dataset: &Dataset,
    config: &TrainConfig,
    repeats: usize,
    seed_base: u64,
    exec: Execution,
) -> Result<Vec<TrainReport>> {
    let seeds: Vec<u64> = (0..repeats as u64).map(|i| seed_base.wrapping_add(i)).collect();
    exec.map(&seeds, |&s| {
        let mut cfg = config.clone().with_seed(s);
        // Parallelism goes to the runs, not inside them.
        if exec.is_parallel() {
            cfg.execution = Execution::Sequential;
        }
        train(dataset, &cfg)
    })
    .into_iter()
    .collect()
}
