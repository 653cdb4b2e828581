//! Listwise learning to rank with Top-k ListNet.
//!
//! The crate covers the whole training pipeline for a linear scorer:
//!
//! - [`ranker`]: documents, queries, the linear model and softmax kernels.
//! - [`letor`]: LETOR text format I/O and a seeded synthetic generator.
//! - [`permutation`]: exact Top-k permutation-class enumeration and the
//!   Plackett-Luce class probabilities; doubles as a brute-force oracle.
//! - [`gradients`]: closed-form Top-1 gradient, the general Top-k gradient over
//!   a class set, and a central finite-difference reference.
//! - [`samplers`]: uniform, fixed and adaptive list sampling with optional
//!   label-driven retention.
//! - [`trainer`]: gradient descent in conventional (full enumeration) or
//!   stochastic (sampled) mode.
//! - [`metrics`]: precision at a cutoff and multi-run aggregation.
//! - [`cli`]: the `listnet` command-line front end.
//!
//! Heavy inner loops (per-class gradient contributions, per-query evaluation,
//! repeated runs) go through [`Execution`], which uses rayon when the
//! `parallel` feature is enabled and a sequential loop otherwise. Both paths
//! reduce in the same fixed order, so results are bitwise identical.

pub mod bench;
pub mod cli;
pub mod error;
pub mod exec;
pub mod gradients;
pub mod letor;
pub mod metrics;
pub mod permutation;
pub mod ranker;
pub mod samplers;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
pub use gradients::{finite_difference_gradient, top1_gradient, topk_gradient, GradientVector};
pub use letor::{generate_synthetic, parse_letor, parse_letor_str, write_letor, SyntheticSpec};
pub use metrics::{aggregate_runs, evaluate, precision_at, EvalResult, RunSummary};
pub use permutation::{
    class_distribution, class_probability, cross_entropy, enumerate_classes, ClassSet,
    PermutationClass,
};
pub use ranker::{
    partial_softmax, score_query, softmax, Dataset, Document, LinearModel, QueryInstance,
    ScoreVector,
};
pub use samplers::{
    document_distribution, retention_probability, sample_class, sample_class_set, Sampler,
    SamplerConfig, SamplerKind,
};
pub use trainer::{monitor_loss, train, train_with, Monitor, TrainConfig, TrainMode, TrainReport};
