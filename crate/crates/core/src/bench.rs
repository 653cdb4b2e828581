//! Per-iteration training cost of conventional and stochastic modes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::permutation::class_count;
use crate::ranker::{Dataset, QueryInstance};
use crate::samplers::SamplerKind;
use crate::trainer::{train, TrainConfig, TrainMode};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub modes: Vec<TrainMode>,
    pub orders: Vec<usize>,
    /// List counts `l` for stochastic runs.
    pub lists: Vec<usize>,
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub seed: u64,
    pub execution: Execution,
    pub max_classes: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: TrainMode,
    pub k: usize,
    /// Classes per query: `l` when stochastic, `n!/(n-k)!` when conventional.
    pub lists: u128,
    /// Largest query length in the data.
    pub n: usize,
    pub seconds_per_iter: f64,
}

pub const BENCH_CSV_HEADER: &str = "mode,k,l,n,seconds_per_iter";

/// Time every (mode, k, l) combination. Configurations that exceed the
/// enumeration budget are skipped with a warning.
pub fn run_bench(dataset: &Dataset, config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.iterations == 0 {
        return Err(Error::config("bench needs at least one iteration"));
    }
    let n = dataset.queries().iter().map(QueryInstance::len).max().unwrap_or(0);
    let mut rows = Vec::new();
    for &mode in &config.modes {
        for &k in &config.orders {
            let lists: Vec<Option<usize>> = match mode {
                TrainMode::Conventional => vec![None],
                TrainMode::Stochastic => config.lists.iter().copied().map(Some).collect(),
            };
            for l in lists {
                let mut cfg = TrainConfig::new(k, mode, config.seed);
                cfg.iterations = config.iterations;
                cfg.execution = config.execution;
                cfg.max_classes = config.max_classes;
                cfg.sampler.kind = config.sampler;
                if let Some(l) = l {
                    cfg.sampler.lists = l;
                }
                let report = match train(dataset, &cfg) {
                    Ok(r) => r,
                    Err(e @ Error::Resource { .. }) => {
                        log::warn!("skipping {mode} k={k}: {e}");
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                rows.push(BenchRow {
                    mode,
                    k,
                    lists: l.map_or_else(|| class_count(n, k.min(n)), |l| l as u128),
                    n,
                    seconds_per_iter: report.mean_seconds_per_iteration(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.mode, r.k, r.lists, r.n, r.seconds_per_iter);
    }
    out
}
