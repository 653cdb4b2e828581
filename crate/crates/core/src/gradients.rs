//! Gradients of the Top-k cross entropy with respect to linear weights.
//!
//! For a class `g` with prefix `(j_1..j_k)` extended to a full ordering
//! `(j_1..j_n)`, the log-likelihood under model scores `z` is
//!
//! ```text
//! ln P_z(g) = Σ_{f=1..k} [ z_{j_f} - ln Σ_{v=f..n} e^{z_{j_v}} ]
//! ```
//!
//! so the descent direction of `L = -Σ_g P_y(g) ln P_z(g)` is
//!
//! ```text
//! Δw = Σ_g P_y(g) Σ_{f=1..k} [ Σ_{v=f..n} σ̂_f(z, v) x_{j_v} - x_{j_f} ]
//! ```
//!
//! with `σ̂_f(z, v) = e^{z_{j_v}} / Σ_{t=f..n} e^{z_{j_t}}`, the partial softmax
//! of the tail that starts at position `f`. The update is `w ← w - η Δw`.
//! For `k = 1` over the full set this collapses to
//! `Σ_j [σ(z)_j - σ(y)_j] x_j`.
//!
//! The tail sums are built in one backward pass over the ordering with a
//! running max, so each class costs `O(n·d)`.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::permutation::{
    cross_entropy, log_class_probability_unchecked, ClassSet, PermutationClass,
};
use crate::ranker::{check_dims, score_query, softmax, LinearModel, QueryInstance};

/// Gradient in weight space.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl Deref for GradientVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Closed-form Top-1 gradient `Σ_j [σ(z)_j - σ(y)_j] x_j`.
pub fn top1_gradient(query: &QueryInstance, model: &LinearModel) -> Result<GradientVector> {
    let z = score_query(model, query)?;
    let pz = softmax(&z)?;
    let py = softmax(&query.label_scores())?;
    let mut grad = vec![0.0; model.dim()];
    for ((doc, a), b) in query.documents().iter().zip(&pz).zip(&py) {
        let c = a - b;
        for (g, x) in grad.iter_mut().zip(&doc.features) {
            *g += c * x;
        }
    }
    Ok(GradientVector(grad))
}

pub fn topk_gradient(
    query: &QueryInstance,
    model: &LinearModel,
    set: &ClassSet,
) -> Result<GradientVector> {
    topk_gradient_with(query, model, set, Execution::preferred())
}

/// [`topk_gradient`] with an explicit execution strategy. Per-class
/// contributions are reduced in a fixed order, so the result does not depend
/// on `exec`.
pub fn topk_gradient_with(
    query: &QueryInstance,
    model: &LinearModel,
    set: &ClassSet,
    exec: Execution,
) -> Result<GradientVector> {
    if set.is_empty() {
        return Err(Error::domain("gradient over an empty class set"));
    }
    let z = score_query(model, query)?;
    let n = query.len();
    for c in set.classes() {
        c.validate(n)?;
    }
    let y = query.label_scores();
    let dim = model.dim();
    let grad = exec.chunked_sum(set.classes(), dim, |class, acc| {
        let suffix = complement(class.prefix(), n);
        accumulate_class(query, &z, &y, class.prefix(), &suffix, acc);
    });
    Ok(GradientVector(grad))
}

/// Weighted contribution `P_y(g) Σ_f [...]` of one class, with an explicit
/// order for the documents outside the prefix.
pub fn class_contribution(
    query: &QueryInstance,
    model: &LinearModel,
    class: &PermutationClass,
    suffix: &[usize],
) -> Result<GradientVector> {
    let n = query.len();
    class.validate(n)?;
    let mut expected = complement(class.prefix(), n);
    let mut given = suffix.to_vec();
    given.sort_unstable();
    expected.sort_unstable();
    if given != expected {
        return Err(Error::domain(format!(
            "suffix {suffix:?} is not the complement of prefix {class}"
        )));
    }
    let z = score_query(model, query)?;
    let y = query.label_scores();
    let mut acc = vec![0.0; model.dim()];
    accumulate_class(query, &z, &y, class.prefix(), suffix, &mut acc);
    Ok(GradientVector(acc))
}

fn complement(prefix: &[usize], n: usize) -> Vec<usize> {
    let mut placed = vec![false; n];
    for &j in prefix {
        placed[j] = true;
    }
    (0..n).filter(|&j| !placed[j]).collect()
}

fn accumulate_class(
    query: &QueryInstance,
    z: &[f64],
    y: &[f64],
    prefix: &[usize],
    suffix: &[usize],
    acc: &mut [f64],
) {
    let weight = log_class_probability_unchecked(y, prefix).exp();
    if weight == 0.0 {
        return;
    }
    let docs = query.documents();
    let dim = acc.len();
    // Running tail state relative to the current max score `m`:
    // den = Σ e^{z - m}, num = Σ e^{z - m} x.
    let mut m = f64::NEG_INFINITY;
    let mut den = 0.0;
    let mut num = vec![0.0; dim];
    let mut inner = vec![0.0; dim];
    let push = |j: usize, m: &mut f64, den: &mut f64, num: &mut [f64]| {
        let zj = z[j];
        if zj > *m {
            let scale = (*m - zj).exp();
            *den *= scale;
            num.iter_mut().for_each(|v| *v *= scale);
            *m = zj;
        }
        let e = (zj - *m).exp();
        *den += e;
        for (v, x) in num.iter_mut().zip(&docs[j].features) {
            *v += e * x;
        }
    };
    for &j in suffix.iter().rev() {
        push(j, &mut m, &mut den, &mut num);
    }
    for &j in prefix.iter().rev() {
        push(j, &mut m, &mut den, &mut num);
        for ((s, v), x) in inner.iter_mut().zip(&num).zip(&docs[j].features) {
            *s += v / den - x;
        }
    }
    for (a, s) in acc.iter_mut().zip(&inner) {
        *a += weight * s;
    }
}

/// Set cross entropy of a query under `model`.
pub fn query_loss(query: &QueryInstance, model: &LinearModel, set: &ClassSet) -> Result<f64> {
    let z = score_query(model, query)?;
    cross_entropy(&query.label_scores(), &z, set)
}

/// Central differences `[L(w + h e_c) - L(w - h e_c)] / 2h` of [`query_loss`].
pub fn finite_difference_gradient(
    query: &QueryInstance,
    model: &LinearModel,
    set: &ClassSet,
    h: f64,
) -> Result<GradientVector> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {h}")));
    }
    check_dims(model, query)?;
    let mut grad = Vec::with_capacity(model.dim());
    let mut probe = model.clone();
    for c in 0..model.dim() {
        let w = model.weights[c];
        probe.weights[c] = w + h;
        let up = query_loss(query, &probe, set)?;
        probe.weights[c] = w - h;
        let down = query_loss(query, &probe, set)?;
        probe.weights[c] = w;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(GradientVector(grad))
}

/// Largest componentwise relative error between two gradients; components
/// whose absolute difference is at most `abs_tol` count as exact.
pub fn max_relative_error(a: &[f64], b: &[f64], abs_tol: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = (x - y).abs();
            if diff <= abs_tol {
                0.0
            } else {
                diff / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Grid of seeded random instances for checking [`topk_gradient`] against
/// finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub h: f64,
    /// Fixed order; when unset, instance `i` uses `1 + i mod min(4, n)`.
    pub k: Option<usize>,
    pub n_min: usize,
    pub n_max: usize,
    pub dim: usize,
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 50,
            seed: 0,
            h: 1e-5,
            k: None,
            n_min: 3,
            n_max: 6,
            dim: 4,
            abs_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub instances: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Largest gap between the Top-k and closed-form Top-1 gradients over
    /// the `k = 1` instances, if any.
    pub top1_reduction_error: Option<f64>,
}

pub fn run_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};

    if config.n_min == 0 || config.n_min > config.n_max || config.dim == 0 {
        return Err(Error::config("gradcheck needs 1 <= n_min <= n_max and dim >= 1"));
    }
    if config.k == Some(0) {
        return Err(Error::config("order k must be at least 1"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let span = config.n_max - config.n_min + 1;
    let mut report = GradCheckReport {
        instances: config.instances,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        top1_reduction_error: None,
    };
    for i in 0..config.instances {
        let n = config.n_min + i % span;
        let k = config.k.unwrap_or(1 + i % n.min(4)).min(n);
        let docs = (0..n)
            .map(|j| {
                let x = (0..config.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                crate::ranker::Document::new(x, rng.gen_range(0..=2u8), format!("d{j}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let query = QueryInstance::new(format!("g{i}"), docs)?;
        let model = LinearModel::new((0..config.dim).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let set = crate::permutation::enumerate_classes(n, k)?;
        let analytic = topk_gradient(&query, &model, &set)?;
        let numeric = finite_difference_gradient(&query, &model, &set, config.h)?;
        report.max_relative_error = report
            .max_relative_error
            .max(max_relative_error(&analytic, &numeric, config.abs_tol));
        report.max_absolute_error = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(report.max_absolute_error, f64::max);
        if k == 1 {
            let closed = top1_gradient(&query, &model)?;
            let gap = analytic
                .iter()
                .zip(closed.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            report.top1_reduction_error = Some(report.top1_reduction_error.unwrap_or(0.0).max(gap));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permutation::enumerate_classes;
    use crate::ranker::Document;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn query(rows: Vec<(Vec<f64>, u8)>) -> QueryInstance {
        let docs = rows
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| Document::new(x, y, format!("d{i}")).unwrap())
            .collect();
        QueryInstance::new("q", docs).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (QueryInstance, LinearModel) {
        let rows = (0..n)
            .map(|_| {
                let x = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (x, rng.gen_range(0..=2u8))
            })
            .collect();
        let w = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (query(rows), LinearModel::new(w).unwrap())
    }

    #[test]
    fn top1_closed_form_example() {
        let q = query(vec![(vec![1.0, 0.0], 2), (vec![0.0, 1.0], 0)]);
        let g = top1_gradient(&q, &LinearModel::zeros(2)).unwrap();
        assert_abs_diff_eq!(g[0], -0.38080, epsilon = 1e-5);
        assert_abs_diff_eq!(g[1], 0.38080, epsilon = 1e-5);
    }

    #[test]
    fn top1_vanishes_when_scores_match_labels() {
        let q = query(vec![(vec![2.0], 2), (vec![1.0], 1), (vec![0.0], 0)]);
        let g = top1_gradient(&q, &LinearModel::new(vec![1.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
        let single = query(vec![(vec![3.0, -1.0], 1)]);
        let g = top1_gradient(&single, &LinearModel::new(vec![0.2, 0.4]).unwrap()).unwrap();
        assert_eq!(g.0, vec![0.0, 0.0]);
    }

    #[test]
    fn topk_k1_reduces_to_top1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=6 {
            let (q, m) = random_instance(&mut rng, n, 3);
            let a = top1_gradient(&q, &m).unwrap();
            let b = topk_gradient(&q, &m, &enumerate_classes(n, 1).unwrap()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn topk_vanishes_at_optimum() {
        let q = query(vec![
            (vec![2.0, 1.0], 2),
            (vec![1.0, 1.0], 1),
            (vec![0.0, 1.0], 0),
            (vec![1.0, 1.0], 1),
            (vec![0.0, 1.0], 0),
        ]);
        let m = LinearModel::new(vec![1.0, 0.0]).unwrap();
        for k in 1..=5 {
            let g = topk_gradient(&q, &m, &enumerate_classes(5, k).unwrap()).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-10), "k={k}: {g:?}");
        }
    }

    #[test]
    fn topk_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, m) = random_instance(&mut rng, 4, 3);
        let set = enumerate_classes(4, 2).unwrap();
        let a = topk_gradient(&q, &m, &set).unwrap();
        let b = finite_difference_gradient(&q, &m, &set, 1e-5).unwrap();
        assert!(max_relative_error(&a, &b, 1e-8) < 1e-4, "{a:?} vs {b:?}");
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, m) = random_instance(&mut rng, 5, 2);
        let m = LinearModel::new(m.weights.iter().map(|w| w * 4.0).collect()).unwrap();
        let set = enumerate_classes(5, 2).unwrap();
        let exact = topk_gradient(&q, &m, &set).unwrap();
        let err = |h: f64| {
            let fd = finite_difference_gradient(&q, &m, &set, h).unwrap();
            exact.iter().zip(fd.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_features_give_zero_gradient() {
        let q = query(vec![(vec![0.0, 0.0], 2), (vec![0.0, 0.0], 0), (vec![0.0, 0.0], 1)]);
        let m = LinearModel::new(vec![0.3, -0.2]).unwrap();
        let set = enumerate_classes(3, 2).unwrap();
        assert!(topk_gradient(&q, &m, &set).unwrap().iter().all(|v| *v == 0.0));
        assert!(finite_difference_gradient(&q, &m, &set, 1e-5).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn suffix_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (q, m) = random_instance(&mut rng, 5, 4);
        let class = PermutationClass::new(vec![3, 1], 5).unwrap();
        let base = class_contribution(&q, &m, &class, &[0, 2, 4]).unwrap();
        for suffix in [[4, 2, 0], [2, 0, 4], [0, 4, 2]] {
            let other = class_contribution(&q, &m, &class, &suffix).unwrap();
            for (a, b) in base.iter().zip(other.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(class_contribution(&q, &m, &class, &[0, 2]).is_err());
        assert!(class_contribution(&q, &m, &class, &[0, 2, 1]).is_err());
    }

    #[test]
    fn restriction_matches_masked_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, m) = random_instance(&mut rng, 5, 3);
        let full = enumerate_classes(5, 2).unwrap();
        let keep: Vec<bool> = (0..full.len()).map(|i| i % 3 != 1).collect();
        let part = full.restrict(&keep);
        let g = topk_gradient(&q, &m, &part).unwrap();
        let mut expected = vec![0.0; 3];
        for c in part.classes() {
            let suffix = complement(c.prefix(), 5);
            for (e, v) in expected.iter_mut().zip(class_contribution(&q, &m, c, &suffix).unwrap().iter()) {
                *e += v;
            }
        }
        for (a, b) in g.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let q = query(vec![(vec![900.0], 2), (vec![-900.0], 0), (vec![0.0], 1)]);
        let m = LinearModel::new(vec![1.0]).unwrap();
        let g = topk_gradient(&q, &m, &enumerate_classes(3, 2).unwrap()).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_set_and_bad_step_rejected() {
        let q = query(vec![(vec![1.0], 0)]);
        let m = LinearModel::zeros(1);
        let empty = ClassSet::sampled(1, vec![]).unwrap();
        assert!(matches!(topk_gradient(&q, &m, &empty), Err(Error::Domain(_))));
        let full = enumerate_classes(1, 1).unwrap();
        assert!(finite_difference_gradient(&q, &m, &full, 0.0).is_err());
    }

    #[test]
    fn default_grid_passes() {
        let r = run_gradcheck(&GradCheckConfig::default()).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert!(r.top1_reduction_error.unwrap() < 1e-10);
        let coarse = run_gradcheck(&GradCheckConfig { h: 1e-3, ..Default::default() }).unwrap();
        assert!(coarse.max_absolute_error > r.max_absolute_error);
    }

    #[test]
    fn execution_modes_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (q, m) = random_instance(&mut rng, 12, 4);
        let set = enumerate_classes(12, 2).unwrap();
        let a = topk_gradient_with(&q, &m, &set, Execution::Sequential).unwrap();
        let b = topk_gradient_with(&q, &m, &set, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
