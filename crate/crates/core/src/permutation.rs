//! Top-k permutation classes and their Plackett-Luce probabilities.
//!
//! A class `G_k(j_1..j_k)` holds every full ordering of the `n` documents
//! whose first `k` positions are exactly `(j_1..j_k)`. Its probability under
//! scores `s` is
//!
//! ```text
//! P_s(G) = Π_{t=1..k} e^{s_{j_t}} / Σ_{l=t..n} e^{s_{j_l}}
//! ```
//!
//! where the denominator at step `t` runs over every document not yet placed.
//! All products are accumulated in log space, which keeps `k` in the hundreds
//! from underflowing.
//!
//! Evaluating one class costs `(2n - k + 1)k / 2` additions plus `k`
//! multiplications and divisions when done naively; the log-space backward
//! pass below touches each document once.

use crate::error::{Error, Result};
use crate::ranker::{log_add_exp, log_sum_exp};

/// Default bound on `n!/(n-k)!` for full enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Ordered Top-k prefix of distinct document indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PermutationClass(Vec<usize>);

impl PermutationClass {
    /// Checked constructor for a query with `n` documents.
    pub fn new(prefix: Vec<usize>, n: usize) -> Result<Self> {
        validate_prefix(&prefix, n)?;
        Ok(PermutationClass(prefix))
    }

    pub(crate) fn from_unchecked(prefix: Vec<usize>) -> Self {
        PermutationClass(prefix)
    }

    pub fn prefix(&self) -> &[usize] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        validate_prefix(&self.0, n)
    }
}

impl std::fmt::Display for PermutationClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, ")")
    }
}

fn validate_prefix(prefix: &[usize], n: usize) -> Result<()> {
    let k = prefix.len();
    if k == 0 || k > n {
        return Err(Error::domain(format!("class order {k} outside 1..={n}")));
    }
    let mut seen = vec![false; n];
    for &j in prefix {
        if j >= n {
            return Err(Error::domain(format!("document index {j} out of range for n = {n}")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::domain(format!("document index {j} repeated in {prefix:?}")));
        }
    }
    Ok(())
}

/// A collection of classes of a common order `k`.
///
/// A full set holds all `n!/(n-k)!` prefixes exactly once and its class
/// probabilities form a distribution. A sampled set may repeat classes and
/// is never renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSet {
    k: usize,
    classes: Vec<PermutationClass>,
    full: bool,
}

impl ClassSet {
    /// Sampled set; all classes must share order `k`.
    pub fn sampled(k: usize, classes: Vec<PermutationClass>) -> Result<Self> {
        if let Some(c) = classes.iter().find(|c| c.k() != k) {
            return Err(Error::domain(format!("class {c} does not have order {k}")));
        }
        Ok(ClassSet {
            k,
            classes,
            full: false,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> &[PermutationClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    /// Keep only the classes whose mask entry is set; the result is a
    /// sampled set.
    pub fn restrict(&self, keep: &[bool]) -> ClassSet {
        ClassSet {
            k: self.k,
            classes: self
                .classes
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(c, _)| c.clone())
                .collect(),
            full: false,
        }
    }
}

/// `n!/(n-k)!`, saturating at `u128::MAX`.
pub fn class_count(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut count: u128 = 1;
    for f in (n - k + 1)..=n {
        count = count.saturating_mul(f as u128);
    }
    count
}

/// All Top-k prefixes of `0..n` in lexicographic order, bounded by
/// [`DEFAULT_ENUMERATION_CAP`].
pub fn enumerate_classes(n: usize, k: usize) -> Result<ClassSet> {
    enumerate_classes_capped(n, k, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_classes_capped(n: usize, k: usize, cap: u128) -> Result<ClassSet> {
    if k == 0 || k > n {
        return Err(Error::domain(format!("order k = {k} outside 1..={n}")));
    }
    let required = class_count(n, k);
    if required > cap {
        return Err(Error::Resource { required, cap });
    }
    let mut classes = Vec::with_capacity(required as usize);
    let mut prefix = Vec::with_capacity(k);
    let mut used = vec![false; n];
    extend(n, k, &mut prefix, &mut used, &mut classes);
    Ok(ClassSet {
        k,
        classes,
        full: true,
    })
}

fn extend(
    n: usize,
    k: usize,
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<PermutationClass>,
) {
    if prefix.len() == k {
        out.push(PermutationClass(prefix.clone()));
        return;
    }
    for j in 0..n {
        if used[j] {
            continue;
        }
        used[j] = true;
        prefix.push(j);
        extend(n, k, prefix, used, out);
        prefix.pop();
        used[j] = false;
    }
}

/// `ln P_s(G)` without validation.
pub(crate) fn log_class_probability_unchecked(s: &[f64], prefix: &[usize]) -> f64 {
    let n = s.len();
    let mut placed = vec![false; n];
    for &j in prefix {
        placed[j] = true;
    }
    let rest: Vec<f64> = (0..n).filter(|&j| !placed[j]).map(|j| s[j]).collect();
    // Walk the prefix backwards so each denominator is a running log-sum.
    let mut log_den = log_sum_exp(&rest);
    let mut log_p = 0.0;
    for &j in prefix.iter().rev() {
        log_den = log_add_exp(log_den, s[j]);
        log_p += s[j] - log_den;
    }
    log_p
}

/// Natural log of [`class_probability`].
pub fn log_class_probability(s: &[f64], class: &PermutationClass) -> Result<f64> {
    class.validate(s.len())?;
    Ok(log_class_probability_unchecked(s, class.prefix()))
}

pub fn class_probability(s: &[f64], class: &PermutationClass) -> Result<f64> {
    log_class_probability(s, class).map(f64::exp)
}

/// Per-class probabilities, in set order.
pub fn class_distribution(s: &[f64], set: &ClassSet) -> Result<Vec<f64>> {
    set.classes()
        .iter()
        .map(|c| class_probability(s, c))
        .collect()
}

/// `L = -Σ_{g ∈ set} P_y(g) ln P_z(g)`.
///
/// Over a full set this is the cross entropy between the label-induced and
/// score-induced class distributions. Over a sampled set it is the same sum
/// restricted to the sample.
pub fn cross_entropy(y: &[f64], z: &[f64], set: &ClassSet) -> Result<f64> {
    if y.len() != z.len() {
        return Err(Error::config(format!(
            "label scores have length {}, model scores {}",
            y.len(),
            z.len()
        )));
    }
    for c in set.classes() {
        c.validate(y.len())?;
    }
    Ok(cross_entropy_unchecked(y, z, set))
}

pub(crate) fn cross_entropy_unchecked(y: &[f64], z: &[f64], set: &ClassSet) -> f64 {
    set.classes()
        .iter()
        .map(|c| {
            let p_y = log_class_probability_unchecked(y, c.prefix()).exp();
            -p_y * log_class_probability_unchecked(z, c.prefix())
        })
        .sum()
}
