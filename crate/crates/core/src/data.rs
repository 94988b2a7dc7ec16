//! Shared domain types: target vectors, quantile rows, labeled sets and the
//! seeded partitioning used by every experiment.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// True target vector z ∈ ℝ^K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector(pub Vec<f64>);

impl TargetVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        TargetVector(values)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }
}

/// Lower and upper predicted quantiles for each target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QuantileRow {
    /// Builds a row, swapping any crossed pair so that `lo[k] <= hi[k]`.
    pub fn new(mut lo: Vec<f64>, mut hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "quantile row halves differ in length");
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            if *l > *h {
                std::mem::swap(l, h);
            }
        }
        QuantileRow { lo, hi }
    }

    pub fn k(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Tune,
    Cal,
    Test,
    /// Not yet partitioned.
    Pool,
}

/// Paired features, predicted quantile rows and true targets.
///
/// `quantiles` is either empty (no predictor applied yet) or has one row per
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Vec<f64>,
    quantiles: Vec<QuantileRow>,
    targets: Vec<TargetVector>,
    role: Role,
}

impl LabeledSet {
    pub fn new(
        features: Vec<f64>,
        quantiles: Vec<QuantileRow>,
        targets: Vec<TargetVector>,
        role: Role,
    ) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::Empty("labeled set"));
        }
        if features.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: features.len() });
        }
        if !quantiles.is_empty() && quantiles.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: quantiles.len() });
        }
        let k = targets[0].k();
        if let Some(t) = targets.iter().find(|t| t.k() != k) {
            return Err(Error::DimensionMismatch { expected: k, got: t.k() });
        }
        if let Some(q) = quantiles.iter().find(|q| q.k() != k) {
            return Err(Error::DimensionMismatch { expected: k, got: q.k() });
        }
        Ok(LabeledSet { features, quantiles, targets, role })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn k(&self) -> usize {
        self.targets[0].k()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[TargetVector] {
        &self.targets
    }

    pub fn quantiles(&self) -> &[QuantileRow] {
        &self.quantiles
    }

    pub fn has_quantiles(&self) -> bool {
        !self.quantiles.is_empty()
    }

    /// Same samples with the quantile rows replaced.
    pub fn with_quantiles(&self, quantiles: Vec<QuantileRow>) -> Result<Self> {
        LabeledSet::new(self.features.clone(), quantiles, self.targets.clone(), self.role)
    }

    /// Rows of `self` followed by rows of `other`, tagged with `role`.
    pub fn concat(&self, other: &LabeledSet, role: Role) -> Result<Self> {
        if self.has_quantiles() != other.has_quantiles() {
            return Err(Error::Empty("quantile predictions"));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.quantiles.extend_from_slice(&other.quantiles);
        out.targets.extend_from_slice(&other.targets);
        out.role = role;
        LabeledSet::new(out.features, out.quantiles, out.targets, role)
    }

    /// Rows at `indices`, in that order, tagged with `role`.
    pub fn subset(&self, indices: &[usize], role: Role) -> Self {
        LabeledSet {
            features: indices.iter().map(|&i| self.features[i]).collect(),
            quantiles: if self.quantiles.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.quantiles[i].clone()).collect()
            },
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            role,
        }
    }
}

/// One target's prediction interval over the extended reals.
///
/// `open` intervals exclude both endpoints. An interval with `lo > hi` is
/// empty and has length zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub open: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, open: false }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, open: true }
    }

    pub fn contains(&self, z: f64) -> bool {
        if self.open {
            self.lo < z && z < self.hi
        } else {
            self.lo <= z && z <= self.hi
        }
    }

    /// `hi - lo`, clamped at zero; infinite when either end is.
    pub fn length(&self) -> f64 {
        if self.lo > self.hi {
            return 0.0;
        }
        let len = self.hi - self.lo;
        if len.is_nan() {
            f64::INFINITY
        } else {
            len.max(0.0)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.open && self.lo == self.hi)
    }
}

/// Per-target intervals for one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet(pub Vec<Interval>);

impl IntervalSet {
    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: usize) -> &Interval {
        &self.0[k]
    }

    /// True when every component of `z` lies in its interval.
    pub fn covers(&self, z: &TargetVector) -> bool {
        self.0.iter().zip(&z.0).all(|(iv, &v)| iv.contains(v))
    }
}

/// Sizes and seed for a tune / calibration / test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub n_tune: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.n_tune + self.n_cal + self.n_test
    }
}

/// Draws disjoint index blocks of the given sizes uniformly without
/// replacement from `0..available`.
pub fn random_split<R: Rng + ?Sized>(
    available: usize,
    sizes: &[usize],
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let needed: usize = sizes.iter().sum();
    if needed > available {
        return Err(Error::InsufficientSamples { needed, available });
    }
    let drawn = index::sample(rng, available, needed).into_vec();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(drawn[start..start + s].to_vec());
        start += s;
    }
    Ok(out)
}

/// Splits `data` into tune, calibration and test sets.
///
/// Deterministic in `spec.seed`. In the experiment harness the tune block is
/// drawn once and held fixed while calibration and test are re-drawn per
/// trial from what remains.
pub fn partition(data: &LabeledSet, spec: &SplitSpec) -> Result<(LabeledSet, LabeledSet, LabeledSet)> {
    if spec.n_tune == 0 || spec.n_cal == 0 || spec.n_test == 0 {
        return Err(Error::Config("split counts must be at least 1".into()));
    }
    let mut rng = rng::rng_for(spec.seed, rng::stream::TUNE_SPLIT, 0);
    let blocks = random_split(data.len(), &[spec.n_tune, spec.n_cal, spec.n_test], &mut rng)?;
    Ok((
        data.subset(&blocks[0], Role::Tune),
        data.subset(&blocks[1], Role::Cal),
        data.subset(&blocks[2], Role::Test),
    ))
}

/// Splits off the fixed tune block and returns it with the remaining pool
/// from which per-trial calibration and test sets are drawn.
pub fn split_tune(data: &LabeledSet, n_tune: usize, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let mut rng = rng::rng_for(seed, rng::stream::TUNE_SPLIT, 0);
    let n = data.len();
    if n_tune >= n {
        return Err(Error::InsufficientSamples { needed: n_tune + 1, available: n });
    }
    let tune_idx = random_split(n, &[n_tune], &mut rng)?.remove(0);
    let mut taken = vec![false; n];
    for &i in &tune_idx {
        taken[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    Ok((data.subset(&tune_idx, Role::Tune), data.subset(&rest, Role::Pool)))
}
