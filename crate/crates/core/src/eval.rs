//! Monte Carlo evaluation: repeated calibration/test splits of a fixed pool
//! with a fixed tuning set, reporting empirical joint coverage (EJC),
//! per-target coverage (ESC) and mean interval length (MIL).
//!
//! Trials run in parallel on the current rayon pool. Each trial draws its
//! split from its own keyed generator and per-trial results are reduced in
//! trial order, so the output does not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{intervals_for, Calibration, Calibrator, Method, TuneScores};
use crate::data::{random_split, LabeledSet, Role, SplitSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::scores::{ScoreKind, ScoreMatrix};

/// Averages over trials of the per-trial test-set means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub ejc: f64,
    pub esc: Vec<f64>,
    pub mil: Vec<f64>,
    pub trials: usize,
    pub n_test: usize,
}

impl TrialMetrics {
    pub fn k(&self) -> usize {
        self.esc.len()
    }

    pub fn min_esc(&self) -> f64 {
        self.esc.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_esc(&self) -> f64 {
        self.esc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// max_k ESC_k − min_k ESC_k.
    pub fn esc_spread(&self) -> f64 {
        self.max_esc() - self.min_esc()
    }

    pub fn has_infinite_mil(&self) -> bool {
        self.mil.iter().any(|m| m.is_infinite())
    }

    /// 3σ binomial Monte Carlo margin for a coverage estimate at level α.
    pub fn delta_mc(&self, alpha: f64) -> f64 {
        delta_mc(alpha, self.trials, self.n_test)
    }
}

/// 3·√(α(1−α) / (T·n_test)).
pub fn delta_mc(alpha: f64, trials: usize, n_test: usize) -> f64 {
    3.0 * (alpha * (1.0 - alpha) / (trials as f64 * n_test as f64)).sqrt()
}

/// Per-trial totals before averaging.
#[derive(Debug, Clone)]
struct TrialSums {
    joint: usize,
    single: Vec<usize>,
    length: Vec<f64>,
}

/// Runs `f(trial, cal_indices, test_indices)` for every trial in parallel and
/// returns the results in trial order. Indices refer to a pool of
/// `pool_len` rows.
pub(crate) fn map_trials<T, F>(pool_len: usize, trials: usize, spec: &SplitSpec, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[usize], &[usize]) -> Result<T> + Sync,
{
    if trials == 0 {
        return Err(Error::Config("number of trials must be positive".into()));
    }
    if spec.n_cal == 0 || spec.n_test == 0 {
        return Err(Error::Config("n_cal and n_test must be positive".into()));
    }
    let needed = spec.n_cal + spec.n_test;
    if needed > pool_len {
        return Err(Error::InsufficientSamples { needed, available: pool_len });
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::rng_for(spec.seed, rng::stream::TRIAL, t as u64);
            let blocks = random_split(pool_len, &[spec.n_cal, spec.n_test], &mut r)?;
            f(t, &blocks[0], &blocks[1])
        })
        .collect()
}

/// Rows, scores and split sizes the trials of one method draw from.
#[derive(Debug, Clone, Copy)]
pub struct TrialSource<'s> {
    pub set: &'s LabeledSet,
    pub scores: &'s ScoreMatrix,
    pub spec: SplitSpec,
}

/// Precomputed scores for repeated evaluation of one score kind.
///
/// MINIMAX and COPULA fit their CDFs on the fixed tuning set and draw
/// calibration and test rows from the pool. The methods without a tuning
/// stage use the tuning samples as extra calibration data: each of their
/// trials splits tune ∪ pool into n_tune + n_cal calibration rows and n_test
/// test rows, so the enlarged calibration set stays exchangeable with the
/// test rows.
#[derive(Debug, Clone)]
pub struct Harness<'a> {
    pool: &'a LabeledSet,
    combined: LabeledSet,
    score_kind: ScoreKind,
    pool_scores: ScoreMatrix,
    combined_scores: ScoreMatrix,
    tune: TuneScores,
}

impl<'a> Harness<'a> {
    /// Both sets need quantile rows.
    pub fn new(pool: &'a LabeledSet, tune: &LabeledSet, score_kind: ScoreKind) -> Result<Self> {
        if !pool.has_quantiles() || !tune.has_quantiles() {
            return Err(Error::Empty("quantile predictions"));
        }
        if pool.k() != tune.k() {
            return Err(Error::DimensionMismatch { expected: pool.k(), got: tune.k() });
        }
        let pool_scores = ScoreMatrix::compute(score_kind, pool.quantiles(), pool.targets())?;
        let tune_scores = ScoreMatrix::compute(score_kind, tune.quantiles(), tune.targets())?;
        let combined_scores = tune_scores.vstack(&pool_scores)?;
        let combined = tune.concat(pool, Role::Pool)?;
        let tune = TuneScores::new(tune_scores)?;
        Ok(Harness { pool, combined, score_kind, pool_scores, combined_scores, tune })
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    pub fn pool(&self) -> &LabeledSet {
        self.pool
    }

    pub fn tune(&self) -> &TuneScores {
        &self.tune
    }

    pub fn n_tune(&self) -> usize {
        self.tune.scores().n()
    }

    /// Where the trials of `method` draw their rows from.
    pub fn source(&self, method: Method, spec: &SplitSpec) -> TrialSource<'_> {
        if method.uses_tuning() {
            TrialSource { set: self.pool, scores: &self.pool_scores, spec: *spec }
        } else {
            TrialSource {
                set: &self.combined,
                scores: &self.combined_scores,
                spec: SplitSpec { n_cal: self.n_tune() + spec.n_cal, ..*spec },
            }
        }
    }

    /// Calibrates `method` on rows `cal` of its [`TrialSource`].
    pub fn calibrate(&self, method: Method, cal: &[usize], alpha: f64) -> Result<Calibration> {
        let scores = if method.uses_tuning() { &self.pool_scores } else { &self.combined_scores };
        Calibrator::new(method, self.score_kind).fit(&self.tune, &scores.select_rows(cal), alpha)
    }

    /// Monte Carlo estimate of EJC, ESC and MIL for `method` at level α.
    pub fn run(&self, method: Method, alpha: f64, trials: usize, spec: &SplitSpec) -> Result<TrialMetrics> {
        let src = self.source(method, spec);
        let k = src.set.k();
        let quantiles = src.set.quantiles();
        let targets = src.set.targets();
        let sums = map_trials(src.set.len(), trials, &src.spec, |_, cal, test| {
            let calib = self.calibrate(method, cal, alpha)?;
            let mut s = TrialSums { joint: 0, single: vec![0; k], length: vec![0.0; k] };
            for &i in test {
                let ivs = intervals_for(&quantiles[i], &calib)?;
                let mut all = true;
                for j in 0..k {
                    let iv = ivs.get(j);
                    if iv.contains(targets[i].get(j)) {
                        s.single[j] += 1;
                    } else {
                        all = false;
                    }
                    s.length[j] += iv.length();
                }
                if all {
                    s.joint += 1;
                }
            }
            Ok(s)
        })?;

        let n_test = spec.n_test as f64;
        let t = sums.len() as f64;
        let mut ejc = 0.0;
        let mut esc = vec![0.0; k];
        let mut mil = vec![0.0; k];
        for s in &sums {
            ejc += s.joint as f64 / n_test;
            for j in 0..k {
                esc[j] += s.single[j] as f64 / n_test;
                mil[j] += s.length[j] / n_test;
            }
        }
        Ok(TrialMetrics {
            ejc: ejc / t,
            esc: esc.into_iter().map(|v| v / t).collect(),
            mil: mil.into_iter().map(|v| v / t).collect(),
            trials,
            n_test: spec.n_test,
        })
    }
}

/// One-shot form of [`Harness::run`].
pub fn run_trials(
    data: &LabeledSet,
    tune: &LabeledSet,
    calibrator: Calibrator,
    alpha: f64,
    trials: usize,
    spec: &SplitSpec,
) -> Result<TrialMetrics> {
    Harness::new(data, tune, calibrator.score_kind)?.run(calibrator.method, alpha, trials, spec)
}

/// Outcome of [`coverage_bounds_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub ejc: f64,
    pub lower: f64,
    pub upper: f64,
    pub delta_mc: f64,
    pub pass: bool,
    pub message: String,
}

/// Checks `1−α − δ ≤ EJC ≤ 1−α + 1/(n+1) + δ` for a single-score method
/// calibrated on `n` samples.
pub fn coverage_bounds_check(metrics: &TrialMetrics, alpha: f64, n: usize) -> BoundsReport {
    let delta = metrics.delta_mc(alpha);
    let lower = 1.0 - alpha - delta;
    let upper = 1.0 - alpha + 1.0 / (n as f64 + 1.0) + delta;
    let ejc = metrics.ejc;
    let (pass, message) = if ejc < lower {
        (false, format!("under-coverage: ejc {ejc:.6} below lower bound {lower:.6}"))
    } else if ejc > upper {
        (false, format!("over-coverage beyond finite-sample upper bound: ejc {ejc:.6} above {upper:.6}"))
    } else {
        (true, format!("ejc {ejc:.6} within [{lower:.6}, {upper:.6}]"))
    };
    BoundsReport { ejc, lower, upper, delta_mc: delta, pass, message }
}
