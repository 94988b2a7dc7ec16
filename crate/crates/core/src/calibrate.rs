//! Calibrators: single-target split conformal, the independence adjustment
//! (IA), max-score / quantile normalization (QN_MAX), an empirical-copula
//! baseline (COPULA) and the minimax calibrator (MINIMAX).
//!
//! All calibrators consume [`ScoreMatrix`] values and produce an immutable
//! [`Calibration`], which [`intervals_for`] turns into per-target intervals.
//!
//! MINIMAX and COPULA work on transformed scores F̂_k(s) where F̂_k is the
//! empirical CDF of tuning scores for target k. Transformed scores are kept as
//! integer counts `c = m·F̂_k(s)` internally, so thresholds in `[0, 1]` map
//! back to raw scores without rounding.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::data::{IntervalSet, QuantileRow};
use crate::error::{Error, Result};
use crate::scores::{
    conformal_rank, floor_guarded, invert_threshold, invert_threshold_strict, order_statistic,
    ScoreKind, ScoreMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    Ia,
    QnMax,
    Copula,
    Minimax,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Ia => "ia",
            Method::QnMax => "qn_max",
            Method::Copula => "copula",
            Method::Minimax => "minimax",
        }
    }

    /// Methods that fit marginal CDFs on a separate tuning set.
    pub fn uses_tuning(self) -> bool {
        matches!(self, Method::Copula | Method::Minimax)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single" => Ok(Method::Single),
            "ia" => Ok(Method::Ia),
            "qn_max" | "qn" | "max" => Ok(Method::QnMax),
            "copula" | "cpts" => Ok(Method::Copula),
            "minimax" => Ok(Method::Minimax),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Right-continuous empirical CDF F̂(ζ) = |{s_i ≤ ζ}| / m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("empirical CDF needs at least one sample"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_samples(&self) -> &[f64] {
        &self.sorted
    }

    /// |{s_i ≤ ζ}|.
    pub fn count_le(&self, zeta: f64) -> usize {
        self.sorted.partition_point(|&s| s <= zeta)
    }

    pub fn eval(&self, zeta: f64) -> f64 {
        self.count_le(zeta) as f64 / self.len() as f64
    }

    /// Largest sample s_(j) with j/m ≤ λ, i.e. s_(⌊λm⌋); −∞ when ⌊λm⌋ = 0.
    pub fn raw_threshold(&self, lambda: f64) -> f64 {
        let j = floor_guarded(lambda * self.len() as f64).min(self.len());
        if j == 0 {
            f64::NEG_INFINITY
        } else {
            self.sorted[j - 1]
        }
    }

    /// Supremum of {ζ : F̂(ζ) ≤ j/m}: the (j+1)-th sample, or +∞ for j ≥ m.
    /// A score `s` has `count_le(s) ≤ j` exactly when `s` is below this bound.
    pub fn exclusive_bound_count(&self, j: usize) -> f64 {
        if j >= self.len() {
            f64::INFINITY
        } else {
            self.sorted[j]
        }
    }

    /// Exclusive raw-score bound for the level λ ∈ [0, 1].
    pub fn exclusive_bound(&self, lambda: f64) -> f64 {
        self.exclusive_bound_count(floor_guarded(lambda * self.len() as f64))
    }
}

pub fn fit_cdf(tune_scores: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::fit(tune_scores)
}

pub fn raw_threshold(cdf: &EmpiricalCdf, lambda: f64) -> f64 {
    cdf.raw_threshold(lambda)
}

/// Fitted thresholds for one method.
///
/// `lambda` is populated for SINGLE, QN_MAX and MINIMAX (for MINIMAX it is a
/// level in `[0, 1]` on the transformed scale). `per_target_zeta` holds
/// raw-score thresholds for IA, COPULA and MINIMAX. `cdfs` is populated for
/// the tuning-based methods. For those, the accepted set per target is
/// `{s : s < ζ_k}`, which is exactly `{s : F̂_k(s) ≤ level}`; the other
/// methods accept `{s : s ≤ ζ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    method: Method,
    score_kind: ScoreKind,
    alpha: f64,
    lambda: Option<f64>,
    per_target_zeta: Option<Vec<f64>>,
    levels: Option<Vec<f64>>,
    cdfs: Option<Vec<EmpiricalCdf>>,
}

impl Calibration {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn per_target_zeta(&self) -> Option<&[f64]> {
        self.per_target_zeta.as_deref()
    }

    /// Per-target levels on the transformed scale (COPULA's v̂, or λ̂
    /// repeated for MINIMAX).
    pub fn levels(&self) -> Option<&[f64]> {
        self.levels.as_deref()
    }

    pub fn cdfs(&self) -> Option<&[EmpiricalCdf]> {
        self.cdfs.as_deref()
    }

    /// Number of targets the calibration applies to.
    pub fn k(&self) -> usize {
        match (&self.per_target_zeta, self.method) {
            (Some(z), _) => z.len(),
            (None, Method::Single) => 1,
            (None, _) => 0,
        }
    }

    /// Threshold used for target `k` in the raw score domain.
    pub fn zeta(&self, k: usize) -> f64 {
        match self.method {
            Method::Single | Method::QnMax => self.lambda.expect("scalar threshold"),
            _ => self.per_target_zeta.as_ref().expect("per-target thresholds")[k],
        }
    }

    /// Whether the accepted score set is open at ζ.
    pub fn is_strict(&self) -> bool {
        self.method.uses_tuning()
    }

    /// True when any threshold is +∞ (infinite intervals).
    pub fn has_infinite_threshold(&self) -> bool {
        match self.method {
            Method::Single | Method::QnMax => self.lambda == Some(f64::INFINITY),
            _ => self
                .per_target_zeta
                .as_ref()
                .is_some_and(|z| z.contains(&f64::INFINITY)),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn conformal_threshold(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration scores"));
    }
    order_statistic(conformal_rank(alpha, scores.len()), scores)
}

/// Split conformal threshold λ̂ = the ⌈(1−α)(n+1)⌉-th smallest score, +∞
/// when that rank exceeds n.
pub fn calibrate_single(scores: &[f64], alpha: f64, kind: ScoreKind) -> Result<Calibration> {
    check_alpha(alpha)?;
    let lambda = conformal_threshold(scores, alpha)?;
    Ok(Calibration {
        method: Method::Single,
        score_kind: kind,
        alpha,
        lambda: Some(lambda),
        per_target_zeta: None,
        levels: None,
        cdfs: None,
    })
}

/// Per-target level α₁ = 1 − (1 − α)^{1/K}.
pub fn ia_level(alpha: f64, k: usize) -> f64 {
    1.0 - (1.0 - alpha).powf(1.0 / k as f64)
}

/// Independent per-target calibration at the adjusted level α₁.
pub fn calibrate_ia(scores: &ScoreMatrix, alpha: f64, kind: ScoreKind) -> Result<Calibration> {
    check_alpha(alpha)?;
    if scores.n() == 0 {
        return Err(Error::Empty("calibration scores"));
    }
    let a1 = ia_level(alpha, scores.k());
    let zeta = (0..scores.k())
        .map(|k| conformal_threshold(&scores.column(k), a1))
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration {
        method: Method::Ia,
        score_kind: kind,
        alpha,
        lambda: None,
        per_target_zeta: Some(zeta),
        levels: None,
        cdfs: None,
    })
}

/// Conformalizes the row-wise maximum score. With QN scores this is the
/// quantile-normalization method.
pub fn calibrate_maxscore(scores: &ScoreMatrix, alpha: f64, kind: ScoreKind) -> Result<Calibration> {
    check_alpha(alpha)?;
    let lambda = conformal_threshold(&scores.row_max(), alpha)?;
    Ok(Calibration {
        method: Method::QnMax,
        score_kind: kind,
        alpha,
        lambda: Some(lambda),
        per_target_zeta: Some(vec![lambda; scores.k()]),
        levels: None,
        cdfs: None,
    })
}

/// Fits one empirical CDF per column of the tuning scores.
pub fn fit_cdfs(tune: &ScoreMatrix) -> Result<Vec<EmpiricalCdf>> {
    if tune.n() == 0 {
        return Err(Error::Empty("tuning scores"));
    }
    (0..tune.k()).map(|k| EmpiricalCdf::fit(&tune.column(k))).collect()
}

/// Transformed calibration scores as counts: `c[i][k] = m·F̂_k(s_ik)`.
fn transformed_counts(cdfs: &[EmpiricalCdf], cal: &ScoreMatrix) -> Result<Vec<usize>> {
    if cal.n() == 0 {
        return Err(Error::Empty("calibration scores"));
    }
    if cdfs.len() != cal.k() {
        return Err(Error::DimensionMismatch { expected: cdfs.len(), got: cal.k() });
    }
    let k = cal.k();
    let mut out = Vec::with_capacity(cal.n() * k);
    for i in 0..cal.n() {
        for (j, cdf) in cdfs.iter().enumerate() {
            out.push(cdf.count_le(cal.get(i, j)));
        }
    }
    debug_assert_eq!(out.len(), cal.n() * k);
    Ok(out)
}

fn check_tune_size(cdfs: &[EmpiricalCdf]) -> Result<usize> {
    let m = cdfs.first().map(|c| c.len()).ok_or(Error::Empty("tuning CDFs"))?;
    if cdfs.iter().any(|c| c.len() != m) {
        return Err(Error::Config("tuning CDFs must share a sample size".into()));
    }
    Ok(m)
}

/// Minimax calibration: fits F̂_k on `tune`, transforms `cal`, takes the
/// row-wise max and conformalizes it.
pub fn calibrate_minimax(tune: &ScoreMatrix, cal: &ScoreMatrix, alpha: f64, kind: ScoreKind) -> Result<Calibration> {
    calibrate_minimax_with(fit_cdfs(tune)?, cal, alpha, kind)
}

/// The minimax level as a count on the transformed grid, saturating at m.
fn minimax_count(counts: &[usize], k: usize, n: usize, m: usize, alpha: f64) -> usize {
    let row_max: Vec<usize> = counts.chunks(k).map(|r| *r.iter().max().expect("K >= 1")).collect();
    let rank = conformal_rank(alpha, n);
    if rank > n {
        return m;
    }
    let mut buf = row_max;
    let (_, v, _) = buf.select_nth_unstable(rank - 1);
    *v
}

/// [`calibrate_minimax`] with CDFs that were already fitted on tuning data.
pub fn calibrate_minimax_with(
    cdfs: Vec<EmpiricalCdf>,
    cal: &ScoreMatrix,
    alpha: f64,
    kind: ScoreKind,
) -> Result<Calibration> {
    check_alpha(alpha)?;
    let m = check_tune_size(&cdfs)?;
    let counts = transformed_counts(&cdfs, cal)?;
    let level = minimax_count(&counts, cal.k(), cal.n(), m, alpha);
    let lambda = level as f64 / m as f64;
    let zeta = cdfs.iter().map(|c| c.exclusive_bound_count(level)).collect();
    Ok(Calibration {
        method: Method::Minimax,
        score_kind: kind,
        alpha,
        lambda: Some(lambda),
        per_target_zeta: Some(zeta),
        levels: Some(vec![lambda; cal.k()]),
        cdfs: Some(cdfs),
    })
}

/// Empirical-copula baseline: minimizes Σ v_k subject to the empirical copula
/// of the transformed calibration scores reaching the conformal level.
pub fn calibrate_copula(tune: &ScoreMatrix, cal: &ScoreMatrix, alpha: f64, kind: ScoreKind) -> Result<Calibration> {
    calibrate_copula_with(fit_cdfs(tune)?, cal, alpha, kind)
}

/// Cyclic coordinate descent on the attained grid, started from the
/// symmetric minimax point. Each visit lowers coordinate j as far as the
/// copula constraint allows with the other coordinates held fixed; stops
/// after a sweep with no change.
fn copula_descent(counts: &[usize], k: usize, start: usize, required: usize) -> Vec<usize> {
    let mut v = vec![start; k];
    let rows: Vec<&[usize]> = counts.chunks(k).collect();
    let covered = |v: &[usize]| rows.iter().filter(|r| r.iter().zip(v).all(|(c, t)| c <= t)).count();
    assert!(covered(&v) >= required, "symmetric start must be feasible");
    let mut column = Vec::with_capacity(rows.len());
    loop {
        let mut moved = false;
        for j in 0..k {
            // Values of column j among rows covered by the other coordinates;
            // the required-th smallest is the lowest feasible v_j.
            column.clear();
            column.extend(
                rows.iter()
                    .filter(|r| (0..k).all(|l| l == j || r[l] <= v[l]))
                    .map(|r| r[j]),
            );
            let (_, lowest, _) = column.select_nth_unstable(required - 1);
            if *lowest < v[j] {
                v[j] = *lowest;
                moved = true;
            }
        }
        if !moved {
            return v;
        }
    }
}

/// [`calibrate_copula`] with pre-fitted tuning CDFs.
pub fn calibrate_copula_with(
    cdfs: Vec<EmpiricalCdf>,
    cal: &ScoreMatrix,
    alpha: f64,
    kind: ScoreKind,
) -> Result<Calibration> {
    check_alpha(alpha)?;
    let m = check_tune_size(&cdfs)?;
    let counts = transformed_counts(&cdfs, cal)?;
    let (n, k) = (cal.n(), cal.k());
    let start = minimax_count(&counts, k, n, m, alpha);
    let rank = conformal_rank(alpha, n);
    let v = if rank > n {
        vec![m; k]
    } else {
        copula_descent(&counts, k, start, rank)
    };
    let zeta = cdfs.iter().zip(&v).map(|(c, &j)| c.exclusive_bound_count(j)).collect();
    Ok(Calibration {
        method: Method::Copula,
        score_kind: kind,
        alpha,
        lambda: None,
        per_target_zeta: Some(zeta),
        levels: Some(v.iter().map(|&j| j as f64 / m as f64).collect()),
        cdfs: Some(cdfs),
    })
}

/// Per-target intervals for one quantile row.
pub fn intervals_for(q: &QuantileRow, calib: &Calibration) -> Result<IntervalSet> {
    let k = calib.k();
    if q.k() != k {
        return Err(Error::DimensionMismatch { expected: k, got: q.k() });
    }
    let kind = calib.score_kind;
    (0..k)
        .map(|j| {
            if calib.is_strict() {
                invert_threshold_strict(q, j, calib.zeta(j), kind)
            } else {
                invert_threshold(q, j, calib.zeta(j), kind)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(IntervalSet)
}

/// Scores and fitted CDFs of the fixed tuning set.
#[derive(Debug, Clone)]
pub struct TuneScores {
    scores: ScoreMatrix,
    cdfs: Vec<EmpiricalCdf>,
}

impl TuneScores {
    pub fn new(scores: ScoreMatrix) -> Result<Self> {
        let cdfs = fit_cdfs(&scores)?;
        Ok(TuneScores { scores, cdfs })
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn cdfs(&self) -> &[EmpiricalCdf] {
        &self.cdfs
    }
}

/// A calibration method paired with the score it runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Calibrator {
    pub method: Method,
    pub score_kind: ScoreKind,
}

impl Calibrator {
    pub fn new(method: Method, score_kind: ScoreKind) -> Self {
        Calibrator { method, score_kind }
    }

    /// Fits on `cal`. Only MINIMAX and COPULA read `tune`; the other methods
    /// calibrate on `cal` alone.
    pub fn fit(&self, tune: &TuneScores, cal: &ScoreMatrix, alpha: f64) -> Result<Calibration> {
        let kind = self.score_kind;
        match self.method {
            Method::Minimax => calibrate_minimax_with(tune.cdfs.clone(), cal, alpha, kind),
            Method::Copula => calibrate_copula_with(tune.cdfs.clone(), cal, alpha, kind),
            _ => self.fit_untuned(cal, alpha),
        }
    }

    /// Fits a method that has no tuning stage.
    pub fn fit_untuned(&self, cal: &ScoreMatrix, alpha: f64) -> Result<Calibration> {
        let kind = self.score_kind;
        match self.method {
            Method::Ia => calibrate_ia(cal, alpha, kind),
            Method::QnMax => calibrate_maxscore(cal, alpha, kind),
            Method::Single => {
                if cal.k() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: cal.k() });
                }
                calibrate_single(&cal.column(0), alpha, kind)
            }
            Method::Minimax | Method::Copula => Err(Error::Config(format!("{} needs tuning scores", self.method))),
        }
    }

    /// Calibration sample size when the tuning samples of the methods
    /// without a tuning stage are added to their calibration set.
    pub fn effective_n(&self, n_tune: usize, n_cal: usize) -> usize {
        if self.method.uses_tuning() {
            n_cal
        } else {
            n_tune + n_cal
        }
    }

    /// Label such as `minimax:qn`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.method, self.score_kind)
    }
}

impl FromStr for Calibrator {
    type Err = Error;

    /// Parses `method[:score]`. Default scores: QN for `qn_max`, CQR
    /// otherwise.
    fn from_str(s: &str) -> Result<Self> {
        let (m, k) = match s.split_once(':') {
            Some((m, k)) => (m, Some(k)),
            None => (s, None),
        };
        let method: Method = m.trim().parse()?;
        let score_kind = match k {
            Some(k) => k.trim().parse()?,
            None if method == Method::QnMax => ScoreKind::Qn,
            None => ScoreKind::Cqr,
        };
        Ok(Calibrator { method, score_kind })
    }
}

impl fmt::Display for Calibrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
