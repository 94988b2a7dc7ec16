//! Nonconformity scores and the empirical-quantile primitive.
//!
//! Scores are evaluated on demand from a `(QuantileRow, TargetVector)` pair,
//! so a single dataset can be scored under every [`ScoreKind`].
//!
//! | kind            | score s_k                                   | accepted set {z : s_k ≤ ζ}        |
//! |-----------------|---------------------------------------------|-----------------------------------|
//! | `Cqr`           | max(lo_k − z, z − hi_k)                     | [lo_k − ζ, hi_k + ζ]              |
//! | `Qn`            | ρ_k · max(lo_k − z, z − hi_k)               | [lo_k − ζ/ρ_k, hi_k + ζ/ρ_k]      |
//! | `CqrOneSided`   | z − hi_k                                    | (−∞, hi_k + ζ]                    |
//! | `QnOneSided`    | ρ_k · (z − hi_k)                            | (−∞, hi_k + ζ/ρ_k]                |
//!
//! with ρ_k = (hi_0 − lo_0) / (hi_k − lo_k), the width ratio against target 0.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::data::{Interval, QuantileRow, TargetVector};
use crate::error::{Error, Result};

/// Widths below this are treated as degenerate by the QN scores.
pub const MIN_QN_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Cqr,
    Qn,
    CqrOneSided,
    QnOneSided,
}

impl ScoreKind {
    pub fn is_one_sided(self) -> bool {
        matches!(self, ScoreKind::CqrOneSided | ScoreKind::QnOneSided)
    }

    pub fn is_normalized(self) -> bool {
        matches!(self, ScoreKind::Qn | ScoreKind::QnOneSided)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Cqr => "cqr",
            ScoreKind::Qn => "qn",
            ScoreKind::CqrOneSided => "cqr_one_sided",
            ScoreKind::QnOneSided => "qn_one_sided",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cqr" => Ok(ScoreKind::Cqr),
            "qn" => Ok(ScoreKind::Qn),
            "cqr_one_sided" => Ok(ScoreKind::CqrOneSided),
            "qn_one_sided" => Ok(ScoreKind::QnOneSided),
            other => Err(Error::Config(format!("unknown score kind `{other}`"))),
        }
    }
}

/// ⌈x⌉ for a product that should land on an integer but may carry a few ulps
/// of rounding error.
pub(crate) fn ceil_guarded(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// ⌊x⌋ with the same guard as [`ceil_guarded`].
pub(crate) fn floor_guarded(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

/// The conformal rank ⌈(1 − α)(n + 1)⌉.
pub fn conformal_rank(alpha: f64, n: usize) -> usize {
    ceil_guarded((1.0 - alpha) * (n as f64 + 1.0))
}

/// The `rank`-th smallest value (1-indexed). Rank 0 yields −∞ and ranks past
/// the end yield +∞.
pub fn order_statistic(rank: usize, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("order statistic of empty sample"));
    }
    if rank == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if rank > values.len() {
        return Ok(f64::INFINITY);
    }
    let mut buf = values.to_vec();
    let (_, v, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*v)
}

/// Empirical quantile: the ⌈β·m⌉-th order statistic of `values`, or +∞ when
/// ⌈β·m⌉ > m.
pub fn emp_quantile(beta: f64, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("empirical quantile of empty sample"));
    }
    order_statistic(ceil_guarded(beta * values.len() as f64), values)
}

fn check_index(q: &QuantileRow, z: &TargetVector, k: usize) -> Result<()> {
    if q.k() != z.k() {
        return Err(Error::DimensionMismatch { expected: q.k(), got: z.k() });
    }
    if k >= q.k() {
        return Err(Error::TargetOutOfRange { index: k, k: q.k() });
    }
    Ok(())
}

/// Two-sided CQR score; negative exactly when `z[k]` is strictly inside.
pub fn cqr_score(q: &QuantileRow, z: &TargetVector, k: usize) -> f64 {
    let v = z.get(k);
    (q.lo[k] - v).max(v - q.hi[k])
}

/// Width ratio ρ_k of target 0 against target `k`.
pub fn qn_scale(q: &QuantileRow, k: usize) -> Result<f64> {
    if k >= q.k() {
        return Err(Error::TargetOutOfRange { index: k, k: q.k() });
    }
    let w0 = q.width(0);
    if w0 < MIN_QN_WIDTH {
        return Err(Error::ZeroWidth { target: 0, width: w0 });
    }
    let wk = q.width(k);
    if wk < MIN_QN_WIDTH {
        return Err(Error::ZeroWidth { target: k, width: wk });
    }
    Ok(w0 / wk)
}

/// CQR score rescaled to the width of target 0.
pub fn qn_score(q: &QuantileRow, z: &TargetVector, k: usize) -> Result<f64> {
    Ok(cqr_score(q, z, k) * qn_scale(q, k)?)
}

/// Upper-bounding scores: `z[k] − hi[k]`, optionally width-normalized.
pub fn one_sided_score(q: &QuantileRow, z: &TargetVector, k: usize, kind: ScoreKind) -> Result<f64> {
    let raw = z.get(k) - q.hi[k];
    match kind {
        ScoreKind::CqrOneSided => Ok(raw),
        ScoreKind::QnOneSided => Ok(raw * qn_scale(q, k)?),
        _ => Err(Error::Config(format!("{kind} is not a one-sided score"))),
    }
}

/// Score of target `k` under `kind`.
pub fn score(kind: ScoreKind, q: &QuantileRow, z: &TargetVector, k: usize) -> Result<f64> {
    check_index(q, z, k)?;
    match kind {
        ScoreKind::Cqr => Ok(cqr_score(q, z, k)),
        ScoreKind::Qn => qn_score(q, z, k),
        ScoreKind::CqrOneSided | ScoreKind::QnOneSided => one_sided_score(q, z, k, kind),
    }
}

/// The set {z : s_k(q, z) ≤ ζ} as an interval. ζ = +∞ gives the whole line
/// and ζ = −∞ the empty set.
pub fn invert_threshold(q: &QuantileRow, k: usize, zeta: f64, kind: ScoreKind) -> Result<Interval> {
    let iv = bounds(q, k, zeta, kind)?;
    Ok(Interval::closed(iv.0, iv.1))
}

/// The set {z : s_k(q, z) < ζ}, the strict counterpart of
/// [`invert_threshold`].
pub fn invert_threshold_strict(q: &QuantileRow, k: usize, zeta: f64, kind: ScoreKind) -> Result<Interval> {
    let iv = bounds(q, k, zeta, kind)?;
    Ok(Interval::open(iv.0, iv.1))
}

fn bounds(q: &QuantileRow, k: usize, zeta: f64, kind: ScoreKind) -> Result<(f64, f64)> {
    if k >= q.k() {
        return Err(Error::TargetOutOfRange { index: k, k: q.k() });
    }
    if zeta == f64::INFINITY {
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    if zeta == f64::NEG_INFINITY {
        return Ok((f64::INFINITY, f64::NEG_INFINITY));
    }
    let reach = if kind.is_normalized() { zeta / qn_scale(q, k)? } else { zeta };
    if kind.is_one_sided() {
        Ok((f64::NEG_INFINITY, q.hi[k] + reach))
    } else {
        Ok((q.lo[k] - reach, q.hi[k] + reach))
    }
}

/// n × K score matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map(|r| r.len()).unwrap_or(0);
        if k == 0 {
            return Err(Error::Empty("score matrix"));
        }
        let mut data = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(ScoreMatrix { n: rows.len(), k, data })
    }

    /// Scores of every row of `quantiles`/`targets` under `kind`.
    pub fn compute(kind: ScoreKind, quantiles: &[QuantileRow], targets: &[TargetVector]) -> Result<Self> {
        if quantiles.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: targets.len(), got: quantiles.len() });
        }
        let k = targets.first().map(|t| t.k()).ok_or(Error::Empty("score matrix"))?;
        let mut data = Vec::with_capacity(targets.len() * k);
        for (q, z) in quantiles.iter().zip(targets) {
            for j in 0..k {
                data.push(score(kind, q, z, j)?);
            }
        }
        Ok(ScoreMatrix { n: targets.len(), k, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.k).copied().collect()
    }

    pub fn row_max(&self) -> Vec<f64> {
        self.data
            .chunks(self.k)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.k);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        ScoreMatrix { n: rows.len(), k: self.k, data }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        ScoreMatrix { n: self.n, k: cols.len(), data }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn vstack(&self, other: &ScoreMatrix) -> Result<Self> {
        if self.k != other.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: other.k });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(ScoreMatrix { n: self.n + other.n, k: self.k, data })
    }
}
