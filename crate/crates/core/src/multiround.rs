//! Multi-round acquisition: each sample is observed over B rounds with
//! increasingly precise (and slower) predictions of the same L tasks. A sample
//! is accepted at the first round where all L intervals are no longer than τ,
//! and coverage is scored on the accepted round only.
//!
//! The joint protocol calibrates once over all B·L targets so that coverage
//! holds simultaneously in every round, whichever round ends up accepted. The
//! separate-calibration (SC) baseline calibrates each round on its own.

use serde::{Deserialize, Serialize};

use crate::calibrate::{Calibration, Calibrator, Method, TuneScores};
use crate::data::{split_tune, Interval, LabeledSet, QuantileRow, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{delta_mc, map_trials, Harness};
use crate::scores::{invert_threshold, invert_threshold_strict, ScoreKind};
use crate::synthetic::{gen_multiround, RoundConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    /// Empirical accepted coverage.
    pub eac: f64,
    /// Average accepted rate, (mean of 1/R)⁻¹.
    pub r_avg: f64,
    pub accepted_round_histogram: Vec<usize>,
    pub labels: usize,
    pub trials: usize,
    pub n_test: usize,
}

impl ProtocolResult {
    pub fn evaluations(&self) -> usize {
        self.accepted_round_histogram.iter().sum()
    }

    /// Share of test evaluations accepted before the last round.
    pub fn stopped_early_fraction(&self) -> f64 {
        let last = self.accepted_round_histogram.last().copied().unwrap_or(0);
        1.0 - last as f64 / self.evaluations() as f64
    }

    pub fn delta_mc(&self, alpha: f64) -> f64 {
        delta_mc(alpha, self.trials, self.n_test)
    }
}

#[derive(Debug, Clone)]
struct WalkSums {
    covered: usize,
    inv_rate: f64,
    histogram: Vec<usize>,
}

fn check_shapes(data: &LabeledSet, tune: &LabeledSet, cfg: &RoundConfig) -> Result<()> {
    cfg.validate()?;
    for set in [data, tune] {
        if set.k() != cfg.k() {
            return Err(Error::DimensionMismatch { expected: cfg.k(), got: set.k() });
        }
        if !set.has_quantiles() {
            return Err(Error::Empty("quantile predictions"));
        }
    }
    Ok(())
}

fn interval(q: &QuantileRow, k: usize, zeta: f64, kind: ScoreKind, strict: bool) -> Result<Interval> {
    if strict {
        invert_threshold_strict(q, k, zeta, kind)
    } else {
        invert_threshold(q, k, zeta, kind)
    }
}

/// Length used by the stopping rule.
fn stop_length(iv: &Interval, kind: ScoreKind, floor: f64) -> f64 {
    if kind.is_one_sided() {
        (iv.hi - floor).max(0.0)
    } else {
        iv.length()
    }
}

/// One calibration per round group plus the map from (round, task) to
/// (calibration, column within it).
struct RoundCalibrations {
    calibs: Vec<Calibration>,
    joint: bool,
}

impl RoundCalibrations {
    fn get(&self, cfg: &RoundConfig, b: usize, l: usize) -> (&Calibration, usize) {
        if self.joint {
            (&self.calibs[0], cfg.target_index(b, l))
        } else {
            (&self.calibs[b], l)
        }
    }
}

/// Walks the rounds of every test sample and accumulates acceptance stats.
fn walk(
    data: &LabeledSet,
    test: &[usize],
    cfg: &RoundConfig,
    kind: ScoreKind,
    rc: &RoundCalibrations,
) -> Result<WalkSums> {
    let rounds = cfg.rounds();
    let mut sums = WalkSums { covered: 0, inv_rate: 0.0, histogram: vec![0; rounds] };
    for &i in test {
        let q = &data.quantiles()[i];
        let z = &data.targets()[i];
        for b in 0..rounds {
            let mut ivs = Vec::with_capacity(cfg.labels);
            for l in 0..cfg.labels {
                let (calib, local) = rc.get(cfg, b, l);
                ivs.push(interval(q, cfg.target_index(b, l), calib.zeta(local), kind, calib.is_strict())?);
            }
            let short = ivs.iter().all(|iv| stop_length(iv, kind, cfg.one_sided_floor) <= cfg.tau);
            if short || b + 1 == rounds {
                if (0..cfg.labels).all(|l| ivs[l].contains(z.get(cfg.target_index(b, l)))) {
                    sums.covered += 1;
                }
                sums.inv_rate += 1.0 / cfg.rates[b];
                sums.histogram[b] += 1;
                break;
            }
        }
    }
    Ok(sums)
}

fn reduce(sums: Vec<WalkSums>, cfg: &RoundConfig, trials: usize, n_test: usize) -> ProtocolResult {
    let mut histogram = vec![0; cfg.rounds()];
    let mut eac = 0.0;
    let mut inv_rate = 0.0;
    for s in &sums {
        eac += s.covered as f64 / n_test as f64;
        inv_rate += s.inv_rate;
        for (h, c) in histogram.iter_mut().zip(&s.histogram) {
            *h += c;
        }
    }
    let evaluations: usize = histogram.iter().sum();
    ProtocolResult {
        eac: eac / sums.len() as f64,
        r_avg: evaluations as f64 / inv_rate,
        accepted_round_histogram: histogram,
        labels: cfg.labels,
        trials,
        n_test,
    }
}

/// Jointly calibrated protocol over all B·L targets. Rows are drawn as in
/// [`Harness`].
pub fn run_protocol(
    data: &LabeledSet,
    tune: &LabeledSet,
    calibrator: Calibrator,
    alpha: f64,
    cfg: &RoundConfig,
    trials: usize,
    spec: &SplitSpec,
) -> Result<ProtocolResult> {
    check_shapes(data, tune, cfg)?;
    if calibrator.method == Method::Single && cfg.k() > 1 {
        return Err(Error::Config("the joint protocol needs a multi-target method".into()));
    }
    let kind = calibrator.score_kind;
    let harness = Harness::new(data, tune, kind)?;
    let src = harness.source(calibrator.method, spec);
    let sums = map_trials(src.set.len(), trials, &src.spec, |_, cal, test| {
        let calib = harness.calibrate(calibrator.method, cal, alpha)?;
        walk(src.set, test, cfg, kind, &RoundCalibrations { calibs: vec![calib], joint: true })
    })?;
    Ok(reduce(sums, cfg, trials, spec.n_test))
}

/// Separate calibration per round: plain single-target conformal when L = 1,
/// otherwise `calibrator`'s method over that round's L targets.
pub fn run_sc_baseline(
    data: &LabeledSet,
    tune: &LabeledSet,
    calibrator: Calibrator,
    alpha: f64,
    cfg: &RoundConfig,
    trials: usize,
    spec: &SplitSpec,
) -> Result<ProtocolResult> {
    check_shapes(data, tune, cfg)?;
    let kind = calibrator.score_kind;
    let per_round = if cfg.labels == 1 {
        Calibrator::new(Method::Single, kind)
    } else {
        calibrator
    };
    let harness = Harness::new(data, tune, kind)?;
    let src = harness.source(per_round.method, spec);
    let mut round_scores = Vec::with_capacity(cfg.rounds());
    let mut round_tune = Vec::with_capacity(cfg.rounds());
    for b in 0..cfg.rounds() {
        let cols: Vec<usize> = (0..cfg.labels).map(|l| cfg.target_index(b, l)).collect();
        round_scores.push(src.scores.select_columns(&cols));
        round_tune.push(TuneScores::new(harness.tune().scores().select_columns(&cols))?);
    }
    let sums = map_trials(src.set.len(), trials, &src.spec, |_, cal, test| {
        let calibs = round_scores
            .iter()
            .zip(&round_tune)
            .map(|(p, t)| per_round.fit(t, &p.select_rows(cal), alpha))
            .collect::<Result<Vec<_>>>()?;
        walk(src.set, test, cfg, kind, &RoundCalibrations { calibs, joint: false })
    })?;
    Ok(reduce(sums, cfg, trials, spec.n_test))
}

/// Runs the joint protocol for each label count in `l_values`, regenerating
/// `n` samples with `base` (its `labels` field overridden) under `seed`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_labels(
    l_values: &[usize],
    base: &RoundConfig,
    calibrator: Calibrator,
    alpha: f64,
    n: usize,
    trials: usize,
    spec: &SplitSpec,
    seed: u64,
) -> Result<Vec<ProtocolResult>> {
    l_values
        .iter()
        .map(|&labels| {
            let cfg = RoundConfig { labels, ..base.clone() };
            let data = gen_multiround(n, &cfg, alpha, seed)?;
            let (tune, pool) = split_tune(&data, spec.n_tune, spec.seed)?;
            run_protocol(&pool, &tune, calibrator, alpha, &cfg, trials, spec)
        })
        .collect()
}
