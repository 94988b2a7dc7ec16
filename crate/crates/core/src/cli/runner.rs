//! Experiment drivers. Every random stream is derived from the config seed
//! and the draw index, so runs are reproducible and the thread count only
//! affects speed.

use crate::calibrate::{Calibrator, Method};
use crate::data::{split_tune, LabeledSet, SplitSpec};
use crate::error::Result;
use crate::eval::{coverage_bounds_check, Harness, TrialMetrics};
use crate::multiround::{run_protocol, run_sc_baseline, ProtocolResult};
use crate::rng::{derive_seed, stream};
use crate::scores::ScoreKind;
use crate::synthetic::{fit_quantile_models, gen_multiround, gen_synthetic, predict_quantiles, RoundConfig};

use super::config::{Experiment, ExperimentConfig};
use super::output::ResultRow;
use super::CliError;

/// Tuning sets below this size are flagged for the tuning-based methods.
pub const MIN_RELIABLE_TUNE: usize = 500;

pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<Vec<ResultRow>, CliError> {
    let rows = match cfg.experiment {
        Experiment::Table1 | Experiment::CoverageSweep => coverage_rows(cfg, cfg.n_train, cfg.n_tune)?,
        Experiment::NtrainSweep => {
            let mut rows = Vec::new();
            for &n_train in &cfg.train_sizes {
                rows.extend(coverage_rows(cfg, n_train, cfg.n_tune)?);
            }
            rows
        }
        Experiment::NtuneSweep => {
            let mut rows = Vec::new();
            for &n_tune in &cfg.tune_sizes {
                rows.extend(coverage_rows(cfg, cfg.n_train, n_tune)?);
            }
            rows
        }
        Experiment::Multiround => multiround_rows(cfg, &cfg.round_cfg(), true)?,
        Experiment::MultiroundLabels => {
            let mut rows = Vec::new();
            for &labels in &cfg.label_counts {
                let rc = RoundConfig { labels, ..cfg.round_cfg() };
                rows.extend(multiround_rows(cfg, &rc, false)?);
            }
            rows
        }
    };
    Ok(rows)
}

/// Fits quantile regressors for level α on a fresh training set and returns
/// (tune, pool) with predictions attached. The tuning set is drawn from its
/// own stream so sets of different sizes are nested.
pub fn synthetic_draw(
    cfg: &ExperimentConfig,
    n_train: usize,
    n_tune: usize,
    alpha: f64,
    draw: u64,
) -> Result<(LabeledSet, LabeledSet)> {
    let train = gen_synthetic(n_train, cfg.noise, derive_seed(cfg.seed, stream::TRAIN, draw))?;
    let models = fit_quantile_models(&train, alpha, cfg.quantreg)?;
    let tune = gen_synthetic(n_tune, cfg.noise, derive_seed(cfg.seed, stream::TUNE_SPLIT, draw))?;
    let pool = gen_synthetic(cfg.n_cal + cfg.n_test, cfg.noise, derive_seed(cfg.seed, stream::POOL, draw))?;
    Ok((predict_quantiles(&models, &tune)?, predict_quantiles(&models, &pool)?))
}

fn split_spec(cfg: &ExperimentConfig, n_tune: usize, draw: u64) -> SplitSpec {
    SplitSpec {
        seed: derive_seed(cfg.seed, stream::TRIAL, draw),
        n_tune,
        n_cal: cfg.n_cal,
        n_test: cfg.n_test,
    }
}

fn distinct_kinds(calibrators: &[Calibrator]) -> Vec<ScoreKind> {
    let mut kinds = Vec::new();
    for c in calibrators {
        if !kinds.contains(&c.score_kind) {
            kinds.push(c.score_kind);
        }
    }
    kinds
}

fn add_metrics(acc: &mut Option<TrialMetrics>, m: TrialMetrics) {
    match acc {
        None => *acc = Some(m),
        Some(a) => {
            a.ejc += m.ejc;
            for (x, y) in a.esc.iter_mut().zip(&m.esc) {
                *x += y;
            }
            for (x, y) in a.mil.iter_mut().zip(&m.mil) {
                *x += y;
            }
            a.trials += m.trials;
        }
    }
}

fn mean_metrics(mut m: TrialMetrics, draws: usize) -> TrialMetrics {
    let d = draws as f64;
    m.ejc /= d;
    m.esc.iter_mut().for_each(|v| *v /= d);
    m.mil.iter_mut().for_each(|v| *v /= d);
    m
}

fn coverage_rows(cfg: &ExperimentConfig, n_train: usize, n_tune: usize) -> std::result::Result<Vec<ResultRow>, CliError> {
    let calibrators = cfg.calibrators()?;
    let kinds = distinct_kinds(&calibrators);
    let mut rows = Vec::new();
    for &alpha in &cfg.alphas {
        let mut acc: Vec<Option<TrialMetrics>> = vec![None; calibrators.len()];
        for draw in 0..cfg.draws as u64 {
            let (tune, pool) = synthetic_draw(cfg, n_train, n_tune, alpha, draw)?;
            let spec = split_spec(cfg, n_tune, draw);
            for &kind in &kinds {
                let harness = Harness::new(&pool, &tune, kind)?;
                for (c, slot) in calibrators.iter().zip(acc.iter_mut()) {
                    if c.score_kind == kind {
                        add_metrics(slot, harness.run(c.method, alpha, cfg.trials, &spec)?);
                    }
                }
            }
        }
        for (c, m) in calibrators.iter().zip(acc) {
            let m = mean_metrics(m.expect("every calibrator ran"), cfg.draws);
            let flags = coverage_flags(c, &m, alpha, n_tune, cfg.n_cal);
            for t in 0..m.k() {
                rows.push(ResultRow {
                    experiment: cfg.experiment,
                    method: c.method.to_string(),
                    score_kind: c.score_kind.to_string(),
                    alpha,
                    target: Some(t),
                    ejc: Some(m.ejc),
                    esc: Some(m.esc[t]),
                    mil: Some(m.mil[t]),
                    eac: None,
                    r_avg: None,
                    n_cal: cfg.n_cal,
                    n_tune,
                    trials: cfg.trials,
                    seed: cfg.seed,
                    n_train: Some(n_train),
                    labels: None,
                    draws: cfg.draws,
                    flags: flags.clone(),
                });
            }
        }
    }
    Ok(rows)
}

fn coverage_flags(c: &Calibrator, m: &TrialMetrics, alpha: f64, n_tune: usize, n_cal: usize) -> Vec<String> {
    let mut flags = Vec::new();
    if c.method.uses_tuning() && n_tune < MIN_RELIABLE_TUNE {
        flags.push("under-tuned".to_string());
    }
    if m.has_infinite_mil() {
        flags.push("infinite-mil".to_string());
    }
    if matches!(c.method, Method::QnMax | Method::Minimax) {
        let report = coverage_bounds_check(m, alpha, c.effective_n(n_tune, n_cal));
        if !report.pass {
            flags.push("outside-coverage-bounds".to_string());
        }
    }
    flags
}

/// Sums protocol results over draws; r_avg is recombined from the pooled
/// inverse rates.
fn add_protocol(acc: &mut Option<(ProtocolResult, f64)>, r: ProtocolResult) {
    let inv = r.evaluations() as f64 / r.r_avg;
    match acc {
        None => *acc = Some((r, inv)),
        Some((a, a_inv)) => {
            a.eac += r.eac;
            for (x, y) in a.accepted_round_histogram.iter_mut().zip(&r.accepted_round_histogram) {
                *x += y;
            }
            a.trials += r.trials;
            *a_inv += inv;
        }
    }
}

fn multiround_rows(
    cfg: &ExperimentConfig,
    rc: &RoundConfig,
    with_baseline: bool,
) -> std::result::Result<Vec<ResultRow>, CliError> {
    let calibrators = cfg.calibrators()?;
    let mut entries: Vec<(String, Calibrator, bool)> =
        calibrators.iter().map(|c| (c.method.to_string(), *c, false)).collect();
    if with_baseline {
        if rc.labels == 1 {
            entries.push(("sc".into(), Calibrator::new(Method::Single, calibrators[0].score_kind), true));
        } else {
            entries.extend(calibrators.iter().map(|c| (format!("sc_{}", c.method), *c, true)));
        }
    }
    let mut rows = Vec::new();
    for &alpha in &cfg.alphas {
        let mut acc: Vec<Option<(ProtocolResult, f64)>> = vec![None; entries.len()];
        for draw in 0..cfg.draws as u64 {
            let n = cfg.n_tune + cfg.n_cal + cfg.n_test;
            let data = gen_multiround(n, rc, alpha, derive_seed(cfg.seed, stream::MULTIROUND, draw))?;
            let (tune, pool) = split_tune(&data, cfg.n_tune, derive_seed(cfg.seed, stream::TUNE_SPLIT, draw))?;
            let spec = split_spec(cfg, cfg.n_tune, draw);
            for ((_, c, sc), slot) in entries.iter().zip(acc.iter_mut()) {
                let r = if *sc {
                    run_sc_baseline(&pool, &tune, *c, alpha, rc, cfg.trials, &spec)?
                } else {
                    run_protocol(&pool, &tune, *c, alpha, rc, cfg.trials, &spec)?
                };
                add_protocol(slot, r);
            }
        }
        for ((name, c, _), slot) in entries.iter().zip(acc) {
            let (mut r, inv) = slot.expect("every entry ran");
            r.eac /= cfg.draws as f64;
            r.r_avg = r.evaluations() as f64 / inv;
            let mut flags = Vec::new();
            if c.method.uses_tuning() && cfg.n_tune < MIN_RELIABLE_TUNE {
                flags.push("under-tuned".to_string());
            }
            if r.eac < 1.0 - alpha - r.delta_mc(alpha) {
                flags.push("below-target".to_string());
            }
            rows.push(ResultRow {
                experiment: cfg.experiment,
                method: name.clone(),
                score_kind: c.score_kind.to_string(),
                alpha,
                target: None,
                ejc: None,
                esc: None,
                mil: None,
                eac: Some(r.eac),
                r_avg: Some(r.r_avg),
                n_cal: cfg.n_cal,
                n_tune: cfg.n_tune,
                trials: cfg.trials,
                seed: cfg.seed,
                n_train: None,
                labels: Some(rc.labels),
                draws: cfg.draws,
                flags,
            });
        }
    }
    Ok(rows)
}
