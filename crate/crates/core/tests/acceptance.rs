//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a single `PASS`/`FAIL` line; run with
//! `cargo test --test acceptance -- --nocapture` to see them.

use std::sync::OnceLock;

use rand::Rng;

use ctool::calibrate::{calibrate_minimax, Calibrator, Method};
use ctool::cli::config::{Experiment, ExperimentConfig, RawConfig};
use ctool::cli::{output, runner};
use ctool::eval::{coverage_bounds_check, delta_mc, Harness, TrialMetrics};
use ctool::multiround::{run_protocol, run_sc_baseline, sweep_labels, ProtocolResult};
use ctool::rng::{derive_seed, rng_for};
use ctool::scores::{emp_quantile, invert_threshold, invert_threshold_strict, score};
use ctool::synthetic::{
    cholesky3, fit_quantile_models, fit_quantreg, gen_multiround, gen_synthetic, predict_quantiles, NoiseKind,
    QuantRegHyper, RoundConfig, SIGMA,
};
use ctool::{data::split_tune, QuantileRow, ScoreKind, ScoreMatrix, SplitSpec, TargetVector};

const SEED: u64 = 20240601;
const ALPHAS: [f64; 4] = [0.3, 0.2, 0.1, 0.05];

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn base_config(noise: NoiseKind) -> ExperimentConfig {
    RawConfig {
        experiment: Some(Experiment::Table1),
        noise: Some(noise),
        seed: Some(SEED),
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

/// Full-scale results: n_train = n_tune = n = 5000, n_test = 2000,
/// T = 500, for every method at every level.
struct Table {
    methods: Vec<Calibrator>,
    metrics: Vec<Vec<TrialMetrics>>,
    n_tune: usize,
    n_cal: usize,
}

impl Table {
    fn get(&self, alpha_idx: usize, label: &str) -> &TrialMetrics {
        let j = self.methods.iter().position(|c| c.label() == label).expect("method present");
        &self.metrics[alpha_idx][j]
    }
}

fn build_table(noise: NoiseKind) -> Table {
    let cfg = base_config(noise);
    assert_eq!((cfg.n_train, cfg.n_tune, cfg.n_cal, cfg.n_test, cfg.trials), (5000, 5000, 5000, 2000, 500));
    let methods = cfg.calibrators().unwrap();
    let spec = SplitSpec { seed: derive_seed(SEED, ctool::rng::stream::TRIAL, 0), n_tune: 5000, n_cal: 5000, n_test: 2000 };
    let metrics = ALPHAS
        .iter()
        .map(|&alpha| {
            let (tune, pool) = runner::synthetic_draw(&cfg, cfg.n_train, cfg.n_tune, alpha, 0).unwrap();
            let cqr = Harness::new(&pool, &tune, ScoreKind::Cqr).unwrap();
            let qn = Harness::new(&pool, &tune, ScoreKind::Qn).unwrap();
            methods
                .iter()
                .map(|c| {
                    let h = if c.score_kind == ScoreKind::Qn { &qn } else { &cqr };
                    h.run(c.method, alpha, cfg.trials, &spec).unwrap()
                })
                .collect()
        })
        .collect();
    Table { methods, metrics, n_tune: cfg.n_tune, n_cal: cfg.n_cal }
}

fn independent() -> &'static Table {
    static T: OnceLock<Table> = OnceLock::new();
    T.get_or_init(|| build_table(NoiseKind::Independent))
}

fn correlated() -> &'static Table {
    static T: OnceLock<Table> = OnceLock::new();
    T.get_or_init(|| build_table(NoiseKind::Correlated))
}

#[test]
fn criterion_1_independent_noise_joint_coverage() {
    let t = independent();
    let mut worst = (0.0f64, String::new());
    for (i, &alpha) in ALPHAS.iter().enumerate() {
        for label in ["qn_max:qn", "minimax:cqr", "minimax:qn", "copula:cqr"] {
            let m = t.get(i, label);
            let err = (m.ejc - (1.0 - alpha)).abs();
            println!("  independent 1-alpha={:.2} {label:<12} ejc={:.4}", 1.0 - alpha, m.ejc);
            if err > worst.0 {
                worst = (err, format!("{label} at 1-alpha={:.2}", 1.0 - alpha));
            }
        }
    }
    let pass = worst.0 <= 0.015;
    report(1, "independent-noise EJC within 0.015 of 1-alpha", pass, &format!("max |err| {:.4} ({})", worst.0, worst.1));
    assert!(pass);
}

#[test]
fn criterion_2_ia_conservative_under_correlation() {
    let t = correlated();
    let ia_90 = t.get(2, "ia:cqr").ejc;
    let in_band = (0.905..=0.935).contains(&ia_90);
    let mut min_gap = f64::INFINITY;
    let mut at = 0.0;
    for (i, &alpha) in ALPHAS.iter().enumerate() {
        let ia = t.get(i, "ia:cqr").ejc;
        let best_other = t
            .methods
            .iter()
            .filter(|c| c.method != Method::Ia)
            .map(|c| t.get(i, &c.label()).ejc)
            .fold(f64::NEG_INFINITY, f64::max);
        println!("  correlated 1-alpha={:.2} ia={ia:.4} best other={best_other:.4} gap={:.4}", 1.0 - alpha, ia - best_other);
        if ia - best_other < min_gap {
            min_gap = ia - best_other;
            at = 1.0 - alpha;
        }
    }
    let pass = in_band && min_gap >= 0.01;
    report(
        2,
        "IA EJC in [0.905, 0.935] at 0.90 and >= 0.01 above all others",
        pass,
        &format!("ia@0.90={ia_90:.4}; smallest gap {min_gap:.4} at 1-alpha={at:.2}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_coverage_sandwich() {
    let mut all = true;
    let mut lines = Vec::new();
    for (noise, t) in [("independent", independent()), ("correlated", correlated())] {
        for (i, &alpha) in ALPHAS.iter().enumerate() {
            if alpha != 0.1 && alpha != 0.2 {
                continue;
            }
            for label in ["qn_max:qn", "minimax:cqr", "minimax:qn"] {
                let c: Calibrator = label.parse().unwrap();
                let n = c.effective_n(t.n_tune, t.n_cal);
                let r = coverage_bounds_check(t.get(i, label), alpha, n);
                println!("  {noise} alpha={alpha} {label:<12} n={n} {}", r.message);
                all &= r.pass;
                if !r.pass {
                    lines.push(format!("{noise}/{label}/alpha={alpha}"));
                }
            }
        }
    }
    report(3, "EJC within [1-a-d, 1-a+1/(n+1)+d]", all, if all { "all cells inside" } else { "violations" });
    for l in &lines {
        println!("  outside: {l}");
    }
    assert!(all);
}

/// Rank-based marginal CDF values of each column, divided by the sample size.
fn rank_transform(scores: &ScoreMatrix) -> Vec<Vec<f64>> {
    let n = scores.n();
    let mut out = vec![vec![0.0; scores.k()]; n];
    for k in 0..scores.k() {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| scores.get(a, k).total_cmp(&scores.get(b, k)));
        for (r, &i) in idx.iter().enumerate() {
            out[i][k] = (r + 1) as f64 / n as f64;
        }
    }
    out
}

fn cqr_scores(models: &[(ctool::synthetic::QuantReg, ctool::synthetic::QuantReg)], n: usize, seed: u64) -> ScoreMatrix {
    let data = predict_quantiles(models, &gen_synthetic(n, NoiseKind::Correlated, seed).unwrap()).unwrap();
    ScoreMatrix::compute(ScoreKind::Cqr, data.quantiles(), data.targets()).unwrap()
}

#[test]
fn criterion_4_minimax_level_converges_to_oracle() {
    let alpha = 0.1;
    let train = gen_synthetic(5000, NoiseKind::Correlated, derive_seed(SEED, 40, 0)).unwrap();
    let models = fit_quantile_models(&train, alpha, QuantRegHyper::default()).unwrap();

    // Oracle: (1−α)-quantile of max_k F_k(S_k) with F_k from 10⁶ draws.
    let big = cqr_scores(&models, 1_000_000, derive_seed(SEED, 41, 0));
    let t: Vec<f64> = rank_transform(&big).into_iter().map(|r| r.into_iter().fold(0.0, f64::max)).collect();
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    let oracle = sorted[((1.0 - alpha) * sorted.len() as f64).ceil() as usize - 1];

    let mut medians = Vec::new();
    for &n in &[500usize, 5000, 50000] {
        let mut errs: Vec<f64> = (0..20u64)
            .map(|s| {
                let m = cqr_scores(&models, 2 * n, derive_seed(SEED, 42 + n as u64, s));
                let tune = m.select_rows(&(0..n).collect::<Vec<_>>());
                let cal = m.select_rows(&(n..2 * n).collect::<Vec<_>>());
                let c = calibrate_minimax(&tune, &cal, alpha, ScoreKind::Cqr).unwrap();
                (c.lambda().unwrap() - oracle).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        medians.push((errs[9] + errs[10]) / 2.0);
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing && medians[2] <= 0.01;
    report(
        4,
        "median |lambda - lambda*| strictly decreasing, <= 0.01 at 50000",
        pass,
        &format!("oracle {oracle:.5}; medians {:.5} / {:.5} / {:.5}", medians[0], medians[1], medians[2]),
    );
    assert!(pass);
}

#[test]
fn criterion_5_minimax_balance() {
    let t = correlated();
    let mm = t.get(2, "minimax:cqr").esc_spread();
    let cp = t.get(2, "copula:cqr").esc_spread();
    let pass = mm <= 0.02 && mm <= cp;
    report(
        5,
        "correlated 0.90: minimax ESC spread <= 0.02 and <= copula spread",
        pass,
        &format!("minimax {mm:.4}, copula {cp:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_tuning_sensitivity() {
    let cfg = base_config(NoiseKind::Correlated);
    let alpha = 0.1;
    let trials = 100;
    let spread = |n_tune: usize| {
        let mut total = 0.0;
        for draw in 0..5u64 {
            let (tune, pool) = runner::synthetic_draw(&cfg, cfg.n_train, n_tune, alpha, draw).unwrap();
            let spec = SplitSpec { seed: derive_seed(SEED, ctool::rng::stream::TRIAL, draw), n_tune, n_cal: 5000, n_test: 2000 };
            let h = Harness::new(&pool, &tune, ScoreKind::Cqr).unwrap();
            total += h.run(Method::Minimax, alpha, trials, &spec).unwrap().esc_spread();
        }
        total / 5.0
    };
    let small = spread(50);
    let large = spread(5000);
    let pass = small - large >= 0.02 && large <= 0.02;
    report(
        6,
        "minimax spread at n_tune=50 exceeds n_tune=5000 by >= 0.02; <= 0.02 at 5000",
        pass,
        &format!("spread@50 {small:.4}, spread@5000 {large:.4}"),
    );
    assert!(pass);
}

fn below(r: &ProtocolResult, alpha: f64) -> bool {
    r.eac < 1.0 - alpha - r.delta_mc(alpha)
}

/// Picks τ from a fixed log grid so that about half of the samples stop
/// before the last round, using a pilot run on a separate trial seed.
fn pick_tau(pool: &ctool::LabeledSet, tune: &ctool::LabeledSet, c: Calibrator, alpha: f64, labels: usize, spec: &SplitSpec) -> f64 {
    let pilot = SplitSpec { seed: derive_seed(spec.seed, 73, 0), ..*spec };
    (0..40)
        .map(|i| 0.005 * 200f64.powf(i as f64 / 39.0))
        .map(|tau| {
            let rc = RoundConfig { tau, labels, ..Default::default() };
            let frac = run_protocol(pool, tune, c, alpha, &rc, 10, &pilot).unwrap().stopped_early_fraction();
            (tau, (frac - 0.5).abs())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn criterion_7_multiround_guarantee() {
    let (n_tune, n_cal, n_test, trials) = (2000, 2000, 2000, 100);
    let spec = SplitSpec { seed: derive_seed(SEED, ctool::rng::stream::TRIAL, 7), n_tune, n_cal, n_test };
    let minimax: Calibrator = "minimax:cqr".parse().unwrap();

    let mut stop_ok = true;
    let mut joint_ok = true;
    let mut sc_below_any = false;
    let mut details = Vec::new();
    for alpha in [0.15, 0.1, 0.05] {
        // The generator only reads the schedule and label count, not τ.
        let gen_cfg = RoundConfig { labels: 1, ..Default::default() };
        assert_eq!(gen_cfg.sigma, vec![0.4, 0.2, 0.1, 0.05, 0.02]);
        let data = gen_multiround(n_tune + n_cal + n_test, &gen_cfg, alpha, derive_seed(SEED, 70, 0)).unwrap();
        let (tune, pool) = split_tune(&data, n_tune, derive_seed(SEED, 71, 0)).unwrap();
        let tau = pick_tau(&pool, &tune, minimax, alpha, 1, &spec);
        let rc = RoundConfig { tau, ..gen_cfg };
        let joint = run_protocol(&pool, &tune, minimax, alpha, &rc, trials, &spec).unwrap();
        let sc = run_sc_baseline(&pool, &tune, minimax, alpha, &rc, trials, &spec).unwrap();
        let frac = joint.stopped_early_fraction();
        stop_ok &= (0.3..=0.7).contains(&frac);
        joint_ok &= !below(&joint, alpha);
        sc_below_any |= below(&sc, alpha);
        println!(
            "  1-alpha={:.2} tau={tau:.4} stop-early={frac:.3} joint eac={:.4} r_avg={:.3} | sc eac={:.4} (threshold {:.4})",
            1.0 - alpha,
            joint.eac,
            joint.r_avg,
            sc.eac,
            1.0 - alpha - joint.delta_mc(alpha)
        );
        details.push(format!("{:.2}:{:.4}/{:.4}", 1.0 - alpha, joint.eac, sc.eac));
    }

    // Label sweep at 1−α = 0.90 with τ picked for L = 1.
    let alpha = 0.1;
    let n = n_tune + n_cal + n_test;
    let gen_cfg = RoundConfig { labels: 1, ..Default::default() };
    let data = gen_multiround(n, &gen_cfg, alpha, derive_seed(SEED, 72, 0)).unwrap();
    let (tune, pool) = split_tune(&data, n_tune, spec.seed).unwrap();
    let rc = RoundConfig { tau: pick_tau(&pool, &tune, minimax, alpha, 1, &spec), ..gen_cfg };
    let sweep = sweep_labels(&[1, 2, 3, 4, 5], &rc, minimax, alpha, n, trials, &spec, derive_seed(SEED, 72, 0)).unwrap();
    let rates: Vec<f64> = sweep.iter().map(|r| r.r_avg).collect();
    let rates_ok = rates.windows(2).all(|w| w[1] <= w[0]);
    let sweep_ok = sweep.iter().all(|r| !below(r, alpha));
    for (l, r) in sweep.iter().enumerate() {
        println!("  L={} tau={:.4} eac={:.4} r_avg={:.3}", l + 1, rc.tau, r.eac, r.r_avg);
    }

    let pass = stop_ok && joint_ok && sc_below_any && rates_ok && sweep_ok;
    report(
        7,
        "joint EAC >= 1-a-d, SC below for some a, r_avg non-increasing in L",
        pass,
        &format!(
            "stop-fraction ok={stop_ok} joint ok={joint_ok} sc below={sc_below_any} eac(joint/sc) {} rates {:?} sweep ok={sweep_ok}",
            details.join(" "),
            rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

/// All multisets of size `len` over 1..=5 as non-decreasing sequences.
fn multisets(len: usize, min: u32, prefix: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
    if prefix.len() == len {
        out.push(prefix.clone());
        return;
    }
    for v in min..=5 {
        prefix.push(v as f64);
        multisets(len, v, prefix, out);
        prefix.pop();
    }
}

#[test]
fn criterion_8_micro_oracles() {
    // emp_quantile against sort-and-index, every multiset of size <= 8.
    let mut sets = Vec::new();
    for len in 1..=8 {
        multisets(len, 1, &mut Vec::new(), &mut sets);
    }
    let betas: Vec<f64> = (1..=48).map(|j| j as f64 / 48.0).chain([0.001, 0.333, 0.95, 1.2]).collect();
    let mut quantile_mismatch = 0;
    for set in &sets {
        // Reverse so the input is not already sorted.
        let input: Vec<f64> = set.iter().rev().copied().collect();
        for &beta in &betas {
            let n = set.len();
            let exact = beta * n as f64;
            let rank = if (exact - exact.round()).abs() < 1e-9 { exact.round() as usize } else { exact.ceil() as usize };
            let expected = if rank > n { f64::INFINITY } else { set[rank.max(1) - 1] };
            if emp_quantile(beta, &input).unwrap() != expected {
                quantile_mismatch += 1;
            }
        }
    }

    // Score / interval round trip over 10⁵ random cases.
    let kinds = [ScoreKind::Cqr, ScoreKind::Qn, ScoreKind::CqrOneSided, ScoreKind::QnOneSided];
    let mut rng = rng_for(SEED, 80, 0);
    let mut trip_mismatch = 0;
    for case in 0..100_000 {
        let lo: Vec<f64> = (0..3).map(|_| rng.random_range(-20.0..20.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.01..10.0)).collect();
        let q = QuantileRow::new(lo, hi);
        let z = TargetVector::new((0..3).map(|_| rng.random_range(-40.0..40.0)).collect());
        let zeta: f64 = rng.random_range(-15.0..15.0);
        let k = case % 3;
        let kind = kinds[case % 4];
        let s = score(kind, &q, &z, k).unwrap();
        let closed = invert_threshold(&q, k, zeta, kind).unwrap().contains(z.get(k));
        let open = invert_threshold_strict(&q, k, zeta, kind).unwrap().contains(z.get(k));
        if (s <= zeta) != closed || (s < zeta) != open {
            trip_mismatch += 1;
        }
    }

    // Cholesky reconstruction.
    let l = cholesky3(&SIGMA).unwrap();
    let mut chol_err = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let v: f64 = (0..3).map(|p| l[i][p] * l[j][p]).sum();
            chol_err = chol_err.max((v - SIGMA[i][j]).abs());
        }
    }

    // Pinball fits: fraction of fresh samples below each fitted quantile.
    let mut pinball_worst = 0.0f64;
    for noise in [NoiseKind::Independent, NoiseKind::Correlated] {
        let train = gen_synthetic(10_000, noise, derive_seed(SEED, 81, 0)).unwrap();
        let test = gen_synthetic(10_000, noise, derive_seed(SEED, 82, 0)).unwrap();
        for k in 0..3 {
            for level in [0.05, 0.5, 0.95] {
                let m = fit_quantreg(&train, k, level, QuantRegHyper::default()).unwrap();
                let below = test.features().iter().zip(test.targets()).filter(|(&u, z)| z.get(k) < m.predict(u)).count();
                pinball_worst = pinball_worst.max((below as f64 / 10_000.0 - level).abs());
            }
        }
    }

    let pass = quantile_mismatch == 0 && trip_mismatch == 0 && chol_err <= 1e-12 && pinball_worst <= 0.02;
    report(
        8,
        "micro-oracles",
        pass,
        &format!(
            "emp_quantile mismatches {quantile_mismatch}/{} ; round-trip mismatches {trip_mismatch}/100000 ; cholesky err {chol_err:.2e} ; pinball max dev {pinball_worst:.4}",
            sets.len() * betas.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_determinism() {
    let configs = [
        "experiment = \"coverage_sweep\"\nnoise = \"correlated\"\nn_train = 1000\nn_tune = 500\nn_cal = 500\nn_test = 300\ntrials = 20\nseed = 3\n",
        "experiment = \"multiround\"\nn_tune = 400\nn_cal = 400\nn_test = 300\ntrials = 10\nseed = 4\n",
        "experiment = \"ntune_sweep\"\nn_train = 800\nn_cal = 400\nn_test = 300\ntrials = 5\ndraws = 2\ntune_sizes = [50, 400]\nseed = 5\n",
    ];
    let mut identical = true;
    for text in configs {
        let cfg = RawConfig::from_toml(text).unwrap().resolve().unwrap();
        let render = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            output::render_csv(&pool.install(|| runner::run_experiment(&cfg)).unwrap())
        };
        let a = render(1);
        identical &= a == render(1) && a == render(4) && a == render(7);
    }
    report(9, "byte-identical CSV across runs and thread counts", identical, "3 configs x threads {1,1,4,7}");
    assert!(identical);
}

#[test]
fn delta_mc_matches_definition() {
    assert!((delta_mc(0.1, 500, 2000) - 3.0 * (0.09f64 / 1e6).sqrt()).abs() < 1e-15);
}
