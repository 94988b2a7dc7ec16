//! Result rows, CSV and manifest writers, and long-format plot data.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{Experiment, ExperimentConfig};
use super::CliError;

/// Column order of the results CSV.
pub const COLUMNS: [&str; 18] = [
    "experiment",
    "method",
    "score_kind",
    "alpha",
    "target",
    "ejc",
    "esc",
    "mil",
    "eac",
    "r_avg",
    "n_cal",
    "n_tune",
    "T",
    "seed",
    "n_train",
    "labels",
    "draws",
    "flags",
];

/// Column order of every plot-data file.
pub const PLOT_COLUMNS: [&str; 3] = ["x", "series", "value"];

/// One results row; `None` cells are written empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub method: String,
    pub score_kind: String,
    pub alpha: f64,
    pub target: Option<usize>,
    pub ejc: Option<f64>,
    pub esc: Option<f64>,
    pub mil: Option<f64>,
    pub eac: Option<f64>,
    pub r_avg: Option<f64>,
    pub n_cal: usize,
    pub n_tune: usize,
    pub trials: usize,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub labels: Option<usize>,
    pub draws: usize,
    pub flags: Vec<String>,
}

impl ResultRow {
    pub fn series(&self) -> String {
        format!("{}:{}", self.method, self.score_kind)
    }
}

/// Six significant digits; ±∞ as `inf`/`-inf`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let cells = [
            r.experiment.to_string(),
            r.method.clone(),
            r.score_kind.clone(),
            fmt_num(r.alpha),
            opt(r.target),
            opt_num(r.ejc),
            opt_num(r.esc),
            opt_num(r.mil),
            opt_num(r.eac),
            opt_num(r.r_avg),
            r.n_cal.to_string(),
            r.n_tune.to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
            opt(r.n_train),
            opt(r.labels),
            r.draws.to_string(),
            r.flags.join(";"),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Long-format points keyed by file stem.
pub type PlotData = BTreeMap<String, Vec<(f64, String, f64)>>;

fn x_value(cfg: &ExperimentConfig, r: &ResultRow) -> f64 {
    match cfg.experiment {
        Experiment::NtrainSweep => r.n_train.unwrap_or(cfg.n_train) as f64,
        Experiment::NtuneSweep => r.n_tune as f64,
        Experiment::MultiroundLabels => r.labels.unwrap_or(1) as f64,
        _ => 1.0 - r.alpha,
    }
}

/// Plot series derived from the results rows.
///
/// Coverage experiments give `esc_minmax` (min and max over targets of ESC),
/// `mil` (per target) and `ejc`; multi-round experiments give `eac` and
/// `r_avg`. The x axis is 1 − α, except n_train, n_tune or L for the sweeps.
pub fn plot_data(cfg: &ExperimentConfig, rows: &[ResultRow]) -> PlotData {
    let mut plots = PlotData::new();
    let mut push = |file: &str, x: f64, series: String, value: f64| {
        plots.entry(file.to_string()).or_default().push((x, series, value));
    };
    if cfg.experiment.is_multiround() {
        for r in rows {
            let x = x_value(cfg, r);
            let series = if cfg.experiment == Experiment::MultiroundLabels {
                format!("{}:alpha={}", r.series(), fmt_num(r.alpha))
            } else {
                r.series()
            };
            if let Some(v) = r.eac {
                push("eac", x, series.clone(), v);
            }
            if let Some(v) = r.r_avg {
                push("r_avg", x, series, v);
            }
        }
        return plots;
    }

    // Group target rows into cells keyed by (series, x) in first-seen order.
    let mut cells: Vec<(String, f64, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let (series, x) = (r.series(), x_value(cfg, r));
        match cells.iter_mut().find(|(s, cx, _)| *s == series && *cx == x) {
            Some(cell) => cell.2.push(r),
            None => cells.push((series, x, vec![r])),
        }
    }
    for (series, x, group) in &cells {
        let esc: Vec<f64> = group.iter().filter_map(|r| r.esc).collect();
        if !esc.is_empty() {
            let lo = esc.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = esc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            push("esc_minmax", *x, format!("{series}:min"), lo);
            push("esc_minmax", *x, format!("{series}:max"), hi);
        }
        for r in group {
            if let (Some(t), Some(m)) = (r.target, r.mil) {
                push("mil", *x, format!("{series}:target{t}"), m);
            }
        }
        if let Some(e) = group[0].ejc {
            push("ejc", *x, series.clone(), e);
        }
    }
    plots
}

pub fn render_plot(points: &[(f64, String, f64)]) -> String {
    let mut out = PLOT_COLUMNS.join(",");
    out.push('\n');
    for (x, s, v) in points {
        let _ = writeln!(out, "{},{},{}", fmt_num(*x), s, fmt_num(*v));
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Writes one `plot_<name>.csv` per plot; returns the paths.
pub fn emit_plotdata(dir: &Path, cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for (name, points) in plot_data(cfg, rows) {
        let path = dir.join(format!("plot_{name}.csv"));
        write(&path, &render_plot(&points))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    wall_time_seconds: f64,
    outputs: Vec<String>,
}

/// Writes the results CSV, plot data and `manifest.json` into
/// `cfg.output_dir`; returns the CSV path.
pub fn write_all(cfg: &ExperimentConfig, rows: &[ResultRow], wall_time_seconds: f64) -> Result<PathBuf, CliError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create output dir {}: {e}", dir.display())))?;
    let csv = dir.join(format!("{}.csv", cfg.experiment));
    write(&csv, &render_csv(rows))?;
    let mut outputs = vec![csv.clone()];
    outputs.extend(emit_plotdata(dir, cfg, rows)?);
    let manifest = ManifestOut {
        tool: "ctool",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        wall_time_seconds,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write(&dir.join("manifest.json"), &(text + "\n"))?;
    Ok(csv)
}
