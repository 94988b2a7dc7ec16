//! Experiment configuration.
//!
//! Config files are TOML: flat top-level keys plus optional `[round_cfg]` and
//! `[quantreg]` sections. A `.json` file is read as JSON and may be either
//! the bare configuration or a run manifest, whose `config` field echoes the
//! resolved configuration. Every key is optional; missing keys take the
//! defaults of the selected experiment. Command-line flags override the file.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::calibrate::Calibrator;
use crate::synthetic::{NoiseKind, QuantRegHyper, RoundConfig};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Table1,
    CoverageSweep,
    NtrainSweep,
    NtuneSweep,
    Multiround,
    MultiroundLabels,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Table1 => "table1",
            Experiment::CoverageSweep => "coverage_sweep",
            Experiment::NtrainSweep => "ntrain_sweep",
            Experiment::NtuneSweep => "ntune_sweep",
            Experiment::Multiround => "multiround",
            Experiment::MultiroundLabels => "multiround_labels",
        }
    }

    pub fn is_multiround(self) -> bool {
        matches!(self, Experiment::Multiround | Experiment::MultiroundLabels)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        [
            Experiment::Table1,
            Experiment::CoverageSweep,
            Experiment::NtrainSweep,
            Experiment::NtuneSweep,
            Experiment::Multiround,
            Experiment::MultiroundLabels,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
        .ok_or_else(|| CliError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub noise: NoiseKind,
    /// Calibrators as `method[:score]`.
    pub methods: Vec<String>,
    /// Miscoverage levels α.
    pub alphas: Vec<f64>,
    pub n_train: usize,
    pub n_tune: usize,
    pub n_cal: usize,
    pub n_test: usize,
    /// Monte Carlo trials T per draw.
    pub trials: usize,
    /// Independent dataset draws averaged per cell.
    pub draws: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train_sizes: Vec<usize>,
    pub tune_sizes: Vec<usize>,
    pub label_counts: Vec<usize>,
    pub round_cfg: Option<RoundConfig>,
    pub quantreg: QuantRegHyper,
}

/// On-disk form: every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub noise: Option<NoiseKind>,
    pub methods: Option<Vec<String>>,
    pub alphas: Option<Vec<f64>>,
    pub n_train: Option<usize>,
    pub n_tune: Option<usize>,
    pub n_cal: Option<usize>,
    pub n_test: Option<usize>,
    pub trials: Option<usize>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub train_sizes: Option<Vec<usize>>,
    pub tune_sizes: Option<Vec<usize>>,
    pub label_counts: Option<Vec<usize>>,
    pub round_cfg: Option<RoundConfig>,
    pub quantreg: Option<QuantRegHyper>,
}

#[derive(Deserialize)]
struct Manifest {
    config: RawConfig,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Accepts a bare configuration object or a manifest with a `config` field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let parsed = if value.get("config").is_some() {
            serde_json::from_value::<Manifest>(value).map(|m| m.config)
        } else {
            serde_json::from_value::<RawConfig>(value)
        };
        parsed.map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fills unset fields with the defaults of the selected experiment
    /// (`table1` when none is selected) and validates the result.
    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let experiment = self.experiment.unwrap_or(Experiment::Table1);
        let d = defaults(experiment);
        let round_cfg = match (self.round_cfg, experiment.is_multiround()) {
            (Some(r), _) => Some(r),
            (None, true) => Some(RoundConfig::default()),
            (None, false) => None,
        };
        let cfg = ExperimentConfig {
            experiment,
            noise: self.noise.unwrap_or(d.noise),
            methods: self.methods.unwrap_or(d.methods),
            alphas: self.alphas.unwrap_or(d.alphas),
            n_train: self.n_train.unwrap_or(d.n_train),
            n_tune: self.n_tune.unwrap_or(d.n_tune),
            n_cal: self.n_cal.unwrap_or(d.n_cal),
            n_test: self.n_test.unwrap_or(d.n_test),
            trials: self.trials.unwrap_or(d.trials),
            draws: self.draws.unwrap_or(d.draws),
            seed: self.seed.unwrap_or(d.seed),
            output_dir: self.output_dir.unwrap_or(d.output_dir),
            train_sizes: self.train_sizes.unwrap_or(d.train_sizes),
            tune_sizes: self.tune_sizes.unwrap_or(d.tune_sizes),
            label_counts: self.label_counts.unwrap_or(d.label_counts),
            round_cfg,
            quantreg: self.quantreg.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn defaults(experiment: Experiment) -> ExperimentConfig {
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let synthetic_methods = strings(&["ia:cqr", "qn_max:qn", "copula:cqr", "minimax:cqr", "minimax:qn"]);
    let mut cfg = ExperimentConfig {
        experiment,
        noise: NoiseKind::Independent,
        methods: synthetic_methods,
        alphas: vec![0.3, 0.2, 0.1, 0.05],
        n_train: 5000,
        n_tune: 5000,
        n_cal: 5000,
        n_test: 2000,
        trials: 500,
        draws: 1,
        seed: 0,
        output_dir: PathBuf::from("results"),
        train_sizes: vec![100, 300, 1000, 3000, 10000],
        tune_sizes: vec![50, 100, 500, 1000, 5000],
        label_counts: vec![1, 2, 3, 4, 5],
        round_cfg: None,
        quantreg: QuantRegHyper::default(),
    };
    match experiment {
        Experiment::Table1 => {}
        Experiment::CoverageSweep => {
            cfg.alphas = vec![0.3, 0.25, 0.2, 0.15, 0.1, 0.05];
            cfg.trials = 200;
        }
        Experiment::NtrainSweep | Experiment::NtuneSweep => {
            cfg.alphas = vec![0.1];
            cfg.trials = 100;
            cfg.draws = 5;
        }
        Experiment::Multiround | Experiment::MultiroundLabels => {
            cfg.methods = strings(&["ia:cqr", "qn_max:cqr", "copula:cqr", "minimax:cqr"]);
            cfg.alphas = if experiment == Experiment::Multiround { vec![0.15, 0.1, 0.05] } else { vec![0.1] };
            cfg.n_tune = 2000;
            cfg.n_cal = 2000;
            cfg.n_test = 2000;
            cfg.trials = 100;
        }
    }
    cfg
}

impl ExperimentConfig {
    pub fn calibrators(&self) -> Result<Vec<Calibrator>, CliError> {
        self.methods
            .iter()
            .map(|m| m.parse().map_err(|e| CliError::Config(format!("field `methods`: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: &str| Err(CliError::Config(format!("field `{name}`: {msg}")));
        if self.methods.is_empty() {
            return field("methods", "at least one method is required");
        }
        self.calibrators()?;
        if self.alphas.is_empty() {
            return field("alphas", "at least one level is required");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return field("alphas", &format!("{a} is outside (0, 1)"));
        }
        for (name, v) in [
            ("n_train", self.n_train),
            ("n_tune", self.n_tune),
            ("n_cal", self.n_cal),
            ("n_test", self.n_test),
            ("trials", self.trials),
            ("draws", self.draws),
        ] {
            if v == 0 {
                return field(name, "must be positive");
            }
        }
        for (name, v) in [
            ("train_sizes", &self.train_sizes),
            ("tune_sizes", &self.tune_sizes),
            ("label_counts", &self.label_counts),
        ] {
            if v.is_empty() || v.contains(&0) {
                return field(name, "must be a non-empty list of positive counts");
            }
        }
        if let Some(r) = &self.round_cfg {
            r.validate().map_err(|e| CliError::Config(format!("section `round_cfg`: {e}")))?;
        }
        if !(self.quantreg.step > 0.0) || self.quantreg.epochs == 0 {
            return field("quantreg", "step and epochs must be positive");
        }
        Ok(())
    }

    pub fn round_cfg(&self) -> RoundConfig {
        self.round_cfg.clone().unwrap_or_default()
    }
}
