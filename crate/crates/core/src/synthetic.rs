//! Synthetic data: the three-target regression generator, linear quantile
//! regressors fitted by pinball-loss subgradient descent, and a multi-round
//! observation model whose prediction samples tighten from round to round.
//!
//! Regression targets, with U ~ Unif(−5, 5):
//!
//! ```text
//! Z1 = 10 U + 10 + ε1        ε1 ~ N(10, 1)
//! Z2 = −2 U + 1  + ε2        ε2 ~ Gamma(1, 1)  (= Exp(1))
//! Z3 = 0.1 U²    + ε3        ε3 ~ Exp(1)
//! ```
//!
//! Correlated noise multiplies the stacked (ε1, ε2, ε3) by the lower Cholesky
//! factor of [`SIGMA`]. The noise is not re-centred first, so the correlated
//! ε2 and ε3 inherit a share of ε1's mean of 10 (e.g. E[ε2] = 0.8·10 + 0.6).

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::data::{LabeledSet, QuantileRow, Role, TargetVector};
use crate::error::{Error, Result};
use crate::rng;
use crate::scores::emp_quantile;

/// Target covariance used for correlated noise.
pub const SIGMA: [[f64; 3]; 3] = [[1.0, 0.8, 0.7], [0.8, 1.0, 0.4], [0.7, 0.4, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Independent,
    Correlated,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Independent => "independent",
            NoiseKind::Correlated => "correlated",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(NoiseKind::Independent),
            "correlated" => Ok(NoiseKind::Correlated),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// Lower-triangular L with L·Lᵀ = M.
pub fn cholesky3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: d });
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Noise-free part of the three targets at feature `u`.
pub fn deterministic_part(u: f64) -> [f64; 3] {
    [10.0 * u + 10.0, -2.0 * u + 1.0, 0.1 * u * u]
}

/// Draws one raw noise vector (ε1, ε2, ε3) with independent components.
pub fn draw_base_noise<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let e1 = 10.0 + rng.sample::<f64, _>(StandardNormal);
    // Gamma with shape 1 and scale 1 is Exp(1).
    let e2: f64 = Exp1.sample(rng);
    let e3: f64 = Exp1.sample(rng);
    [e1, e2, e3]
}

fn mat_vec(l: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (0..3).map(|j| l[i][j] * v[j]).sum();
    }
    out
}

/// Draws the noise vector for the given noise kind.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, noise: NoiseKind, chol: &[[f64; 3]; 3]) -> [f64; 3] {
    let e = draw_base_noise(rng);
    match noise {
        NoiseKind::Independent => e,
        NoiseKind::Correlated => mat_vec(chol, &e),
    }
}

/// `n` i.i.d. samples (features and targets; no quantile rows yet).
pub fn gen_synthetic(n: usize, noise: NoiseKind, seed: u64) -> Result<LabeledSet> {
    if n == 0 {
        return Err(Error::Empty("synthetic sample size"));
    }
    let chol = cholesky3(&SIGMA)?;
    let mut rng = rng::rng_for(seed, rng::stream::POOL, 0);
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random_range(-5.0..5.0);
        let eps = draw_noise(&mut rng, noise, &chol);
        let base = deterministic_part(u);
        features.push(u);
        targets.push(TargetVector::new(vec![base[0] + eps[0], base[1] + eps[1], base[2] + eps[2]]));
    }
    LabeledSet::new(features, Vec::new(), targets, Role::Pool)
}

/// Linear quantile model q̂(u) = weight·u + bias at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantReg {
    pub weight: f64,
    pub bias: f64,
    pub level: f64,
}

impl QuantReg {
    pub fn predict(&self, u: f64) -> f64 {
        self.weight * u + self.bias
    }
}

/// Optimizer settings for [`fit_quantreg`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantRegHyper {
    pub epochs: usize,
    pub step: f64,
}

impl Default for QuantRegHyper {
    fn default() -> Self {
        QuantRegHyper { epochs: 2000, step: 0.05 }
    }
}

/// Mean pinball loss of `model` on target `k`.
pub fn pinball_loss(data: &LabeledSet, k: usize, model: &QuantReg) -> f64 {
    let tau = model.level;
    let n = data.len() as f64;
    data.features()
        .iter()
        .zip(data.targets())
        .map(|(&u, z)| {
            let r = z.get(k) - model.predict(u);
            if r >= 0.0 {
                tau * r
            } else {
                (tau - 1.0) * r
            }
        })
        .sum::<f64>()
        / n
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(c, s), x| (c + 1, s + x));
    let mean = sum / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Fits a linear quantile regressor of target `k` on the scalar feature by
/// full-batch subgradient descent on the mean pinball loss.
///
/// Feature and target are standardized. The slope starts at the
/// least-squares value and the intercept at the `level`-quantile of the
/// resulting residuals; the descent then runs `hyper.epochs` steps of size
/// `hyper.step / √epoch`. The final iterate is mapped back to raw units.
pub fn fit_quantreg(train: &LabeledSet, k: usize, level: f64, hyper: QuantRegHyper) -> Result<QuantReg> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("quantile level must lie in (0, 1), got {level}")));
    }
    if k >= train.k() {
        return Err(Error::TargetOutOfRange { index: k, k: train.k() });
    }
    let (mu_u, sd_u) = mean_sd(train.features().iter().copied());
    let (mu_z, sd_z) = mean_sd(train.targets().iter().map(|t| t.get(k)));
    let u: Vec<f64> = train.features().iter().map(|&x| (x - mu_u) / sd_u).collect();
    let z: Vec<f64> = train.targets().iter().map(|t| (t.get(k) - mu_z) / sd_z).collect();
    let n = u.len() as f64;

    let mut w = u.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / u.iter().map(|a| a * a).sum::<f64>().max(f64::MIN_POSITIVE);
    let resid: Vec<f64> = u.iter().zip(&z).map(|(a, b)| b - w * a).collect();
    let mut b = emp_quantile(level, &resid)?;

    for epoch in 1..=hyper.epochs {
        let (mut gw, mut gb) = (0.0, 0.0);
        for (&ui, &zi) in u.iter().zip(&z) {
            let below = if zi - (w * ui + b) < 0.0 { 1.0 } else { 0.0 };
            let g = below - level;
            gw += g * ui;
            gb += g;
        }
        let eta = hyper.step / (epoch as f64).sqrt();
        w -= eta * gw / n;
        b -= eta * gb / n;
    }

    let weight = w * sd_z / sd_u;
    let bias = mu_z + sd_z * b - weight * mu_u;
    Ok(QuantReg { weight, bias, level })
}

/// Lower/upper quantile model pair for one target.
pub type QuantilePair = (QuantReg, QuantReg);

/// Fits the α/2 and 1 − α/2 regressors for every target.
pub fn fit_quantile_models(train: &LabeledSet, alpha: f64, hyper: QuantRegHyper) -> Result<Vec<QuantilePair>> {
    (0..train.k())
        .map(|k| Ok((fit_quantreg(train, k, alpha / 2.0, hyper)?, fit_quantreg(train, k, 1.0 - alpha / 2.0, hyper)?)))
        .collect()
}

/// Fills the quantile rows of `data` from one model pair per target; crossed
/// predictions are swapped.
pub fn predict_quantiles(models: &[QuantilePair], data: &LabeledSet) -> Result<LabeledSet> {
    if models.len() != data.k() {
        return Err(Error::DimensionMismatch { expected: data.k(), got: models.len() });
    }
    let rows = data
        .features()
        .iter()
        .map(|&u| {
            let lo = models.iter().map(|(l, _)| l.predict(u)).collect();
            let hi = models.iter().map(|(_, h)| h.predict(u)).collect();
            QuantileRow::new(lo, hi)
        })
        .collect();
    data.with_quantiles(rows)
}

/// Multi-round acquisition settings: `sigma[b]` is the prediction-noise
/// scale and `rates[b]` the acceleration label of round b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub labels: usize,
    pub sigma: Vec<f64>,
    pub rates: Vec<f64>,
    pub tau: f64,
    pub samples_per_round: usize,
    /// Lower end used for interval length with one-sided scores.
    pub one_sided_floor: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            labels: 1,
            sigma: vec![0.4, 0.2, 0.1, 0.05, 0.02],
            rates: vec![16.0, 8.0, 4.0, 2.0, 1.0],
            tau: 0.1,
            samples_per_round: 32,
            one_sided_floor: 0.0,
        }
    }
}

impl RoundConfig {
    pub fn rounds(&self) -> usize {
        self.sigma.len()
    }

    /// Total targets K = B·L.
    pub fn k(&self) -> usize {
        self.rounds() * self.labels
    }

    /// Column of task `l` in round `b` (both 0-based).
    pub fn target_index(&self, b: usize, l: usize) -> usize {
        self.labels * b + l
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.rounds();
        if b == 0 || self.labels == 0 {
            return Err(Error::Config("need at least one round and one label".into()));
        }
        if self.rates.len() != b {
            return Err(Error::Config(format!("{} rates given for {b} rounds", self.rates.len())));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("sigma entries must be finite and non-negative".into()));
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("rates must be finite and positive".into()));
        }
        let strictly_decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
        if !strictly_decreasing(&self.rates) {
            return Err(Error::Config("rates must be strictly decreasing".into()));
        }
        if !strictly_decreasing(&self.sigma) && self.sigma.iter().any(|&s| s > 0.0) {
            return Err(Error::Config("sigma must be strictly decreasing".into()));
        }
        if self.samples_per_round == 0 {
            return Err(Error::Config("samples_per_round must be positive".into()));
        }
        if self.tau.is_nan() {
            return Err(Error::Config("tau must be a number".into()));
        }
        Ok(())
    }
}

/// Multi-round dataset with K = B·L targets.
///
/// Each sample has L latent task values t_l ~ Unif(0, 1); every round repeats
/// them as targets. Round b observes `samples_per_round` draws
/// t_l + N(0, σ_b²) clipped to [0, 1], summarized by their α/2 and 1 − α/2
/// empirical quantiles. The random stream of task l of sample i does not
/// depend on L or α, so datasets for different label counts share their
/// leading tasks.
pub fn gen_multiround(n: usize, cfg: &RoundConfig, alpha: f64, seed: u64) -> Result<LabeledSet> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Empty("multi-round sample size"));
    }
    let (b_count, l_count, c) = (cfg.rounds(), cfg.labels, cfg.samples_per_round);
    let k = cfg.k();
    let mut features = Vec::with_capacity(n);
    let mut quantiles = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut draws = vec![0.0; c];
    for i in 0..n {
        let sample_seed = rng::derive_seed(seed, rng::stream::MULTIROUND, i as u64);
        let mut lo = vec![0.0; k];
        let mut hi = vec![0.0; k];
        let mut z = vec![0.0; k];
        for l in 0..l_count {
            let mut r = rng::rng_for(sample_seed, l as u64, 0);
            let t: f64 = r.random();
            for b in 0..b_count {
                let normal = Normal::new(0.0, cfg.sigma[b]).map_err(|e| Error::Config(e.to_string()))?;
                for d in draws.iter_mut() {
                    *d = (t + normal.sample(&mut r)).clamp(0.0, 1.0);
                }
                let j = cfg.target_index(b, l);
                lo[j] = emp_quantile(alpha / 2.0, &draws)?;
                hi[j] = emp_quantile(1.0 - alpha / 2.0, &draws)?;
                z[j] = t;
            }
            if l == 0 {
                features.push(t);
            }
        }
        quantiles.push(QuantileRow::new(lo, hi));
        targets.push(TargetVector::new(z));
    }
    LabeledSet::new(features, quantiles, targets, Role::Pool)
}
