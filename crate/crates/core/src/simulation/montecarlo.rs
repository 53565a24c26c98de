//! Monte Carlo harness: replicated fits on simulated panels, reduced to bias,
//! dispersion and test rejection rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{minimize_profile, OptimizerConfig};
use crate::extensions::{cce_pooled_ar1, pooled_ols};
use crate::inference::{self, chi2_critical, InferenceResult, LrShift, TestVariant};
use crate::linalg::KernelConfig;
use crate::panel::{auto_bandwidth, Bandwidth, ModelSpec, PanelDataset, RestrictionSpec};
use crate::simulation::dgp::{simulate_ar1, DgpConfig};

pub const NOMINAL_SIZE: f64 = 0.05;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "FLS")]
    Fls,
    #[serde(rename = "BC-FLS")]
    BcFls,
    #[serde(rename = "JK-FLS")]
    JkFls,
    #[serde(rename = "CCE")]
    Cce,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [Self::Ols, Self::Fls, Self::BcFls, Self::JkFls, Self::Cce];

    pub fn label(self) -> &'static str {
        match self {
            Self::Ols => "OLS",
            Self::Fls => "FLS",
            Self::BcFls => "BC-FLS",
            Self::JkFls => "JK-FLS",
            Self::Cce => "CCE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.label().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// Kernel bandwidth as written in configs: a lag count or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthChoice {
    Fixed(usize),
    Keyword(AutoKeyword),
}

impl Default for BandwidthChoice {
    fn default() -> Self {
        BandwidthChoice::Keyword(AutoKeyword::Auto)
    }
}

impl BandwidthChoice {
    pub fn resolve(self, t: usize) -> usize {
        match self {
            BandwidthChoice::Fixed(m) => m,
            BandwidthChoice::Keyword(AutoKeyword::Auto) => auto_bandwidth(t),
        }
    }

    pub fn to_bandwidth(self) -> Bandwidth {
        match self {
            BandwidthChoice::Fixed(m) => Bandwidth::Fixed(KernelConfig { bandwidth_m: m }),
            BandwidthChoice::Keyword(AutoKeyword::Auto) => Bandwidth::Auto,
        }
    }
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Ols, EstimatorKind::Fls, EstimatorKind::BcFls]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub reps: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "one")]
    pub r_fit: usize,
    #[serde(default)]
    pub bandwidth: BandwidthChoice,
    #[serde(default)]
    pub tests: Vec<TestVariant>,
    /// Also test `rho0 -+ (NT)^{-1/2}` on the same data.
    #[serde(default)]
    pub alternatives: bool,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl McConfig {
    pub fn new(dgp: DgpConfig, reps: usize) -> Self {
        Self {
            dgp,
            reps,
            estimators: default_estimators(),
            r_fit: 1,
            bandwidth: BandwidthChoice::default(),
            tests: Vec::new(),
            alternatives: false,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.optimizer.validate()?;
        if self.reps < 2 {
            return Err(Error::Validation(format!(
                "a Monte Carlo cell needs at least 2 replications, got {}",
                self.reps
            )));
        }
        if !self.tests.is_empty() && self.reps < 100 {
            return Err(Error::Validation(format!(
                "rejection rates need at least 100 replications, got {}",
                self.reps
            )));
        }
        if self.bandwidth.resolve(self.dgp.t) == 0 {
            return Err(Error::Validation("bandwidth M must be at least 1".into()));
        }
        let limit = self.dgp.n.min(self.dgp.t) - 1;
        if self.r_fit > limit {
            return Err(Error::Validation(format!(
                "r_fit = {} exceeds min(N, T) - 1 = {limit}",
                self.r_fit
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            r: self.r_fit,
            bandwidth: self.bandwidth.to_bandwidth(),
            optimizer: self.optimizer.clone(),
            parameter_box: Default::default(),
        }
    }

    fn needs_fls(&self) -> bool {
        !self.tests.is_empty()
            || self
                .estimators
                .iter()
                .any(|e| matches!(e, EstimatorKind::Fls | EstimatorKind::BcFls))
    }
}

/// Seed of replication `rep`: a SplitMix64 finaliser over the master seed and
/// the replication index, so replications can run in any order.
pub fn rep_seed(master: u64, rep: u64) -> u64 {
    splitmix(splitmix(master) ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean: f64,
    pub bias: f64,
    /// Standard deviation with divisor `reps`, so `rmse^2 = bias^2 + std^2`.
    pub std: f64,
    pub rmse: f64,
    pub reps: usize,
}

impl EstimatorSummary {
    pub fn from_estimates(estimator: EstimatorKind, estimates: &[f64], truth: f64) -> Self {
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
        Self {
            estimator,
            mean,
            bias: mean - truth,
            std: var.sqrt(),
            rmse: mse.sqrt(),
            reps: estimates.len(),
        }
    }

    /// Monte Carlo standard error of the bias.
    pub fn bias_se(&self) -> f64 {
        self.std / (self.reps as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub variant: TestVariant,
    pub size: f64,
    pub size_se: f64,
    pub power_left: Option<f64>,
    pub power_right: Option<f64>,
    pub size_corrected_power_left: Option<f64>,
    pub size_corrected_power_right: Option<f64>,
    /// Empirical 95% quantile of the statistic under the null.
    pub empirical_critical: f64,
    pub reps: usize,
}

fn rate(stats: &[f64], crit: f64) -> f64 {
    stats.iter().filter(|&&s| s > crit).count() as f64 / stats.len() as f64
}

/// Order statistic at `ceil(q n)`.
pub fn empirical_quantile(stats: &[f64], q: f64) -> f64 {
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

impl TestSummary {
    /// Rejection rates from statistics under the null and, optionally, at the
    /// left and right alternatives.
    pub fn from_statistics(
        variant: TestVariant,
        df: usize,
        null: &[f64],
        alternatives: Option<(&[f64], &[f64])>,
    ) -> Self {
        let crit = chi2_critical(NOMINAL_SIZE, df);
        let size = rate(null, crit);
        let emp = empirical_quantile(null, 1.0 - NOMINAL_SIZE);
        let n = null.len() as f64;
        let (pl, pr, spl, spr) = match alternatives {
            Some((l, r)) => (
                Some(rate(l, crit)),
                Some(rate(r, crit)),
                Some(rate(l, emp)),
                Some(rate(r, emp)),
            ),
            None => (None, None, None, None),
        };
        Self {
            variant,
            size,
            size_se: (size * (1.0 - size) / n).sqrt(),
            power_left: pl,
            power_right: pr,
            size_corrected_power_left: spl,
            size_corrected_power_right: spr,
            empirical_critical: emp,
            reps: null.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub label: String,
    pub n: usize,
    pub t: usize,
    pub rho0: f64,
    pub r_true: usize,
    pub r_fit: usize,
    pub rho_f: f64,
    pub sigma_f: f64,
    pub bandwidth: usize,
    pub reps: usize,
    pub rep_failures: usize,
    pub estimators: Vec<EstimatorSummary>,
    pub tests: Vec<TestSummary>,
    /// Estimated over realised FLS bias, `mean(W^-1 B) / (sqrt(NT) mean(beta_hat - beta))`;
    /// `None` when the realised bias is within two standard errors of zero.
    pub bias_fraction: Option<f64>,
    pub b2_over_n: Option<MeanSe>,
    pub b3_over_t: Option<MeanSe>,
}

impl McSummary {
    pub fn estimator(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }

    pub fn test(&self, variant: TestVariant) -> Option<&TestSummary> {
        self.tests.iter().find(|t| t.variant == variant)
    }
}

/// Everything recorded from one replication.
#[derive(Debug, Clone)]
struct RepOutcome {
    estimates: Vec<f64>,
    /// Per requested test: statistics at `rho0`, `rho0 - delta`, `rho0 + delta`.
    stats: Vec<[f64; 3]>,
    scaled_bias: Option<f64>,
    b2_over_n: Option<f64>,
    b3_over_t: Option<f64>,
}

fn hypothesis(value: f64) -> RestrictionSpec {
    RestrictionSpec::single(1, 0, value)
}

fn rep_outcome(cfg: &McConfig, spec: &ModelSpec, kernel: KernelConfig, seed: u64) -> Result<RepOutcome> {
    let mut dgp = cfg.dgp.clone();
    dgp.seed = seed;
    let (d, _) = simulate_ar1(&dgp)?;
    let rho0 = cfg.dgp.rho0;
    let (fit, inf) = if cfg.needs_fls() {
        let fit = minimize_profile(&d, spec)?;
        let inf = inference::bias_corrected(&fit, &d, kernel)?;
        (Some(fit), Some(inf))
    } else {
        (None, None)
    };
    let mut estimates = Vec::with_capacity(cfg.estimators.len());
    for e in &cfg.estimators {
        let v = match e {
            EstimatorKind::Ols => pooled_ols(&d)?[0],
            EstimatorKind::Fls => fit.as_ref().expect("fit").beta_hat[0],
            EstimatorKind::BcFls => inf.as_ref().expect("inference").beta_star[0],
            EstimatorKind::JkFls => inference::jackknife(&d, spec)?.beta_jackknife[0],
            EstimatorKind::Cce => cce_pooled_ar1(&d)?,
        };
        estimates.push(v);
    }
    let mut stats = vec![[f64::NAN; 3]; cfg.tests.len()];
    if let (Some(fit), Some(inf)) = (&fit, &inf) {
        if !cfg.tests.is_empty() {
            let delta = 1.0 / ((d.n() * d.t()) as f64).sqrt();
            let points: &[f64] = if cfg.alternatives {
                &[rho0, rho0 - delta, rho0 + delta]
            } else {
                &[rho0]
            };
            for (slot, &h) in points.iter().enumerate() {
                let all = inference::all_tests(&d, spec, fit, inf, &hypothesis(h), LrShift::Unrestricted)?;
                for (j, v) in cfg.tests.iter().enumerate() {
                    let r = all.iter().find(|r| r.variant == *v).expect("all variants computed");
                    stats[j][slot] = r.statistic;
                }
            }
        }
    }
    let (scaled_bias, b2_over_n, b3_over_t) = match &inf {
        Some(inf) => bias_parts(inf, &d)?,
        None => (None, None, None),
    };
    Ok(RepOutcome {
        estimates,
        stats,
        scaled_bias,
        b2_over_n,
        b3_over_t,
    })
}

type BiasParts = (Option<f64>, Option<f64>, Option<f64>);

fn bias_parts(inf: &InferenceResult, d: &PanelDataset) -> Result<BiasParts> {
    Ok((
        Some(inf.scaled_bias()?[0]),
        Some(inf.b2_hat[0] / d.n() as f64),
        Some(inf.b3_hat[0] / d.t() as f64),
    ))
}

/// Runs `reps` replications in parallel and keeps them in replication order.
fn replicate<T: Send>(cfg: &McConfig, f: impl Fn(u64) -> Result<T> + Sync) -> Result<(Vec<T>, usize)> {
    let results: Vec<Result<T>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| f(rep_seed(cfg.dgp.seed, rep)))
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = 0;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * cfg.reps as f64 {
        return Err(Error::Numerical(format!(
            "{failures} of {} replications failed (first error: {}); check the design",
            cfg.reps,
            first_error.expect("a failure was recorded")
        )));
    }
    if failures > 0 {
        log::warn!("{failures} of {} replications failed and were excluded", cfg.reps);
    }
    Ok((ok, failures))
}

fn realised_fraction(estimated: &[f64], fls: &[f64], truth: f64, nt: f64) -> Option<f64> {
    let dev: Vec<f64> = fls.iter().map(|b| nt.sqrt() * (b - truth)).collect();
    let actual = MeanSe::of(&dev);
    let est = estimated.iter().sum::<f64>() / estimated.len() as f64;
    if !(actual.mean.abs() > 2.0 * actual.se) {
        return None;
    }
    Some(est / actual.mean)
}

/// Runs every requested estimator and test over the replications.
pub fn run_mc(cfg: &McConfig, label: &str) -> Result<McSummary> {
    cfg.validate()?;
    let spec = cfg.spec();
    let m = cfg.bandwidth.resolve(cfg.dgp.t);
    let kernel = KernelConfig { bandwidth_m: m };
    let (outs, failures) = replicate(cfg, |seed| rep_outcome(cfg, &spec, kernel, seed))?;
    let rho0 = cfg.dgp.rho0;
    let column = |j: usize| -> Vec<f64> { outs.iter().map(|o| o.estimates[j]).collect() };
    let estimators = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &e)| EstimatorSummary::from_estimates(e, &column(j), rho0))
        .collect();
    let tests = cfg
        .tests
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let at = |slot: usize| -> Vec<f64> { outs.iter().map(|o| o.stats[j][slot]).collect() };
            let (null, left, right) = (at(0), at(1), at(2));
            let alt = cfg.alternatives.then_some((left.as_slice(), right.as_slice()));
            TestSummary::from_statistics(v, 1, &null, alt)
        })
        .collect();
    let collect = |f: fn(&RepOutcome) -> Option<f64>| -> Option<Vec<f64>> { outs.iter().map(f).collect() };
    let nt = (cfg.dgp.n * cfg.dgp.t) as f64;
    let bias_fraction = match (collect(|o| o.scaled_bias), cfg.estimators.iter().position(|e| *e == EstimatorKind::Fls)) {
        (Some(est), Some(j)) if cfg.r_fit > 0 => realised_fraction(&est, &column(j), rho0, nt),
        _ => None,
    };
    Ok(McSummary {
        label: label.to_string(),
        n: cfg.dgp.n,
        t: cfg.dgp.t,
        rho0,
        r_true: cfg.dgp.r_true,
        r_fit: cfg.r_fit,
        rho_f: cfg.dgp.rho_f,
        sigma_f: cfg.dgp.sigma_f,
        bandwidth: m,
        reps: cfg.reps,
        rep_failures: failures,
        estimators,
        tests,
        bias_fraction,
        b2_over_n: collect(|o| o.b2_over_n).map(|v| MeanSe::of(&v)),
        b3_over_t: collect(|o| o.b3_over_t).map(|v| MeanSe::of(&v)),
    })
}

/// Estimator properties only; the test list is ignored.
pub fn mc_estimators(cfg: &McConfig) -> Result<McSummary> {
    let mut c = cfg.clone();
    c.tests.clear();
    run_mc(&c, "estimators")
}

/// Size and power of the requested tests.
pub fn mc_tests(cfg: &McConfig) -> Result<McSummary> {
    if cfg.tests.is_empty() {
        return Err(Error::Validation("no tests requested".into()));
    }
    if cfg.reps < 100 {
        return Err(Error::Validation(format!(
            "rejection rates need at least 100 replications, got {}",
            cfg.reps
        )));
    }
    run_mc(cfg, "tests")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFractionCell {
    pub rho0: f64,
    pub bandwidth: usize,
    pub fraction: Option<f64>,
    /// Mean of `W^-1 B` across replications.
    pub estimated: f64,
    /// Mean of `sqrt(NT) (beta_hat - beta)` and its standard error.
    pub realised: MeanSe,
    pub reps: usize,
    pub rep_failures: usize,
}

/// Share of the FLS bias captured by the analytic estimate for each bandwidth,
/// reusing one fit per replication across bandwidths.
pub fn bias_fraction(cfg: &McConfig, bandwidths: &[usize]) -> Result<Vec<BiasFractionCell>> {
    cfg.dgp.validate()?;
    cfg.optimizer.validate()?;
    if cfg.reps < 2 {
        return Err(Error::Validation("bias fraction needs at least 2 replications".into()));
    }
    if bandwidths.is_empty() || bandwidths.contains(&0) {
        return Err(Error::Validation("bandwidth list must be non-empty with M >= 1".into()));
    }
    if cfg.reps < 500 {
        log::warn!("bias fractions from {} replications are noisy; 500 or more are advised", cfg.reps);
    }
    let spec = cfg.spec();
    let rho0 = cfg.dgp.rho0;
    let (outs, failures) = replicate(cfg, |seed| {
        let mut dgp = cfg.dgp.clone();
        dgp.seed = seed;
        let (d, _) = simulate_ar1(&dgp)?;
        let fit = minimize_profile(&d, &spec)?;
        let mut est = Vec::with_capacity(bandwidths.len());
        for &m in bandwidths {
            let inf = inference::bias_corrected(&fit, &d, KernelConfig { bandwidth_m: m })?;
            est.push(inf.scaled_bias()?[0]);
        }
        Ok((fit.beta_hat[0], est))
    })?;
    let nt = (cfg.dgp.n * cfg.dgp.t) as f64;
    let fls: Vec<f64> = outs.iter().map(|o| o.0).collect();
    let realised = MeanSe::of(&fls.iter().map(|b| nt.sqrt() * (b - rho0)).collect::<Vec<_>>());
    Ok(bandwidths
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let est: Vec<f64> = outs.iter().map(|o| o.1[j]).collect();
            BiasFractionCell {
                rho0,
                bandwidth: m,
                fraction: realised_fraction(&est, &fls, rho0, nt),
                estimated: est.iter().sum::<f64>() / est.len() as f64,
                realised,
                reps: cfg.reps,
                rep_failures: failures,
            }
        })
        .collect())
}
