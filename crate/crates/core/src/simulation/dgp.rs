//! Data generating processes for the Monte Carlo studies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorDist {
    StudentT { df: f64 },
    Normal { sigma: f64 },
}

impl Default for ErrorDist {
    fn default() -> Self {
        ErrorDist::StudentT { df: 5.0 }
    }
}

impl ErrorDist {
    fn sample(&self, rng: &mut ChaCha8Rng, chi: Option<&ChiSquared<f64>>) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match (self, chi) {
            (ErrorDist::StudentT { df }, Some(chi)) => z / (chi.sample(rng) / df).sqrt(),
            (ErrorDist::Normal { sigma }, _) => sigma * z,
            (ErrorDist::StudentT { .. }, None) => unreachable!("chi-square sampler missing"),
        }
    }
}

/// Dynamic panel `Y_it = rho Y_i,t-1 + lambda_i' f_t + e_it` with AR(1) factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    pub rho0: f64,
    #[serde(default = "one")]
    pub r_true: usize,
    #[serde(default = "half")]
    pub rho_f: f64,
    #[serde(default = "half")]
    pub sigma_f: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub error_dist: ErrorDist,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}
fn half() -> f64 {
    0.5
}
fn default_burn_in() -> usize {
    1000
}

impl DgpConfig {
    pub fn new(n: usize, t: usize, rho0: f64) -> Self {
        Self {
            n,
            t,
            rho0,
            r_true: 1,
            rho_f: 0.5,
            sigma_f: 0.5,
            burn_in: 1000,
            error_dist: ErrorDist::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::Validation(format!(
                "simulated panel needs N, T >= 2, got {}x{}",
                self.n, self.t
            )));
        }
        if !(self.rho0.abs() < 1.0) {
            return Err(Error::Validation(format!(
                "AR coefficient rho0 = {} is not stationary (|rho0| must be < 1)",
                self.rho0
            )));
        }
        if !(self.rho_f.abs() < 1.0) {
            return Err(Error::Validation(format!(
                "factor AR coefficient rho_f = {} must satisfy |rho_f| < 1",
                self.rho_f
            )));
        }
        if !(self.sigma_f >= 0.0) || !self.sigma_f.is_finite() {
            return Err(Error::Validation(format!("sigma_f = {} must be >= 0", self.sigma_f)));
        }
        match self.error_dist {
            ErrorDist::StudentT { df } if !(df > 0.0) || !df.is_finite() => {
                return Err(Error::Validation(format!("t degrees of freedom {df} must be > 0")))
            }
            ErrorDist::Normal { sigma } if !(sigma >= 0.0) || !sigma.is_finite() => {
                return Err(Error::Validation(format!("error sigma {sigma} must be >= 0")))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Quantities behind a simulated panel, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct Truth {
    pub lambda0: Matrix,
    pub f0: Matrix,
    pub e: Matrix,
    pub beta0: Vec<f64>,
}

/// Draws one panel. The sequence of random draws does not depend on `rho0`,
/// so two configs differing only in `rho0` share their shocks.
pub fn simulate_ar1(cfg: &DgpConfig) -> Result<(PanelDataset, Truth)> {
    cfg.validate()?;
    if cfg.burn_in < 200 {
        log::warn!(
            "burn-in of {} periods is short; the initial condition may not have washed out",
            cfg.burn_in
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t, r) = (cfg.n, cfg.t, cfg.r_true);
    let total = cfg.burn_in + t;
    let chi = match cfg.error_dist {
        ErrorDist::StudentT { df } => Some(ChiSquared::new(df).map_err(|e| Error::Validation(e.to_string()))?),
        ErrorDist::Normal { .. } => None,
    };

    let lambda0 = Matrix::from_fn(n, r, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        1.0 + z
    });
    let innov_sd = ((1.0 - cfg.rho_f * cfg.rho_f) * cfg.sigma_f * cfg.sigma_f).sqrt();
    let mut f_prev: Vec<f64> = (0..r)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.sigma_f * z
        })
        .collect();
    let mut y_prev = vec![0.0; n];
    let mut y = Matrix::zeros(n, t);
    let mut x = Matrix::zeros(n, t);
    let mut f0 = Matrix::zeros(t, r);
    let mut e = Matrix::zeros(n, t);
    for s in 0..total {
        for fr in f_prev.iter_mut() {
            let u: f64 = StandardNormal.sample(&mut rng);
            *fr = cfg.rho_f * *fr + innov_sd * u;
        }
        let keep = s >= cfg.burn_in;
        let col = s.wrapping_sub(cfg.burn_in);
        for i in 0..n {
            let eps = cfg.error_dist.sample(&mut rng, chi.as_ref());
            let common: f64 = (0..r).map(|j| lambda0[(i, j)] * f_prev[j]).sum();
            let yi = cfg.rho0 * y_prev[i] + common + eps;
            if keep {
                y[(i, col)] = yi;
                x[(i, col)] = y_prev[i];
                e[(i, col)] = eps;
            }
            y_prev[i] = yi;
        }
        if keep {
            for j in 0..r {
                f0[(col, j)] = f_prev[j];
            }
        }
    }
    let d = PanelDataset::with_metadata(y, vec![x], vec!["y_lag".into()], vec![false])?;
    Ok((
        d,
        Truth {
            lambda0,
            f0,
            e,
            beta0: vec![cfg.rho0],
        },
    ))
}

/// Static panel with one endogenous regressor and one excluded instrument:
/// `X = pi Z + lambda f' + v`, `Y = beta X + lambda f' + e`, `corr(e, v) = endog_corr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndogenousDgp {
    pub n: usize,
    pub t: usize,
    pub beta0: f64,
    pub pi: f64,
    pub endog_corr: f64,
    pub seed: u64,
}

impl EndogenousDgp {
    pub fn new(n: usize, t: usize, seed: u64) -> Self {
        Self {
            n,
            t,
            beta0: 1.0,
            pi: 1.0,
            endog_corr: 0.5,
            seed,
        }
    }
}

/// Returns the panel, the instrument and the truth record.
pub fn simulate_endogenous(cfg: &EndogenousDgp) -> Result<(PanelDataset, Matrix, Truth)> {
    if cfg.n < 2 || cfg.t < 2 {
        return Err(Error::Validation("simulated panel needs N, T >= 2".into()));
    }
    if !(cfg.endog_corr.abs() <= 1.0) {
        return Err(Error::Validation("endogeneity correlation must lie in [-1, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t) = (cfg.n, cfg.t);
    let mut normal = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let lambda0 = normal(n, 1).add_scalar(1.0);
    let f0 = normal(t, 1);
    let lf = &lambda0 * f0.transpose();
    // The instrument may load on the factors; it is excluded from Y only.
    let z = normal(n, t) + &lf * 0.5;
    let v = normal(n, t);
    let eps = normal(n, t);
    let c = cfg.endog_corr;
    let e = &v * c + eps * (1.0 - c * c).sqrt();
    let x = &z * cfg.pi + &lf + v;
    let y = &x * cfg.beta0 + &lf + &e;
    let d = PanelDataset::with_metadata(y, vec![x], vec!["x_end".into()], vec![false])?;
    Ok((
        d,
        z,
        Truth {
            lambda0,
            f0,
            e,
            beta0: vec![cfg.beta0],
        },
    ))
}
