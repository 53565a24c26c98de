//! Endogenous regressors via least squares-minimum distance, and the factor-free
//! baselines used in the simulations (pooled OLS, pooled CCE for the AR(1)
//! layout).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, FitResult};
use crate::linalg::{self, Matrix, Vector};
use crate::optim::{self, Bounds, LocalOptions};
use crate::panel::{ModelSpec, PanelDataset, RestrictionSpec};

/// Pooled OLS of `Y` on `X_1..X_K` without intercept or factors.
pub fn pooled_ols(d: &PanelDataset) -> Result<Vec<f64>> {
    let k = d.k();
    let mut xtx = Matrix::zeros(k, k);
    let mut xty = Vector::zeros(k);
    for i in 0..k {
        xty[i] = d.x[i].dot(&d.y);
        for j in i..k {
            let v = d.x[i].dot(&d.x[j]);
            xtx[(i, j)] = v;
            xtx[(j, i)] = v;
        }
    }
    let inv = linalg::sym_inverse(&xtx, "pooled regressor cross-product")?;
    Ok((inv * xty).iter().copied().collect())
}

/// Which regressors are endogenous, the excluded instruments, and the
/// minimum-distance weight (identity when `None`).
#[derive(Debug, Clone)]
pub struct EndogenousSpec {
    pub endog_idx: Vec<usize>,
    pub instruments: Vec<Matrix>,
    pub weight: Option<Matrix>,
}

impl EndogenousSpec {
    pub fn new(endog_idx: Vec<usize>, instruments: Vec<Matrix>) -> Self {
        Self {
            endog_idx,
            instruments,
            weight: None,
        }
    }

    pub fn exog_idx(&self, k: usize) -> Vec<usize> {
        (0..k).filter(|i| !self.endog_idx.contains(i)).collect()
    }

    pub fn validate(&self, d: &PanelDataset) -> Result<()> {
        let k = d.k();
        if self.endog_idx.is_empty() {
            return Err(Error::Validation("no endogenous regressor given".into()));
        }
        let mut seen = vec![false; k];
        for &i in &self.endog_idx {
            if i >= k {
                return Err(Error::Validation(format!(
                    "endogenous index {i} out of range for K = {k}"
                )));
            }
            if seen[i] {
                return Err(Error::Validation(format!("endogenous index {i} listed twice")));
            }
            seen[i] = true;
        }
        let l = self.instruments.len();
        if l < self.endog_idx.len() {
            return Err(Error::Validation(format!(
                "{l} instrument(s) for {} endogenous regressor(s)",
                self.endog_idx.len()
            )));
        }
        for (j, z) in self.instruments.iter().enumerate() {
            if z.shape() != d.y.shape() {
                return Err(Error::Dimension {
                    what: format!("instrument {}", j + 1),
                    expected: format!("{}x{}", d.n(), d.t()),
                    got: format!("{}x{}", z.nrows(), z.ncols()),
                });
            }
            linalg::check_finite(z, &format!("instrument {}", j + 1))?;
        }
        if let Some(w) = &self.weight {
            if w.shape() != (l, l) {
                return Err(Error::Dimension {
                    what: "instrument weight".into(),
                    expected: format!("{l}x{l}"),
                    got: format!("{}x{}", w.nrows(), w.ncols()),
                });
            }
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(Error::Validation("instrument weight must be symmetric".into()));
            }
            let eig = linalg::sym_eigen(w)?;
            if eig.values[l - 1] <= 0.0 {
                return Err(Error::Validation(
                    "instrument weight must be positive definite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// First-step fit at a given `beta_end`.
#[derive(Debug, Clone)]
pub struct LsmdStep1 {
    pub beta_exo: Vec<f64>,
    pub gamma: Vec<f64>,
    pub fit: FitResult,
}

/// One evaluation of the instrument coefficients during the outer search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEval {
    pub start: usize,
    pub beta_end: Vec<f64>,
    pub gamma: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct LsmdResult {
    pub beta_end: Vec<f64>,
    pub beta_exo: Vec<f64>,
    pub gamma_path: Vec<GammaEval>,
    /// Fit of `Y - beta_end' X_end` on the exogenous regressors and factors;
    /// `beta_hat` is the full coefficient vector in the original order.
    pub final_fit: FitResult,
    pub distance: f64,
    pub warnings: Vec<String>,
}

fn step1_dataset(beta_end: &[f64], d: &PanelDataset, es: &EndogenousSpec) -> Result<PanelDataset> {
    let mut y = d.y.clone();
    for (b, &i) in beta_end.iter().zip(&es.endog_idx) {
        linalg::add_scaled(&mut y, -b, &d.x[i]);
    }
    let exo = es.exog_idx(d.k());
    let mut x: Vec<Matrix> = exo.iter().map(|&i| d.x[i].clone()).collect();
    let mut names: Vec<String> = exo.iter().map(|&i| d.regressor_names[i].clone()).collect();
    let mut flags: Vec<bool> = exo.iter().map(|&i| d.low_rank_flags[i]).collect();
    for (j, z) in es.instruments.iter().enumerate() {
        x.push(z.clone());
        names.push(format!("z{}", j + 1));
        flags.push(false);
    }
    PanelDataset::with_metadata(y, x, names, flags)
}

pub fn lsmd_step1(beta_end: &[f64], d: &PanelDataset, spec: &ModelSpec, es: &EndogenousSpec) -> Result<LsmdStep1> {
    if beta_end.len() != es.endog_idx.len() {
        return Err(Error::Dimension {
            what: "beta_end".into(),
            expected: es.endog_idx.len().to_string(),
            got: beta_end.len().to_string(),
        });
    }
    let d1 = step1_dataset(beta_end, d, es)?;
    let k_exo = d.k() - es.endog_idx.len();
    // Collinear instruments make the first-step Hessian singular.
    let fit = estimator::minimize_profile(&d1, spec)?;
    crate::inference::w_hat(&fit, &d1)
        .and_then(|w| linalg::sym_inverse(&w, "first-step Hessian (exogenous regressors and instruments)"))?;
    Ok(LsmdStep1 {
        beta_exo: fit.beta_hat[..k_exo].to_vec(),
        gamma: fit.beta_hat[k_exo..].to_vec(),
        fit,
    })
}

fn distance(gamma: &[f64], weight: Option<&Matrix>) -> f64 {
    match weight {
        None => gamma.iter().map(|g| g * g).sum(),
        Some(w) => {
            let g = Vector::from_column_slice(gamma);
            g.dot(&(w * &g))
        }
    }
}

pub fn lsmd_estimate(d: &PanelDataset, spec: &ModelSpec, es: &EndogenousSpec) -> Result<LsmdResult> {
    es.validate(d)?;
    spec.check_against(d)?;
    spec.optimizer.validate()?;
    let cfg = &spec.optimizer;
    let ke = es.endog_idx.len();
    let mut warnings = Vec::new();

    let plain = estimator::minimize_profile(d, spec)?;
    let centre: Vec<f64> = es.endog_idx.iter().map(|&i| plain.beta_hat[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1d5_3d);
    let starts: Vec<Vec<f64>> = (0..cfg.n_starts)
        .map(|s| {
            if s == 0 {
                centre.clone()
            } else {
                centre
                    .iter()
                    .map(|&b| b + rng.random_range(-1.0..=1.0) * cfg.start_spread * b.abs().max(1.0))
                    .collect()
            }
        })
        .collect();

    let scale = centre.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
    let h = 1e-5 * scale;
    let weight = es.weight.as_ref();
    let opts = LocalOptions {
        max_iter: cfg.max_iter,
        grad_tol: 1e-7,
        step_tol: 1e-10,
    };
    let runs: Vec<(optim::LocalOutcome, Vec<GammaEval>, Option<String>)> = starts
        .par_iter()
        .enumerate()
        .map(|(s, x0)| {
            let mut path = Vec::new();
            let mut failure = None;
            let mut eval = |b: &[f64], path: &mut Vec<GammaEval>, record: bool| -> f64 {
                match lsmd_step1(b, d, spec, es) {
                    Ok(st) => {
                        let q = distance(&st.gamma, weight);
                        if record {
                            path.push(GammaEval {
                                start: s,
                                beta_end: b.to_vec(),
                                gamma: st.gamma,
                                distance: q,
                            });
                        }
                        q
                    }
                    Err(e) => {
                        failure.get_or_insert_with(|| e.to_string());
                        f64::INFINITY
                    }
                }
            };
            let out = optim::bfgs(
                |b| {
                    let q = eval(b, &mut path, true);
                    let mut g = vec![0.0; ke];
                    let mut bp = b.to_vec();
                    for j in 0..ke {
                        bp[j] = b[j] + h;
                        let up = eval(&bp, &mut path, false);
                        bp[j] = b[j] - h;
                        let dn = eval(&bp, &mut path, false);
                        bp[j] = b[j];
                        g[j] = (up - dn) / (2.0 * h);
                    }
                    (q, g, false)
                },
                x0,
                &Bounds::unbounded(ke),
                &opts,
            );
            (out, path, failure)
        })
        .collect();

    let gamma_path: Vec<GammaEval> = runs.iter().flat_map(|(_, p, _)| p.iter().cloned()).collect();
    // The distance is a sum of squares, so a vanishing value is an optimum even
    // when the difference gradient is noise-dominated.
    let accepted = |o: &optim::LocalOutcome| o.value.is_finite() && (o.converged || o.value <= 1e-14);
    let best = runs
        .iter()
        .filter(|(o, _, _)| accepted(o))
        .min_by(|a, b| a.0.value.total_cmp(&b.0.value).then_with(|| lex(&a.0.x, &b.0.x)));
    let Some((best, _, _)) = best else {
        let tail: Vec<String> = gamma_path
            .iter()
            .rev()
            .take(10)
            .map(|g| format!("start {} beta_end {:?} gamma {:?} distance {:.3e}", g.start, g.beta_end, g.gamma, g.distance))
            .collect();
        let cause = runs.iter().find_map(|(_, _, f)| f.clone()).unwrap_or_default();
        return Err(Error::Optimizer(format!(
            "LS-MD outer search did not converge from any start{}; last gamma evaluations:\n  {}",
            if cause.is_empty() { String::new() } else { format!(" ({cause})") },
            tail.join("\n  ")
        )));
    };
    let agreeing = runs
        .iter()
        .filter(|(o, _, _)| accepted(o) && (o.value - best.value).abs() <= 1e-8 * best.value.max(1e-12).max(1.0))
        .count();
    if agreeing < runs.len() {
        let msg = format!("{} of {} LS-MD starts ended elsewhere", runs.len() - agreeing, runs.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let beta_end = best.x.clone();
    let mut h_matrix = Matrix::zeros(ke, d.k());
    for (row, &i) in es.endog_idx.iter().enumerate() {
        h_matrix[(row, i)] = 1.0;
    }
    let rest = RestrictionSpec::new(h_matrix, beta_end.clone())?;
    let final_fit = estimator::restricted_minimize(d, spec, &rest)?;
    let beta_exo = es.exog_idx(d.k()).iter().map(|&i| final_fit.beta_hat[i]).collect();
    Ok(LsmdResult {
        beta_end,
        beta_exo,
        gamma_path,
        final_fit,
        distance: best.value,
        warnings,
    })
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|c| c.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Pooled common-correlated-effects estimate of `rho` for the AR(1) layout
/// (`X_1` is the lagged outcome). The cross-sectional means of `Y_t` and
/// `Y_{t-1}` proxy the factors; each unit gets its own loadings on them.
pub fn cce_pooled_ar1(d: &PanelDataset) -> Result<f64> {
    if d.k() != 1 {
        return Err(Error::Validation(format!(
            "pooled CCE expects the AR(1) layout with one regressor, got K = {}",
            d.k()
        )));
    }
    let (n, t) = d.y.shape();
    if n < 2 {
        return Err(Error::Validation("pooled CCE needs N >= 2".into()));
    }
    let x = &d.x[0];
    let mut proxy = Matrix::zeros(t, 2);
    for s in 0..t {
        proxy[(s, 0)] = d.y.column(s).mean();
        proxy[(s, 1)] = x.column(s).mean();
    }
    let span = linalg::SpanProjector::new(&proxy);
    if span.rank() < 2 {
        log::warn!(
            "factor proxies are collinear; using {} of 2 proxy columns",
            span.rank()
        );
    }
    if span.rank() >= t {
        return Err(Error::Validation(format!(
            "T = {t} leaves no degrees of freedom after projecting out the factor proxies"
        )));
    }
    // Rows of `Y M_F` and `X M_F` are the within-unit residuals.
    let ym = span.annihilate_right(&d.y);
    let xm = span.annihilate_right(x);
    let den = xm.norm_squared();
    if den <= 1e-14 * x.norm_squared().max(f64::MIN_POSITIVE) {
        return Err(Error::Singular {
            what: "lagged outcome after projecting out the factor proxies".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(xm.dot(&ym) / den)
}
