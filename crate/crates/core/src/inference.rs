//! Bias and variance estimation, bias-corrected estimates and the Wald,
//! likelihood-ratio and Lagrange-multiplier tests of `H beta = h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimator::{self, annihilated_regressors, cross_trace_matrix, FitResult};
use crate::linalg::{self, KernelConfig, Matrix, SpanProjector, Vector};
use crate::panel::{ModelSpec, PanelDataset, RestrictionSpec};

#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub w_hat: Matrix,
    pub omega_hat: Matrix,
    pub b1_hat: Vec<f64>,
    pub b2_hat: Vec<f64>,
    pub b3_hat: Vec<f64>,
    pub kappa: f64,
    pub beta_hat: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub cov_star: Matrix,
    pub std_err: Vec<f64>,
    pub bandwidth_used: usize,
    pub n: usize,
    pub t: usize,
    pub warnings: Vec<String>,
}

impl InferenceResult {
    /// `B = -kappa B1 - B2 / kappa - kappa B3`.
    pub fn bias_vector(&self) -> Vec<f64> {
        combined_bias(&self.b1_hat, &self.b2_hat, &self.b3_hat, self.kappa)
    }

    /// `W^{-1} B`, the estimated leading bias of `sqrt(NT) (beta_hat - beta)`.
    pub fn scaled_bias(&self) -> Result<Vec<f64>> {
        let winv = linalg::sym_inverse(&self.w_hat, "W_hat")?;
        Ok((winv * Vector::from_vec(self.bias_vector())).iter().copied().collect())
    }
}

fn combined_bias(b1: &[f64], b2: &[f64], b3: &[f64], kappa: f64) -> Vec<f64> {
    (0..b1.len())
        .map(|k| -kappa * b1[k] - b2[k] / kappa - kappa * b3[k])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum TestVariant {
    #[serde(rename = "WD")]
    Wd,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "WD*")]
    WdStar,
    #[serde(rename = "LR*")]
    LrStar,
    #[serde(rename = "LM*")]
    LmStar,
}

impl TestVariant {
    pub const ALL: [TestVariant; 6] = [
        TestVariant::Wd,
        TestVariant::Lr,
        TestVariant::Lm,
        TestVariant::WdStar,
        TestVariant::LrStar,
        TestVariant::LmStar,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TestVariant::Wd => "WD",
            TestVariant::Lr => "LR",
            TestVariant::Lm => "LM",
            TestVariant::WdStar => "WD*",
            TestVariant::LrStar => "LR*",
            TestVariant::LmStar => "LM*",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label().eq_ignore_ascii_case(s))
    }

    pub fn is_corrected(self) -> bool {
        matches!(self, TestVariant::WdStar | TestVariant::LrStar | TestVariant::LmStar)
    }

    /// The uncorrected counterpart of a starred test and vice versa.
    pub fn partner(self) -> Self {
        match self {
            TestVariant::Wd => TestVariant::WdStar,
            TestVariant::Lr => TestVariant::LrStar,
            TestVariant::Lm => TestVariant::LmStar,
            TestVariant::WdStar => TestVariant::Wd,
            TestVariant::LrStar => TestVariant::Lr,
            TestVariant::LmStar => TestVariant::Lm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub variant: TestVariant,
    /// `L(beta_hat)`, the scale normalisation of the LR statistics.
    pub c_hat: Option<f64>,
}

/// Upper tail probability of a chi-square distribution.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df >= 1");
    dist.sf(x).clamp(0.0, 1.0)
}

/// Upper `alpha` critical value of a chi-square distribution.
pub fn chi2_critical(alpha: f64, df: usize) -> f64 {
    let dist = ChiSquared::new(df as f64).expect("df >= 1");
    dist.inverse_cdf(1.0 - alpha)
}

fn test_result(statistic: f64, df: usize, variant: TestVariant, c_hat: Option<f64>) -> TestResult {
    TestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        variant,
        c_hat,
    }
}

fn check_fit(fit: &FitResult, d: &PanelDataset) -> Result<()> {
    if fit.residuals.shape() != (d.n(), d.t()) || fit.beta_hat.len() != d.k() {
        return Err(Error::Dimension {
            what: "fit result".into(),
            expected: format!("{}x{} panel with K = {}", d.n(), d.t(), d.k()),
            got: format!(
                "{}x{} residuals with K = {}",
                fit.residuals.nrows(),
                fit.residuals.ncols(),
                fit.beta_hat.len()
            ),
        });
    }
    Ok(())
}

fn nt(d: &PanelDataset) -> f64 {
    (d.n() * d.t()) as f64
}

pub fn w_hat(fit: &FitResult, d: &PanelDataset) -> Result<Matrix> {
    check_fit(fit, d)?;
    let a = annihilated_regressors(&d.x, &fit.lambda_hat, &fit.f_hat);
    Ok(cross_trace_matrix(&a, nt(d)))
}

/// Rejects a `W` whose diagonal has collapsed relative to the raw regressor
/// scale; `sym_inverse` alone cannot see this when `K = 1`.
pub(crate) fn check_w_scale(w: &Matrix, d: &PanelDataset) -> Result<()> {
    let nt = nt(d);
    for (k, xk) in d.x.iter().enumerate() {
        let raw = xk.norm_squared() / nt;
        if w[(k, k)] <= 1e-10 * raw {
            return Err(Error::Singular {
                what: format!(
                    "W_hat: regressor {} lies in the span of the estimated factors and loadings",
                    d.regressor_names[k]
                ),
                condition: if w[(k, k)] > 0.0 { raw / w[(k, k)] } else { f64::INFINITY },
            });
        }
    }
    Ok(())
}

fn omega_from(a: &[Matrix], e: &Matrix, nt: f64) -> Matrix {
    let e2 = e.component_mul(e);
    let k = a.len();
    let mut out = Matrix::zeros(k, k);
    for i in 0..k {
        let weighted = a[i].component_mul(&e2);
        for j in i..k {
            let v = weighted.dot(&a[j]) / nt;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn omega_hat(fit: &FitResult, d: &PanelDataset) -> Result<Matrix> {
    check_fit(fit, d)?;
    let a = annihilated_regressors(&d.x, &fit.lambda_hat, &fit.f_hat);
    Ok(omega_from(&a, &fit.residuals, nt(d)))
}

#[derive(Debug, Clone)]
pub struct BiasHats {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub b3: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Sample analogues of the three incidental-parameter bias terms.
pub fn bias_hats(fit: &FitResult, d: &PanelDataset, cfg: KernelConfig) -> Result<BiasHats> {
    check_fit(fit, d)?;
    if cfg.bandwidth_m == 0 {
        return Err(Error::Validation("bandwidth M must be at least 1".into()));
    }
    let (n, t, k) = (d.n(), d.t(), d.k());
    let mut warnings = Vec::new();
    if cfg.bandwidth_m >= t {
        let msg = format!(
            "bandwidth M = {} >= T = {t}: the truncation kernel covers every lag",
            cfg.bandwidth_m
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let r = fit.f_hat.ncols();
    if r == 0 {
        return Ok(BiasHats {
            b1: vec![0.0; k],
            b2: vec![0.0; k],
            b3: vec![0.0; k],
            warnings,
        });
    }
    let e = &fit.residuals;
    let lam = &fit.lambda_hat;
    let f = &fit.f_hat;
    let ftf = f.transpose() * f;
    let ltl = lam.transpose() * lam;
    let ftf_inv = linalg::sym_inverse(&ftf, "f_hat' f_hat")?;
    let ltl_inv = linalg::sym_inverse(&ltl, "lambda_hat' lambda_hat")?;
    let pf = f * &ftf_inv * f.transpose();
    let m_lam = SpanProjector::new(lam);
    let m_f = SpanProjector::new(f);
    let e2 = e.component_mul(e);
    let unit_var: Vec<f64> = (0..n).map(|i| e2.row(i).sum()).collect();
    let time_var: Vec<f64> = (0..t).map(|s| e2.column(s).sum()).collect();
    let c2 = &ftf_inv * &ltl_inv;
    let c3 = &ltl_inv * &ftf_inv;
    let band = cfg.bandwidth_m;

    let mut b1 = vec![0.0; k];
    let mut b2 = vec![0.0; k];
    let mut b3 = vec![0.0; k];
    for (kk, xk) in d.x.iter().enumerate() {
        // sum_{t < s <= t + M} [P_f]_{ts} (e' X_k)_{ts}
        let ex = e.transpose() * xk;
        let mut s1 = 0.0;
        for tt in 0..t {
            for s in (tt + 1)..t.min(tt + band + 1) {
                s1 += pf[(tt, s)] * ex[(tt, s)];
            }
        }
        b1[kk] = s1 / n as f64;

        // diag of M_lam X_k f (f'f)^{-1} (lam'lam)^{-1} lam'
        let a2 = m_lam.annihilate_left(&(xk * f)) * &c2;
        let mut s2 = 0.0;
        for i in 0..n {
            s2 += unit_var[i] * a2.row(i).dot(&lam.row(i));
        }
        b2[kk] = s2 / t as f64;

        // diag of M_f X_k' lam (lam'lam)^{-1} (f'f)^{-1} f'
        let a3 = m_f.annihilate_left(&(xk.transpose() * lam)) * &c3;
        let mut s3 = 0.0;
        for s in 0..t {
            s3 += time_var[s] * a3.row(s).dot(&f.row(s));
        }
        b3[kk] = s3 / n as f64;
    }
    Ok(BiasHats { b1, b2, b3, warnings })
}

pub fn bias_corrected(fit: &FitResult, d: &PanelDataset, cfg: KernelConfig) -> Result<InferenceResult> {
    check_fit(fit, d)?;
    let (n, t) = (d.n(), d.t());
    let nt = nt(d);
    let a = annihilated_regressors(&d.x, &fit.lambda_hat, &fit.f_hat);
    let w = cross_trace_matrix(&a, nt);
    let omega = omega_from(&a, &fit.residuals, nt);
    check_w_scale(&w, d)?;
    let bh = bias_hats(fit, d, cfg)?;
    let winv = linalg::sym_inverse(&w, "W_hat (check regressors for collinearity or run the diagnostics)")?;
    let shift: Vec<f64> = (0..d.k())
        .map(|k| bh.b1[k] / t as f64 + bh.b2[k] / n as f64 + bh.b3[k] / t as f64)
        .collect();
    let correction = &winv * Vector::from_column_slice(&shift);
    let beta_star: Vec<f64> = fit
        .beta_hat
        .iter()
        .zip(correction.iter())
        .map(|(b, c)| b + c)
        .collect();
    let cov_star = &winv * &omega * &winv / nt;
    let cov_star = (&cov_star + cov_star.transpose()) * 0.5;
    let std_err = (0..d.k()).map(|k| cov_star[(k, k)].max(0.0).sqrt()).collect();
    let mut warnings = fit.warnings.clone();
    warnings.extend(bh.warnings);
    Ok(InferenceResult {
        w_hat: w,
        omega_hat: omega,
        b1_hat: bh.b1,
        b2_hat: bh.b2,
        b3_hat: bh.b3,
        kappa: (n as f64 / t as f64).sqrt(),
        beta_hat: fit.beta_hat.clone(),
        beta_star,
        cov_star,
        std_err,
        bandwidth_used: cfg.bandwidth_m,
        n,
        t,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JackknifeResult {
    pub beta_jackknife: Vec<f64>,
    pub beta_full: Vec<f64>,
    /// Average of the fits on the two halves of the time span.
    pub beta_time_halves: Vec<f64>,
    /// Average of the fits on the two halves of the units.
    pub beta_unit_halves: Vec<f64>,
    pub n_used: usize,
    pub t_used: usize,
    pub warnings: Vec<String>,
}

/// Split-panel jackknife `3 b - mean(time halves) - mean(unit halves)`.
pub fn jackknife(d: &PanelDataset, spec: &ModelSpec) -> Result<JackknifeResult> {
    let mut warnings = Vec::new();
    let n = d.n() - d.n() % 2;
    let t = d.t() - d.t() % 2;
    if n != d.n() {
        let msg = format!("N = {} is odd; dropping the last unit for the jackknife", d.n());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if t != d.t() {
        let msg = format!("T = {} is odd; dropping the last period for the jackknife", d.t());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if n < 4 || t < 4 {
        return Err(Error::Validation(format!(
            "jackknife needs at least 4 units and 4 periods, got {n}x{t}"
        )));
    }
    let (hn, ht) = (n / 2, t / 2);
    let panels = [
        ("full panel", 0..n, 0..t),
        ("first time half", 0..n, 0..ht),
        ("second time half", 0..n, ht..t),
        ("first unit half", 0..hn, 0..t),
        ("second unit half", hn..n, 0..t),
    ];
    let fits: Vec<Result<Vec<f64>>> = panels
        .par_iter()
        .map(|(label, units, times)| {
            let sub = d.subpanel(units.clone(), times.clone());
            estimator::minimize_profile(&sub, spec)
                .map(|f| f.beta_hat)
                .map_err(|e| Error::Numerical(format!("jackknife subfit on {label} failed: {e}")))
        })
        .collect();
    let fits: Vec<Vec<f64>> = fits.into_iter().collect::<Result<_>>()?;
    let k = d.k();
    let avg = |a: &[f64], b: &[f64]| -> Vec<f64> { (0..k).map(|i| 0.5 * (a[i] + b[i])).collect() };
    let time = avg(&fits[1], &fits[2]);
    let unit = avg(&fits[3], &fits[4]);
    let beta_jackknife = (0..k).map(|i| 3.0 * fits[0][i] - time[i] - unit[i]).collect();
    Ok(JackknifeResult {
        beta_jackknife,
        beta_full: fits[0].clone(),
        beta_time_halves: time,
        beta_unit_halves: unit,
        n_used: n,
        t_used: t,
        warnings,
    })
}

fn h_dev(rest: &RestrictionSpec, beta: &[f64]) -> Vector {
    &rest.h_matrix * Vector::from_column_slice(beta) - Vector::from_column_slice(&rest.h_vector)
}

/// `NT (H b - h)' [H V H']^{-1} (H b - h)` with `V = W^{-1} Omega W^{-1}`.
fn wald_form(inf: &InferenceResult, rest: &RestrictionSpec, beta: &[f64], variant: TestVariant) -> Result<TestResult> {
    rest.check_against(beta.len())?;
    let winv = linalg::sym_inverse(&inf.w_hat, "W_hat")?;
    let v = &winv * &inf.omega_hat * &winv;
    let inner = &rest.h_matrix * v * rest.h_matrix.transpose();
    let inner_inv = linalg::sym_inverse(&inner, "H W^-1 Omega W^-1 H'")?;
    let dev = h_dev(rest, beta);
    let stat = (inf.n * inf.t) as f64 * dev.dot(&(&inner_inv * &dev));
    Ok(test_result(stat.max(0.0), rest.rows(), variant, None))
}

pub fn wald_star(inf: &InferenceResult, rest: &RestrictionSpec) -> Result<TestResult> {
    wald_form(inf, rest, &inf.beta_star, TestVariant::WdStar)
}

pub fn wald(inf: &InferenceResult, rest: &RestrictionSpec) -> Result<TestResult> {
    wald_form(inf, rest, &inf.beta_hat, TestVariant::Wd)
}

/// Tolerance below zero that is absorbed as optimizer noise in LR statistics.
pub const LR_NEGATIVE_TOL: f64 = 1e-8;

/// LR-type statistic from the restricted and unrestricted minima.
pub fn lr_from_objectives(restricted: f64, unrestricted: f64, nt: f64, df: usize, variant: TestVariant) -> Result<TestResult> {
    if !(unrestricted > 0.0) {
        return Err(Error::Numerical(format!(
            "LR statistic needs a positive unrestricted objective, got {unrestricted:e}"
        )));
    }
    let mut stat = nt * (restricted - unrestricted) / unrestricted;
    if stat < 0.0 {
        if stat < -LR_NEGATIVE_TOL {
            return Err(Error::Optimizer(format!(
                "LR statistic {stat:e} is negative: the restricted minimum lies below the unrestricted one"
            )));
        }
        stat = 0.0;
    }
    Ok(test_result(stat, df, variant, Some(unrestricted)))
}

/// Source of the bias and Hessian estimates in the LR* shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LrShift {
    /// `W_hat`, `B_hat` from the unrestricted fit (held fixed in both minimizations).
    #[default]
    Unrestricted,
    /// `W`, `B` re-estimated at the plain restricted estimate.
    Restricted,
}

/// Hypothesis `H beta = h + H s`, the restriction after shifting the objective by `s`.
pub fn shifted_restriction(rest: &RestrictionSpec, shift: &[f64]) -> RestrictionSpec {
    let hs = &rest.h_matrix * Vector::from_column_slice(shift);
    RestrictionSpec {
        h_matrix: rest.h_matrix.clone(),
        h_vector: rest.h_vector.iter().zip(hs.iter()).map(|(a, b)| a + b).collect(),
    }
}

/// LR* statistic; also returns the restricted fits it used.
pub fn lr_star(d: &PanelDataset, spec: &ModelSpec, rest: &RestrictionSpec, shift: LrShift) -> Result<TestResult> {
    rest.check_against(d.k())?;
    let fit = estimator::minimize_profile(d, spec)?;
    let cfg = spec.bandwidth.resolve(d.t());
    let inf = bias_corrected(&fit, d, cfg)?;
    lr_star_with(d, spec, rest, &fit, &inf, shift, None)
}

/// LR* given the unrestricted fit; `restricted` may carry the plain restricted fit if available.
pub fn lr_star_with(
    d: &PanelDataset,
    spec: &ModelSpec,
    rest: &RestrictionSpec,
    fit: &FitResult,
    inf: &InferenceResult,
    shift: LrShift,
    restricted: Option<&FitResult>,
) -> Result<TestResult> {
    let s: Vec<f64> = match shift {
        LrShift::Unrestricted => fit.beta_hat.iter().zip(&inf.beta_star).map(|(b, s)| b - s).collect(),
        LrShift::Restricted => {
            let owned;
            let rfit = match restricted {
                Some(r) => r,
                None => {
                    owned = estimator::restricted_minimize(d, spec, rest)?;
                    &owned
                }
            };
            let cfg = spec.bandwidth.resolve(d.t());
            let rinf = restricted_quantities(rfit, d, cfg)?;
            let winv = linalg::sym_inverse(&rinf.w_hat, "restricted W")?;
            let b = Vector::from_vec(rinf.bias_vector());
            (winv * b / nt(d).sqrt()).iter().copied().collect()
        }
    };
    let shifted = shifted_restriction(rest, &s);
    let rfit = estimator::restricted_minimize(d, spec, &shifted)?;
    lr_from_objectives(rfit.objective, fit.objective, nt(d), rest.rows(), TestVariant::LrStar)
}

/// Bias and variance pieces evaluated at a restricted fit.
pub fn restricted_quantities(rfit: &FitResult, d: &PanelDataset, cfg: KernelConfig) -> Result<InferenceResult> {
    check_fit(rfit, d)?;
    let nt = nt(d);
    let a = annihilated_regressors(&d.x, &rfit.lambda_hat, &rfit.f_hat);
    let w = cross_trace_matrix(&a, nt);
    let omega = omega_from(&a, &rfit.residuals, nt);
    let bh = bias_hats(rfit, d, cfg)?;
    let k = d.k();
    Ok(InferenceResult {
        w_hat: w,
        omega_hat: omega,
        b1_hat: bh.b1,
        b2_hat: bh.b2,
        b3_hat: bh.b3,
        kappa: (d.n() as f64 / d.t() as f64).sqrt(),
        beta_hat: rfit.beta_hat.clone(),
        beta_star: rfit.beta_hat.clone(),
        cov_star: Matrix::zeros(k, k),
        std_err: vec![f64::NAN; k],
        bandwidth_used: cfg.bandwidth_m,
        n: d.n(),
        t: d.t(),
        warnings: bh.warnings,
    })
}

/// Score magnitude treated as exactly zero in the LM statistic.
const LM_ZERO_SCORE: f64 = 1e-9;

/// LM statistic from a restricted fit; `corrected` adds `2 B_tilde` to the score.
pub fn lm_from_fit(rfit: &FitResult, d: &PanelDataset, rest: &RestrictionSpec, cfg: KernelConfig, corrected: bool) -> Result<TestResult> {
    rest.check_against(d.k())?;
    let q = restricted_quantities(rfit, d, cfg)?;
    let nt = nt(d);
    let grad = estimator::envelope_gradient(d, &rfit.residuals);
    let bias = if corrected { q.bias_vector() } else { vec![0.0; d.k()] };
    let g = Vector::from_iterator(d.k(), (0..d.k()).map(|k| nt.sqrt() * grad[k] + 2.0 * bias[k]));
    let winv = linalg::sym_inverse(&q.w_hat, "restricted W")?;
    let hwg = &rest.h_matrix * &winv * g;
    let variant = if corrected { TestVariant::LmStar } else { TestVariant::Lm };
    if hwg.amax() <= LM_ZERO_SCORE {
        // Exact fit at the restriction: the score vanishes together with Omega.
        return Ok(test_result(0.0, rest.rows(), variant, None));
    }
    let inner = &rest.h_matrix * &winv * &q.omega_hat * &winv * rest.h_matrix.transpose();
    let inner_inv = linalg::sym_inverse(&inner, "H W^-1 Omega W^-1 H' (restricted)")?;
    let stat = 0.25 * hwg.dot(&(&inner_inv * &hwg));
    Ok(test_result(stat.max(0.0), rest.rows(), variant, None))
}

pub fn lm_star(d: &PanelDataset, spec: &ModelSpec, rest: &RestrictionSpec, cfg: KernelConfig) -> Result<TestResult> {
    let rfit = estimator::restricted_minimize(d, spec, rest)?;
    if !rfit.converged {
        return Err(Error::Optimizer("restricted fit did not converge".into()));
    }
    lm_from_fit(&rfit, d, rest, cfg, true)
}

/// Wald, LR and LM without bias correction.
pub fn uncorrected_tests(
    d: &PanelDataset,
    fit: &FitResult,
    inf: &InferenceResult,
    rfit: &FitResult,
    rest: &RestrictionSpec,
    cfg: KernelConfig,
) -> Result<[TestResult; 3]> {
    let wd = wald(inf, rest)?;
    let lr = lr_from_objectives(rfit.objective, fit.objective, nt(d), rest.rows(), TestVariant::Lr)?;
    let lm = lm_from_fit(rfit, d, rest, cfg, false)?;
    Ok([wd, lr, lm])
}

/// All six statistics for one hypothesis, sharing fits where possible.
pub fn all_tests(
    d: &PanelDataset,
    spec: &ModelSpec,
    fit: &FitResult,
    inf: &InferenceResult,
    rest: &RestrictionSpec,
    shift: LrShift,
) -> Result<Vec<TestResult>> {
    let cfg = KernelConfig {
        bandwidth_m: inf.bandwidth_used,
    };
    let rfit = estimator::restricted_minimize(d, spec, rest)?;
    let [wd, lr, lm] = uncorrected_tests(d, fit, inf, &rfit, rest, cfg)?;
    let wd_s = wald_star(inf, rest)?;
    let lr_s = lr_star_with(d, spec, rest, fit, inf, shift, Some(&rfit))?;
    let lm_s = lm_from_fit(&rfit, d, rest, cfg, true)?;
    Ok(vec![wd, lr, lm, wd_s, lr_s, lm_s])
}
