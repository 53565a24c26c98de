//! First-order expansion of the estimator around the truth: approximate
//! Hessian `W`, score `C = C1 + C2`, and the predicted deviation
//! `W^-1 C / sqrt(NT)` against the realised one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::minimize_profile;
use crate::linalg::{self, Matrix, SpanProjector, Vector};
use crate::panel::{ModelSpec, PanelDataset};
use crate::simulation::dgp::Truth;

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionDiagnostic {
    #[serde(skip)]
    pub w_nt: Matrix,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub predicted_dev: Vec<f64>,
    pub actual_dev: Vec<f64>,
    /// `|actual_dev - predicted_dev|`.
    pub gap: f64,
}

impl ExpansionDiagnostic {
    /// Gap relative to the realised deviation.
    pub fn gap_ratio(&self) -> f64 {
        self.gap / self.actual_dev.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Score and Hessian pieces evaluated at the true loadings, factors and errors.
#[derive(Debug, Clone)]
pub struct ExpansionTerms {
    pub w_nt: Matrix,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

pub fn expansion_terms(lambda0: &Matrix, f0: &Matrix, e: &Matrix, x: &[Matrix]) -> Result<ExpansionTerms> {
    let (n, t) = e.shape();
    if lambda0.nrows() != n || f0.nrows() != t || lambda0.ncols() != f0.ncols() {
        return Err(Error::Dimension {
            what: "true loadings and factors".into(),
            expected: format!("{n}xR and {t}xR"),
            got: format!(
                "{}x{} and {}x{}",
                lambda0.nrows(),
                lambda0.ncols(),
                f0.nrows(),
                f0.ncols()
            ),
        });
    }
    let sqrt_nt = ((n * t) as f64).sqrt();
    let ml = SpanProjector::new(lambda0);
    let mf = SpanProjector::new(f0);
    let annihilated: Vec<Matrix> = x
        .iter()
        .map(|xk| mf.annihilate_right(&ml.annihilate_left(xk)))
        .collect();
    let w_nt = crate::estimator::cross_trace_matrix(&annihilated, (n * t) as f64);
    let c1 = annihilated.iter().map(|a| a.dot(e) / sqrt_nt).collect();

    let r = lambda0.ncols();
    if r == 0 {
        return Ok(ExpansionTerms {
            w_nt,
            c1,
            c2: vec![0.0; x.len()],
        });
    }
    let ltl_inv = linalg::sym_inverse(&(lambda0.transpose() * lambda0), "lambda0' lambda0")?;
    let ftf_inv = linalg::sym_inverse(&(f0.transpose() * f0), "f0' f0")?;
    let lam_bar = lambda0 * &ltl_inv;
    let f_bar = f0 * &ftf_inv;
    let e_mf = mf.annihilate_right(e);
    let ml_e = ml.annihilate_left(e);
    let lam_e_mf = lambda0.transpose() * &e_mf;
    let ef = e * f0;
    let et_lam_bar = e.transpose() * &lam_bar;
    let c2 = x
        .iter()
        .zip(&annihilated)
        .map(|(xk, ak)| {
            let p = ml.annihilate_left(&(xk * &f_bar));
            let t1 = (&ltl_inv * &lam_e_mf * (e.transpose() * p)).trace();
            let q = mf.annihilate_left(&(xk.transpose() * &lam_bar));
            let t2 = (&ftf_inv * ef.transpose() * (&ml_e * q)).trace();
            let t3 = (&ftf_inv * ef.transpose() * (ak * &et_lam_bar)).trace();
            -(t1 + t2 + t3) / sqrt_nt
        })
        .collect();
    Ok(ExpansionTerms { w_nt, c1, c2 })
}

pub fn expansion_diagnostic(truth: &Truth, d: &PanelDataset, spec: &ModelSpec) -> Result<ExpansionDiagnostic> {
    if truth.beta0.len() != d.k() {
        return Err(Error::Dimension {
            what: "true coefficients".into(),
            expected: d.k().to_string(),
            got: truth.beta0.len().to_string(),
        });
    }
    let terms = expansion_terms(&truth.lambda0, &truth.f0, &truth.e, &d.x)?;
    crate::inference::check_w_scale(&terms.w_nt, d)?;
    let winv = linalg::sym_inverse(&terms.w_nt, "W_NT")?;
    let sqrt_nt = ((d.n() * d.t()) as f64).sqrt();
    let c = Vector::from_iterator(d.k(), terms.c1.iter().zip(&terms.c2).map(|(a, b)| a + b));
    let predicted: Vec<f64> = (winv * c / sqrt_nt).iter().copied().collect();
    let fit = minimize_profile(d, spec)?;
    let actual: Vec<f64> = fit.beta_hat.iter().zip(&truth.beta0).map(|(b, b0)| b - b0).collect();
    let gap = actual
        .iter()
        .zip(&predicted)
        .map(|(a, p)| (a - p).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ExpansionDiagnostic {
        w_nt: terms.w_nt,
        c1: terms.c1,
        c2: terms.c2,
        predicted_dev: predicted,
        actual_dev: actual,
        gap,
    })
}
