//! Panel data model, validation and the sample identification diagnostics
//! for the regressor set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::OptimizerConfig;
use crate::linalg::{self, KernelConfig, Matrix, SpanProjector};

/// Outcome `Y` and regressors `X_1..X_K`, all `N x T`.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub y: Matrix,
    pub x: Vec<Matrix>,
    pub regressor_names: Vec<String>,
    /// `true` marks a regressor declared low-rank (rank one, e.g. time-invariant).
    pub low_rank_flags: Vec<bool>,
}

impl PanelDataset {
    /// Builds a dataset with default names `x1..xK` and no low-rank regressors.
    pub fn new(y: Matrix, x: Vec<Matrix>) -> Result<Self> {
        let k = x.len();
        let names = (1..=k).map(|i| format!("x{i}")).collect();
        Self::with_metadata(y, x, names, vec![false; k])
    }

    pub fn with_metadata(
        y: Matrix,
        x: Vec<Matrix>,
        regressor_names: Vec<String>,
        low_rank_flags: Vec<bool>,
    ) -> Result<Self> {
        let d = Self {
            y,
            x,
            regressor_names,
            low_rank_flags,
        };
        d.check_structure()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn k_low(&self) -> usize {
        self.low_rank_flags.iter().filter(|&&f| f).count()
    }

    pub fn has_low_rank(&self) -> bool {
        self.low_rank_flags.iter().any(|&f| f)
    }

    /// Indices of the regressors not declared low-rank.
    pub fn high_rank_indices(&self) -> Vec<usize> {
        (0..self.k()).filter(|&k| !self.low_rank_flags[k]).collect()
    }

    pub fn low_rank_indices(&self) -> Vec<usize> {
        (0..self.k()).filter(|&k| self.low_rank_flags[k]).collect()
    }

    /// `Y - sum_k beta_k X_k`.
    pub fn residual_outcome(&self, beta: &[f64]) -> Matrix {
        let mut z = self.y.clone();
        for (b, xk) in beta.iter().zip(&self.x) {
            linalg::add_scaled(&mut z, -b, xk);
        }
        z
    }

    /// Same panel with units and time periods swapped.
    pub fn transposed(&self) -> Self {
        Self {
            y: self.y.transpose(),
            x: self.x.iter().map(|m| m.transpose()).collect(),
            regressor_names: self.regressor_names.clone(),
            low_rank_flags: self.low_rank_flags.clone(),
        }
    }

    /// Sub-panel of consecutive units `[u0, u1)` and periods `[t0, t1)`.
    pub fn subpanel(&self, units: std::ops::Range<usize>, times: std::ops::Range<usize>) -> Self {
        let (nr, nc) = (units.len(), times.len());
        let cut = |m: &Matrix| m.view((units.start, times.start), (nr, nc)).into_owned();
        Self {
            y: cut(&self.y),
            x: self.x.iter().map(cut).collect(),
            regressor_names: self.regressor_names.clone(),
            low_rank_flags: self.low_rank_flags.clone(),
        }
    }

    fn check_structure(&self) -> Result<()> {
        let (n, t) = self.y.shape();
        if n < 2 || t < 2 {
            return Err(Error::Validation(format!(
                "panel must have N >= 2 and T >= 2, got {n}x{t}"
            )));
        }
        if self.x.is_empty() {
            return Err(Error::Validation("at least one regressor is required".into()));
        }
        if self.regressor_names.len() != self.x.len() || self.low_rank_flags.len() != self.x.len() {
            return Err(Error::Validation(
                "regressor names and low-rank flags must have one entry per regressor".into(),
            ));
        }
        linalg::check_finite(&self.y, "outcome Y")?;
        for (xk, name) in self.x.iter().zip(&self.regressor_names) {
            if xk.shape() != (n, t) {
                return Err(Error::Dimension {
                    what: format!("regressor {name}"),
                    expected: format!("{n}x{t}"),
                    got: format!("{}x{}", xk.nrows(), xk.ncols()),
                });
            }
            linalg::check_finite(xk, &format!("regressor {name}"))?;
        }
        Ok(())
    }
}

/// Result of [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub t: usize,
    pub numeric_ranks: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Singular-value ratio `sigma_2 / sigma_1` above which a declared low-rank
/// regressor is reported as not rank one.
pub const LOW_RANK_WARN_RATIO: f64 = 1e-6;

/// Re-checks dimensions and finiteness and computes per-regressor numeric rank.
pub fn validate_dataset(d: &PanelDataset) -> Result<ValidationReport> {
    d.check_structure()?;
    let mut warnings = Vec::new();
    let mut ranks = Vec::with_capacity(d.k());
    for (k, xk) in d.x.iter().enumerate() {
        ranks.push(linalg::numeric_rank(xk));
        if d.low_rank_flags[k] {
            let s = linalg::singular_values(xk);
            let ratio = if s[0] > 0.0 { s.get(1).copied().unwrap_or(0.0) / s[0] } else { 0.0 };
            if ratio > LOW_RANK_WARN_RATIO {
                let msg = format!(
                    "regressor {} is declared low-rank but sigma2/sigma1 = {ratio:.3}; \
                     only its leading singular pair enters the diagnostics",
                    d.regressor_names[k]
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    Ok(ValidationReport {
        n: d.n(),
        t: d.t(),
        numeric_ranks: ranks,
        warnings,
    })
}

/// Kernel bandwidth, either fixed or derived from `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(KernelConfig),
    Auto,
}

impl Bandwidth {
    /// `Auto` resolves to `max(1, floor(log2 T))`.
    pub fn resolve(self, t: usize) -> KernelConfig {
        match self {
            Bandwidth::Fixed(k) => k,
            Bandwidth::Auto => KernelConfig {
                bandwidth_m: auto_bandwidth(t),
            },
        }
    }
}

pub fn auto_bandwidth(t: usize) -> usize {
    if t < 2 {
        1
    } else {
        (usize::BITS - 1 - t.leading_zeros()).max(1) as usize
    }
}

/// Box constraints on `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum ParameterBox {
    /// `+-10 x` pooled-OLS magnitude when low-rank regressors are present, unbounded otherwise.
    #[default]
    Auto,
    Unbounded,
    Explicit { lower: Vec<f64>, upper: Vec<f64> },
}

/// Everything needed to fit the model besides the data.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub r: usize,
    pub bandwidth: Bandwidth,
    pub optimizer: OptimizerConfig,
    pub parameter_box: ParameterBox,
}

impl ModelSpec {
    pub fn new(r: usize) -> Self {
        Self {
            r,
            bandwidth: Bandwidth::Auto,
            optimizer: OptimizerConfig::default(),
            parameter_box: ParameterBox::Auto,
        }
    }

    pub fn check_against(&self, d: &PanelDataset) -> Result<()> {
        let limit = d.n().min(d.t()) - 1;
        if self.r > limit {
            return Err(Error::Validation(format!(
                "number of factors R = {} exceeds min(N, T) - 1 = {limit}",
                self.r
            )));
        }
        if let ParameterBox::Explicit { lower, upper } = &self.parameter_box {
            if lower.len() != d.k() || upper.len() != d.k() {
                return Err(Error::Validation(
                    "parameter box needs one bound pair per regressor".into(),
                ));
            }
            for (l, u) in lower.iter().zip(upper) {
                let ordered = l < u;
                if !ordered || l.is_nan() || u.is_nan() {
                    return Err(Error::Validation(format!("invalid parameter bounds [{l}, {u}]")));
                }
            }
        }
        Ok(())
    }
}

/// Linear hypothesis `H beta = h`.
#[derive(Debug, Clone)]
pub struct RestrictionSpec {
    pub h_matrix: Matrix,
    pub h_vector: Vec<f64>,
}

impl RestrictionSpec {
    pub fn new(h_matrix: Matrix, h_vector: Vec<f64>) -> Result<Self> {
        if h_matrix.nrows() != h_vector.len() {
            return Err(Error::Dimension {
                what: "restriction vector h".into(),
                expected: h_matrix.nrows().to_string(),
                got: h_vector.len().to_string(),
            });
        }
        if h_matrix.nrows() == 0 {
            return Err(Error::Validation("restriction needs at least one row".into()));
        }
        linalg::check_finite(&h_matrix, "restriction matrix H")?;
        if h_vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("restriction vector h has non-finite entries".into()));
        }
        Ok(Self { h_matrix, h_vector })
    }

    /// `beta_k = value`.
    pub fn single(k_total: usize, k: usize, value: f64) -> Self {
        let mut h = Matrix::zeros(1, k_total);
        h[(0, k)] = 1.0;
        Self {
            h_matrix: h,
            h_vector: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.h_matrix.nrows()
    }

    pub fn check_dimensions(&self, k: usize) -> Result<()> {
        if self.h_matrix.ncols() != k {
            return Err(Error::Dimension {
                what: "restriction matrix H".into(),
                expected: format!("{}x{k}", self.rows()),
                got: format!("{}x{}", self.h_matrix.nrows(), self.h_matrix.ncols()),
            });
        }
        Ok(())
    }

    /// Dimensions plus full row rank, as required by the test statistics.
    pub fn check_against(&self, k: usize) -> Result<()> {
        self.check_dimensions(k)?;
        let rank = linalg::numeric_rank(&self.h_matrix);
        if rank != self.rows() || rank > k {
            return Err(Error::Validation(format!(
                "restriction matrix H must have full row rank {} <= K = {k}, has rank {rank}",
                self.rows()
            )));
        }
        Ok(())
    }
}

/// Raw identification statistics; interpretation is left to the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub highrank_stat: Option<f64>,
    pub lowrank_loading_eig: Option<f64>,
    pub lowrank_factor_eig: Option<f64>,
    pub pooled_noncollinearity_eig: f64,
    pub warnings: Vec<String>,
}

/// Lattice of `2 K^2` unit directions: `+-e_k` and `(+-e_k +- e_l)/sqrt(2)`.
fn sphere_lattice(k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * k * k);
    for a in 0..k {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; k];
            v[a] = s;
            out.push(v);
        }
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..k {
        for b in (a + 1)..k {
            for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; k];
                v[a] = sa * h;
                v[b] = sb * h;
                out.push(v);
            }
        }
    }
    out
}

/// Gram blocks `X_a' X_b` (or `X_a X_b'`) on the smaller panel dimension.
fn small_grams(xs: &[&Matrix]) -> Vec<Vec<Matrix>> {
    let (n, t) = xs[0].shape();
    let k = xs.len();
    let mut g = vec![vec![Matrix::zeros(0, 0); k]; k];
    for a in 0..k {
        for b in a..k {
            let m = if t <= n {
                xs[a].transpose() * xs[b]
            } else {
                xs[a] * xs[b].transpose()
            };
            if a != b {
                g[b][a] = m.transpose();
            }
            g[a][b] = m;
        }
    }
    g
}

fn combo_gram(g: &[Vec<Matrix>], alpha: &[f64]) -> Matrix {
    let p = g[0][0].nrows();
    let mut out = Matrix::zeros(p, p);
    for (a, ga) in g.iter().enumerate() {
        for (b, gab) in ga.iter().enumerate() {
            linalg::add_scaled(&mut out, alpha[a] * alpha[b], gab);
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Tail eigen-sum statistic and its gradient in `alpha`.
fn highrank_value_grad(g: &[Vec<Matrix>], alpha: &[f64], skip: usize, nt: f64) -> (f64, Vec<f64>) {
    let s = combo_gram(g, alpha);
    let p = s.nrows();
    let skip = skip.min(p);
    let eig = linalg::sorted_eigen_unchecked(s);
    let value: f64 = eig.values.iter().skip(skip).sum::<f64>() / nt;
    // d/d alpha_a of tr(M_V S) with S = sum alpha_a alpha_b G_ab.
    let v = eig.vectors.columns(0, skip).into_owned();
    let grad = (0..g.len())
        .map(|a| {
            let mut d = Matrix::zeros(p, p);
            for (b, gab) in g[a].iter().enumerate() {
                linalg::add_scaled(&mut d, alpha[b], gab);
                linalg::add_scaled(&mut d, alpha[b], &gab.transpose());
            }
            let proj = (v.transpose() * &d * &v).trace();
            (d.trace() - proj) / nt
        })
        .collect();
    (value.max(0.0), grad)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Target accuracy of the sphere minimisation in [`highrank_diagnostic`].
pub const HIGHRANK_TOL: f64 = 1e-8;

/// Minimum over unit `alpha` of the sum of eigenvalues `2R+K1+1..N` of
/// `(alpha . X_high)(alpha . X_high)' / NT`.
pub fn highrank_diagnostic(d: &PanelDataset, r: usize) -> Result<f64> {
    let high = d.high_rank_indices();
    if high.is_empty() {
        return Err(Error::Validation("no high-rank regressors".into()));
    }
    let skip = 2 * r + d.k_low();
    if d.n() <= skip {
        return Err(Error::Validation(format!(
            "N = {} must exceed 2R + K1 = {skip} for the high-rank diagnostic",
            d.n()
        )));
    }
    let xs: Vec<&Matrix> = high.iter().map(|&k| &d.x[k]).collect();
    let g = small_grams(&xs);
    let nt = (d.n() * d.t()) as f64;
    let k2 = xs.len();
    if k2 == 1 {
        return Ok(highrank_value_grad(&g, &[1.0], skip, nt).0);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for a in sphere_lattice(k2) {
        let (v, _) = highrank_value_grad(&g, &a, skip, nt);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, a));
        }
    }
    let (mut value, mut alpha) = best.expect("lattice is non-empty");

    // Projected gradient descent on the sphere with backtracking; stops once a
    // step gains less than HIGHRANK_TOL * 1e-3.
    let mut step = 1.0;
    for _ in 0..10_000 {
        let (_, grad) = highrank_value_grad(&g, &alpha, skip, nt);
        let radial: f64 = grad.iter().zip(&alpha).map(|(g, a)| g * a).sum();
        let tangent: Vec<f64> = grad.iter().zip(&alpha).map(|(g, a)| g - radial * a).collect();
        let tnorm2: f64 = tangent.iter().map(|x| x * x).sum();
        if tnorm2.sqrt() < 1e-15 {
            break;
        }
        let mut gain = 0.0;
        while step > 1e-16 {
            let mut cand: Vec<f64> = alpha.iter().zip(&tangent).map(|(a, t)| a - step * t).collect();
            normalize(&mut cand);
            let (cv, _) = highrank_value_grad(&g, &cand, skip, nt);
            // Armijo condition along the tangent direction.
            if cv <= value - 1e-4 * step * tnorm2 && cv < value {
                gain = value - cv;
                value = cv;
                alpha = cand;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if gain < HIGHRANK_TOL * 1e-3 {
            break;
        }
    }
    Ok(value)
}

/// Leading singular pair of a (supposedly rank-one) regressor.
fn rank_one_factors(x: &Matrix) -> (nalgebra::DVector<f64>, nalgebra::DVector<f64>) {
    let svd = x.clone().svd(true, true);
    let idx = svd.singular_values.imax();
    let s = svd.singular_values[idx];
    let u = svd.u.expect("requested u").column(idx).into_owned();
    let vt = svd.v_t.expect("requested v_t").row(idx).transpose().into_owned();
    (u * s.sqrt(), vt * s.sqrt())
}

/// Smallest eigenvalues of `lambda' M_w lambda / N` and `f' M_v f / T`, where
/// `w`, `v` stack the leading singular vectors of the low-rank regressors.
pub fn lowrank_separation_diagnostic(
    d: &PanelDataset,
    lambda_hat: &Matrix,
    f_hat: &Matrix,
) -> Result<(f64, f64)> {
    let low = d.low_rank_indices();
    if low.is_empty() {
        return Err(Error::Validation("no low-rank regressors declared".into()));
    }
    if lambda_hat.ncols() == 0 || lambda_hat.ncols() != f_hat.ncols() {
        return Err(Error::Validation(
            "low-rank diagnostic needs R >= 1 estimated factors".into(),
        ));
    }
    if lambda_hat.nrows() != d.n() || f_hat.nrows() != d.t() {
        return Err(Error::Dimension {
            what: "factor estimates".into(),
            expected: format!("{}xR and {}xR", d.n(), d.t()),
            got: format!("{}x{} and {}x{}", lambda_hat.nrows(), lambda_hat.ncols(), f_hat.nrows(), f_hat.ncols()),
        });
    }
    let mut w = Matrix::zeros(d.n(), low.len());
    let mut v = Matrix::zeros(d.t(), low.len());
    for (j, &k) in low.iter().enumerate() {
        let (wu, vv) = rank_one_factors(&d.x[k]);
        w.set_column(j, &wu);
        v.set_column(j, &vv);
    }
    let mw = SpanProjector::new(&w);
    let mv = SpanProjector::new(&v);
    let lam = lambda_hat.transpose() * mw.annihilate_left(lambda_hat) / d.n() as f64;
    let fac = f_hat.transpose() * mv.annihilate_left(f_hat) / d.t() as f64;
    let min_eig = |m: Matrix| -> f64 {
        let e = linalg::sorted_eigenvalues_unchecked((&m + m.transpose()) * 0.5);
        e.last().copied().unwrap_or(0.0).max(0.0)
    };
    Ok((min_eig(lam), min_eig(fac)))
}

/// Smallest eigenvalue of the pooled regressor second-moment matrix.
pub fn pooled_noncollinearity(d: &PanelDataset) -> f64 {
    let k = d.k();
    let nt = (d.n() * d.t()) as f64;
    let g = Matrix::from_fn(k, k, |a, b| d.x[a].dot(&d.x[b]) / nt);
    linalg::sorted_eigenvalues_unchecked(g)
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0)
}

/// Collects all available diagnostics for a dataset and (optionally) a fit.
pub fn diagnostics(
    d: &PanelDataset,
    r: usize,
    factors: Option<(&Matrix, &Matrix)>,
) -> Result<DiagnosticsReport> {
    let report = validate_dataset(d)?;
    let mut warnings = report.warnings;
    let highrank_stat = if d.high_rank_indices().is_empty() {
        None
    } else {
        match highrank_diagnostic(d, r) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(e.to_string());
                None
            }
        }
    };
    let (lowrank_loading_eig, lowrank_factor_eig) = match factors {
        Some((lam, f)) if d.has_low_rank() && r > 0 => {
            let (a, b) = lowrank_separation_diagnostic(d, lam, f)?;
            (Some(a), Some(b))
        }
        _ => (None, None),
    };
    Ok(DiagnosticsReport {
        highrank_stat,
        lowrank_loading_eig,
        lowrank_factor_eig,
        pooled_noncollinearity_eig: pooled_noncollinearity(d),
        warnings,
    })
}
