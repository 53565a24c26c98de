//! Profile least-squares estimation: objective, envelope gradient, multi-start
//! minimization and recovery of factors, loadings and residuals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extensions::pooled_ols;
use crate::linalg::{self, Matrix, SpanProjector};
use crate::optim::{self, Bounds, LocalOptions, LocalOutcome};
use crate::panel::{ModelSpec, PanelDataset, ParameterBox, RestrictionSpec};
use crate::profile::{GramBlocks, ProfileProblem, GRADIENT_GAP_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerMethod {
    /// BFGS on the envelope gradient, simplex fallback at eigen-gap crossings.
    QuasiNewton,
    /// Nelder-Mead only.
    Simplex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    /// Perturbation half-width relative to `max(|b_ols_k|, 1)`.
    pub start_spread: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub method: OptimizerMethod,
    /// Seed for the start perturbations.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 5,
            start_spread: 0.5,
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            method: OptimizerMethod::QuasiNewton,
            seed: 0x5eed,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::Validation("optimizer needs n_starts >= 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::Validation("optimizer tolerances must be positive".into()));
        }
        if !(self.start_spread >= 0.0) || self.max_iter == 0 {
            return Err(Error::Validation(
                "start_spread must be >= 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }

    fn local(&self) -> LocalOptions {
        LocalOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
        }
    }
}

/// Factor and loading estimates at a given `beta`, normalized `f'f/T = I`.
#[derive(Debug, Clone)]
pub struct FactorEstimates {
    /// `N x R`
    pub lambda: Matrix,
    /// `T x R`
    pub f: Matrix,
    pub degenerate_gap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: String,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub lambda_hat: Matrix,
    pub f_hat: Matrix,
    pub residuals: Matrix,
    pub objective: f64,
    /// Envelope gradient at `beta_hat`.
    pub gradient: Vec<f64>,
    pub n_restarts_agreeing: usize,
    pub converged: bool,
    pub degenerate_gap: bool,
    pub on_boundary: bool,
    pub r: usize,
    pub starts: Vec<StartRecord>,
    pub warnings: Vec<String>,
}

/// `(NT)^{-1}` times the sum of all but the `r` largest eigenvalues of the
/// Gram matrix of `z`, taken on the smaller dimension.
pub fn concentrated_objective(z: &Matrix, r: usize) -> Result<f64> {
    let (n, t) = z.shape();
    if n == 0 || t == 0 {
        return Err(Error::Validation("empty residual matrix".into()));
    }
    if r > n.min(t) {
        return Err(Error::Validation(format!(
            "R = {r} exceeds min(N, T) = {}",
            n.min(t)
        )));
    }
    let g = small_gram(z);
    let values = linalg::sorted_eigenvalues_unchecked(g);
    Ok((values[r..].iter().sum::<f64>() / (n * t) as f64).max(0.0))
}

fn small_gram(z: &Matrix) -> Matrix {
    let g = if z.nrows() < z.ncols() {
        z * z.transpose()
    } else {
        z.transpose() * z
    };
    (&g + g.transpose()) * 0.5
}

fn check_r(d: &PanelDataset, r: usize) -> Result<()> {
    let limit = d.n().min(d.t()) - 1;
    if r > limit {
        return Err(Error::Validation(format!(
            "number of factors R = {r} exceeds min(N, T) - 1 = {limit}"
        )));
    }
    Ok(())
}

fn check_beta(d: &PanelDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != d.k() {
        return Err(Error::Dimension {
            what: "coefficient vector".into(),
            expected: d.k().to_string(),
            got: beta.len().to_string(),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Validation("coefficient vector has non-finite entries".into()));
    }
    Ok(())
}

pub fn profile_objective(beta: &[f64], d: &PanelDataset, r: usize) -> Result<f64> {
    check_beta(d, beta)?;
    check_r(d, r)?;
    concentrated_objective(&d.residual_outcome(beta), r)
}

#[derive(Debug, Clone)]
pub struct Gradient {
    pub grad: Vec<f64>,
    /// `mu_R - mu_{R+1} < 1e-10 mu_1`: the envelope identity may not hold.
    pub degenerate_gap: bool,
}

pub fn profile_gradient(beta: &[f64], d: &PanelDataset, r: usize) -> Result<Gradient> {
    check_beta(d, beta)?;
    check_r(d, r)?;
    let z = d.residual_outcome(beta);
    let (fe, e) = factors_and_residuals(&z, r);
    let gap = gap_flag(&z, r) || fe.degenerate_gap;
    Ok(Gradient {
        grad: envelope_gradient(d, &e),
        degenerate_gap: gap,
    })
}

fn gap_flag(z: &Matrix, r: usize) -> bool {
    let values = linalg::sorted_eigenvalues_unchecked(small_gram(z));
    linalg::gap_is_degenerate(&values, r, GRADIENT_GAP_TOL)
}

/// `-(2/NT) tr(X_k' e)` for each regressor.
pub(crate) fn envelope_gradient(d: &PanelDataset, e: &Matrix) -> Vec<f64> {
    let nt = (d.n() * d.t()) as f64;
    d.x.iter().map(|xk| -2.0 * xk.dot(e) / nt).collect()
}

pub fn factor_estimates(beta: &[f64], d: &PanelDataset, r: usize) -> Result<FactorEstimates> {
    check_beta(d, beta)?;
    check_r(d, r)?;
    Ok(factors_of(&d.residual_outcome(beta), r))
}

/// Principal components of `z` with `f'f/T = I` and `lambda = z f / T`.
pub fn factors_of(z: &Matrix, r: usize) -> FactorEstimates {
    let (n, t) = z.shape();
    if r == 0 {
        return FactorEstimates {
            lambda: Matrix::zeros(n, 0),
            f: Matrix::zeros(t, 0),
            degenerate_gap: false,
        };
    }
    let sqrt_t = (t as f64).sqrt();
    let mut degenerate = false;
    let mut f = None;
    if n < t {
        let eig = linalg::sorted_eigen_unchecked(small_gram(z));
        degenerate = linalg::gap_is_degenerate(eig.values.as_slice(), r, GRADIENT_GAP_TOL);
        let top = eig.values[0].max(0.0);
        if (0..r).all(|j| eig.values[j] > 1e-12 * top && eig.values[j] > 0.0) {
            let mut v = Matrix::zeros(t, r);
            for j in 0..r {
                let col = z.transpose() * eig.vectors.column(j) / eig.values[j].sqrt();
                v.set_column(j, &col);
            }
            f = Some(v);
        }
    }
    let mut f = match f {
        Some(v) => v,
        None => {
            let eig = linalg::sorted_eigen_unchecked({
                let g = z.transpose() * z;
                (&g + g.transpose()) * 0.5
            });
            if n >= t {
                degenerate = linalg::gap_is_degenerate(eig.values.as_slice(), r, GRADIENT_GAP_TOL);
            }
            eig.vectors.columns(0, r).into_owned()
        }
    };
    linalg::normalize_signs(&mut f);
    f *= sqrt_t;
    let lambda = z * &f / t as f64;
    FactorEstimates {
        lambda,
        f,
        degenerate_gap: degenerate,
    }
}

fn factors_and_residuals(z: &Matrix, r: usize) -> (FactorEstimates, Matrix) {
    let fe = factors_of(z, r);
    let e = z - &fe.lambda * fe.f.transpose();
    (fe, e)
}

/// `M_lambda X_k M_f` for every regressor.
pub fn annihilated_regressors(x: &[Matrix], lambda: &Matrix, f: &Matrix) -> Vec<Matrix> {
    let pl = SpanProjector::new(lambda);
    let pf = SpanProjector::new(f);
    x.iter()
        .map(|xk| pf.annihilate_right(&pl.annihilate_left(xk)))
        .collect()
}

/// `(NT)^{-1} tr(A_k' A_l)` over a list of `N x T` matrices.
pub(crate) fn cross_trace_matrix(a: &[Matrix], nt: f64) -> Matrix {
    let k = a.len();
    let mut w = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = a[i].dot(&a[j]) / nt;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// Affine parameterisation `beta = base + basis * theta`.
#[derive(Debug, Clone)]
struct Affine {
    base: Vec<f64>,
    basis: Matrix,
}

impl Affine {
    fn identity(k: usize) -> Self {
        Self {
            base: vec![0.0; k],
            basis: Matrix::identity(k, k),
        }
    }

    fn beta(&self, theta: &[f64]) -> Vec<f64> {
        let mut b = self.base.clone();
        for (i, bi) in b.iter_mut().enumerate() {
            for (j, th) in theta.iter().enumerate() {
                *bi += self.basis[(i, j)] * th;
            }
        }
        b
    }

    fn theta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.basis.ncols())
            .map(|j| {
                (0..beta.len())
                    .map(|i| self.basis[(i, j)] * (beta[i] - self.base[i]))
                    .sum()
            })
            .collect()
    }

    fn reduce(&self, g: &[f64]) -> Vec<f64> {
        (0..self.basis.ncols())
            .map(|j| (0..g.len()).map(|i| self.basis[(i, j)] * g[i]).sum())
            .collect()
    }
}

fn resolve_bounds(d: &PanelDataset, spec: &ModelSpec, b_ols: Option<&[f64]>) -> Bounds {
    let k = d.k();
    match &spec.parameter_box {
        ParameterBox::Unbounded => Bounds::unbounded(k),
        ParameterBox::Explicit { lower, upper } => Bounds {
            lower: lower.clone(),
            upper: upper.clone(),
        },
        ParameterBox::Auto => {
            if !d.has_low_rank() {
                return Bounds::unbounded(k);
            }
            let scale: Vec<f64> = (0..k)
                .map(|i| 10.0 * b_ols.map_or(1.0, |b| b[i].abs().max(1.0)))
                .collect();
            Bounds {
                lower: scale.iter().map(|s| -s).collect(),
                upper: scale,
            }
        }
    }
}

fn starting_points(centre: &[f64], cfg: &OptimizerConfig, bounds: &Bounds) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = Vec::with_capacity(cfg.n_starts);
    let mut first = centre.to_vec();
    bounds.clamp(&mut first);
    starts.push(first);
    for _ in 1..cfg.n_starts {
        let mut s: Vec<f64> = centre
            .iter()
            .map(|&b| b + rng.random_range(-1.0..=1.0) * cfg.start_spread * b.abs().max(1.0))
            .collect();
        bounds.clamp(&mut s);
        starts.push(s);
    }
    starts
}

fn local_search(prob: &ProfileProblem, start: &[f64], bounds: &Bounds, cfg: &OptimizerConfig) -> (LocalOutcome, String) {
    let opts = cfg.local();
    let simplex = |x0: &[f64]| {
        let step: Vec<f64> = x0.iter().map(|v| 0.1 * v.abs().max(0.1)).collect();
        let mut out = optim::nelder_mead(|th| prob.value(th), x0, &step, bounds, &opts);
        let ev = prob.evaluate(&out.x);
        out.grad_norm = bounds
            .projected_gradient(&out.x, &ev.grad)
            .iter()
            .fold(0.0, |a, g| a.max(g.abs()));
        out.degenerate_gap = ev.degenerate_gap;
        // At a crossing the gradient is not informative; accept simplex termination.
        out.converged = out.converged && (out.grad_norm < opts.grad_tol || ev.degenerate_gap);
        out
    };
    match cfg.method {
        OptimizerMethod::Simplex => (simplex(start), "simplex".into()),
        OptimizerMethod::QuasiNewton => {
            let out = optim::bfgs(
                |th| {
                    let ev = prob.evaluate(th);
                    (ev.value, ev.grad, ev.degenerate_gap)
                },
                start,
                bounds,
                &opts,
            );
            if out.degenerate_gap || !out.converged {
                let alt = simplex(&out.x);
                if alt.value < out.value {
                    return (alt, "quasi-newton+simplex".into());
                }
            }
            (out, "quasi-newton".into())
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c.is_ne() {
            return c;
        }
    }
    std::cmp::Ordering::Equal
}

/// Objective, gradient and Hessian approximation `2W` from a direct residual
/// computation (no Gram-block cancellation).
struct DirectState {
    value: f64,
    grad: Vec<f64>,
    w: Matrix,
}

fn direct_state(d: &PanelDataset, beta: &[f64], r: usize) -> DirectState {
    let z = d.residual_outcome(beta);
    let (fe, e) = factors_and_residuals(&z, r);
    let nt = (d.n() * d.t()) as f64;
    let value = (e.norm_squared() / nt).max(0.0);
    let a = annihilated_regressors(&d.x, &fe.lambda, &fe.f);
    DirectState {
        value,
        grad: envelope_gradient(d, &e),
        w: cross_trace_matrix(&a, nt),
    }
}

/// Newton-type refinement with Hessian `2W` on directly computed residuals.
/// Sharpens the optimum beyond what the cached Gram form resolves.
fn polish(d: &PanelDataset, r: usize, map: &Affine, beta: Vec<f64>) -> Vec<f64> {
    let q = map.basis.ncols();
    if q == 0 {
        return beta;
    }
    let mut beta = beta;
    let mut state = direct_state(d, &beta, r);
    for _ in 0..8 {
        let g = map.reduce(&state.grad);
        let h = map.basis.transpose() * &state.w * &map.basis * 2.0;
        let Ok(hinv) = linalg::sym_inverse(&h, "polish Hessian") else {
            break;
        };
        let step = -(&hinv * crate::linalg::Vector::from_column_slice(&g));
        let mut improved = false;
        let mut scale = 1.0;
        for _ in 0..4 {
            let theta_step: Vec<f64> = step.iter().map(|s| s * scale).collect();
            let mut cand = beta.clone();
            for (i, c) in cand.iter_mut().enumerate() {
                for (j, s) in theta_step.iter().enumerate() {
                    *c += map.basis[(i, j)] * s;
                }
            }
            let cs = direct_state(d, &cand, r);
            if cs.value < state.value {
                beta = cand;
                state = cs;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        let size = step.amax();
        if !improved || size <= 1e-15 * (1.0 + beta.iter().fold(0.0_f64, |a, b| a.max(b.abs()))) {
            break;
        }
    }
    beta
}

fn finalize(
    d: &PanelDataset,
    r: usize,
    cfg: &OptimizerConfig,
    bounds: &Bounds,
    map: &Affine,
    beta: Vec<f64>,
    starts: Vec<StartRecord>,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let z = d.residual_outcome(&beta);
    let (fe, residuals) = factors_and_residuals(&z, r);
    let objective = concentrated_objective(&z, r)?;
    let gradient = envelope_gradient(d, &residuals);
    let degenerate_gap = gap_flag(&z, r) || fe.degenerate_gap;
    let on_boundary = bounds.active(&beta).iter().any(|&a| a) && !bounds.is_unbounded();
    // First-order condition in the free directions, ignoring active bounds.
    let reduced = map.reduce(&bounds.projected_gradient(&beta, &gradient));
    let grad_norm = reduced.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
    let converged = grad_norm < cfg.grad_tol
        || (degenerate_gap && starts.iter().any(|s| s.converged));
    if !converged && !starts.iter().any(|s| s.converged) {
        let table: Vec<String> = starts
            .iter()
            .map(|s| {
                format!(
                    "start {:?} -> beta {:?}, objective {:.6e}, |grad| {:.3e}, {} iterations ({})",
                    s.start, s.beta, s.objective, s.grad_norm, s.iterations, s.method
                )
            })
            .collect();
        return Err(Error::Optimizer(format!(
            "no start converged (grad_tol {:.1e}):\n  {}",
            cfg.grad_tol,
            table.join("\n  ")
        )));
    }
    if on_boundary {
        let msg = format!("estimate {beta:?} lies on the parameter box boundary");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if degenerate_gap {
        let msg = "eigen-gap at position R is degenerate at the estimate; factors are not unique".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let tol = 1e-6 * objective.abs().max(1.0);
    let n_restarts_agreeing = starts
        .iter()
        .filter(|s| (s.objective - objective).abs() <= tol)
        .count();
    if n_restarts_agreeing < starts.len() {
        let msg = format!(
            "{} of {} starts reached a different local optimum",
            starts.len() - n_restarts_agreeing,
            starts.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(FitResult {
        beta_hat: beta,
        lambda_hat: fe.lambda,
        f_hat: fe.f,
        residuals,
        objective,
        gradient,
        n_restarts_agreeing,
        converged,
        degenerate_gap,
        on_boundary,
        r,
        starts,
        warnings,
    })
}

/// Multi-start minimization of the profile objective over `beta = map(theta)`.
fn run(
    d: &PanelDataset,
    r: usize,
    cfg: &OptimizerConfig,
    bounds: &Bounds,
    map: &Affine,
    centre: &[f64],
    warnings: Vec<String>,
) -> Result<FitResult> {
    let mut bases: Vec<&Matrix> = vec![&d.y];
    bases.extend(d.x.iter());
    let blocks = GramBlocks::new(&bases);
    let mut offset = vec![1.0];
    offset.extend(map.base.iter().map(|b| -b));
    let prob = ProfileProblem::new(&blocks, offset, -&map.basis.clone().insert_row(0, 0.0), r);

    let theta_bounds = if map.basis.ncols() == d.k() && map.base.iter().all(|&b| b == 0.0) {
        bounds.clone()
    } else {
        Bounds::unbounded(map.basis.ncols())
    };
    let starts: Vec<Vec<f64>> = starting_points(centre, cfg, bounds)
        .iter()
        .map(|s| map.theta(s))
        .collect();
    let outcomes: Vec<(Vec<f64>, LocalOutcome, String)> = starts
        .into_par_iter()
        .map(|s| {
            let (o, m) = local_search(&prob, &s, &theta_bounds, cfg);
            (s, o, m)
        })
        .collect();
    let records: Vec<StartRecord> = outcomes
        .iter()
        .map(|(s, o, m)| StartRecord {
            start: map.beta(s),
            beta: map.beta(&o.x),
            objective: o.value,
            grad_norm: o.grad_norm,
            iterations: o.iterations,
            converged: o.converged,
            method: m.clone(),
        })
        .collect();
    let best = records
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then_with(|| lex_cmp(&a.beta, &b.beta)))
        .expect("at least one start");
    let mut beta = best.beta.clone();
    if theta_bounds.active(&map.theta(&beta)).iter().all(|a| !a) {
        let polished = polish(d, r, map, beta.clone());
        let mut clamped = map.theta(&polished);
        theta_bounds.clamp(&mut clamped);
        beta = map.beta(&clamped);
    }
    finalize(d, r, cfg, bounds, map, beta, records, warnings)
}

fn ols_centre(d: &PanelDataset, warnings: &mut Vec<String>) -> Option<Vec<f64>> {
    match pooled_ols(d) {
        Ok(b) => Some(b),
        Err(e) => {
            let msg = format!("pooled OLS start unavailable ({e}); starting from zero");
            log::warn!("{msg}");
            warnings.push(msg);
            None
        }
    }
}

pub fn minimize_profile(d: &PanelDataset, spec: &ModelSpec) -> Result<FitResult> {
    spec.check_against(d)?;
    spec.optimizer.validate()?;
    let cfg = &spec.optimizer;
    let mut warnings = Vec::new();
    let b_ols = ols_centre(d, &mut warnings);
    let bounds = resolve_bounds(d, spec, b_ols.as_deref());
    let centre = b_ols.clone().unwrap_or_else(|| vec![0.0; d.k()]);
    if spec.r == 0 {
        if let Some(b) = &b_ols {
            let mut clamped = b.clone();
            bounds.clamp(&mut clamped);
            if clamped == *b {
                let record = StartRecord {
                    start: b.clone(),
                    beta: b.clone(),
                    objective: profile_objective(b, d, 0)?,
                    grad_norm: 0.0,
                    iterations: 0,
                    converged: true,
                    method: "closed-form".into(),
                };
                let map = Affine::identity(d.k());
                return finalize(d, 0, cfg, &bounds, &map, b.clone(), vec![record], warnings);
            }
        }
    }
    run(d, spec.r, cfg, &bounds, &Affine::identity(d.k()), &centre, warnings)
}

/// Particular solution and orthonormal null-space basis of `H beta = h`.
pub(crate) fn restriction_affine(rest: &RestrictionSpec) -> Result<(Vec<f64>, Matrix)> {
    let h = &rest.h_matrix;
    let k = h.ncols();
    let eig = linalg::sorted_eigen_unchecked(h.transpose() * h);
    let top = eig.values[0].max(0.0);
    let tol = (k.max(h.nrows()) as f64) * f64::EPSILON * top.max(f64::MIN_POSITIVE) * 16.0;
    let rank = eig.values.iter().filter(|&&v| v > tol).count();
    // beta_p = V S^{-2} V' H' h on the row space.
    let hv = crate::linalg::Vector::from_column_slice(&rest.h_vector);
    let hth = h.transpose() * &hv;
    let mut bp = crate::linalg::Vector::zeros(k);
    for j in 0..rank {
        let v = eig.vectors.column(j);
        bp += v * (v.dot(&hth) / eig.values[j]);
    }
    let resid = h * &bp - &hv;
    if resid.amax() > 1e-10 * hv.amax().max(1.0) {
        return Err(Error::Infeasible(format!(
            "H beta = h has no solution (least-squares residual {:.3e})",
            resid.amax()
        )));
    }
    let null = eig.vectors.columns(rank, k - rank).into_owned();
    Ok((bp.iter().copied().collect(), null))
}

pub fn restricted_minimize(d: &PanelDataset, spec: &ModelSpec, rest: &RestrictionSpec) -> Result<FitResult> {
    spec.check_against(d)?;
    spec.optimizer.validate()?;
    rest.check_dimensions(d.k())?;
    let (base, basis) = restriction_affine(rest)?;
    let cfg = &spec.optimizer;
    let mut warnings = Vec::new();
    let b_ols = ols_centre(d, &mut warnings);
    let bounds = resolve_bounds(d, spec, b_ols.as_deref());
    let map = Affine { base, basis };
    if map.basis.ncols() == 0 {
        let beta = map.base.clone();
        let record = StartRecord {
            start: beta.clone(),
            beta: beta.clone(),
            objective: profile_objective(&beta, d, spec.r)?,
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
            method: "pinned".into(),
        };
        return finalize(d, spec.r, cfg, &bounds, &map, beta, vec![record], warnings);
    }
    let centre = b_ols.unwrap_or_else(|| vec![0.0; d.k()]);
    let mut fit = run(d, spec.r, cfg, &Bounds::unbounded(d.k()), &map, &centre, warnings)?;
    let mut check = fit.beta_hat.clone();
    bounds.clamp(&mut check);
    if check != fit.beta_hat {
        let msg = "restricted estimate lies outside the parameter box".to_string();
        log::warn!("{msg}");
        fit.warnings.push(msg);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, t: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(n, t, |_, _| StandardNormal.sample(rng))
    }

    /// `Y = beta X + lambda f' + sigma e`.
    fn factor_panel(n: usize, t: usize, beta: &[f64], r: usize, sigma: f64, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lam = normal(n, r, &mut rng);
        let f = normal(t, r, &mut rng);
        let x: Vec<Matrix> = beta
            .iter()
            .map(|_| normal(n, t, &mut rng) + &lam * f.transpose() * 0.5)
            .collect();
        let mut y = &lam * f.transpose() + normal(n, t, &mut rng) * sigma;
        for (b, xk) in beta.iter().zip(&x) {
            y += xk * *b;
        }
        PanelDataset::new(y, x).unwrap()
    }

    fn spec(r: usize) -> ModelSpec {
        ModelSpec::new(r)
    }

    /// `min_f tr(Z M_f Z') / NT` via brute force over unit vectors in R^T (T = 4, R = 1).
    fn min_over_f_oracle(z: &Matrix) -> f64 {
        // Minimizing over f is maximizing f'Z'Zf on the sphere; search a dense
        // grid in spherical coordinates then refine by power iteration.
        let g = z.transpose() * z;
        let mut best = f64::INFINITY;
        let steps = 40;
        for a in 0..steps {
            for b in 0..steps {
                for c in 0..(2 * steps) {
                    let (ta, tb, tc) = (
                        std::f64::consts::PI * a as f64 / steps as f64,
                        std::f64::consts::PI * b as f64 / steps as f64,
                        std::f64::consts::PI * c as f64 / steps as f64,
                    );
                    let mut v = Vector::from_vec(vec![
                        ta.cos(),
                        ta.sin() * tb.cos(),
                        ta.sin() * tb.sin() * tc.cos(),
                        ta.sin() * tb.sin() * tc.sin(),
                    ]);
                    for _ in 0..200 {
                        v = &g * &v;
                        v /= v.norm();
                    }
                    let p = &v * v.transpose();
                    let m = Matrix::identity(4, 4) - p;
                    let val = (z * m * z.transpose()).trace();
                    best = best.min(val);
                }
            }
        }
        best / (z.nrows() * z.ncols()) as f64
    }

    #[test]
    fn objective_zero_for_exact_factor_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lam = normal(10, 2, &mut rng);
        let f = normal(7, 2, &mut rng);
        let d = PanelDataset::new(&lam * f.transpose(), vec![normal(10, 7, &mut rng)]).unwrap();
        assert!(profile_objective(&[0.0], &d, 2).unwrap() < 1e-12);
    }

    #[test]
    fn objective_single_cell_is_plain_ssr() {
        let z = Matrix::from_element(1, 1, 2.0) - Matrix::from_element(1, 1, 1.0) * 1.0;
        assert_eq!(concentrated_objective(&z, 0).unwrap(), 1.0);
    }

    #[test]
    fn objective_matches_min_over_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = normal(5, 4, &mut rng);
        let x = normal(5, 4, &mut rng);
        let d = PanelDataset::new(y, vec![x]).unwrap();
        let z = d.residual_outcome(&[0.3]);
        let oracle = min_over_f_oracle(&z);
        assert!((profile_objective(&[0.3], &d, 1).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn three_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, t, r) in [(8, 5, 2), (4, 7, 1), (6, 6, 0)] {
            let z = normal(n, t, &mut rng);
            let eig_form = concentrated_objective(&z, r).unwrap() * (n * t) as f64;
            let fe = factors_of(&z, r);
            let mf = Matrix::identity(t, t) - linalg::projectors(&fe.f).unwrap().p;
            let ml = Matrix::identity(n, n) - linalg::projectors(&fe.lambda).unwrap().p;
            let f_form = (&z * &mf * z.transpose()).trace();
            let l_form = (z.transpose() * &ml * &z).trace();
            assert!((eig_form - f_form).abs() < 1e-9);
            assert!((eig_form - l_form).abs() < 1e-9);
        }
    }

    #[test]
    fn transpose_symmetry() {
        let d = factor_panel(9, 6, &[0.4, -0.2], 2, 0.5, 6);
        let a = profile_objective(&[0.1, 0.3], &d, 2).unwrap();
        let b = profile_objective(&[0.1, 0.3], &d.transposed(), 2).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn factor_normalization_and_identified_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, t) in [(12, 8), (8, 12)] {
            let lam = normal(n, 2, &mut rng);
            let f = normal(t, 2, &mut rng);
            let z = &lam * f.transpose();
            let fe = factors_of(&z, 2);
            let ftf = fe.f.transpose() * &fe.f / t as f64;
            assert!((ftf - Matrix::identity(2, 2)).amax() < 1e-8);
            assert!((&fe.lambda * fe.f.transpose() - &z).norm() < 1e-10);
        }
    }

    #[test]
    fn factors_with_zero_r_are_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = normal(5, 4, &mut rng);
        let (fe, e) = factors_and_residuals(&z, 0);
        assert_eq!(fe.lambda.ncols(), 0);
        assert_eq!(fe.f.ncols(), 0);
        assert_eq!(e, z);
    }

    #[test]
    fn tail_identity_at_eigenvector_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = normal(8, 6, &mut rng);
        let fe = factors_of(&z, 2);
        let mf = Matrix::identity(6, 6) - linalg::projectors(&fe.f).unwrap().p;
        let lhs = (&z * mf * z.transpose()).trace();
        let rhs = linalg::eig_tail_sum(&(z.transpose() * &z), 2).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn rotation_leaves_product_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = normal(8, 6, &mut rng);
        let fe = factors_of(&z, 2);
        let a = Matrix::from_row_slice(2, 2, &[1.3, 0.4, -0.2, 0.9]);
        let ainv = a.clone().try_inverse().unwrap();
        let lam2 = &fe.lambda * a.transpose();
        let f2 = &fe.f * &ainv;
        let p1 = &fe.lambda * fe.f.transpose();
        let p2 = &lam2 * f2.transpose();
        assert!((&p1 - &p2).amax() < 1e-12, "{}", (&p1 - &p2).amax());
        let o1 = (&z - &p1).norm_squared();
        let o2 = (&z - &p2).norm_squared();
        assert!((o1 - o2).abs() < 1e-10 * o1.max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = factor_panel(9, 7, &[0.5, -0.3], 1, 0.5, 11);
        let beta = [0.2, 0.1];
        let g = profile_gradient(&beta, &d, 1).unwrap();
        assert!(!g.degenerate_gap);
        for k in 0..2 {
            let h = 1e-6;
            let mut bp = beta;
            let mut bm = beta;
            bp[k] += h;
            bm[k] -= h;
            let fd = (profile_objective(&bp, &d, 1).unwrap() - profile_objective(&bm, &d, 1).unwrap()) / (2.0 * h);
            assert!((fd - g.grad[k]).abs() < 1e-5 * fd.abs().max(1e-3), "{fd} vs {}", g.grad[k]);
        }
    }

    #[test]
    fn gradient_without_factors_is_ols_gradient() {
        let d = factor_panel(6, 5, &[0.5], 1, 1.0, 12);
        let beta = [0.2];
        let g = profile_gradient(&beta, &d, 0).unwrap();
        let z = d.residual_outcome(&beta);
        let oracle = -2.0 * d.x[0].component_mul(&z).sum() / 30.0;
        assert!((g.grad[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn gram_path_agrees_with_direct_path() {
        let d = factor_panel(7, 11, &[0.5, 0.1], 2, 0.7, 13);
        let mut bases: Vec<&Matrix> = vec![&d.y];
        bases.extend(d.x.iter());
        let blocks = GramBlocks::new(&bases);
        let prob = ProfileProblem::regression(&blocks, 2);
        let beta = [0.3, -0.4];
        let ev = prob.evaluate(&beta);
        let g = profile_gradient(&beta, &d, 2).unwrap();
        assert!((ev.value - profile_objective(&beta, &d, 2).unwrap()).abs() < 1e-12);
        for k in 0..2 {
            assert!((ev.grad[k] - g.grad[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn noise_free_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let lam = normal(40, 1, &mut rng);
        let f = normal(30, 1, &mut rng);
        let x = normal(40, 30, &mut rng);
        let y = &x * 0.5 + &lam * f.transpose();
        let d = PanelDataset::new(y, vec![x]).unwrap();
        let fit = minimize_profile(&d, &spec(1)).unwrap();
        assert!((fit.beta_hat[0] - 0.5).abs() < 1e-6, "{:?}", fit.beta_hat);
        assert!(fit.converged);
    }

    #[test]
    fn fit_invariants() {
        let d = factor_panel(15, 10, &[0.5, -0.2], 2, 0.5, 15);
        let fit = minimize_profile(&d, &spec(2)).unwrap();
        let obj = profile_objective(&fit.beta_hat, &d, 2).unwrap();
        assert!((fit.objective - obj).abs() < 1e-10);
        let ftf = fit.f_hat.transpose() * &fit.f_hat / 10.0;
        assert!((ftf - Matrix::identity(2, 2)).amax() < 1e-8);
        let recon = d.residual_outcome(&fit.beta_hat) - &fit.lambda_hat * fit.f_hat.transpose();
        assert!((recon - &fit.residuals).amax() < 1e-12);
        // Envelope self-consistency at the optimum.
        for (k, xk) in d.x.iter().enumerate() {
            let lhs = xk.dot(&fit.residuals);
            assert!((lhs + 75.0 * fit.gradient[k]).abs() < 1e-9);
            assert!(fit.gradient[k].abs() < 1e-8);
        }
    }

    #[test]
    fn matches_grid_search_and_restarts_agree() {
        let d = factor_panel(6, 6, &[0.3], 1, 0.1, 16);
        let fit = minimize_profile(&d, &spec(1)).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=2000 {
            let b = -1.0 + i as f64 * 1e-3;
            let v = profile_objective(&[b], &d, 1).unwrap();
            if v < best.0 {
                best = (v, b);
            }
        }
        assert!((fit.beta_hat[0] - best.1).abs() <= 1e-3, "{} vs {}", fit.beta_hat[0], best.1);
        assert_eq!(fit.n_restarts_agreeing, 5);
        for s in &fit.starts {
            assert!((s.beta[0] - fit.beta_hat[0]).abs() < 1e-6, "{:?}", fit.starts);
        }
    }

    #[test]
    fn zero_factors_is_pooled_ols() {
        let d = factor_panel(10, 8, &[0.5, 0.2], 1, 1.0, 17);
        let fit = minimize_profile(&d, &spec(0)).unwrap();
        let ols = pooled_ols(&d).unwrap();
        assert_eq!(fit.beta_hat, ols);
        assert_eq!(fit.lambda_hat.ncols(), 0);
    }

    #[test]
    fn too_many_factors_rejected() {
        let d = factor_panel(5, 4, &[0.5], 1, 1.0, 18);
        assert!(matches!(minimize_profile(&d, &spec(4)), Err(Error::Validation(_))));
    }

    #[test]
    fn simplex_method_reaches_same_optimum() {
        let d = factor_panel(12, 10, &[0.5, -0.2], 1, 0.5, 19);
        let a = minimize_profile(&d, &spec(1)).unwrap();
        let mut s = spec(1);
        s.optimizer.method = OptimizerMethod::Simplex;
        let b = minimize_profile(&d, &s).unwrap();
        for k in 0..2 {
            assert!((a.beta_hat[k] - b.beta_hat[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn explicit_box_binds_with_warning() {
        let d = factor_panel(12, 10, &[0.5], 1, 0.5, 20);
        let mut s = spec(1);
        s.parameter_box = ParameterBox::Explicit {
            lower: vec![-1.0],
            upper: vec![0.2],
        };
        let fit = minimize_profile(&d, &s).unwrap();
        assert_eq!(fit.beta_hat[0], 0.2);
        assert!(fit.on_boundary);
        assert!(fit.warnings.iter().any(|w| w.contains("boundary")));
    }

    #[test]
    fn restricted_fully_pinned() {
        let d = factor_panel(8, 7, &[0.5, 0.1], 1, 0.5, 21);
        let rest = RestrictionSpec::new(Matrix::identity(2, 2), vec![0.4, -0.3]).unwrap();
        let fit = restricted_minimize(&d, &spec(1), &rest).unwrap();
        assert_eq!(fit.beta_hat, vec![0.4, -0.3]);
        assert!((fit.objective - profile_objective(&[0.4, -0.3], &d, 1).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn restricted_equal_coefficients_noise_free() {
        let d = factor_panel(20, 15, &[0.7, 0.7], 1, 0.0, 22);
        let rest = RestrictionSpec::new(Matrix::from_row_slice(1, 2, &[1.0, -1.0]), vec![0.0]).unwrap();
        let fit = restricted_minimize(&d, &spec(1), &rest).unwrap();
        assert!((fit.beta_hat[0] - 0.7).abs() < 1e-6 && (fit.beta_hat[1] - 0.7).abs() < 1e-6);
        assert!((fit.beta_hat[0] - fit.beta_hat[1]).abs() < 1e-10);
    }

    #[test]
    fn restricted_matches_grid() {
        let d = factor_panel(8, 7, &[0.2, 0.4], 1, 0.3, 23);
        let rest = RestrictionSpec::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), vec![0.2]).unwrap();
        let fit = restricted_minimize(&d, &spec(1), &rest).unwrap();
        assert!((fit.beta_hat[0] - 0.2).abs() < 1e-10);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=4000 {
            let b = -1.0 + i as f64 * 5e-4;
            let v = profile_objective(&[0.2, b], &d, 1).unwrap();
            if v < best.0 {
                best = (v, b);
            }
        }
        assert!((fit.beta_hat[1] - best.1).abs() <= 5e-4);
        assert!(fit.objective <= best.0 + 1e-12);
    }

    #[test]
    fn inconsistent_restriction_is_infeasible() {
        let d = factor_panel(8, 7, &[0.2, 0.4], 1, 0.3, 24);
        let h = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let rest = RestrictionSpec::new(h, vec![1.0, 3.0]).unwrap();
        assert!(matches!(restricted_minimize(&d, &spec(1), &rest), Err(Error::Infeasible(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn objective_nonincreasing_in_r(seed in 0u64..10_000, n in 3usize..9, t in 3usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = PanelDataset::new(normal(n, t, &mut rng), vec![normal(n, t, &mut rng)]).unwrap();
            let mut prev = f64::INFINITY;
            for r in 0..n.min(t) {
                let v = profile_objective(&[0.25], &d, r).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert!(v < prev);
                prev = v;
            }
        }

        #[test]
        fn transpose_symmetry_holds(seed in 0u64..10_000, n in 3usize..9, t in 3usize..9, b in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = PanelDataset::new(normal(n, t, &mut rng), vec![normal(n, t, &mut rng)]).unwrap();
            let r = (n.min(t) - 1).min(2);
            let a = profile_objective(&[b], &d, r).unwrap();
            let c = profile_objective(&[b], &d.transposed(), r).unwrap();
            prop_assert!((a - c).abs() < 1e-10);
        }
    }
}
