//! Local minimizers: box-projected BFGS on an exact gradient and a bounded
//! Nelder-Mead simplex for the derivative-free fallback.

#![allow(clippy::needless_range_loop)]

use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub struct LocalOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    /// Infinity norm of the projected gradient at `x` (NaN for simplex runs).
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub degenerate_gap: bool,
}

/// Box bounds; infinite entries mean unbounded.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(k: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; k],
            upper: vec![f64::INFINITY; k],
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| v.is_infinite()) && self.upper.iter().all(|v| v.is_infinite())
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Indices where `x` sits on a bound.
    pub fn active(&self, x: &[f64]) -> Vec<bool> {
        (0..x.len())
            .map(|i| x[i] <= self.lower[i] || x[i] >= self.upper[i])
            .collect()
    }

    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                if (x[i] <= self.lower[i] && g[i] > 0.0) || (x[i] >= self.upper[i] && g[i] < 0.0) {
                    0.0
                } else {
                    g[i]
                }
            })
            .collect()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking; trial points are projected onto the box.
///
/// `f` returns `(value, gradient, degenerate_flag)`.
pub fn bfgs<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &LocalOptions) -> LocalOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>, bool),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let (mut fx, mut g, mut degenerate) = f(&x);
    let mut evals = 1;
    let mut h = vec![vec![0.0; n]; n];
    let reset = |h: &mut Vec<Vec<f64>>, scale: f64| {
        for i in 0..n {
            for j in 0..n {
                h[i][j] = if i == j { scale } else { 0.0 };
            }
        }
    };
    let g0 = inf_norm(&g);
    reset(&mut h, if g0 > 1.0 { 1.0 / g0 } else { 1.0 });
    let mut iterations = 0;
    let mut pg = bounds.projected_gradient(&x, &g);

    while iterations < opts.max_iter {
        if !fx.is_finite() {
            break;
        }
        if inf_norm(&pg) < opts.grad_tol {
            break;
        }
        iterations += 1;
        let active = bounds.active(&x);
        // Direction -H g restricted to the free variables.
        let mut d = vec![0.0; n];
        for i in 0..n {
            if active[i] && pg[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if active[j] && pg[j] == 0.0 {
                    continue;
                }
                d[i] -= h[i][j] * g[j];
            }
        }
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            // Not a descent direction: fall back to steepest descent.
            reset(&mut h, 1.0 / inf_norm(&g).max(1.0));
            d = pg.iter().map(|v| -v * h[0][0]).collect();
            slope = dot(&d, &g);
            if slope >= 0.0 {
                break;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-20 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            bounds.clamp(&mut xn);
            let (fn_, gn, dn) = f(&xn);
            evals += 1;
            let actual: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &actual);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * decrease {
                accepted = Some((xn, fn_, gn, dn, actual));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn, dn, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_small = inf_norm(&s) <= opts.step_tol * (1.0 + inf_norm(&x));
        let sy = dot(&s, &y);
        if sy > 1e-300 && sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if iterations == 1 {
                reset(&mut h, sy / dot(&y, &y));
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let fdrop = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        degenerate = dn;
        pg = bounds.projected_gradient(&x, &g);
        if step_small || fdrop <= 0.0 {
            break;
        }
    }
    let grad_norm = inf_norm(&pg);
    LocalOutcome {
        x,
        value: fx,
        grad_norm,
        iterations,
        evaluations: evals,
        converged: grad_norm < opts.grad_tol,
        degenerate_gap: degenerate,
    }
}

/// Nelder-Mead simplex with clamping to the box.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], init_step: &[f64], bounds: &Bounds, opts: &LocalOptions) -> LocalOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut evals = 0;
    let mut eval = |x: &mut Vec<f64>, evals: &mut usize| -> f64 {
        bounds.clamp(x);
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut p0 = x0.to_vec();
    let v0 = eval(&mut p0, &mut evals);
    simplex.push((p0, v0));
    for i in 0..n {
        let mut p = x0.to_vec();
        let h = if init_step[i] != 0.0 { init_step[i] } else { 0.05 };
        p[i] += h;
        if p[i] > bounds.upper[i] {
            p[i] = x0[i] - h;
        }
        let v = eval(&mut p, &mut evals);
        simplex.push((p, v));
    }
    let max_evals = opts.max_iter * 20 * (n + 1);
    let mut iterations = 0;
    while evals < max_evals {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let scale = 1.0 + inf_norm(&simplex[0].0);
        if (worst - best).abs() <= 1e-15 * (1.0 + best.abs()) && diameter <= opts.step_tol.max(1e-12) * scale
            || diameter <= 1e-14 * scale
        {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (p, _) in simplex.iter().take(n) {
            for i in 0..n {
                centroid[i] += p[i] / n as f64;
            }
        }
        let towards = |c: &[f64], p: &[f64], t: f64| -> Vec<f64> {
            c.iter().zip(p).map(|(ci, pi)| ci + t * (pi - ci)).collect()
        };
        let mut xr = towards(&centroid, &simplex[n].0, -alpha);
        let fr = eval(&mut xr, &mut evals);
        if fr < simplex[0].1 {
            let mut xe = towards(&centroid, &simplex[n].0, -alpha * gamma);
            let fe = eval(&mut xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (mut xc, fc) = if fr < simplex[n].1 {
                let mut xc = towards(&centroid, &xr, rho);
                let fc = eval(&mut xc, &mut evals);
                (xc, fc)
            } else {
                let mut xc = towards(&centroid, &simplex[n].0, rho);
                let fc = eval(&mut xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (std::mem::take(&mut xc), fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let mut p = towards(&best, &s.0, sigma);
                    let v = eval(&mut p, &mut evals);
                    *s = (p, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    LocalOutcome {
        x,
        value,
        grad_norm: f64::NAN,
        iterations,
        evaluations: evals,
        converged: evals < max_evals,
        degenerate_gap: false,
    }
}
