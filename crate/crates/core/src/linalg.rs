//! Dense linear algebra shared by the estimation code: sorted symmetric
//! eigen-decompositions, tail eigenvalue sums, projectors onto column spans
//! and the truncation kernel used by the serial-correlation bias estimate.
//!
//! Symmetric inputs are checked against a tolerance of `1e-8` (relative to
//! the largest entry) and symmetrized as `(S + S')/2` before decomposition,
//! since Gram matrices pick up rounding asymmetry.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetry tolerance, relative to `max(1, max |s_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Eigen-gap (relative to the largest eigenvalue) below which the invariant
/// subspace returned by [`top_eigvecs`] is flagged as not unique.
pub const EIGVEC_GAP_TOL: f64 = 1e-12;

/// Condition number above which symmetric inversion refuses to proceed.
pub const MAX_CONDITION: f64 = 1e12;

pub fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} contains non-finite entries")))
    }
}

fn check_symmetric(s: &Matrix) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::Dimension {
            what: "symmetric matrix".into(),
            expected: "square".into(),
            got: format!("{}x{}", s.nrows(), s.ncols()),
        });
    }
    check_finite(s, "symmetric matrix")?;
    let scale = s.amax().max(1.0);
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Validation(format!(
                    "matrix is not symmetric: |s[{i},{j}] - s[{j},{i}]| = {:.3e}",
                    (s[(i, j)] - s[(j, i)]).abs()
                )));
            }
        }
    }
    Ok((s + s.transpose()) * 0.5)
}

/// Eigenvalues sorted in descending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vector,
    pub vectors: Matrix,
}

/// Full eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen(s: &Matrix) -> Result<SortedEigen> {
    let s = check_symmetric(s)?;
    Ok(sorted_eigen_unchecked(s))
}

pub(crate) fn sorted_eigen_unchecked(s: Matrix) -> SortedEigen {
    let n = s.nrows();
    if n == 0 {
        return SortedEigen {
            values: Vector::zeros(0),
            vectors: Matrix::zeros(0, 0),
        };
    }
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SortedEigen { values, vectors }
}

/// Eigenvalues only, descending.
pub(crate) fn sorted_eigenvalues_unchecked(s: Matrix) -> Vec<f64> {
    if s.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Sum of all but the `r` largest eigenvalues of the symmetric matrix `s`.
pub fn eig_tail_sum(s: &Matrix, r: usize) -> Result<f64> {
    let p = s.nrows();
    if r > p {
        return Err(Error::Validation(format!(
            "tail index r = {r} exceeds matrix dimension {p}"
        )));
    }
    let s = check_symmetric(s)?;
    let values = sorted_eigenvalues_unchecked(s);
    Ok(values[r..].iter().sum())
}

/// Leading eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct TopEigvecs {
    /// `p x r`, orthonormal columns.
    pub vectors: Matrix,
    /// All eigenvalues, descending.
    pub values: Vector,
    /// Set when `mu_r - mu_{r+1}` is too small for the subspace to be unique.
    pub degenerate_gap: bool,
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn normalize_signs(m: &mut Matrix) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// True when the gap between the `r`-th and `(r+1)`-th eigenvalue is below
/// `rel_tol * max(|mu_1|, tiny)`.
pub fn gap_is_degenerate(values: &[f64], r: usize, rel_tol: f64) -> bool {
    if r == 0 || r >= values.len() {
        return false;
    }
    let scale = values[0].abs().max(f64::MIN_POSITIVE);
    values[r - 1] - values[r] < rel_tol * scale
}

pub fn top_eigvecs(s: &Matrix, r: usize) -> Result<TopEigvecs> {
    let p = s.nrows();
    if r > p {
        return Err(Error::Validation(format!(
            "requested {r} eigenvectors of a {p}x{p} matrix"
        )));
    }
    let eig = sym_eigen(s)?;
    Ok(top_from_sorted(eig, r, EIGVEC_GAP_TOL))
}

pub(crate) fn top_from_sorted(eig: SortedEigen, r: usize, rel_tol: f64) -> TopEigvecs {
    let degenerate_gap = gap_is_degenerate(eig.values.as_slice(), r, rel_tol);
    let mut vectors = eig.vectors.columns(0, r).into_owned();
    normalize_signs(&mut vectors);
    TopEigvecs {
        vectors,
        values: eig.values,
        degenerate_gap,
    }
}

/// Orthonormal basis for the column span of `a`, using the Moore-Penrose
/// convention: directions with negligible singular value are dropped.
pub fn orthonormal_basis(a: &Matrix) -> Matrix {
    let (n, r) = a.shape();
    if r == 0 || n == 0 {
        return Matrix::zeros(n, 0);
    }
    let gram = a.transpose() * a;
    let eig = sorted_eigen_unchecked((&gram + gram.transpose()) * 0.5);
    let top = eig.values[0];
    let tol = (n.max(r) as f64) * f64::EPSILON * top;
    let keep: Vec<usize> = (0..r)
        .filter(|&j| eig.values[j] > tol && eig.values[j] > 0.0)
        .collect();
    let mut q = Matrix::zeros(n, keep.len());
    for (c, &j) in keep.iter().enumerate() {
        let v = eig.vectors.column(j);
        let col = a * v / eig.values[j].sqrt();
        q.set_column(c, &col);
    }
    // One Gram-Schmidt pass cleans up rounding in the normalisation.
    reorthonormalize(&mut q);
    q
}

fn reorthonormalize(q: &mut Matrix) {
    let k = q.ncols();
    for j in 0..k {
        for i in 0..j {
            let d = q.column(i).dot(&q.column(j));
            let ci = q.column(i).into_owned();
            let mut cj = q.column_mut(j);
            cj.axpy(-d, &ci, 1.0);
        }
        let norm = q.column(j).norm();
        if norm > 0.0 {
            q.column_mut(j).scale_mut(1.0 / norm);
        }
    }
}

/// Complementary orthogonal projectors `P_A` and `M_A = I - P_A`.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    pub p: Matrix,
    pub m: Matrix,
}

pub fn projectors(a: &Matrix) -> Result<ProjectorPair> {
    check_finite(a, "projector argument")?;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::Validation("projector argument has no rows".into()));
    }
    let q = orthonormal_basis(a);
    let p = &q * q.transpose();
    let m = Matrix::identity(n, n) - &p;
    Ok(ProjectorPair { p, m })
}

/// Annihilator `M_A` applied implicitly through an orthonormal basis of the
/// span of `A`; avoids forming `n x n` projectors.
#[derive(Debug, Clone)]
pub struct SpanProjector {
    basis: Matrix,
}

impl SpanProjector {
    pub fn new(a: &Matrix) -> Self {
        Self {
            basis: orthonormal_basis(a),
        }
    }

    pub fn from_orthonormal(basis: Matrix) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `M_A x` where `x` has `n` rows.
    pub fn annihilate_left(&self, x: &Matrix) -> Matrix {
        if self.basis.ncols() == 0 {
            return x.clone();
        }
        x - &self.basis * (self.basis.transpose() * x)
    }

    /// `x M_A` where `x` has `n` columns.
    pub fn annihilate_right(&self, x: &Matrix) -> Matrix {
        if self.basis.ncols() == 0 {
            return x.clone();
        }
        x - (x * &self.basis) * self.basis.transpose()
    }

    /// Dense `P_A`.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }
}

/// Bandwidth of the truncation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth_m: usize,
}

impl KernelConfig {
    pub fn new(bandwidth_m: usize) -> Result<Self> {
        if bandwidth_m == 0 {
            return Err(Error::Validation("bandwidth M must be at least 1".into()));
        }
        Ok(Self { bandwidth_m })
    }
}

/// Truncation kernel evaluated at `lag / M`: one inside the window, zero outside.
pub fn kernel_weight(lag: i64, cfg: KernelConfig) -> f64 {
    if lag.unsigned_abs() <= cfg.bandwidth_m as u64 {
        1.0
    } else {
        0.0
    }
}

/// Inverse of a symmetric positive (semi)definite matrix with a condition
/// number guard.
pub fn sym_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    let eig = sym_eigen(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let max = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.values.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let min_signed = eig.values[n - 1];
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if max == 0.0 || min_signed <= 0.0 || condition > MAX_CONDITION {
        return Err(Error::Singular {
            what: what.to_string(),
            condition,
        });
    }
    let mut out = Matrix::zeros(n, n);
    for j in 0..n {
        let v = eig.vectors.column(j);
        out += (v * v.transpose()) / eig.values[j];
    }
    Ok(out)
}

/// Singular values, descending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with the usual `max(n, t) * eps * sigma_1` cutoff.
pub fn numeric_rank(m: &Matrix) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    let tol = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * top;
    s.iter().filter(|&&v| v > tol).count()
}

/// `out += a * x`, elementwise.
pub fn add_scaled(out: &mut Matrix, a: f64, x: &Matrix) {
    out.zip_apply(x, |o, v| *o += a * v);
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn projector_of_identity_is_identity() {
        let pr = projectors(&Matrix::identity(3, 3)).unwrap();
        assert!((pr.p - Matrix::identity(3, 3)).amax() < 1e-14);
        assert!(pr.m.amax() < 1e-14);
    }

    #[test]
    fn projector_of_zero_column() {
        let pr = projectors(&Matrix::zeros(3, 1)).unwrap();
        assert_eq!(pr.p.amax(), 0.0);
        assert!((pr.m - Matrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn projector_of_empty_column_set() {
        let pr = projectors(&Matrix::zeros(4, 0)).unwrap();
        assert_eq!(pr.p.amax(), 0.0);
        assert_eq!(pr.m, Matrix::identity(4, 4));
    }

    #[test]
    fn projector_hand_example() {
        // a (a'a)^{-1} a' with a = (1,1,0)': a'a = 2
        let a = Matrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        let mut expected = Matrix::zeros(3, 3);
        for i in 0..2 {
            for j in 0..2 {
                expected[(i, j)] = 0.5;
            }
        }
        let pr = projectors(&a).unwrap();
        assert!((pr.p - expected).amax() < 1e-15);
    }

    #[test]
    fn projector_rejects_nan() {
        let mut a = Matrix::zeros(3, 1);
        a[(1, 0)] = f64::NAN;
        assert!(matches!(projectors(&a), Err(Error::Validation(_))));
    }

    #[test]
    fn projector_rank_deficient_argument() {
        let mut a = random(6, 2, 3);
        let c0 = a.column(0).into_owned();
        a.set_column(1, &(c0 * 2.0));
        let pr = projectors(&a).unwrap();
        let expected = projectors(&a.columns(0, 1).into_owned()).unwrap();
        assert!((pr.p - expected.p).amax() < 1e-12);
    }

    #[test]
    fn tail_sum_diagonal() {
        let s = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 2.0, 1.0]));
        assert!((eig_tail_sum(&s, 1).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(eig_tail_sum(&s, 3).unwrap(), 0.0);
        assert!((eig_tail_sum(&s, 0).unwrap() - 6.0).abs() < 1e-14);
        assert!(eig_tail_sum(&s, 4).is_err());
    }

    #[test]
    fn tail_sum_rejects_asymmetric() {
        let mut s = Matrix::identity(3, 3);
        s[(0, 1)] = 1e-3;
        assert!(eig_tail_sum(&s, 1).is_err());
    }

    #[test]
    fn tail_sum_matches_trace_minus_top() {
        let a = random(5, 5, 11);
        let s = &a + a.transpose();
        let eig = s.clone().symmetric_eigen();
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let oracle = s.trace() - v[0] - v[1];
        assert!((eig_tail_sum(&s, 2).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn top_eigvec_of_diagonal() {
        let s = Matrix::from_diagonal(&Vector::from_vec(vec![5.0, 1.0, 1.0]));
        let top = top_eigvecs(&s, 1).unwrap();
        assert!(!top.degenerate_gap);
        assert!((top.vectors[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(top.vectors[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn top_eigvecs_flags_flat_spectrum() {
        let top = top_eigvecs(&Matrix::identity(3, 3), 2).unwrap();
        assert!(top.degenerate_gap);
        let gram = top.vectors.transpose() * &top.vectors;
        assert!((gram - Matrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn top_eigvecs_projector_trace_identity() {
        let a = random(6, 6, 5);
        let s = &a * a.transpose() + Matrix::identity(6, 6) * 0.1;
        let top = top_eigvecs(&s, 2).unwrap();
        let m = Matrix::identity(6, 6) - &top.vectors * top.vectors.transpose();
        let lhs = eig_tail_sum(&s, 2).unwrap();
        assert!((lhs - (m * &s).trace()).abs() < 1e-10);
    }

    #[test]
    fn sign_rule_makes_largest_entry_positive() {
        let a = random(5, 5, 9);
        let s = &a * a.transpose();
        let top = top_eigvecs(&s, 3).unwrap();
        for col in top.vectors.column_iter() {
            let idx = col.iamax();
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn kernel_window() {
        let cfg = KernelConfig::new(3).unwrap();
        assert_eq!(kernel_weight(0, cfg), 1.0);
        assert_eq!(kernel_weight(3, cfg), 1.0);
        assert_eq!(kernel_weight(-3, cfg), 1.0);
        assert_eq!(kernel_weight(4, cfg), 0.0);
        assert!(KernelConfig::new(0).is_err());
    }

    #[test]
    fn sym_inverse_guards_condition() {
        let s = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-14]));
        assert!(matches!(sym_inverse(&s, "W"), Err(Error::Singular { .. })));
        let s = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
        let inv = sym_inverse(&s, "W").unwrap();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15 && (inv[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn numeric_rank_of_outer_product() {
        let w = random(7, 1, 1);
        let v = random(5, 1, 2);
        assert_eq!(numeric_rank(&(&w * v.transpose())), 1);
        assert_eq!(numeric_rank(&random(7, 5, 3)), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projectors_are_idempotent_symmetric_complementary(
                n in 1usize..7, r in 0usize..4, seed in any::<u64>()
            ) {
                let a = random(n, r, seed);
                let pr = projectors(&a).unwrap();
                let id = Matrix::identity(n, n);
                prop_assert!((&pr.p + &pr.m - &id).amax() < 1e-12);
                prop_assert!((&pr.p * &pr.p - &pr.p).norm() <= 1e-10 * pr.p.norm().max(1.0));
                prop_assert!((&pr.m * &pr.m - &pr.m).norm() <= 1e-10 * pr.m.norm().max(1.0));
                prop_assert!((&pr.p - pr.p.transpose()).amax() < 1e-10);
            }

            #[test]
            fn tail_from_zero_is_trace(n in 1usize..8, seed in any::<u64>()) {
                let a = random(n, n, seed);
                let s = &a * a.transpose();
                prop_assert!((eig_tail_sum(&s, 0).unwrap() - s.trace()).abs() < 1e-10);
            }
        }
    }
}
