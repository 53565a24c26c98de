//! Cached Gram blocks for fast evaluation of the concentrated least-squares
//! objective.
//!
//! For a residual `Z = sum_a c_a B_a` over fixed base matrices `B_a`, the Gram
//! matrix on the smaller panel dimension is `sum_ab c_a c_b B_a' B_b`, so after
//! a one-off `O(N T min(N, T))` setup each evaluation costs `O(min(N, T)^3)`.

use crate::linalg::{self, Matrix};

/// Pairwise products of the base matrices on the smaller panel dimension.
#[derive(Debug, Clone)]
pub struct GramBlocks {
    n: usize,
    t: usize,
    /// `true` when `N < T` and blocks hold `B_a B_b'` (`N x N`).
    transposed: bool,
    blocks: Vec<Vec<Matrix>>,
}

impl GramBlocks {
    pub fn new(bases: &[&Matrix]) -> Self {
        let (n, t) = bases[0].shape();
        let transposed = n < t;
        let b = bases.len();
        let mut blocks = vec![vec![Matrix::zeros(0, 0); b]; b];
        for i in 0..b {
            for j in i..b {
                let m = if transposed {
                    bases[i] * bases[j].transpose()
                } else {
                    bases[i].transpose() * bases[j]
                };
                if i != j {
                    blocks[j][i] = m.transpose();
                }
                blocks[i][j] = m;
            }
        }
        Self {
            n,
            t,
            transposed,
            blocks,
        }
    }

    pub fn dim(&self) -> usize {
        if self.transposed {
            self.n
        } else {
            self.t
        }
    }

    pub fn num_bases(&self) -> usize {
        self.blocks.len()
    }

    pub fn nt(&self) -> f64 {
        (self.n * self.t) as f64
    }

    /// Gram matrix of `Z = sum_a c_a B_a`, symmetrized.
    pub fn gram(&self, c: &[f64]) -> Matrix {
        let p = self.dim();
        let mut out = Matrix::zeros(p, p);
        for (a, ca) in c.iter().enumerate() {
            if *ca == 0.0 {
                continue;
            }
            linalg::add_scaled(&mut out, ca * ca, &self.blocks[a][a]);
            for (b, cb) in c.iter().enumerate().skip(a + 1) {
                if *cb == 0.0 {
                    continue;
                }
                // B_a'B_b + B_b'B_a
                linalg::add_scaled(&mut out, ca * cb, &self.blocks[a][b]);
                linalg::add_scaled(&mut out, ca * cb, &self.blocks[b][a]);
            }
        }
        (&out + out.transpose()) * 0.5
    }

    /// `B_a' Z` (or `B_a Z'` in the transposed orientation).
    pub fn cross(&self, a: usize, c: &[f64]) -> Matrix {
        let p = self.dim();
        let mut out = Matrix::zeros(p, p);
        for (b, cb) in c.iter().enumerate() {
            if *cb != 0.0 {
                linalg::add_scaled(&mut out, *cb, &self.blocks[a][b]);
            }
        }
        out
    }
}

/// Profile objective over an affine parameterisation `c = offset + map * theta`
/// of the residual coefficients.
#[derive(Debug, Clone)]
pub struct ProfileProblem<'a> {
    blocks: &'a GramBlocks,
    offset: Vec<f64>,
    map: Matrix,
    r: usize,
}

/// Relative eigen-gap below which the envelope gradient is flagged.
pub const GRADIENT_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub degenerate_gap: bool,
}

impl<'a> ProfileProblem<'a> {
    pub fn new(blocks: &'a GramBlocks, offset: Vec<f64>, map: Matrix, r: usize) -> Self {
        assert_eq!(offset.len(), blocks.num_bases());
        assert_eq!(map.nrows(), blocks.num_bases());
        Self {
            blocks,
            offset,
            map,
            r,
        }
    }

    /// Standard regression layout: bases `[Y, X_1..X_K]`, `theta = beta`.
    pub fn regression(blocks: &'a GramBlocks, r: usize) -> Self {
        let b = blocks.num_bases();
        let mut offset = vec![0.0; b];
        offset[0] = 1.0;
        let mut map = Matrix::zeros(b, b - 1);
        for k in 0..b - 1 {
            map[(k + 1, k)] = -1.0;
        }
        Self::new(blocks, offset, map, r)
    }

    pub fn dim(&self) -> usize {
        self.map.ncols()
    }

    pub fn coefficients(&self, theta: &[f64]) -> Vec<f64> {
        let mut c = self.offset.clone();
        for (a, ca) in c.iter_mut().enumerate() {
            for (j, th) in theta.iter().enumerate() {
                *ca += self.map[(a, j)] * th;
            }
        }
        c
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let g = self.blocks.gram(&self.coefficients(theta));
        let p = g.nrows();
        let r = self.r.min(p);
        let eig = linalg::sorted_eigenvalues_unchecked(g);
        (eig[r..].iter().sum::<f64>() / self.blocks.nt()).max(0.0)
    }

    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let c = self.coefficients(theta);
        let g = self.blocks.gram(&c);
        let p = g.nrows();
        let r = self.r.min(p);
        let eig = linalg::sorted_eigen_unchecked(g);
        let value = (eig.values.iter().skip(r).sum::<f64>() / self.blocks.nt()).max(0.0);
        let degenerate_gap = linalg::gap_is_degenerate(eig.values.as_slice(), r, GRADIENT_GAP_TOL);
        let v = eig.vectors.columns(0, r);
        let nt = self.blocks.nt();
        let mut dc = vec![0.0; c.len()];
        for (a, d) in dc.iter_mut().enumerate() {
            if self.map.row(a).iter().all(|&m| m == 0.0) {
                continue;
            }
            let cross = self.blocks.cross(a, &c);
            let proj = if r > 0 {
                (v.transpose() * &cross * v).trace()
            } else {
                0.0
            };
            *d = 2.0 * (cross.trace() - proj) / nt;
        }
        let grad = (0..self.dim())
            .map(|j| (0..c.len()).map(|a| self.map[(a, j)] * dc[a]).sum())
            .collect();
        Evaluation {
            value,
            grad,
            degenerate_gap,
        }
    }
}
