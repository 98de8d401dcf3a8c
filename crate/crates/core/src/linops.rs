//! Vectors, symmetric linear operators, weighted norms and a plain conjugate
//! gradient solver.
//!
//! The optimization space is `R^k` with the Euclidean inner product. Every
//! operator here is symmetric; sparse storage keeps the diagonal plus the
//! strictly lower triangle.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;

/// Symmetric sparse matrix stored as its diagonal plus the strictly lower
/// triangle in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCsr {
    n: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymmetricCsr {
    /// Builds from `(row, col, value)` triplets. An off-diagonal entry may be
    /// given in either triangle; duplicates (including mirrored ones) are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut diag = vec![0.0; n];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: i.max(j) + 1,
                });
            }
            if i == j {
                diag[i] += v;
            } else {
                let (r, c) = if i > j { (i, j) } else { (j, i) };
                rows[r].push((c, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            diag,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Converts a dense symmetric matrix, dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        check_dim(m.nrows(), m.ncols())?;
        let n = m.nrows();
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::NotSymmetric(format!("entry ({i}, {j}): {a} vs {b}")));
                }
                if a != 0.0 {
                    trip.push((i, j, a));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Strictly lower entries of row `i` as `(col, value)` pairs, columns ascending.
    pub fn lower_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn nnz_lower(&self) -> usize {
        self.cols.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.diag[i] * x[i];
        }
        for i in 0..self.n {
            let xi = x[i];
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (j, v) = (self.cols[k], self.vals[k]);
                acc += v * x[j];
                y[j] += v * xi;
            }
            y[i] += acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag));
        for i in 0..self.n {
            for (j, v) in self.lower_row(i) {
                m[(i, j)] += v;
                m[(j, i)] += v;
            }
        }
        m
    }

    /// Returns a copy with `shift` added to every diagonal entry.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        out.diag.iter_mut().for_each(|d| *d += shift);
        out
    }
}

/// A symmetric linear operator on `R^k`.
#[derive(Debug, Clone)]
pub enum LinearOperator {
    Identity(usize),
    Zero(usize),
    Dense(DMatrix<f64>),
    Diagonal(Vector),
    Sparse(SymmetricCsr),
    /// `BᵀB` for a rectangular `B`, applied as two products.
    Gram(Arc<DMatrix<f64>>),
    Scaled(f64, Box<LinearOperator>),
    Sum(Box<LinearOperator>, Box<LinearOperator>),
}

impl LinearOperator {
    pub fn dim(&self) -> usize {
        match self {
            Self::Identity(n) | Self::Zero(n) => *n,
            Self::Dense(m) => m.nrows(),
            Self::Diagonal(d) => d.len(),
            Self::Sparse(s) => s.dim(),
            Self::Gram(b) => b.ncols(),
            Self::Scaled(_, op) => op.dim(),
            Self::Sum(a, _) => a.dim(),
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self::Scaled(c, Box::new(self))
    }

    pub fn plus(self, other: LinearOperator) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self::Sum(Box::new(self), Box::new(other)))
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &Vector) -> Vector {
        match self {
            Self::Identity(_) => x.clone(),
            Self::Zero(n) => Vector::zeros(*n),
            Self::Dense(m) => m * x,
            Self::Diagonal(d) => d.component_mul(x),
            Self::Sparse(s) => {
                let mut y = Vector::zeros(s.dim());
                s.apply_into(x.as_slice(), y.as_mut_slice());
                y
            }
            Self::Gram(b) => b.tr_mul(&(b.as_ref() * x)),
            Self::Scaled(c, op) => op.apply_unchecked(x) * *c,
            Self::Sum(a, b) => a.apply_unchecked(x) + b.apply_unchecked(x),
        }
    }

    pub fn diagonal(&self) -> Vector {
        match self {
            Self::Identity(n) => Vector::from_element(*n, 1.0),
            Self::Zero(n) => Vector::zeros(*n),
            Self::Dense(m) => m.diagonal(),
            Self::Diagonal(d) => d.clone(),
            Self::Sparse(s) => Vector::from_column_slice(s.diag()),
            Self::Gram(b) => Vector::from_iterator(b.ncols(), b.column_iter().map(|c| c.norm_squared())),
            Self::Scaled(c, op) => op.diagonal() * *c,
            Self::Sum(a, b) => a.diagonal() + b.diagonal(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Identity(n) => DMatrix::identity(*n, *n),
            Self::Zero(n) => DMatrix::zeros(*n, *n),
            Self::Dense(m) => m.clone(),
            Self::Diagonal(d) => DMatrix::from_diagonal(d),
            Self::Sparse(s) => s.to_dense(),
            Self::Gram(b) => b.tr_mul(b.as_ref()),
            Self::Scaled(c, op) => op.to_dense() * *c,
            Self::Sum(a, b) => a.to_dense() + b.to_dense(),
        }
    }

    /// Sparse symmetric form of the operator. Sparse and diagonal variants
    /// convert structurally; everything else goes through a dense matrix.
    pub fn to_sparse(&self) -> Result<SymmetricCsr> {
        match self {
            Self::Sparse(s) => Ok(s.clone()),
            Self::Diagonal(d) => SymmetricCsr::from_triplets(d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v))),
            Self::Identity(n) => SymmetricCsr::from_triplets(*n, (0..*n).map(|i| (i, i, 1.0))),
            Self::Sum(a, b) => match (a.as_ref(), b.as_ref()) {
                (Self::Sparse(_) | Self::Diagonal(_) | Self::Identity(_) | Self::Scaled(..), _)
                    if a.is_structurally_sparse() && b.is_structurally_sparse() =>
                {
                    let sa = a.to_sparse()?;
                    let sb = b.to_sparse()?;
                    sparse_sum(&sa, &sb)
                }
                _ => SymmetricCsr::from_dense(&self.to_dense()),
            },
            Self::Scaled(c, op) if op.is_structurally_sparse() => {
                let mut s = op.to_sparse()?;
                s.diag.iter_mut().for_each(|v| *v *= c);
                s.vals.iter_mut().for_each(|v| *v *= c);
                Ok(s)
            }
            _ => SymmetricCsr::from_dense(&self.to_dense()),
        }
    }

    fn is_structurally_sparse(&self) -> bool {
        match self {
            Self::Sparse(_) | Self::Diagonal(_) | Self::Identity(_) | Self::Zero(_) => true,
            Self::Scaled(_, op) => op.is_structurally_sparse(),
            Self::Sum(a, b) => a.is_structurally_sparse() && b.is_structurally_sparse(),
            Self::Dense(_) | Self::Gram(_) => false,
        }
    }

    /// `⟨Ax, x⟩`.
    pub fn quad_form(&self, x: &Vector) -> Result<f64> {
        Ok(self.apply(x)?.dot(x))
    }
}

fn sparse_sum(a: &SymmetricCsr, b: &SymmetricCsr) -> Result<SymmetricCsr> {
    check_dim(a.dim(), b.dim())?;
    let n = a.dim();
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * n + a.nnz_lower() + b.nnz_lower());
    for s in [a, b] {
        trip.extend(s.diag().iter().enumerate().map(|(i, &v)| (i, i, v)));
        for i in 0..n {
            trip.extend(s.lower_row(i).map(|(j, v)| (i, j, v)));
        }
    }
    SymmetricCsr::from_triplets(n, trip)
}

/// `‖x‖²_M = ⟨Mx, x⟩`.
pub fn m_norm_sq(m: &LinearOperator, x: &Vector) -> Result<f64> {
    m.quad_form(x)
}

/// Result of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vector,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

impl CgOutcome {
    pub fn into_result(self) -> Result<Vector> {
        if self.converged {
            Ok(self.x)
        } else {
            Err(Error::CgNotConverged {
                iterations: self.iterations,
                residual: self.residual_norm,
            })
        }
    }
}

/// Solves `Tx = b` for symmetric positive definite `T`, stopping once
/// `‖Tx − b‖ ≤ tol · max(1, ‖b‖)`.
pub fn cg_solve(t: &LinearOperator, b: &Vector, x0: &Vector, tol: f64, maxit: usize) -> Result<CgOutcome> {
    check_dim(t.dim(), b.len())?;
    check_dim(t.dim(), x0.len())?;
    Ok(cg_with(|v| t.apply_unchecked(v), b, x0, tol, maxit))
}

/// Conjugate gradient against an arbitrary SPD action.
pub(crate) fn cg_with(apply: impl Fn(&Vector) -> Vector, b: &Vector, x0: &Vector, tol: f64, maxit: usize) -> CgOutcome {
    let target = tol * b.norm().max(1.0);
    let mut x = x0.clone();
    let mut r = b - apply(&x);
    let mut rr = r.norm_squared();
    if rr.sqrt() <= target {
        return CgOutcome {
            x,
            iterations: 0,
            residual_norm: rr.sqrt(),
            converged: true,
        };
    }
    let mut p = r.clone();
    for it in 1..=maxit {
        let tp = apply(&p);
        let ptp = p.dot(&tp);
        if ptp <= 0.0 || !ptp.is_finite() {
            return CgOutcome {
                x,
                iterations: it,
                residual_norm: rr.sqrt(),
                converged: false,
            };
        }
        let step = rr / ptp;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &tp, 1.0);
        let rr_new = r.norm_squared();
        if rr_new.sqrt() <= target {
            // Report the true residual rather than the recursively updated one.
            let true_res = (b - apply(&x)).norm();
            return CgOutcome {
                x,
                iterations: it,
                residual_norm: true_res,
                converged: true_res <= target * 10.0,
            };
        }
        p *= rr_new / rr;
        p += &r;
        rr = rr_new;
    }
    CgOutcome {
        x,
        iterations: maxit,
        residual_norm: rr.sqrt(),
        converged: false,
    }
}

/// Graph Laplacian `L_w = D_w − W` of a dense symmetric, nonnegative weight
/// matrix with zero diagonal.
pub fn graph_laplacian(w: &DMatrix<f64>) -> Result<LinearOperator> {
    check_dim(w.nrows(), w.ncols())?;
    let n = w.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        if w[(i, i)] != 0.0 {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("nonzero diagonal entry at {i}"),
            });
        }
        for j in 0..i {
            let (a, b) = (w[(i, j)], w[(j, i)]);
            if a != b {
                return Err(Error::NotSymmetric(format!(
                    "weight ({i}, {j}) = {a} but ({j}, {i}) = {b}"
                )));
            }
            if a < 0.0 {
                return Err(Error::NegativeWeight {
                    row: i,
                    col: j,
                    value: a,
                });
            }
            if a > 0.0 {
                edges.push((i, j, a));
            }
        }
    }
    laplacian_from_edges(n, &edges)
}

/// Graph Laplacian from an undirected edge list `(i, j, w_ij)`, each edge listed once.
pub fn laplacian_from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<LinearOperator> {
    let mut trip = Vec::with_capacity(3 * edges.len());
    for &(i, j, w) in edges {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::NegativeWeight {
                row: i,
                col: j,
                value: w,
            });
        }
        if i == j {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("self-loop at {i}"),
            });
        }
        trip.push((i, i, w));
        trip.push((j, j, w));
        trip.push((i, j, -w));
    }
    Ok(LinearOperator::Sparse(SymmetricCsr::from_triplets(n, trip)?))
}
