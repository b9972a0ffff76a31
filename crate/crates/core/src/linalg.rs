//! Dense linear-algebra helpers: thin SVD, numerical rank, pseudoinverse,
//! least squares, row-space projectors and equality-constraint null spaces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used by the pseudoinverse and everything built on it.
pub const PINV_RTOL: f64 = 1e-10;

/// Default relative tolerance for noise-free rank checks.
pub const RANK_RTOL: f64 = 1e-8;

/// Thin singular value decomposition `M = U diag(s) Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            let k = rows.min(cols);
            return ThinSvd {
                u: DMatrix::zeros(rows, k),
                singular_values: DVector::zeros(k),
                v_t: DMatrix::zeros(k, cols),
            };
        }
        if cols >= 2 * rows {
            let t = ThinSvd::new(&m.transpose());
            return ThinSvd {
                u: t.v_t.transpose(),
                singular_values: t.singular_values,
                v_t: t.u.transpose(),
            };
        }
        if rows >= 2 * cols {
            // QR first so the bidiagonalization runs on a small square factor.
            let qr = m.clone().qr();
            let svd = qr.r().svd(true, true);
            let u = qr.q() * svd.u.expect("u requested");
            return ThinSvd {
                u,
                singular_values: svd.singular_values,
                v_t: svd.v_t.expect("v_t requested"),
            };
        }
        let svd = m.clone().svd(true, true);
        ThinSvd {
            u: svd.u.expect("u requested"),
            singular_values: svd.singular_values,
            v_t: svd.v_t.expect("v_t requested"),
        }
    }

    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values strictly above `rtol * σ_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let smax = self.max_singular_value();
        if smax == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rtol * smax)
            .count()
    }

    pub fn pinv(&self, rtol: f64) -> DMatrix<f64> {
        let r = self.rank(rtol);
        let (rows, cols) = (self.u.nrows(), self.v_t.ncols());
        if r == 0 {
            return DMatrix::zeros(cols, rows);
        }
        let mut v_scaled = self.v_t.rows(0, r).transpose();
        for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
            col /= self.singular_values[j];
        }
        v_scaled * self.u.columns(0, r).transpose()
    }
}

/// Count of singular values strictly greater than `tol · σ_max`; zero matrix has rank 0.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    ThinSvd::new(m).rank(tol)
}

/// Moore-Penrose pseudoinverse with singular values below `PINV_RTOL · σ_max` dropped.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    ThinSvd::new(m).pinv(PINV_RTOL)
}

/// Minimum-norm minimizer of `‖A X − B‖_F`, i.e. `X = A† B`.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "least squares: A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let svd = ThinSvd::new(a);
    let r = svd.rank(PINV_RTOL);
    if r == 0 {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    let mut ut_b = svd.u.columns(0, r).transpose() * b;
    for (i, mut row) in ut_b.row_iter_mut().enumerate() {
        row /= svd.singular_values[i];
    }
    Ok(svd.v_t.rows(0, r).transpose() * ut_b)
}

/// Orthonormal basis of the row space of `M`.
#[derive(Debug, Clone)]
pub struct RowSpace {
    basis: DMatrix<f64>,
}

impl RowSpace {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let svd = ThinSvd::new(m);
        let r = svd.rank(PINV_RTOL);
        RowSpace {
            basis: svd.v_t.rows(0, r).transpose(),
        }
    }

    /// `ambient × rank` matrix with orthonormal columns.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `Π = M† M`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// `I − Π`, the orthogonal projector onto `ker M`.
    pub fn complement_projector(&self) -> DMatrix<f64> {
        let n = self.ambient_dim();
        DMatrix::identity(n, n) - self.projector()
    }

    /// Orthonormal basis of `ker M`.
    pub fn kernel_basis(&self) -> DMatrix<f64> {
        orthonormal_complement(&self.basis)
    }
}

/// Returns `(Π, I − Π)` for the row space of `M`.
pub fn row_space_projector(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let rs = RowSpace::new(m);
    (rs.projector(), rs.complement_projector())
}

/// Completes the orthonormal columns of `y` (n × r) to a basis of Rⁿ and returns
/// the n × (n − r) complement, via a full Householder QR.
pub fn orthonormal_complement(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = y.shape();
    if r == 0 {
        return DMatrix::identity(n, n);
    }
    if r >= n {
        return DMatrix::zeros(n, 0);
    }
    let qr = y.clone().qr();
    let mut q_t = DMatrix::<f64>::identity(n, n);
    qr.q_tr_mul(&mut q_t);
    q_t.rows(r, n - r).transpose()
}

/// Parametrization `{x : A x = b} = {x₀ + Z v}` with `x₀ ⟂ ker A` and `Z` orthonormal.
#[derive(Debug, Clone)]
pub struct AffineSubspace {
    pub particular: DVector<f64>,
    pub null_basis: DMatrix<f64>,
    /// Orthonormal basis of the row space of `A` (n × rank).
    pub row_basis: DMatrix<f64>,
    pub rank: usize,
    pub residual: f64,
    /// `U_r Σ_r⁻¹` from `A = U_r Σ_r V_rᵀ`, used to recover multipliers.
    left_scaled: DMatrix<f64>,
}

impl AffineSubspace {
    /// Redundant rows of `A` are discarded through the rank-revealing SVD; the
    /// null-space basis comes from a Householder QR of the retained row basis.
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>, feas_tol: f64) -> Result<Self> {
        let n = a.ncols();
        if a.nrows() != b.len() {
            return Err(Error::dim(format!(
                "constraints: A has {} rows, b has {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.nrows() == 0 {
            return Ok(AffineSubspace {
                particular: DVector::zeros(n),
                null_basis: DMatrix::identity(n, n),
                row_basis: DMatrix::zeros(n, 0),
                rank: 0,
                residual: 0.0,
                left_scaled: DMatrix::zeros(0, 0),
            });
        }
        let svd = ThinSvd::new(a);
        let r = svd.rank(PINV_RTOL);
        let row_basis = svd.v_t.rows(0, r).transpose();
        let mut coeff = svd.u.columns(0, r).transpose() * b;
        for i in 0..r {
            coeff[i] /= svd.singular_values[i];
        }
        let particular = &row_basis * coeff;
        let residual = (a * &particular - b).norm();
        if residual > feas_tol * (1.0 + b.norm()) {
            return Err(Error::Infeasible { residual });
        }
        let null_basis = orthonormal_complement(&row_basis);
        let mut left_scaled = svd.u.columns(0, r).into_owned();
        for (j, mut col) in left_scaled.column_iter_mut().enumerate() {
            col /= svd.singular_values[j];
        }
        Ok(AffineSubspace {
            particular,
            null_basis,
            row_basis,
            rank: r,
            residual,
            left_scaled,
        })
    }

    /// Minimum-norm `ν` minimizing `‖Aᵀν − r‖`.
    pub fn multipliers_for(&self, r: &DVector<f64>) -> DVector<f64> {
        if self.rank == 0 {
            return DVector::zeros(self.left_scaled.nrows());
        }
        &self.left_scaled * (self.row_basis.transpose() * r)
    }
}

/// Row-major (de)serialization of dense matrices as nested arrays.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(serde::de::Error::custom)
    }
}
