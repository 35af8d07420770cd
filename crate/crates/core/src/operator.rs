//! Dense operator algebra on finite-dimensional Hilbert spaces.
//!
//! Superoperators use the column-stacking convention: an operator `X` is
//! flattened to `vec(X)` by stacking its columns, so that
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`. This matches nalgebra's column-major
//! storage, which makes `vec` a plain copy of the backing slice.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Default tolerance for Hermiticity, unitarity and positivity predicates.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// A square complex matrix acting on a `dim`-dimensional Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare { rows: matrix.nrows(), cols: matrix.ncols() });
        }
        if matrix.is_empty() {
            return Err(Error::InvalidInput("operator dimension must be positive".into()));
        }
        Ok(Self(matrix))
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        debug_assert!(matrix.is_square());
        Self(matrix)
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| Complex64::new(x, 0.0)));
        Self(CMatrix::from_diagonal(&d))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self(CMatrix::from_fn(dim, dim, f))
    }

    /// Projector `|ψ⟩⟨ψ|` (not normalized).
    pub fn projector(psi: &DVector<Complex64>) -> Self {
        Self(psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self(&self.0 * c)
    }

    pub fn mul(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Operator) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Operator) -> Self {
        Self(&self.0 - &other.0)
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        max_abs(&self.0)
    }

    /// Spectral norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        self.0.clone().singular_values().max()
    }

    pub fn hermitian_residual(&self) -> f64 {
        max_abs(&(&self.0 - self.0.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_residual() <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(&self.0)).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.hermitian_eigenvalues()[0]
    }

    /// Hermitian within `tol` and no eigenvalue below `-tol`.
    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        self.is_hermitian(tol) && self.min_eigenvalue() >= -tol
    }

    /// `‖X†X − I‖_max`.
    pub fn unitarity_residual(&self) -> f64 {
        let n = self.dim();
        max_abs(&(self.0.adjoint() * &self.0 - CMatrix::identity(n, n)))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_residual() <= tol
    }
}

/// Factor dimensions of a bipartite system ⊗ environment space, system first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompositeSpace {
    pub dim_sys: usize,
    pub dim_env: usize,
}

impl CompositeSpace {
    pub fn new(dim_sys: usize, dim_env: usize) -> Result<Self> {
        if dim_sys == 0 || dim_env == 0 {
            return Err(Error::InvalidInput("factor dimensions must be positive".into()));
        }
        Ok(Self { dim_sys, dim_env })
    }

    pub fn dim(&self) -> usize {
        self.dim_sys * self.dim_env
    }
}

/// Kronecker product `a ⊗ b`, first factor outermost.
pub fn tensor_product(a: &Operator, b: &Operator) -> Operator {
    Operator(a.0.kronecker(&b.0))
}

/// Reduces an operator on `space` to the system factor by tracing out the environment.
pub fn partial_trace_env(x: &Operator, space: CompositeSpace) -> Result<Operator> {
    if x.dim() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), found: x.dim() });
    }
    let (ds, de) = (space.dim_sys, space.dim_env);
    let m = &x.0;
    Ok(Operator(CMatrix::from_fn(ds, ds, |i, j| {
        (0..de).map(|e| m[(i * de + e, j * de + e)]).sum()
    })))
}

/// Principal square root of a Hermitian PSD operator with the default clipping threshold.
pub fn positive_sqrt(g: &Operator) -> Result<Operator> {
    positive_sqrt_with_tol(g, DEFAULT_TOLERANCE)
}

/// Principal square root; eigenvalues in `[-tol, 0)` are clipped to zero.
pub fn positive_sqrt_with_tol(g: &Operator, tol: f64) -> Result<Operator> {
    let residual = g.hermitian_residual();
    if residual > tol {
        return Err(Error::NotHermitian { residual });
    }
    let eig = SymmetricEigen::new(hermitian_part(&g.0));
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::NotPositive { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    Ok(Operator(v * CMatrix::from_diagonal(&roots) * v.adjoint()))
}

/// Linear map on operators of dimension `dim`, stored as a `dim² × dim²` matrix
/// acting on column-stacked operators.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn new(dim: usize, matrix: CMatrix) -> Result<Self> {
        let n = dim * dim;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        Ok(Self { dim, matrix })
    }

    /// Tabulates a linear map by applying it to the matrix units `|i⟩⟨j|`.
    pub fn from_map(dim: usize, mut f: impl FnMut(&CMatrix) -> CMatrix) -> Self {
        let n = dim * dim;
        let mut matrix = CMatrix::zeros(n, n);
        let mut unit = CMatrix::zeros(dim, dim);
        for col in 0..n {
            unit[col] = ONE;
            let image = f(&unit);
            matrix.column_mut(col).copy_from_slice(image.as_slice());
            unit[col] = ZERO;
        }
        Self { dim, matrix }
    }

    pub fn identity(dim: usize) -> Self {
        let n = dim * dim;
        Self { dim, matrix: CMatrix::identity(n, n) }
    }

    /// `X ↦ A X B`.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        Self { dim: a.nrows(), matrix: b.transpose().kronecker(a) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &Operator) -> Operator {
        Operator(self.apply_matrix(&x.0))
    }

    pub fn apply_matrix(&self, x: &CMatrix) -> CMatrix {
        let v = DVector::from_column_slice(x.as_slice());
        let out = &self.matrix * v;
        CMatrix::from_column_slice(self.dim, self.dim, out.as_slice())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Superoperator) -> Self {
        Self { dim: self.dim, matrix: &self.matrix * &other.matrix }
    }

    pub fn add(&self, other: &Superoperator) -> Self {
        Self { dim: self.dim, matrix: &self.matrix + &other.matrix }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { dim: self.dim, matrix: &self.matrix * Complex64::new(c, 0.0) }
    }

    /// `exp(t · self)` by Padé scaling and squaring.
    pub fn exp(&self, t: f64) -> Self {
        let scaled = &self.matrix * Complex64::new(t, 0.0);
        Self { dim: self.dim, matrix: scaled.exp() }
    }

    /// Spectral norm of the superoperator matrix.
    pub fn norm(&self) -> f64 {
        self.matrix.clone().singular_values().max()
    }

    pub fn max_abs_diff(&self, other: &Superoperator) -> f64 {
        max_abs(&(&self.matrix - &other.matrix))
    }
}

/// Choi matrix `J = Σ_ij |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)`, input factor first.
///
/// `Φ` is completely positive iff `J ⪰ 0`, and trace preserving iff tracing
/// `J` over its output factor leaves the identity.
pub fn choi_matrix(m: &Superoperator) -> Operator {
    let d = m.dim;
    let s = &m.matrix;
    Operator(CMatrix::from_fn(d * d, d * d, |r, c| {
        let (i, k) = (r / d, r % d);
        let (j, l) = (c / d, c % d);
        s[(k + l * d, i + j * d)]
    }))
}

/// Magnitude of the most negative Choi eigenvalue, zero for CP maps.
pub fn choi_negativity(m: &Superoperator) -> f64 {
    (-choi_matrix(m).min_eigenvalue()).max(0.0)
}

/// `‖Tr_out J − I‖_max`; zero for trace-preserving maps.
pub fn trace_preservation_residual(m: &Superoperator) -> f64 {
    let d = m.dim;
    let j = choi_matrix(m);
    let space = CompositeSpace { dim_sys: d, dim_env: d };
    let reduced = partial_trace_env(&j, space).expect("Choi dimension is d²");
    max_abs(&(reduced.0 - CMatrix::identity(d, d)))
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}
