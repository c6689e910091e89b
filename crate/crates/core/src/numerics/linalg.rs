use nalgebra::{Cholesky, DMatrix, DVector};

use super::NumericsError;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Relative asymmetry accepted by [`SymMatrix::new`] before it refuses the input.
const SYMMETRY_TOL: f64 = 1e-9;

/// Dense symmetric matrix. The stored entries are exactly symmetric: the
/// constructors average the input with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square or visibly asymmetric input.
    pub fn new(m: Matrix) -> Result<Self, NumericsError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(NumericsError::DimensionMismatch(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = (&m - m.transpose()).amax();
        let scale = m.amax().max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(NumericsError::NotSymmetric(asym));
        }
        Ok(Self::from_symmetric_part(m))
    }

    /// Takes the symmetric part `(m + mᵀ)/2` without checking.
    pub fn from_symmetric_part(m: Matrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetric part needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(Matrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(Matrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, k: f64) -> Self {
        SymMatrix(&self.0 * k)
    }

    /// `M X Mᵀ` for a conformable (possibly rectangular) `M`.
    pub fn congruence(&self, m: &Matrix) -> SymMatrix {
        SymMatrix::from_symmetric_part(m * &self.0 * m.transpose())
    }
}

impl serde::Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        super::serde_rows::serialize(&self.0, s)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, in the order of `values`.
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    /// Rebuilds `V f(Λ) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            scaled.column_mut(j).scale_mut(fj);
        }
        SymMatrix::from_symmetric_part(scaled * self.vectors.transpose())
    }
}

/// Cyclic Jacobi eigen-decomposition.
pub fn symmetric_eigen(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n, n);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let total = a.norm_squared();
        if off == 0.0 || off <= 1e-32 * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    SymEigen { values, vectors }
}

/// True when the smallest eigenvalue is at least `-tol * max(1, ‖M‖)`.
pub fn is_psd(m: &SymMatrix, tol: f64) -> bool {
    let eig = symmetric_eigen(m);
    let scale = eig.values.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    eig.min() >= -tol * scale
}

fn psd_eigen(m: &SymMatrix) -> Result<SymEigen, NumericsError> {
    let eig = symmetric_eigen(m);
    let scale = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if eig.min() < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(NumericsError::NotPsd(eig.min()));
    }
    Ok(eig)
}

/// Principal (symmetric PSD) square root.
pub fn sym_sqrt(m: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let eig = psd_eigen(m)?;
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Inverse of the principal square root.
pub fn sym_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let eig = psd_eigen(m)?;
    if eig.min() <= 1e-12 * eig.max().abs() || eig.min() <= 0.0 {
        return Err(NumericsError::NearSingular(eig.min()));
    }
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// Singular values in ascending order; `min(rows, cols)` of them.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let gram = if m.ncols() <= m.nrows() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let eig = symmetric_eigen(&SymMatrix::from_symmetric_part(gram));
    let top = eig.max();
    // The Gram route squares the condition number; switch to one-sided Jacobi
    // when the small end of the spectrum would lose too many digits.
    if top > 0.0 && eig.min() < 1e-8 * top {
        return one_sided_jacobi(m);
    }
    eig.values.iter().map(|l| l.max(0.0).sqrt()).collect()
}

fn one_sided_jacobi(m: &Matrix) -> Vec<f64> {
    let mut u = if m.ncols() <= m.nrows() {
        m.clone()
    } else {
        m.transpose()
    };
    let n = u.ncols();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = u.column(i).norm_squared();
                let beta = u.column(j).norm_squared();
                let gamma = u.column(i).dot(&u.column(j));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..u.nrows() {
                    let uki = u[(k, i)];
                    let ukj = u[(k, j)];
                    u[(k, i)] = c * uki - s * ukj;
                    u[(k, j)] = s * uki + c * ukj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Induced 2-norm (largest singular value).
pub fn operator_norm(m: &Matrix) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Smallest singular value.
pub fn min_singular_value(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn spectral_radius(f: &Matrix) -> f64 {
    assert_eq!(f.nrows(), f.ncols(), "spectral radius needs a square matrix");
    if f.nrows() == 0 {
        return 0.0;
    }
    f.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `log |M|` through a Cholesky factorization; `None` when `M` is not
/// positive definite.
pub fn log_det_pd(m: &Matrix) -> Option<f64> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Solves `X = F X Fᵀ + Q` by Smith doubling.
pub fn solve_discrete_lyapunov(f: &Matrix, q: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    if f.nrows() != f.ncols() || f.nrows() != q.dim() {
        return Err(NumericsError::DimensionMismatch(format!(
            "Lyapunov equation needs square F matching Q: F is {}x{}, Q is {}x{}",
            f.nrows(),
            f.ncols(),
            q.dim(),
            q.dim()
        )));
    }
    let rho = spectral_radius(f);
    if rho >= 1.0 - 1e-12 {
        return Err(NumericsError::NotSchurStable(rho));
    }
    if !is_psd(q, 1e-10) {
        return Err(NumericsError::NotPsd(symmetric_eigen(q).min()));
    }

    let mut x = q.as_matrix().clone();
    let mut g = f.clone();
    for _ in 0..128 {
        let incr = &g * &x * g.transpose();
        let done = incr.norm() <= 1e-18 * x.norm().max(f64::MIN_POSITIVE);
        x += incr;
        if done {
            break;
        }
        g = &g * &g;
        if g.amax() == 0.0 {
            break;
        }
    }
    // A couple of fixed-point sweeps polish the rounding left by the doubling.
    for _ in 0..2 {
        x = f * &x * f.transpose() + q.as_matrix();
    }
    let x = SymMatrix::from_symmetric_part(x);
    let resid = (x.as_matrix() - (f * x.as_matrix() * f.transpose() + q.as_matrix())).norm();
    debug_assert!(resid <= 1e-10 * (1.0 + x.as_matrix().norm()));
    Ok(x)
}
