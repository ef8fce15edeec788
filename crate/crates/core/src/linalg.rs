//! Dense real symmetric linear algebra.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Small problems are
//! diagonalized with cyclic Jacobi rotations; above [`JACOBI_MAX_DIM`] the
//! Householder tridiagonalization + implicit QL solver from `nalgebra` takes
//! over, since Jacobi's per-sweep cost makes it impractical past a few hundred
//! rows on a single core.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which an eigenvalue counts as zero:
/// `|λ| <= KERNEL_THRESHOLD * max |λ|`. Every "nonzero part" computation in
/// the crate goes through [`is_kernel`].
pub const KERNEL_THRESHOLD: f64 = 1e-10;

/// Largest dimension diagonalized by Jacobi rotations in [`sym_eig_auto`].
pub const JACOBI_MAX_DIM: usize = 256;

/// Default off-diagonal tolerance for [`sym_eig`].
pub const DEFAULT_EIG_TOL: f64 = 1e-13;

const SYMMETRY_TOL: f64 = 1e-12;

#[inline]
pub fn is_kernel(lambda: f64, max_abs: f64) -> bool {
    lambda.abs() <= KERNEL_THRESHOLD * max_abs
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// A real symmetric matrix. Construction checks symmetry to `1e-12` (relative
/// to `max(1, max|a|)`) and then symmetrizes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    entries: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (r, c) = entries.shape();
        if r != c {
            return Err(Error::Shape(format!("symmetric matrix must be square, got {r}x{c}")));
        }
        let scale = max_abs(&entries).max(1.0);
        for j in 0..c {
            for i in 0..j {
                let dev = (entries[(i, j)] - entries[(j, i)]).abs();
                if !(dev <= SYMMETRY_TOL * scale) {
                    return Err(Error::NotSymmetric { row: i, col: j, deviation: dev });
                }
            }
        }
        Ok(Self::symmetrize(entries))
    }

    /// Takes `(a + aᵀ)/2` without checking.
    pub fn symmetrize(mut entries: DMatrix<f64>) -> Self {
        let n = entries.nrows();
        for j in 0..n {
            for i in 0..j {
                let avg = 0.5 * (entries[(i, j)] + entries[(j, i)]);
                entries[(i, j)] = avg;
                entries[(j, i)] = avg;
            }
        }
        SymMatrix { entries }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { entries: DMatrix::identity(n, n) }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix { entries: DMatrix::from_diagonal(&DVector::from_column_slice(d)) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }
}

/// Eigen-decomposition `A = V diag(λ) Vᵀ` with ascending eigenvalues and
/// orthonormal columns in `eigenvectors`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub source_dim: usize,
}

impl SpectralData {
    /// Sorts eigenpairs ascending. Ties keep their incoming order, so the
    /// result is deterministic for a fixed input.
    pub fn sorted(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Self {
        let n = eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
        let values = order.iter().map(|&k| eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(eigenvectors.nrows(), n, |i, j| eigenvectors[(i, order[j])]);
        SpectralData { eigenvalues: values, eigenvectors: vectors, source_dim: n }
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |acc, l| acc.max(l.abs()))
    }

    pub fn is_kernel(&self, lambda: f64) -> bool {
        is_kernel(lambda, self.max_abs_eigenvalue())
    }

    pub fn kernel_dim(&self) -> usize {
        let m = self.max_abs_eigenvalue();
        self.eigenvalues.iter().filter(|l| is_kernel(**l, m)).count()
    }

    /// Eigenvalues above the kernel threshold, ascending.
    pub fn nonzero_eigenvalues(&self) -> Vec<f64> {
        let m = self.max_abs_eigenvalue();
        self.eigenvalues.iter().copied().filter(|l| !is_kernel(*l, m)).collect()
    }

    /// `‖VᵀV − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.eigenvectors.transpose() * &self.eigenvectors;
        max_abs_diff(&g, &DMatrix::identity(g.nrows(), g.ncols()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*l);
        }
        scaled * self.eigenvectors.transpose()
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Converged when the off-diagonal Frobenius mass falls to
/// `tol * ‖A‖_F`; the budget is `n²` sweeps.
pub fn sym_eig(a: &SymMatrix, tol: f64) -> Result<SpectralData> {
    jacobi(a, tol, true)
}

/// Eigenvalues only (ascending). Same dispatch as [`sym_eig_auto`].
pub fn sym_eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    if a.dim() <= JACOBI_MAX_DIM {
        return Ok(jacobi(a, DEFAULT_EIG_TOL, false)?.eigenvalues);
    }
    Ok(sym_eigenvalues_ql(a))
}

/// Eigenvalues (ascending) by Householder tridiagonalization and implicit QL,
/// at any size.
pub fn sym_eigenvalues_ql(a: &SymMatrix) -> Vec<f64> {
    if a.dim() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = a.entries().clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Jacobi for small matrices, tridiagonal QL above [`JACOBI_MAX_DIM`].
pub fn sym_eig_auto(a: &SymMatrix) -> Result<SpectralData> {
    if a.dim() <= JACOBI_MAX_DIM {
        sym_eig(a, DEFAULT_EIG_TOL)
    } else {
        sym_eig_tridiagonal(a)
    }
}

/// Householder tridiagonalization followed by implicit QL (`nalgebra`).
pub fn sym_eig_tridiagonal(a: &SymMatrix) -> Result<SpectralData> {
    let n = a.dim();
    let max_iter = 60 * n.max(1);
    let eig = nalgebra::SymmetricEigen::try_new(a.entries().clone(), f64::EPSILON, max_iter)
        .ok_or(Error::NonConvergence { sweeps: max_iter, off_diagonal: f64::NAN })?;
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    Ok(SpectralData::sorted(values, eig.eigenvectors))
}

fn off_diagonal_mass(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[j * n + i] * a[j * n + i];
            }
        }
    }
    s.sqrt()
}

fn jacobi(a: &SymMatrix, tol: f64, want_vectors: bool) -> Result<SpectralData> {
    if !(1e-14..=1e-6).contains(&tol) {
        return Err(Error::Parameter(format!("eigensolver tolerance {tol:e} outside [1e-14, 1e-6]")));
    }
    let n = a.dim();
    // Column-major working copy; the matrix stays symmetric so columns and
    // rows are interchangeable.
    let mut m: Vec<f64> = a.entries().as_slice().to_vec();
    let mut v = if want_vectors { DMatrix::<f64>::identity(n, n) } else { DMatrix::zeros(0, 0) };
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = tol * frob;
    let budget = (n * n).max(1);

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_mass(&m, n);
        if off <= target || off == 0.0 {
            break;
        }
        if sweeps >= budget {
            return Err(Error::NonConvergence { sweeps, off_diagonal: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[q * n + p];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Underflow guard once the sweep has settled: the rotation
                // would not change the diagonal in floating point.
                let g = 100.0 * apq.abs();
                if sweeps > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[q * n + p] = 0.0;
                    m[p * n + q] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = m[p * n + k];
                    let akq = m[q * n + k];
                    m[p * n + k] = c * akp - s * akq;
                    m[q * n + k] = s * akp + c * akq;
                }
                for k in 0..n {
                    m[k * n + p] = m[p * n + k];
                    m[k * n + q] = m[q * n + k];
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[q * n + p] = 0.0;
                m[p * n + q] = 0.0;

                if want_vectors {
                    let (mut cp, mut cq) = v.columns_range_pair_mut(p, q);
                    for k in 0..n {
                        let vkp = cp[k];
                        let vkq = cq[k];
                        cp[k] = c * vkp - s * vkq;
                        cq[k] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let values: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    if want_vectors {
        Ok(SpectralData::sorted(values, v))
    } else {
        let mut values = values;
        values.sort_by(f64::total_cmp);
        Ok(SpectralData { eigenvalues: values, eigenvectors: DMatrix::zeros(0, 0), source_dim: n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchattenP {
    One,
    Two,
    Inf,
}

pub fn schatten_norm(a: &SymMatrix, p: SchattenP) -> Result<f64> {
    let values = sym_eigenvalues(a)?;
    Ok(match p {
        SchattenP::One => values.iter().map(|l| l.abs()).sum(),
        SchattenP::Two => values.iter().map(|l| l * l).sum::<f64>().sqrt(),
        SchattenP::Inf => values.iter().fold(0.0_f64, |acc, l| acc.max(l.abs())),
    })
}

/// `V diag(f(λ)) Vᵀ`.
///
/// `f` must be finite on every eigenvalue above the kernel threshold;
/// non-finite values on kernel eigenvalues are replaced by 0.
pub fn spectral_function(s: &SpectralData, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    let m = s.max_abs_eigenvalue();
    let mut values = Vec::with_capacity(s.eigenvalues.len());
    for &l in &s.eigenvalues {
        let y = f(l);
        if y.is_finite() {
            values.push(y);
        } else if is_kernel(l, m) {
            values.push(0.0);
        } else {
            return Err(Error::Domain { eigenvalue: l });
        }
    }
    Ok(apply_values(s, &values))
}

/// Like [`spectral_function`] but defined as 0 on the kernel (`|D|^{-α}`
/// style functional calculus on the nonzero part).
pub fn spectral_function_on_range(s: &SpectralData, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    let m = s.max_abs_eigenvalue();
    spectral_function(s, |l| if is_kernel(l, m) { 0.0 } else { f(l) })
}

fn apply_values(s: &SpectralData, values: &[f64]) -> SymMatrix {
    let mut scaled = s.eigenvectors.clone();
    for (j, y) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*y);
    }
    SymMatrix::symmetrize(scaled * s.eigenvectors.transpose())
}
