//! Finite measure spaces and integral kernels.
//!
//! Operators act on functions `f: Ω → ℝ` stored as plain vectors ("function
//! coordinates"). The normalized L¹(μ) atoms are `e_y / μ_y`, so that every
//! atom has unit L¹ norm; all L¹ → L^∞ norms in the crate use them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMeasureSpace {
    weights: Vec<f64>,
    total: f64,
}

impl FiniteMeasureSpace {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("measure space needs at least one atom".into()));
        }
        if let Some((x, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Validation(format!("measure of atom {x} must be positive and finite, got {w}")));
        }
        let total = weights.iter().sum();
        Ok(FiniteMeasureSpace { weights, total })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn counting(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// `Σ_x f(x) g(x) μ_x`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.weights).map(|((a, b), m)| a * b * m).sum()
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, m)| a * m).sum()
    }

    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|m| m.sqrt()).collect()
    }

    /// Conjugates an operator in function coordinates into the orthonormal
    /// basis `e_x / √μ_x`: returns `M^{1/2} T M^{-1/2}`.
    pub fn to_orthonormal(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.sqrt_weights();
        DMatrix::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)] * s[i] / s[j])
    }

    /// Inverse of [`Self::to_orthonormal`].
    pub fn from_orthonormal(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.sqrt_weights();
        DMatrix::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)] * s[j] / s[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub space: FiniteMeasureSpace,
    pub values: DMatrix<f64>,
}

impl Kernel {
    pub fn new(space: FiniteMeasureSpace, values: DMatrix<f64>) -> Result<Self> {
        let n = space.n();
        if values.shape() != (n, n) {
            let (r, c) = values.shape();
            return Err(Error::Shape(format!("kernel must be {n}x{n}, got {r}x{c}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("kernel has non-finite entries".into()));
        }
        Ok(Kernel { space, values })
    }

    /// Kernel of an operator given in function coordinates: `K(x,y) = T(x,y)/μ_y`.
    pub fn from_operator(space: FiniteMeasureSpace, t: &DMatrix<f64>) -> Result<Self> {
        let w = space.weights().to_vec();
        let values = DMatrix::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)] / w[j]);
        Self::new(space, values)
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut dev = 0.0_f64;
        for i in 0..n {
            for j in 0..i {
                dev = dev.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        dev
    }
}

/// Matrix of `f ↦ (x ↦ Σ_y K(x,y) f(y) μ_y)`.
pub fn kernel_to_operator(k: &Kernel) -> DMatrix<f64> {
    let w = k.space.weights();
    DMatrix::from_fn(k.n(), k.n(), |i, j| k.values[(i, j)] * w[j])
}

/// Evaluates `T f` for an operator in function coordinates.
pub fn apply(t: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (t * DVector::from_column_slice(f)).iter().copied().collect()
}

/// `sup_y ‖T(e_y/μ_y)‖_∞ = max_{x,y} |T(x,y)|/μ_y`.
pub fn norm_1_to_inf(t: &DMatrix<f64>, space: &FiniteMeasureSpace) -> f64 {
    let w = space.weights();
    let mut best = 0.0_f64;
    for j in 0..t.ncols() {
        let col = t.column(j).amax() / w[j];
        best = best.max(col);
    }
    best
}

/// `(‖K‖_{L^∞(Ω×Ω)}, ‖T_K‖_{L¹→L^∞})`.
pub fn dunford_pettis_check(k: &Kernel) -> (f64, f64) {
    let lhs = k.values.amax();
    let rhs = norm_1_to_inf(&kernel_to_operator(k), &k.space);
    (lhs, rhs)
}

/// `(‖K‖_{L²(μ⊗μ)}, ‖T_K‖_{S²(L²(μ))})`.
pub fn hilbert_schmidt_check(k: &Kernel) -> (f64, f64) {
    let w = k.space.weights();
    let n = k.n();
    let mut lhs = 0.0;
    for j in 0..n {
        for i in 0..n {
            lhs += k.values[(i, j)].powi(2) * w[i] * w[j];
        }
    }
    let t = k.space.to_orthonormal(&kernel_to_operator(k));
    (lhs.sqrt(), t.norm())
}

/// Kernel of `T_{K₁} ∘ T_{K₂}`: `(x,z) ↦ Σ_y K₁(x,y) K₂(y,z) μ_y`.
pub fn compose(k1: &Kernel, k2: &Kernel) -> Result<Kernel> {
    if k1.space != k2.space {
        return Err(Error::Shape("composed kernels live on different measure spaces".into()));
    }
    let w = k1.space.weights();
    let mut left = k1.values.clone();
    for (j, m) in w.iter().enumerate() {
        left.column_mut(j).scale_mut(*m);
    }
    Kernel::new(k1.space.clone(), left * &k2.values)
}
