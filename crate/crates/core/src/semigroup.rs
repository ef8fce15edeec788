//! Heat semigroups `T_t = e^{−tA}` on finite models, computed spectrally.
//!
//! With `ψ_k` the orthonormal eigenvectors of `M^{-1/2} L M^{-1/2}`, the heat
//! kernel against `μ` is `p_t(x,y) = (μ_x μ_y)^{-1/2} Σ_k e^{−tλ_k} ψ_k(x) ψ_k(y)`.
//!
//! Check functions return deviations relative to `max(1, largest entry)` of
//! the object being checked.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::FiniteModel;
use crate::kernel::{compose, kernel_to_operator, Kernel};
use crate::linalg::{is_kernel, max_abs_diff, sym_eigenvalues_ql, SymMatrix};

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("time must be positive and finite, got {t}")));
    }
    Ok(())
}

/// `Σ_k e^{−tλ_k} ψ_k(i) ψ_k(j)` for the requested rows `i`, all columns `j`.
fn orthonormal_heat_rows(model: &FiniteModel, t: f64, rows: &[usize]) -> Result<DMatrix<f64>> {
    let s = model.spectral()?;
    let n = model.n();
    let decay: Vec<f64> = s.eigenvalues.iter().map(|l| (-t * l).exp()).collect();
    let mut left = DMatrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        for k in 0..n {
            left[(r, k)] = s.eigenvectors[(i, k)] * decay[k];
        }
    }
    Ok(left * s.eigenvectors.transpose())
}

fn orthonormal_heat(model: &FiniteModel, t: f64) -> Result<DMatrix<f64>> {
    let s = model.spectral()?;
    let mut scaled = s.eigenvectors.clone();
    for (k, l) in s.eigenvalues.iter().enumerate() {
        scaled.column_mut(k).scale_mut((-t * l).exp());
    }
    Ok(scaled * s.eigenvectors.transpose())
}

#[derive(Debug, Clone)]
pub struct HeatKernel {
    pub t: f64,
    pub kernel: Kernel,
}

impl HeatKernel {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.kernel.values
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.kernel.values.diagonal().iter().copied().collect()
    }

    /// The operator `e^{−tA}` in function coordinates.
    pub fn operator(&self) -> DMatrix<f64> {
        kernel_to_operator(&self.kernel)
    }
}

pub fn heat_kernel(model: &FiniteModel, t: f64) -> Result<HeatKernel> {
    check_time(t)?;
    let h = orthonormal_heat(model, t)?;
    let r = model.space().sqrt_weights();
    let values = DMatrix::from_fn(model.n(), model.n(), |i, j| h[(i, j)] / (r[i] * r[j]));
    Ok(HeatKernel { t, kernel: Kernel::new(model.space().clone(), values)? })
}

/// Selected rows `p_t(x, ·)` of the heat kernel.
pub fn heat_kernel_rows(model: &FiniteModel, t: f64, rows: &[usize]) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let h = orthonormal_heat_rows(model, t, rows)?;
    let r = model.space().sqrt_weights();
    Ok(DMatrix::from_fn(rows.len(), model.n(), |a, j| h[(a, j)] / (r[rows[a]] * r[j])))
}

/// `e^{−tA}` in function coordinates, `M^{-1/2} e^{−tS} M^{1/2}`.
pub fn heat_operator(model: &FiniteModel, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::Parameter(format!("time must be non-negative, got {t}")));
    }
    let h = orthonormal_heat(model, t)?;
    Ok(model.space().from_orthonormal(&h))
}

/// Evaluates the diagonal `x ↦ p_t(x,x)` at many times for the cost of one
/// `n × n` matrix-vector product each.
#[derive(Debug, Clone)]
pub struct DiagonalEvaluator {
    squares: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl DiagonalEvaluator {
    pub fn new(model: &FiniteModel) -> Result<Self> {
        let s = model.spectral()?;
        let w = model.space().weights();
        let squares = DMatrix::from_fn(model.n(), model.n(), |x, k| s.eigenvectors[(x, k)].powi(2) / w[x]);
        Ok(DiagonalEvaluator { squares, eigenvalues: s.eigenvalues.clone() })
    }

    pub fn diagonal(&self, t: f64) -> Vec<f64> {
        let decay = nalgebra::DVector::from_iterator(self.eigenvalues.len(), self.eigenvalues.iter().map(|l| (-t * l).exp()));
        (&self.squares * decay).iter().copied().collect()
    }

    pub fn max_diagonal(&self, t: f64) -> (usize, f64) {
        self.diagonal(t)
            .into_iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (x, v)| if v > best.1 { (x, v) } else { best })
    }
}

/// `‖p_{s+t} − p_s ∘ p_t‖_max`, relative.
pub fn chapman_kolmogorov_check(model: &FiniteModel, s: f64, t: f64) -> Result<f64> {
    let ps = heat_kernel(model, s)?;
    let pt = heat_kernel(model, t)?;
    let pst = heat_kernel(model, s + t)?;
    let composed = compose(&ps.kernel, &pt.kernel)?;
    Ok(max_abs_diff(&composed.values, pst.values()) / pst.values().amax().max(1.0))
}

/// `max_{x,y} p_t(x,y) − √(p_t(x,x) p_t(y,y))`, relative.
pub fn diagonal_dominance_check(model: &FiniteModel, t: f64) -> Result<f64> {
    Ok(dominance_violation(heat_kernel(model, t)?.values()))
}

fn dominance_violation(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let diag: Vec<f64> = (0..n).map(|i| p[(i, i)].max(0.0).sqrt()).collect();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                worst = worst.max(p[(i, j)] - diag[i] * diag[j]);
            }
        }
    }
    worst / p.amax().max(1.0)
}

/// Positivity and Cauchy–Schwarz domination on selected kernel rows.
pub fn row_checks(model: &FiniteModel, t: f64, rows: &[usize]) -> Result<(f64, f64)> {
    let p = heat_kernel_rows(model, t, rows)?;
    let diag = DiagonalEvaluator::new(model)?.diagonal(t);
    let scale = p.amax().max(1.0);
    let mut min_entry = f64::INFINITY;
    let mut worst = 0.0_f64;
    for (a, &x) in rows.iter().enumerate() {
        for y in 0..model.n() {
            let v = p[(a, y)];
            min_entry = min_entry.min(v);
            if y != x {
                worst = worst.max(v - (diag[x].max(0.0) * diag[y].max(0.0)).sqrt());
            }
        }
    }
    Ok((min_entry / scale, worst / scale))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelIdentities {
    pub t: f64,
    pub symmetry: f64,
    /// Most negative entry, relative (0 when all entries are non-negative).
    pub negativity: f64,
    pub mass_conservation: f64,
    pub diagonal_dominance: f64,
    pub chapman_kolmogorov: f64,
    pub operator_reproduction: f64,
}

impl KernelIdentities {
    pub fn max_deviation(&self) -> f64 {
        [
            self.symmetry,
            self.negativity,
            self.mass_conservation,
            self.diagonal_dominance,
            self.chapman_kolmogorov,
            self.operator_reproduction,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// All pointwise kernel identities at one time. Chapman–Kolmogorov is
/// checked with `s = t/2` on both sides.
pub fn kernel_identities(model: &FiniteModel, t: f64) -> Result<KernelIdentities> {
    let p = heat_kernel(model, t)?;
    let vals = p.values();
    let scale = vals.amax().max(1.0);
    let op = p.operator();
    let mass = (0..model.n()).map(|i| (op.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
    let direct = heat_operator(model, t)?;
    Ok(KernelIdentities {
        t,
        symmetry: p.kernel.max_asymmetry() / scale,
        negativity: (-vals.min()).max(0.0) / scale,
        mass_conservation: mass,
        diagonal_dominance: dominance_violation(vals).max(0.0),
        chapman_kolmogorov: chapman_kolmogorov_check(model, 0.5 * t, 0.5 * t)?,
        operator_reproduction: max_abs_diff(&op, &direct) / direct.amax().max(1.0),
    })
}

#[derive(Debug, Clone)]
pub struct ErgodicData {
    pub fix_dim: usize,
    /// `E` in function coordinates: `(Ef)(x)` is the μ-average of `f` over the
    /// component of `x`.
    pub projection: DMatrix<f64>,
    /// Smallest nonzero eigenvalue of `A`; `None` for a graph without edges.
    pub gap: Option<f64>,
}

pub fn ergodic_data(model: &FiniteModel) -> Result<ErgodicData> {
    let labels = model.graph().component_labels();
    let fix_dim = labels.iter().max().map_or(0, |m| m + 1);
    let w = model.space().weights();
    let mut mass = vec![0.0; fix_dim];
    for (x, &c) in labels.iter().enumerate() {
        mass[c] += w[x];
    }
    let n = model.n();
    let projection = DMatrix::from_fn(n, n, |x, y| if labels[x] == labels[y] { w[y] / mass[labels[x]] } else { 0.0 });
    Ok(ErgodicData { fix_dim, projection, gap: model.spectral_gap()? })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErgodicIdentities {
    pub idempotence: f64,
    pub selfadjointness: f64,
    /// `max_t max(‖T_t E − E‖, ‖E T_t − E‖)` over the sampled times.
    pub invariance: f64,
    pub fix_dim: usize,
    pub kernel_dim: usize,
}

pub fn ergodic_identities(model: &FiniteModel, times: &[f64]) -> Result<ErgodicIdentities> {
    let e = ergodic_data(model)?;
    let p = &e.projection;
    let idempotence = max_abs_diff(&(p * p), p);
    let w = model.space().weights();
    let mut selfadjointness = 0.0_f64;
    for i in 0..model.n() {
        for j in 0..model.n() {
            selfadjointness = selfadjointness.max((w[i] * p[(i, j)] - w[j] * p[(j, i)]).abs());
        }
    }
    let mut invariance = 0.0_f64;
    for &t in times {
        let h = heat_operator(model, t)?;
        invariance = invariance.max(max_abs_diff(&(&h * p), p)).max(max_abs_diff(&(p * &h), p));
    }
    Ok(ErgodicIdentities {
        idempotence,
        selfadjointness,
        invariance,
        fix_dim: e.fix_dim,
        kernel_dim: model.spectral()?.kernel_dim(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecaySample {
    pub t: f64,
    pub norm: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecayReport {
    pub gap: Option<f64>,
    pub samples: Vec<DecaySample>,
    pub passed: bool,
}

/// `‖e^{−tA}(I − E)‖_{L²(μ)→L²(μ)} ≤ e^{−ωt}` at every sampled time.
///
/// `e^{−tA}(I − E)` is assembled from the modes above the kernel threshold
/// (forming `e^{−tA} − E` directly loses all relative accuracy once
/// `e^{−ωt}` nears machine epsilon); its norm is then the largest eigenvalue
/// modulus of that symmetric matrix, found by the tridiagonal QL solver so
/// the bound is not checked by the algorithm that produced the modes. That
/// the discarded modes span exactly the range of `E` is checked by
/// [`ergodic_identities`].
pub fn decay_check(model: &FiniteModel, times: &[f64]) -> Result<DecayReport> {
    let gap = model.spectral_gap()?;
    let s = model.spectral()?;
    let top = s.max_abs_eigenvalue();
    let mut samples = Vec::with_capacity(times.len());
    for &t in times {
        if t < 0.0 {
            return Err(Error::Parameter(format!("time must be non-negative, got {t}")));
        }
        let mut scaled = s.eigenvectors.clone();
        for (k, l) in s.eigenvalues.iter().enumerate() {
            let f = if is_kernel(*l, top) { 0.0 } else { (-t * l).exp() };
            scaled.column_mut(k).scale_mut(f);
        }
        let op = SymMatrix::symmetrize(scaled * s.eigenvectors.transpose());
        let norm = sym_eigenvalues_ql(&op).iter().fold(0.0_f64, |a, l| a.max(l.abs()));
        let bound = match gap {
            Some(w) => (-w * t).exp(),
            None => 1.0,
        };
        samples.push(DecaySample { t, norm, bound, passed: norm <= bound * (1.0 + 1e-9) });
    }
    let passed = samples.iter().all(|s| s.passed);
    Ok(DecayReport { gap, samples, passed })
}

/// `Σ_k e^{−tλ_k}`, optionally omitting the kernel.
pub fn heat_trace_from_spectrum(values: &[f64], t: f64, restricted: bool) -> f64 {
    let top = values.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    values
        .iter()
        .filter(|l| !(restricted && is_kernel(**l, top)))
        .map(|l| (-t * l).exp())
        .sum()
}

/// `tr e^{−tA}`, restricted to `(ker A)^⊥` when `restricted`.
pub fn heat_trace(model: &FiniteModel, t: f64, restricted: bool) -> Result<f64> {
    check_time(t)?;
    Ok(heat_trace_from_spectrum(&model.spectral()?.eigenvalues, t, restricted))
}

/// `tr e^{−tD²}`, restricted to `(ker D)^⊥` when `restricted`.
pub fn dirac_heat_trace(hd: &crate::dirac::HodgeDirac, t: f64, restricted: bool) -> Result<f64> {
    check_time(t)?;
    Ok(heat_trace_from_spectrum(&hd.squared_spectrum()?.0, t, restricted))
}

/// Sample times, stored descending from the largest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn explicit(mut times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Parameter("time grid is empty".into()));
        }
        if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Parameter(format!("time grid entries must be positive, got {t}")));
        }
        times.sort_by(|a, b| b.total_cmp(a));
        times.dedup();
        Ok(TimeGrid { times })
    }

    /// `t_i = 2^{−i}`, `i = 0..=depth`.
    pub fn dyadic(depth: usize) -> Self {
        TimeGrid { times: (0..=depth).map(|i| 0.5_f64.powi(i as i32)).collect() }
    }

    /// `t_i = 2^{−i/per_octave}`, `i = 0..=depth·per_octave`.
    pub fn geometric(depth: usize, per_octave: usize) -> Self {
        let p = per_octave.max(1);
        TimeGrid { times: (0..=depth * p).map(|i| 2.0_f64.powf(-(i as f64) / p as f64)).collect() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn min(&self) -> f64 {
        *self.times.last().expect("grid is non-empty")
    }
}
