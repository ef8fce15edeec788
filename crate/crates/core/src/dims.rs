//! Power-law fits and dimension estimators.
//!
//! Every estimator samples a quantity on a grid, fits a straight line in
//! log-log coordinates over a window, and reports a dimension derived from
//! the slope:
//!
//! | estimator        | sample                           | law               |
//! |------------------|----------------------------------|-------------------|
//! | CV               | `max_x p_t(x,x)`                 | `t^{−d/2}`        |
//! | heat trace       | `tr e^{−tD²}` on `(ker D)^⊥`     | `t^{−α/2}`        |
//! | Weyl             | `N(λ) = #{0 < λ_k ≤ λ}`          | `λ^{α/2}`         |
//! | torus cb         | `‖h_t‖_∞` on `T^d`               | `t^{−d/2}`        |
//! | rapid decay      | `Σ e^{−2tn}(n+1)^{2r}`           | `t^{−(2r+1)}`     |
//!
//! Default time windows are `[20/λ_max, min(1, 0.2/ω)]` with `ω` the spectral
//! gap. Above `0.2/ω` the samples are dominated by the first few modes and
//! carry no information on the small-time asymptotics.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dirac::HodgeDirac;
use crate::error::{Error, Result};
use crate::forms::{torus_fourier_heat_sup, FiniteModel, TorusFourierModel};
use crate::kernel::norm_1_to_inf;
use crate::linalg::is_kernel;
use crate::semigroup::{heat_kernel, heat_operator, heat_trace_from_spectrum, row_checks, DiagonalEvaluator, TimeGrid};

/// Minimum number of in-window samples for a fit.
pub const MIN_FIT_POINTS: usize = 4;
/// `t_lo = LOWER_TIME_FACTOR / λ_max`.
pub const LOWER_TIME_FACTOR: f64 = 20.0;
/// `t_hi = min(1, UPPER_TIME_FACTOR / ω)`.
pub const UPPER_TIME_FACTOR: f64 = 0.2;
/// Grid points per octave of the default time and λ grids.
pub const POINTS_PER_OCTAVE: usize = 4;
/// Models above this size check kernel positivity on sampled rows only.
pub const FULL_KERNEL_CHECK_MAX: usize = 2048;
/// Relative slack on window endpoints, so grid points computed as `2^{−i/4}`
/// are not lost to rounding.
const WINDOW_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `exponent = −slope`.
    Raw,
    /// `exponent = −2·slope` (decay of a `t^{−d/2}` law).
    HalfDecay,
    /// `exponent = 2·slope` (growth of a `λ^{α/2}` law).
    HalfGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub kind: FitKind,
    /// The reported quantity (a dimension, or `−slope` for raw fits).
    pub exponent: f64,
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// `max |log y − (intercept + slope·log x)|` over the fitted points.
    pub residual: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub value: f64,
    pub in_window: bool,
}

/// A fit together with every sample it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub fit: DimensionFit,
    pub samples: Vec<Sample>,
}

fn in_window(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo * (1.0 - WINDOW_SLACK) && x <= hi * (1.0 + WINDOW_SLACK)
}

/// Least-squares line through `(log x, log y)` for samples inside `window`.
pub fn fit_exponent(samples: &[(f64, f64)], window: (f64, f64)) -> Result<DimensionFit> {
    fit_with_kind(samples, window, FitKind::Raw)
}

fn fit_with_kind(samples: &[(f64, f64)], window: (f64, f64), kind: FitKind) -> Result<DimensionFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Window { lo, hi, found: 0, needed: MIN_FIT_POINTS });
    }
    let mut pts: Vec<(f64, f64)> = samples.iter().copied().filter(|(x, _)| in_window(*x, window)).collect();
    if let Some((x, y)) = pts.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Parameter(format!("log-log fit needs positive samples, got ({x}, {y})")));
    }
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::Window { lo, hi, found: pts.len(), needed: MIN_FIT_POINTS });
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let logs: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Window { lo, hi, found: 1, needed: MIN_FIT_POINTS });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = logs.iter().map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    let exponent = match kind {
        FitKind::Raw => -slope,
        FitKind::HalfDecay => -2.0 * slope,
        FitKind::HalfGrowth => 2.0 * slope,
    };
    Ok(DimensionFit { kind, exponent, slope, intercept, window, residual, n_points: pts.len() })
}

fn estimate(samples: Vec<(f64, f64)>, window: (f64, f64), kind: FitKind) -> Result<Estimate> {
    let fit = fit_with_kind(&samples, window, kind)?;
    let mut samples: Vec<Sample> = samples.into_iter().map(|(x, value)| Sample { x, value, in_window: in_window(x, window) }).collect();
    samples.sort_by(|a, b| a.x.total_cmp(&b.x));
    Ok(Estimate { fit, samples })
}

/// `[20/λ_max, min(1, 0.2/ω)]`.
pub fn default_time_window(lambda_max: f64, gap: Option<f64>) -> Result<(f64, f64)> {
    let lo = LOWER_TIME_FACTOR / lambda_max;
    let hi = gap.map_or(1.0, |w| (UPPER_TIME_FACTOR / w).min(1.0));
    if !(lo.is_finite() && lo < hi) {
        return Err(Error::Window { lo, hi, found: 0, needed: MIN_FIT_POINTS });
    }
    Ok((lo, hi))
}

/// `t = 2^{−i/4}` from 1 down to the first point at or below `t_lo`.
pub fn default_time_grid(lambda_max: f64) -> TimeGrid {
    let t_lo = (LOWER_TIME_FACTOR / lambda_max).min(1.0);
    let depth = (1.0 / t_lo).log2().ceil().max(1.0) as usize;
    TimeGrid::geometric(depth, POINTS_PER_OCTAVE)
}

fn lambda_max_and_gap(values: &[f64]) -> (f64, Option<f64>) {
    let top = values.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let gap = values.iter().copied().filter(|l| !is_kernel(*l, top)).fold(None, |m: Option<f64>, l| Some(m.map_or(l, |v| v.min(l))));
    (top, gap)
}

/// The eigenvalue list behind a heat-trace or Weyl estimate.
#[derive(Debug, Clone, Copy)]
pub enum SpectrumTarget<'a> {
    Generator(&'a FiniteModel),
    Dirac(&'a HodgeDirac),
}

impl SpectrumTarget<'_> {
    /// Eigenvalues of `A`, or of `D²`.
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            SpectrumTarget::Generator(m) => Ok(m.spectral()?.eigenvalues.clone()),
            SpectrumTarget::Dirac(hd) => Ok(hd.squared_spectrum()?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEstimate {
    pub estimate: Estimate,
    /// False when the positivity or domination checks failed and the full
    /// `max_{x,y}` over the kernel was used.
    pub diagonal_sup: bool,
    /// Most negative kernel entry (relative) seen by the checks.
    pub min_entry: f64,
    /// Largest `p_t(x,y) − √(p_t(x,x) p_t(y,y))` (relative) seen by the checks.
    pub dominance_violation: f64,
    /// Number of kernel rows checked per endpoint.
    pub checked_rows: usize,
}

/// Samples of `‖T_t‖_{L¹→L^∞} = max_x p_t(x,x)` on `grid`, fitted with
/// `d = −2·slope`. `window` defaults to [`default_time_window`].
///
/// The diagonal supremum is only used after kernel positivity and the
/// Cauchy–Schwarz domination `p_t(x,y) ≤ √(p_t(x,x) p_t(y,y))` are verified at
/// both window ends (on all rows up to [`FULL_KERNEL_CHECK_MAX`] vertices,
/// otherwise on 64 evenly spaced rows plus the maximizing one).
pub fn cv_local_dimension(model: &FiniteModel, grid: &TimeGrid, window: Option<(f64, f64)>) -> Result<CvEstimate> {
    if let Some(t) = grid.times().iter().find(|t| **t > 1.0) {
        return Err(Error::Parameter(format!("CV time grid must lie in (0, 1], got {t}")));
    }
    let spec = model.spectral()?;
    let (lambda_max, gap) = lambda_max_and_gap(&spec.eigenvalues);
    let window = match window {
        Some(w) => w,
        None => default_time_window(lambda_max, gap)?,
    };
    let eval = DiagonalEvaluator::new(model)?;
    let inside: Vec<f64> = grid.times().iter().copied().filter(|t| in_window(*t, window)).collect();
    if inside.len() < MIN_FIT_POINTS {
        return Err(Error::Window { lo: window.0, hi: window.1, found: inside.len(), needed: MIN_FIT_POINTS });
    }
    let ends = [inside[inside.len() - 1], inside[0]];
    let n = model.n();
    let mut min_entry = f64::INFINITY;
    let mut dominance = 0.0_f64;
    let mut checked_rows = n;
    for &t in &ends {
        if n <= FULL_KERNEL_CHECK_MAX {
            let p = heat_kernel(model, t)?;
            let scale = p.values().amax().max(1.0);
            min_entry = min_entry.min(p.values().min() / scale);
            let (_, dom) = row_checks_full(p.values());
            dominance = dominance.max(dom / scale);
        } else {
            let stride = n.div_ceil(64);
            let mut rows: Vec<usize> = (0..n).step_by(stride).collect();
            let arg = eval.max_diagonal(t).0;
            if !rows.contains(&arg) {
                rows.push(arg);
            }
            checked_rows = rows.len();
            let (neg, dom) = row_checks(model, t, &rows)?;
            min_entry = min_entry.min(neg);
            dominance = dominance.max(dom);
        }
    }
    let diagonal_sup = min_entry >= -1e-9 && dominance <= 1e-10;
    let mut samples = Vec::with_capacity(grid.len());
    for &t in grid.times() {
        let value = if diagonal_sup {
            eval.max_diagonal(t).1
        } else {
            norm_1_to_inf(&heat_operator(model, t)?, model.space())
        };
        samples.push((t, value));
    }
    Ok(CvEstimate {
        estimate: estimate(samples, window, FitKind::HalfDecay)?,
        diagonal_sup,
        min_entry,
        dominance_violation: dominance,
        checked_rows,
    })
}

fn row_checks_full(p: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let n = p.nrows();
    let d: Vec<f64> = (0..n).map(|i| p[(i, i)].max(0.0).sqrt()).collect();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                worst = worst.max(p[(i, j)] - d[i] * d[j]);
            }
        }
    }
    (p.min(), worst)
}

/// Restricted heat-trace samples on `grid`, fitted with `α = −2·slope`.
pub fn heat_trace_dimension(target: SpectrumTarget<'_>, grid: &TimeGrid, window: Option<(f64, f64)>) -> Result<Estimate> {
    heat_trace_dimension_from_spectrum(&target.values()?, grid, window, true)
}

pub fn heat_trace_dimension_from_spectrum(
    values: &[f64],
    grid: &TimeGrid,
    window: Option<(f64, f64)>,
    restricted: bool,
) -> Result<Estimate> {
    if let Some(t) = grid.times().iter().find(|t| **t > 1.0) {
        return Err(Error::Parameter(format!("heat-trace time grid must lie in (0, 1], got {t}")));
    }
    let (lambda_max, gap) = lambda_max_and_gap(values);
    let window = match window {
        Some(w) => w,
        None => default_time_window(lambda_max, gap)?,
    };
    let samples = grid.times().iter().map(|&t| (t, heat_trace_from_spectrum(values, t, restricted))).collect();
    estimate(samples, window, FitKind::HalfDecay)
}

/// Mean diagonal `μ(Ω)⁻¹ ∫ p_t(x,x) dμ = μ(Ω)⁻¹ tr e^{−tA}`, the lower-estimate
/// counterpart of the CV samples.
pub fn mean_diagonal_dimension(model: &FiniteModel, grid: &TimeGrid, window: Option<(f64, f64)>) -> Result<Estimate> {
    let values = &model.spectral()?.eigenvalues;
    let (lambda_max, gap) = lambda_max_and_gap(values);
    let window = match window {
        Some(w) => w,
        None => default_time_window(lambda_max, gap)?,
    };
    let total = model.space().total();
    let samples = grid.times().iter().map(|&t| (t, heat_trace_from_spectrum(values, t, false) / total)).collect();
    estimate(samples, window, FitKind::HalfDecay)
}

/// `λ = 2^{k/4}` covering `[lo, hi]`.
pub fn geometric_lambda_grid(lo: f64, hi: f64) -> Vec<f64> {
    if !(lo > 0.0 && hi >= lo) {
        return Vec::new();
    }
    let p = POINTS_PER_OCTAVE as f64;
    let k0 = (lo.log2() * p).floor() as i64;
    let k1 = (hi.log2() * p).ceil() as i64;
    (k0..=k1).map(|k| 2.0_f64.powf(k as f64 / p)).collect()
}

/// `[5ω, λ_max/10]`.
pub fn default_lambda_window(lambda_max: f64, gap: Option<f64>) -> Result<(f64, f64)> {
    let gap = gap.ok_or(Error::Window { lo: 0.0, hi: 0.0, found: 0, needed: MIN_FIT_POINTS })?;
    Ok((gap / UPPER_TIME_FACTOR, lambda_max / 10.0))
}

/// `N(λ) = #{k : 0 < λ_k ≤ λ}` on `lambda_grid` (default: quarter-octave grid
/// from `ω` to `λ_max`), fitted with `2s` where `N ~ λ^s`. Grid points with
/// `N = 0` are recorded but never fitted.
pub fn weyl_counting(values: &[f64], lambda_grid: Option<&[f64]>, window: Option<(f64, f64)>) -> Result<Estimate> {
    let (lambda_max, gap) = lambda_max_and_gap(values);
    let mut positive: Vec<f64> = values.iter().copied().filter(|l| !is_kernel(*l, lambda_max) && *l > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let window = match window {
        Some(w) => w,
        None => default_lambda_window(lambda_max, gap)?,
    };
    let grid: Vec<f64> = match lambda_grid {
        Some(g) => {
            if g.iter().any(|l| !(*l > 0.0)) || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Parameter("λ grid must be positive and strictly ascending".into()));
            }
            g.to_vec()
        }
        None => geometric_lambda_grid(gap.unwrap_or(1.0), lambda_max),
    };
    let counts: Vec<(f64, f64)> = grid.iter().map(|&l| (l, positive.partition_point(|v| *v <= l) as f64)).collect();
    let fitted: Vec<(f64, f64)> = counts.iter().copied().filter(|(_, c)| *c > 0.0).collect();
    let fit = fit_with_kind(&fitted, window, FitKind::HalfGrowth)?;
    let samples = counts.into_iter().map(|(x, value)| Sample { x, value, in_window: value > 0.0 && in_window(x, window) }).collect();
    Ok(Estimate { fit, samples })
}

/// Counting function including the kernel: `#{k : λ_k ≤ n}`.
pub fn growth_table(values: &[f64], n_max: usize) -> Vec<(usize, usize, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=n_max)
        .map(|n| {
            let c = sorted.partition_point(|v| *v <= n as f64);
            (n, c, (c as f64).powf(1.0 / n as f64))
        })
        .collect()
}

/// Finite stand-in for `limsup_n N(n)^{1/n}`: the maximum of `N(n)^{1/n}`
/// over the upper half `⌈n_max/2⌉ ≤ n ≤ n_max`. Taking the supremum over all
/// `n` would be dominated by the first few integers, where `N(n)^{1/n}` says
/// nothing about the tail.
pub fn spectral_growth_rate(values: &[f64], n_max: usize) -> Result<f64> {
    if n_max < 2 {
        return Err(Error::Parameter(format!("n_max must be at least 2, got {n_max}")));
    }
    let start = n_max.div_ceil(2);
    Ok(growth_table(values, n_max).into_iter().filter(|(n, _, _)| *n >= start).map(|(_, _, r)| r).fold(0.0, f64::max))
}

/// Divergence threshold of the zeta probe.
pub const ZETA_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaProbe {
    pub alphas: Vec<f64>,
    /// `Z_m(α) = Σ_{λ>0} λ^{−α/2}`, one row per level.
    pub sums: Vec<Vec<f64>>,
    /// `Z_m / Z_{m−1}`, one row per consecutive pair of levels.
    pub total_ratios: Vec<Vec<f64>>,
    /// `(Z_m − Z_{m−1}) / (Z_{m−1} − Z_{m−2})`, one row per consecutive triple.
    pub increment_ratios: Vec<Vec<f64>>,
    /// First `α` whose increment ratio across the three finest levels falls
    /// below `1 + ε`; `None` if no grid point qualifies.
    pub critical_alpha: Option<f64>,
    pub epsilon: f64,
}

/// Locates the abscissa of convergence of `tr |D|^{−α}` across refinements.
///
/// Each level contributes the `D²` spectrum of one refinement. For a
/// `k`-dimensional family the new modes added by a refinement contribute
/// `~ N^{k−α}` to `Z`, so consecutive increments have ratio `2^{(k−α)}` under
/// side doubling: above one while the sum keeps growing, below one once it
/// converges.
pub fn zeta_probe(levels: &[Vec<f64>], alphas: &[f64]) -> Result<ZetaProbe> {
    if levels.len() < 3 {
        return Err(Error::InsufficientLevels(levels.len()));
    }
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) || alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("α grid must be positive and strictly ascending".into()));
    }
    let sums: Vec<Vec<f64>> = levels
        .iter()
        .map(|vals| {
            let top = vals.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
            let mut pos: Vec<f64> = vals.iter().copied().filter(|l| !is_kernel(*l, top) && *l > 0.0).collect();
            // Largest eigenvalues (smallest terms) first.
            pos.sort_by(|a, b| b.total_cmp(a));
            alphas.iter().map(|a| pos.iter().map(|l| l.powf(-a / 2.0)).sum()).collect()
        })
        .collect();
    let total_ratios: Vec<Vec<f64>> = sums.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b / a).collect()).collect();
    let increment_ratios: Vec<Vec<f64>> = sums
        .windows(3)
        .map(|w| (0..alphas.len()).map(|j| (w[2][j] - w[1][j]) / (w[1][j] - w[0][j])).collect())
        .collect();
    let last = increment_ratios.last().expect("at least one triple");
    let critical_alpha = alphas.iter().zip(last).find(|(_, r)| **r < 1.0 + ZETA_EPSILON).map(|(a, _)| *a);
    Ok(ZetaProbe { alphas: alphas.to_vec(), sums, total_ratios, increment_ratios, critical_alpha, epsilon: ZETA_EPSILON })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub name: String,
    pub passed: bool,
    pub spectral: f64,
    pub reference: f64,
    pub slack: f64,
    pub spectral_fit: DimensionFit,
    pub reference_fits: Vec<DimensionFit>,
    pub detail: String,
}

/// Passes iff `α̂ ≤ d̂ + slack`.
pub fn theorem_gate(spectral_fit: &DimensionFit, cv_fit: &DimensionFit, slack: f64) -> GateOutcome {
    let (a, d) = (spectral_fit.exponent, cv_fit.exponent);
    GateOutcome {
        name: "theorem".into(),
        passed: a <= d + slack,
        spectral: a,
        reference: d,
        slack,
        spectral_fit: spectral_fit.clone(),
        reference_fits: vec![cv_fit.clone()],
        detail: format!("spectral {a:.4} <= cv {d:.4} + {slack}"),
    }
}

/// Passes iff `|α̂ − 2δ̂| ≤ slack` for both the upper-estimate exponent
/// (from `max_x p_t(x,x)`) and the lower-estimate exponent (from the mean
/// diagonal). Each fit already reports `2δ̂`.
pub fn two_sided_gate(spectral_fit: &DimensionFit, upper_fit: &DimensionFit, lower_fit: &DimensionFit, slack: f64) -> GateOutcome {
    let a = spectral_fit.exponent;
    let (du, dl) = (upper_fit.exponent, lower_fit.exponent);
    let worst = (a - du).abs().max((a - dl).abs());
    GateOutcome {
        name: "two_sided".into(),
        passed: worst <= slack,
        spectral: a,
        reference: if (a - du).abs() >= (a - dl).abs() { du } else { dl },
        slack,
        spectral_fit: spectral_fit.clone(),
        reference_fits: vec![upper_fit.clone(), lower_fit.clone()],
        detail: format!("|{a:.4} - 2δ| with 2δ_upper = {du:.4}, 2δ_lower = {dl:.4}: worst {worst:.4} <= {slack}"),
    }
}

/// `|S_n| = 2k(2k−1)^{n−1}` for `n ≥ 1`, `|S_0| = 1`; `None` on overflow.
pub fn sphere_count(k: usize, n: usize) -> Option<u128> {
    if n == 0 {
        return Some(1);
    }
    let base = 2 * k as u128 - 1;
    let mut c = 2 * k as u128;
    for _ in 1..n {
        c = c.checked_mul(base)?;
    }
    Some(c)
}

/// Breadth-first search in the Cayley graph of the free group `F_k` with
/// reduced words as vertices. Letters `0..k` are generators, `k..2k` their
/// inverses.
pub fn sphere_counts_bfs(k: usize, n_max: usize) -> Vec<u128> {
    let inv = |a: u8| if (a as usize) < k { a + k as u8 } else { a - k as u8 };
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    seen.insert(Vec::new());
    let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
    let mut counts = vec![1u128];
    for _ in 0..n_max {
        let mut next = Vec::new();
        for w in &frontier {
            for a in 0..(2 * k) as u8 {
                let mut v = w.clone();
                if v.last() == Some(&inv(a)) {
                    v.pop();
                } else {
                    v.push(a);
                }
                if seen.insert(v.clone()) {
                    next.push(v);
                }
            }
        }
        counts.push(next.len() as u128);
        frontier = next;
    }
    counts
}

/// Number of sphere sizes stored in a profile.
pub const SPHERE_TABLE_LEN: usize = 16;
/// Sphere sizes cross-checked by enumeration.
pub const SPHERE_BFS_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapidDecayProfile {
    pub k: usize,
    pub r: u32,
    pub n_max: usize,
    pub sphere_counts: Vec<u128>,
    pub sphere_counts_match_bfs: bool,
    /// `(t, B(t))`.
    pub bound_samples: Vec<(f64, f64)>,
    /// Fit of `B(t)² ~ t^{−(2r+1)}`.
    pub fit: DimensionFit,
    pub fitted_exponent: f64,
    pub claimed_dimension: f64,
}

/// `t = 2^{−i}`, `i = 4..=12`.
pub fn default_rapid_decay_grid() -> TimeGrid {
    TimeGrid::explicit((4..=12).map(|i| 0.5_f64.powi(i)).collect()).expect("positive grid")
}

/// Smallest `n` with `e^{−2tn} n^{2r} < 1e-15` beyond the mode of the summand.
pub fn required_n_max(t_min: f64, r: u32) -> usize {
    let mode = (r as f64 / t_min).ceil() as usize;
    let mut n = mode.max(1);
    while tail_term(t_min, r, n) >= 1e-15 {
        n = n + n / 8 + 1;
    }
    n
}

fn tail_term(t: f64, r: u32, n: usize) -> f64 {
    (-2.0 * t * n as f64 + 2.0 * r as f64 * (n as f64).ln()).exp()
}

pub fn rapid_decay_profile(k: usize, r: u32, grid: &TimeGrid, n_max: Option<usize>) -> Result<RapidDecayProfile> {
    if k < 2 || r < 1 {
        return Err(Error::Parameter(format!("rapid decay needs k >= 2 and r >= 1, got k = {k}, r = {r}")));
    }
    if let Some(t) = grid.times().iter().find(|t| **t >= 1.0) {
        return Err(Error::Parameter(format!("rapid-decay grid must lie in (0, 1), got {t}")));
    }
    let t_min = grid.min();
    let n_max = n_max.unwrap_or_else(|| required_n_max(t_min, r));
    let tail = tail_term(t_min, r, n_max);
    if !(tail < 1e-15) {
        return Err(Error::Tail { n_max, t: t_min, tail });
    }
    let sphere_counts: Vec<u128> = (0..SPHERE_TABLE_LEN).map_while(|n| sphere_count(k, n)).collect();
    let bfs = sphere_counts_bfs(k, SPHERE_BFS_DEPTH);
    let sphere_counts_match_bfs = bfs.iter().zip(&sphere_counts).all(|(a, b)| a == b);
    let mut squares = Vec::with_capacity(grid.len());
    for &t in grid.times() {
        // Tail first, so the large early terms are added last.
        let s: f64 = (0..=n_max).rev().map(|n| (-2.0 * t * n as f64).exp() * ((n + 1) as f64).powi(2 * r as i32)).sum();
        squares.push((t, s));
    }
    let window = (t_min, grid.times()[0]);
    let fit = fit_with_kind(&squares, window, FitKind::Raw)?;
    Ok(RapidDecayProfile {
        k,
        r,
        n_max,
        sphere_counts,
        sphere_counts_match_bfs,
        bound_samples: squares.iter().map(|(t, s)| (*t, s.sqrt())).collect(),
        fitted_exponent: fit.exponent,
        fit,
        claimed_dimension: 4.0 * r as f64 + 2.0,
    })
}

/// `[2^{−20}, 0.2/(4π²)]`: the torus gap is `4π²`.
pub fn default_torus_cb_window() -> (f64, f64) {
    (0.5_f64.powi(20), UPPER_TIME_FACTOR / (4.0 * PI * PI))
}

/// Samples of `‖h_t‖_∞` on `T^d`, fitted with `d = −2·slope`.
pub fn torus_cb_dimension(fourier: &TorusFourierModel, grid: &TimeGrid, window: Option<(f64, f64)>) -> Result<Estimate> {
    if let Some(t) = grid.times().iter().find(|t| **t > 1.0) {
        return Err(Error::Parameter(format!("torus time grid must lie in (0, 1], got {t}")));
    }
    let window = window.unwrap_or_else(default_torus_cb_window);
    let mut samples = Vec::with_capacity(grid.len());
    for &t in grid.times() {
        samples.push((t, torus_fourier_heat_sup(fourier, t)?));
    }
    estimate(samples, window, FitKind::HalfDecay)
}
