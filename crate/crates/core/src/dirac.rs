//! Derivations and Hodge–Dirac operators on finite models.
//!
//! The edge space is `ℓ²(E)` with counting measure. For an oriented edge
//! `e = (s → d)` with conductance `w_e`, `(∂f)(e) = √w_e (f(d) − f(s))`; the
//! default orientation is `s = u < v = d`. The L²(μ)-adjoint is
//! `∂* = M⁻¹ ∂ᵀ`, so `∂*∂ = M⁻¹ L = A`.
//!
//! Functions act on edges on the left by `f(s)` and on the right by `f(d)`,
//! which gives the twisted Leibniz rule `∂(fg) = f(s)·∂g + ∂f·g(d)`.
//!
//! In the orthonormal basis `(e_x/√μ_x) ⊕ (e_e)` the Dirac operator is
//! `[[0, Bᵀ], [B, 0]]` with `B = ∂ M^{-1/2}`; large models never materialize it.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::FiniteModel;
use crate::linalg::{is_kernel, sym_eigenvalues, SymMatrix};

/// Above this many edges the Dirac spectrum is assembled from the generator
/// spectrum through the pairing of nonzero eigenvalues of `∂*∂` and `∂∂*`.
pub const DIRECT_DIRAC_MAX_EDGES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedEdge {
    pub source: usize,
    pub target: usize,
    pub sqrt_w: f64,
}

#[derive(Debug, Clone)]
pub struct Derivation {
    model: Arc<FiniteModel>,
    edges: Vec<OrientedEdge>,
}

impl Derivation {
    pub fn new(model: Arc<FiniteModel>) -> Self {
        let edges = model
            .graph()
            .edges()
            .iter()
            .map(|e| OrientedEdge { source: e.u, target: e.v, sqrt_w: e.w.sqrt() })
            .collect();
        Derivation { model, edges }
    }

    /// Reverses the edges flagged in `flip`.
    pub fn with_orientation(model: Arc<FiniteModel>, flip: &[bool]) -> Result<Self> {
        let mut d = Self::new(model);
        if flip.len() != d.edges.len() {
            return Err(Error::Shape(format!("{} orientation flags for {} edges", flip.len(), d.edges.len())));
        }
        for (e, &f) in d.edges.iter_mut().zip(flip) {
            if f {
                std::mem::swap(&mut e.source, &mut e.target);
            }
        }
        Ok(d)
    }

    pub fn model(&self) -> &FiniteModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<FiniteModel> {
        &self.model
    }

    pub fn edges(&self) -> &[OrientedEdge] {
        &self.edges
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.edges.iter().map(|e| e.sqrt_w * (f[e.target] - f[e.source])).collect()
    }

    /// `∂* g = M⁻¹ ∂ᵀ g`.
    pub fn apply_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (e, val) in self.edges.iter().zip(g) {
            out[e.target] += e.sqrt_w * val;
            out[e.source] -= e.sqrt_w * val;
        }
        for (o, m) in out.iter_mut().zip(self.model.space().weights()) {
            *o /= m;
        }
        out
    }

    /// `|E| × n` matrix of `∂`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_edges(), self.n());
        for (k, e) in self.edges.iter().enumerate() {
            m[(k, e.target)] += e.sqrt_w;
            m[(k, e.source)] -= e.sqrt_w;
        }
        m
    }

    /// `n × |E|` matrix of `∂* = M⁻¹∂ᵀ`.
    pub fn adjoint_matrix(&self) -> DMatrix<f64> {
        let mut m = self.matrix().transpose();
        for (i, mu) in self.model.space().weights().iter().enumerate() {
            m.row_mut(i).scale_mut(1.0 / mu);
        }
        m
    }

    /// `B = ∂ M^{-1/2}`.
    pub fn orthonormal_matrix(&self) -> DMatrix<f64> {
        let mut b = self.matrix();
        for (j, mu) in self.model.space().weights().iter().enumerate() {
            b.column_mut(j).scale_mut(1.0 / mu.sqrt());
        }
        b
    }

    /// `∂*∂`, as an operator on functions.
    pub fn star_d(&self) -> DMatrix<f64> {
        self.adjoint_matrix() * self.matrix()
    }

    /// `∂∂*`, as an operator on edge functions.
    pub fn d_star(&self) -> DMatrix<f64> {
        self.matrix() * self.adjoint_matrix()
    }

    /// `‖∂*∂ − A‖_max / ‖A‖_max`, with `A` assembled from the graph rather
    /// than the derivation. Sparse, so it runs on any model size.
    pub fn factorization_error(&self) -> f64 {
        let mu = self.model.space().weights();
        let mut a: SparseRows = vec![BTreeMap::new(); self.n()];
        for e in self.model.graph().edges() {
            *a[e.u].entry(e.u).or_insert(0.0) += e.w / mu[e.u];
            *a[e.u].entry(e.v).or_insert(0.0) -= e.w / mu[e.u];
            *a[e.v].entry(e.v).or_insert(0.0) += e.w / mu[e.v];
            *a[e.v].entry(e.u).or_insert(0.0) -= e.w / mu[e.v];
        }
        let star_d = sparse_product(&self.sparse_adjoint(), &self.sparse());
        relative(sparse_max_abs_diff(&star_d, &a), sparse_max_abs(&a))
    }

    /// Rows of `∂`, indexed by edge.
    fn sparse(&self) -> SparseRows {
        self.edges
            .iter()
            .map(|e| {
                let mut row = BTreeMap::new();
                *row.entry(e.target).or_insert(0.0) += e.sqrt_w;
                *row.entry(e.source).or_insert(0.0) -= e.sqrt_w;
                row
            })
            .collect()
    }

    /// Rows of `∂* = M⁻¹∂ᵀ`, indexed by vertex; columns are edges.
    fn sparse_adjoint(&self) -> SparseRows {
        let mu = self.model.space().weights();
        let mut rows: SparseRows = vec![BTreeMap::new(); self.n()];
        for (k, e) in self.edges.iter().enumerate() {
            *rows[e.target].entry(k).or_insert(0.0) += e.sqrt_w / mu[e.target];
            *rows[e.source].entry(k).or_insert(0.0) -= e.sqrt_w / mu[e.source];
        }
        rows
    }

    /// `dim ker ∂` from the eigenvalues of `BᵀB`.
    pub fn kernel_dim(&self) -> Result<usize> {
        let b = self.orthonormal_matrix();
        let values = sym_eigenvalues(&SymMatrix::symmetrize(b.transpose() * &b))?;
        let m = values.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
        Ok(values.iter().filter(|l| is_kernel(**l, m)).count())
    }
}

/// Row-major sparse matrix, one ordered column map per row.
type SparseRows = Vec<BTreeMap<usize, f64>>;

fn sparse_product(a: &SparseRows, b: &SparseRows) -> SparseRows {
    a.iter()
        .map(|row| {
            let mut out = BTreeMap::new();
            for (&j, &v) in row {
                for (&k, &u) in &b[j] {
                    *out.entry(k).or_insert(0.0) += v * u;
                }
            }
            out
        })
        .collect()
}

fn sparse_max_abs(a: &SparseRows) -> f64 {
    a.iter().flat_map(|r| r.values()).fold(0.0, |m, v| m.max(v.abs()))
}

fn sparse_max_abs_diff(a: &SparseRows, b: &SparseRows) -> f64 {
    let mut m = 0.0_f64;
    for (ra, rb) in a.iter().zip(b) {
        for (k, v) in ra {
            m = m.max((v - rb.get(k).copied().unwrap_or(0.0)).abs());
        }
        for (k, v) in rb {
            if !ra.contains_key(k) {
                m = m.max(v.abs());
            }
        }
    }
    m
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn build_derivation(model: Arc<FiniteModel>) -> Derivation {
    Derivation::new(model)
}

/// Where an eigenvalue list of `D²` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiracSpectrumSource {
    /// Independent eigensolves of both diagonal blocks.
    Direct,
    /// Generator spectrum, nonzero part doubled, padded with zeros.
    Paired,
}

#[derive(Debug, Clone)]
pub struct HodgeDirac {
    derivation: Derivation,
}

impl HodgeDirac {
    pub fn new(derivation: Derivation) -> Self {
        HodgeDirac { derivation }
    }

    pub fn from_model(model: Arc<FiniteModel>) -> Self {
        Self::new(Derivation::new(model))
    }

    pub fn derivation(&self) -> &Derivation {
        &self.derivation
    }

    pub fn model(&self) -> &FiniteModel {
        self.derivation.model()
    }

    /// `n + |E|`.
    pub fn dim(&self) -> usize {
        self.derivation.n() + self.derivation.num_edges()
    }

    /// `[[0, ∂*], [∂, 0]]` in function coordinates.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.derivation.n();
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        m.view_mut((0, n), (n, self.derivation.num_edges())).copy_from(&self.derivation.adjoint_matrix());
        m.view_mut((n, 0), (self.derivation.num_edges(), n)).copy_from(&self.derivation.matrix());
        m
    }

    /// `[[0, Bᵀ], [B, 0]]`, exactly symmetric.
    pub fn orthonormal_matrix(&self) -> SymMatrix {
        let n = self.derivation.n();
        let b = self.derivation.orthonormal_matrix();
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        m.view_mut((0, n), (n, self.derivation.num_edges())).copy_from(&b.transpose());
        m.view_mut((n, 0), (self.derivation.num_edges(), n)).copy_from(&b);
        SymMatrix::symmetrize(m)
    }

    /// `‖D² − blockdiag(∂*∂, ∂∂*)‖_max / ‖blockdiag‖_max` in function
    /// coordinates, computed with sparse products.
    pub fn square_block_error(&self) -> f64 {
        let n = self.derivation.n();
        let d = self.derivation.sparse();
        let adj = self.derivation.sparse_adjoint();
        let shift = |rows: SparseRows, by: usize| -> SparseRows {
            rows.into_iter().map(|r| r.into_iter().map(|(j, v)| (j + by, v)).collect()).collect()
        };
        // [[0, ∂*], [∂, 0]]
        let mut dirac = shift(adj.clone(), n);
        dirac.extend(d.iter().cloned());
        let sq = sparse_product(&dirac, &dirac);
        let mut blocks = sparse_product(&adj, &d);
        blocks.extend(shift(sparse_product(&d, &adj), n));
        relative(sparse_max_abs_diff(&sq, &blocks), sparse_max_abs(&blocks))
    }

    /// Eigenvalues of `D` by a direct solve of the orthonormal matrix.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        sym_eigenvalues(&self.orthonormal_matrix())
    }

    /// Eigenvalues of `D²`, ascending, with the method used.
    pub fn squared_spectrum(&self) -> Result<(Vec<f64>, DiracSpectrumSource)> {
        if self.derivation.num_edges() <= DIRECT_DIRAC_MAX_EDGES {
            let b = self.derivation.orthonormal_matrix();
            let mut values = sym_eigenvalues(&SymMatrix::symmetrize(b.transpose() * &b))?;
            values.extend(sym_eigenvalues(&SymMatrix::symmetrize(&b * b.transpose()))?);
            values.sort_by(f64::total_cmp);
            Ok((values, DiracSpectrumSource::Direct))
        } else {
            Ok((self.paired_squared_spectrum()?, DiracSpectrumSource::Paired))
        }
    }

    /// `spec(A) ∪ spec_{≠0}(A) ∪ {0}^{|E| − rank}`.
    pub fn paired_squared_spectrum(&self) -> Result<Vec<f64>> {
        let spec = self.model().spectral()?;
        let nonzero = spec.nonzero_eigenvalues();
        let pad = self.derivation.num_edges().saturating_sub(nonzero.len());
        let mut values: Vec<f64> = spec.eigenvalues.clone();
        values.extend(nonzero);
        values.extend(std::iter::repeat(0.0).take(pad));
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// Multiplication by `f` on vertices and by `f(source)` on edges.
    pub fn representation(&self, f: &[f64]) -> Vec<f64> {
        let mut diag = f.to_vec();
        diag.extend(self.derivation.edges().iter().map(|e| f[e.source]));
        diag
    }
}

pub fn assemble_dirac(d: Derivation) -> HodgeDirac {
    HodgeDirac::new(d)
}

/// `[D, π(f)]` in function coordinates.
pub fn commutator(hd: &HodgeDirac, f: &[f64]) -> Result<DMatrix<f64>> {
    if f.len() != hd.derivation.n() {
        return Err(Error::Shape(format!("function must have length {}", hd.derivation.n())));
    }
    let d = hd.matrix();
    let pi = DVector::from_vec(hd.representation(f));
    let mut dp = d.clone();
    for (j, p) in pi.iter().enumerate() {
        dp.column_mut(j).scale_mut(*p);
    }
    let mut pd = d;
    for (i, p) in pi.iter().enumerate() {
        pd.row_mut(i).scale_mut(*p);
    }
    Ok(dp - pd)
}

/// Per-vertex terms `g_z(f) = μ_z⁻¹ Σ_{e: target(e)=z} w_e (f(z) − f(source e))²`.
pub fn commutator_vertex_terms(d: &Derivation, f: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; d.n()];
    for e in d.edges() {
        let df = e.sqrt_w * (f[e.target] - f[e.source]);
        g[e.target] += df * df;
    }
    for (v, m) in g.iter_mut().zip(d.model().space().weights()) {
        *v /= m;
    }
    g
}

/// `‖[D, π(f)]‖` from the closed form `max_z g_z(f)^{1/2}`.
pub fn commutator_norm(hd: &HodgeDirac, f: &[f64]) -> Result<f64> {
    if f.len() != hd.derivation.n() {
        return Err(Error::Shape(format!("function must have length {}", hd.derivation.n())));
    }
    Ok(commutator_vertex_terms(&hd.derivation, f).into_iter().fold(0.0_f64, f64::max).sqrt())
}

/// `‖[D, π(f)]‖` by eigensolving `CᵀC` in the orthonormal basis.
pub fn commutator_norm_eig(hd: &HodgeDirac, f: &[f64]) -> Result<f64> {
    let c = commutator(hd, f)?;
    let s: Vec<f64> = hd
        .model()
        .space()
        .sqrt_weights()
        .into_iter()
        .chain(std::iter::repeat(1.0).take(hd.derivation.num_edges()))
        .collect();
    let ct = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] * s[i] / s[j]);
    let gram = SymMatrix::symmetrize(ct.transpose() * &ct);
    let top = sym_eigenvalues(&gram)?.last().copied().unwrap_or(0.0);
    Ok(top.max(0.0).sqrt())
}

/// `‖∂f‖` in `ℓ²(E)` and the sup over vertices of the squared-gradient
/// density, reported side by side with the commutator norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommutatorNorms {
    pub operator_norm: f64,
    pub closed_form: f64,
    pub gradient_l2: f64,
}

pub fn commutator_norms(hd: &HodgeDirac, f: &[f64]) -> Result<CommutatorNorms> {
    let grad = hd.derivation.apply(f);
    Ok(CommutatorNorms {
        operator_norm: commutator_norm_eig(hd, f)?,
        closed_form: commutator_norm(hd, f)?,
        gradient_l2: grad.iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SusyReport {
    pub star_d_spectrum: Vec<f64>,
    pub d_star_spectrum: Vec<f64>,
    pub star_d_kernel: usize,
    pub d_star_kernel: usize,
    pub max_relative_deviation: f64,
    pub passed: bool,
}

/// Compares the nonzero spectra of `∂*∂` (from the model) and `∂∂*` (direct
/// eigensolve of `BBᵀ`).
pub fn susy_pairing_check(d: &Derivation) -> Result<SusyReport> {
    let star_d = d.model().eigenvalues()?;
    let b = d.orthonormal_matrix();
    let d_star = sym_eigenvalues(&SymMatrix::symmetrize(&b * b.transpose()))?;
    let scale = star_d.iter().chain(&d_star).fold(0.0_f64, |a, l| a.max(l.abs()));
    let nz = |v: &[f64]| v.iter().copied().filter(|l| !is_kernel(*l, scale)).collect::<Vec<_>>();
    let (a, b) = (nz(&star_d), nz(&d_star));
    let max_relative_deviation = if a.len() != b.len() {
        f64::INFINITY
    } else {
        a.iter().zip(&b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs())).fold(0.0, f64::max)
    };
    Ok(SusyReport {
        star_d_kernel: star_d.len() - a.len(),
        d_star_kernel: d_star.len() - b.len(),
        star_d_spectrum: star_d,
        d_star_spectrum: d_star,
        passed: max_relative_deviation <= 1e-9,
        max_relative_deviation,
    })
}

/// Iteration budget of [`connes_distance`].
pub const CONNES_MAX_ITER: usize = 5000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnesDistance {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    /// A maximizer scaled to `‖[D, π(f)]‖ = 1`, zero off the component of `x`.
    pub witness: Vec<f64>,
}

/// `sup { f(x) − f(y) : ‖[D, π(f)]‖ ≤ 1 }`.
///
/// Writing `q(f)² = max_z g_z(f)`, the distance is `Q^{-1/2}` with
/// `Q = min { max_z g_z(f) : f(x) = 1, f(y) = 0 }`. By minimax,
/// `Q = max_{p ∈ Δ} C(p)`, where `C(p)` is the effective conductance between
/// `x` and `y` for edge conductances `p_{target(e)} w_e / μ_{target(e)}`.
/// `C` is concave; it is maximized by exponentiated-gradient ascent, whose
/// supergradient is `g(f_p)` for the harmonic interpolant `f_p`. Every
/// iterate gives `C(p) ≤ Q ≤ max_z g_z(f_p)`, and the solver stops once the
/// induced interval for the distance is shorter than `tol`.
pub fn connes_distance(hd: &HodgeDirac, x: usize, y: usize, tol: f64) -> Result<ConnesDistance> {
    let d = &hd.derivation;
    let n = d.n();
    if x >= n || y >= n {
        return Err(Error::Parameter(format!("vertices ({x}, {y}) outside 0..{n}")));
    }
    if x == y {
        return Err(Error::Parameter("distance endpoints must differ".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let labels = d.model().graph().component_labels();
    if labels[x] != labels[y] {
        return Err(Error::Unbounded { x, y });
    }
    let comp: Vec<usize> = (0..n).filter(|&z| labels[z] == labels[x]).collect();
    let mu = d.model().space().weights();
    let edges: Vec<&OrientedEdge> = d.edges().iter().filter(|e| labels[e.source] == labels[x]).collect();

    let mut p = vec![0.0; n];
    for &z in &comp {
        p[z] = 1.0 / comp.len() as f64;
    }
    let mut best_lower = 0.0_f64;
    let mut best_upper = f64::INFINITY;
    let mut best_f = vec![0.0; n];
    let mut gap = f64::INFINITY;

    for k in 1..=CONNES_MAX_ITER {
        let cond: Vec<f64> = edges.iter().map(|e| p[e.target] * e.sqrt_w * e.sqrt_w / mu[e.target]).collect();
        let f = harmonic_interpolant(n, &comp, &edges, &cond, x, y)?;
        let energy: f64 = edges.iter().zip(&cond).map(|(e, c)| c * (f[e.target] - f[e.source]).powi(2)).sum();
        let g = commutator_vertex_terms(d, &f);
        let upper = comp.iter().map(|&z| g[z]).fold(0.0, f64::max);
        best_lower = best_lower.max(energy);
        if upper < best_upper {
            best_upper = upper;
            best_f = f;
        }
        let dist_hi = if best_lower > 0.0 { best_lower.powf(-0.5) } else { f64::INFINITY };
        let dist_lo = best_upper.powf(-0.5);
        gap = dist_hi - dist_lo;
        if gap <= tol {
            let scale = best_upper.sqrt();
            return Ok(ConnesDistance {
                value: 0.5 * (dist_lo + dist_hi),
                lower: dist_lo,
                upper: dist_hi,
                iterations: k,
                witness: best_f.iter().map(|v| v / scale).collect(),
            });
        }
        let eta = 1.0 / (k as f64).sqrt();
        let top = upper.max(f64::MIN_POSITIVE);
        let mut total = 0.0;
        for &z in &comp {
            p[z] *= (eta * (g[z] - upper) / top).exp();
            total += p[z];
        }
        for &z in &comp {
            p[z] = (p[z] / total).max(1e-300);
        }
    }
    Err(Error::SolverBudget { iterations: CONNES_MAX_ITER, gap, tol })
}

/// Minimizer of `Σ c_e (f(t_e) − f(s_e))²` on `comp` with `f(x) = 1`, `f(y) = 0`.
fn harmonic_interpolant(
    n: usize,
    comp: &[usize],
    edges: &[&OrientedEdge],
    cond: &[f64],
    x: usize,
    y: usize,
) -> Result<Vec<f64>> {
    let free: Vec<usize> = comp.iter().copied().filter(|&z| z != x && z != y).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &z) in free.iter().enumerate() {
        slot[z] = i;
    }
    let m = free.len();
    let mut f = vec![0.0; n];
    f[x] = 1.0;
    if m == 0 {
        return Ok(f);
    }
    let mut lap = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (e, &c) in edges.iter().zip(cond) {
        let (a, b) = (e.source, e.target);
        for (p, q) in [(a, b), (b, a)] {
            if slot[p] != usize::MAX {
                lap[(slot[p], slot[p])] += c;
                if slot[q] != usize::MAX {
                    lap[(slot[p], slot[q])] -= c;
                } else {
                    rhs[slot[p]] += c * f[q];
                }
            }
        }
    }
    // Vertices whose conductances all vanished keep a tiny diagonal so the
    // system stays definite; their value does not affect the energy.
    for i in 0..m {
        if lap[(i, i)] <= 0.0 {
            lap[(i, i)] = 1.0;
        }
    }
    let sol = lap
        .cholesky()
        .ok_or_else(|| Error::Validation("Dirichlet problem is not positive definite".into()))?
        .solve(&rhs);
    for (i, &z) in free.iter().enumerate() {
        f[z] = sol[i];
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{build_sierpinski, build_torus_lattice, parse_graph, WeightedGraph};
    use crate::kernel::FiniteMeasureSpace;
    use crate::linalg::max_abs_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(n: usize, mu: Vec<f64>, edges: Vec<(usize, usize, f64)>) -> Arc<FiniteModel> {
        Arc::new(FiniteModel::new("t", FiniteMeasureSpace::new(mu).unwrap(), WeightedGraph::new(n, edges).unwrap()).unwrap())
    }

    fn single_edge() -> Arc<FiniteModel> {
        model(2, vec![0.5, 0.5], vec![(0, 1, 1.0)])
    }

    fn c4() -> Arc<FiniteModel> {
        Arc::new(parse_graph("graph 4 4\nedge 0 1 1\nedge 1 2 1\nedge 2 3 1\nedge 0 3 1\n", "c4").unwrap())
    }

    fn p3() -> Arc<FiniteModel> {
        model(3, vec![1.0 / 3.0; 3], vec![(0, 1, 1.0), (1, 2, 1.0)])
    }

    #[test]
    fn single_edge_derivation() {
        let d = Derivation::new(single_edge());
        assert_eq!(d.matrix(), DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]));
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
        assert!(max_abs_diff(&d.star_d(), &want) < 1e-15);
        assert_eq!(d.apply(&[3.0, 3.0]), vec![0.0]);
    }

    #[test]
    fn c4_rank() {
        let d = Derivation::new(c4());
        assert_eq!(d.n() - d.kernel_dim().unwrap(), 3);
    }

    #[test]
    fn adjoint_and_factorization_on_random_measure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..2.0)).collect();
        let edges = vec![(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.0), (3, 4, 3.0), (4, 5, 0.2), (0, 5, 1.1), (1, 4, 0.7)];
        let m = model(6, mu, edges);
        let d = Derivation::new(m.clone());
        let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = d.apply(&f).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs = m.space().inner(&f, &d.apply_adjoint(&g));
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(d.factorization_error() < 1e-10);
        assert_eq!(d.kernel_dim().unwrap(), m.spectral().unwrap().kernel_dim());
    }

    #[test]
    fn sparse_products_match_dense() {
        let mu = vec![0.3, 1.7, 0.9, 0.4, 2.2];
        let m = model(5, mu, vec![(0, 1, 0.5), (1, 2, 2.0), (2, 0, 1.5), (3, 4, 0.8), (1, 3, 0.1)]);
        let flip = [true, false, true, false, true];
        let d = Derivation::with_orientation(m, &flip).unwrap();
        let adj = d.sparse_adjoint();
        let dense = |rows: &SparseRows, cols: usize| {
            DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].get(&j).copied().unwrap_or(0.0))
        };
        assert!(max_abs_diff(&dense(&d.sparse(), 5), &d.matrix()) < 1e-15);
        assert!(max_abs_diff(&dense(&adj, 5), &d.adjoint_matrix()) < 1e-15);
        assert!(max_abs_diff(&dense(&sparse_product(&adj, &d.sparse()), 5), &d.star_d()) < 1e-14);
        let hd = HodgeDirac::new(d);
        let full = hd.matrix();
        let sq = &full * &full;
        assert!(max_abs_diff(&sq.view((0, 5), (5, 5)).into_owned(), &DMatrix::zeros(5, 5)) < 1e-15);
        assert!(hd.square_block_error() < 1e-15);
    }

    #[test]
    fn twisted_leibniz() {
        let d = Derivation::new(c4());
        let f = [1.0, -2.0, 0.5, 3.0];
        let g = [0.3, 1.0, -1.0, 2.0];
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a * b).collect();
        let lhs = d.apply(&fg);
        let (df, dg) = (d.apply(&f), d.apply(&g));
        for (k, e) in d.edges().iter().enumerate() {
            let rhs = f[e.source] * dg[k] + df[k] * g[e.target];
            assert!((lhs[k] - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_graph_has_zero_dirac() {
        let hd = HodgeDirac::from_model(model(3, vec![1.0; 3], vec![]));
        assert_eq!(hd.matrix(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn single_edge_dirac_spectrum() {
        let hd = HodgeDirac::from_model(single_edge());
        let ev = hd.eigenvalues().unwrap();
        assert!((ev[0] + 2.0).abs() < 1e-12 && ev[1].abs() < 1e-12 && (ev[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn c4_square_blocks_and_symmetry() {
        let hd = HodgeDirac::from_model(c4());
        assert!(hd.square_block_error() < 1e-12);
        let ev = hd.eigenvalues().unwrap();
        let neg: Vec<f64> = ev.iter().rev().map(|l| -l).collect();
        for (a, b) in ev.iter().zip(&neg) {
            assert!((a - b).abs() < 1e-9);
        }
        // D² spectrum = spec(∂*∂) ∪ spec(∂∂*).
        let d = hd.derivation();
        let mut joined = sym_eigenvalues(&SymMatrix::new(d.star_d()).unwrap()).unwrap();
        joined.extend(sym_eigenvalues(&SymMatrix::new(d.d_star()).unwrap()).unwrap());
        joined.sort_by(f64::total_cmp);
        let (sq, _) = hd.squared_spectrum().unwrap();
        for (a, b) in sq.iter().zip(&joined) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn paired_spectrum_matches_direct() {
        let hd = HodgeDirac::from_model(Arc::new(build_sierpinski(2).unwrap()));
        let (direct, src) = hd.squared_spectrum().unwrap();
        assert_eq!(src, DiracSpectrumSource::Direct);
        let paired = hd.paired_squared_spectrum().unwrap();
        let top = direct.last().unwrap();
        for (a, b) in direct.iter().zip(&paired) {
            assert!((a - b).abs() < 1e-10 * top);
        }
    }

    #[test]
    fn susy_examples() {
        let r = susy_pairing_check(&Derivation::new(single_edge())).unwrap();
        assert!(r.passed);
        assert_eq!(r.star_d_kernel as i64 - r.d_star_kernel as i64, 2 - 1);
        let nz: Vec<f64> = r.d_star_spectrum.iter().copied().filter(|l| *l > 1e-9).collect();
        assert!((nz[0] - 4.0).abs() < 1e-12);

        let g2 = Derivation::new(Arc::new(build_sierpinski(2).unwrap()));
        let r = susy_pairing_check(&g2).unwrap();
        assert!(r.passed, "{}", r.max_relative_deviation);
        assert_eq!(r.star_d_kernel as i64 - r.d_star_kernel as i64, g2.n() as i64 - g2.num_edges() as i64);
    }

    #[test]
    fn commutator_structure() {
        let m = c4();
        let hd = HodgeDirac::from_model(m.clone());
        assert!(commutator(&hd, &[2.0; 4]).unwrap().amax() == 0.0);

        let f = [0.3, -1.0, 2.0, 0.5];
        let g = [1.0, 1.5, -0.2, 0.0];
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let lin = commutator(&hd, &f).unwrap() + commutator(&hd, &g).unwrap();
        assert!(max_abs_diff(&commutator(&hd, &sum).unwrap(), &lin) < 1e-12);

        // Lower-left block acts by √w (f(target) − f(source)) g(target).
        let c = commutator(&hd, &f).unwrap();
        let n = 4;
        for (k, e) in hd.derivation().edges().iter().enumerate() {
            for x in 0..n {
                let want = if x == e.target { e.sqrt_w * (f[e.target] - f[e.source]) } else { 0.0 };
                assert!((c[(n + k, x)] - want).abs() < 1e-14);
            }
        }
        // Upper-right block is minus the adjoint of the lower-left one.
        let mu = m.space().weights();
        for (k, _) in hd.derivation().edges().iter().enumerate() {
            for x in 0..n {
                assert!((c[(x, n + k)] + c[(n + k, x)] / mu[x]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn commutator_norm_closed_form_matches_eigensolve() {
        let hd = HodgeDirac::from_model(single_edge());
        let f = [0.0, 1.0];
        // Only vertex 1 is a target: q(f)² = w·1²/μ₁ = 2.
        assert!((commutator_norm(&hd, &f).unwrap() - 2.0_f64.sqrt()).abs() < 1e-14);
        assert!((commutator_norm_eig(&hd, &f).unwrap() - 2.0_f64.sqrt()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hd = HodgeDirac::from_model(Arc::new(build_sierpinski(2).unwrap()));
        for _ in 0..5 {
            let f: Vec<f64> = (0..hd.model().n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = commutator_norm(&hd, &f).unwrap();
            let b = commutator_norm_eig(&hd, &f).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn commutator_vanishes_exactly_on_kernel() {
        let two = model(4, vec![0.25; 4], vec![(0, 1, 1.0), (2, 3, 1.0)]);
        let hd = HodgeDirac::from_model(two);
        assert_eq!(commutator_norm(&hd, &[1.0, 1.0, -3.0, -3.0]).unwrap(), 0.0);
        assert!(commutator_norm(&hd, &[1.0, 1.0, -3.0, -2.0]).unwrap() > 0.0);
    }

    #[test]
    fn spectra_are_orientation_invariant() {
        let m = Arc::new(build_torus_lattice(1, 10).unwrap());
        let flip: Vec<bool> = (0..10).map(|k| k % 3 == 0).collect();
        let a = HodgeDirac::new(Derivation::new(m.clone())).eigenvalues().unwrap();
        let b = HodgeDirac::new(Derivation::with_orientation(m, &flip).unwrap()).eigenvalues().unwrap();
        let top = a.last().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10 * top);
        }
    }

    fn brute_force(hd: &HodgeDirac, x: usize, y: usize, samples: usize) -> f64 {
        let n = hd.model().n();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut best = 0.0_f64;
        let free: Vec<usize> = (0..n).filter(|&z| z != x && z != y).collect();
        let mut f = vec![0.0; n];
        f[x] = 1.0;
        let q = commutator_norm(hd, &f).unwrap();
        if q > 0.0 {
            best = 1.0 / q;
        }
        if free.len() == 1 {
            // Fine 1-D scan over the free coordinate.
            for i in 0..=samples {
                f[free[0]] = -1.0 + 3.0 * i as f64 / samples as f64;
                let q = commutator_norm(hd, &f).unwrap();
                best = best.max(1.0 / q);
            }
        } else {
            for _ in 0..samples {
                for &z in &free {
                    f[z] = rng.gen_range(-1.0..2.0);
                }
                best = best.max(1.0 / commutator_norm(hd, &f).unwrap());
            }
        }
        best
    }

    #[test]
    fn two_point_distance() {
        let hd = HodgeDirac::from_model(single_edge());
        let r = connes_distance(&hd, 0, 1, 1e-6).unwrap();
        let q = commutator_norm(&hd, &[1.0, 0.0]).unwrap();
        assert!((r.value - 1.0 / q).abs() < 1e-6);
        let back = connes_distance(&hd, 1, 0, 1e-6).unwrap();
        assert!((back.value - r.value).abs() < 1e-6);
    }

    #[test]
    fn p3_distance_against_scan() {
        let hd = HodgeDirac::from_model(p3());
        for (x, y) in [(0, 1), (1, 2), (0, 2), (2, 0)] {
            let r = connes_distance(&hd, x, y, 1e-4).unwrap();
            let oracle = brute_force(&hd, x, y, 200_000);
            assert!((r.value - oracle).abs() < 1e-3, "({x},{y}): {} vs {oracle}", r.value);
            assert!(r.lower <= oracle + 1e-9 && oracle <= r.upper + 1e-4);
        }
        let d = |a, b| connes_distance(&hd, a, b, 1e-5).unwrap().value;
        assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-3);
        assert!((d(0, 2) - d(2, 0)).abs() < 1e-3);
    }

    #[test]
    fn distance_errors() {
        let two = HodgeDirac::from_model(model(4, vec![0.25; 4], vec![(0, 1, 1.0), (2, 3, 1.0)]));
        assert!(matches!(connes_distance(&two, 0, 2, 1e-3), Err(Error::Unbounded { .. })));
        assert!(connes_distance(&two, 2, 3, 1e-6).is_ok());
        assert!(matches!(connes_distance(&two, 1, 1, 1e-3), Err(Error::Parameter(_))));
    }
}
