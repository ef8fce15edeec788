//! Finite Dirichlet-form models.
//!
//! A model is a weighted graph (conductances `w_e`) on a finite measure space.
//! The generator in function coordinates is `A = M⁻¹ L`, with `L` the weighted
//! graph Laplacian and `M = diag(μ)`, so that
//! `(Af)(x) = μ_x⁻¹ Σ_{y~x} w_xy (f(x) − f(y))` and `E(f,g) = ⟨Af, g⟩_{L²(μ)}`.
//!
//! Spectral data is always computed for the conjugated matrix
//! `S = M^{1/2} A M^{-1/2} = M^{-1/2} L M^{-1/2}`, which is symmetric. Its
//! eigenvectors `ψ_k` are orthonormal in ℓ², and `φ_k = M^{-1/2} ψ_k` are the
//! L²(μ)-orthonormal eigenfunctions of `A`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FiniteMeasureSpace;
use crate::linalg::{sym_eig_auto, sym_eigenvalues, SpectralData, SymMatrix};

/// Largest vertex count any builder will produce.
pub const MAX_VERTICES: usize = 5000;

/// Largest gasket level.
pub const MAX_GASKET_LEVEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl WeightedGraph {
    /// Edges may be given in either orientation; they are stored with `u < v`
    /// in input order.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (k, (a, b, w)) in edges.into_iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::Validation(format!("edge {k} ({a}, {b}) references a vertex outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Validation(format!("edge {k} is a self-loop at vertex {a}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Validation(format!("edge {k} ({a}, {b}) has non-positive weight {w}")));
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((u, v)) {
                return Err(Error::Validation(format!("duplicate edge ({u}, {v})")));
            }
            out.push(Edge { u, v, w });
        }
        Ok(WeightedGraph { n, edges: out })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Weighted Laplacian `L`, with `fᵀ L g = Σ_e w_e (f(u)−f(v))(g(u)−g(v))`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.u, e.u)] += e.w;
            l[(e.v, e.v)] += e.w;
            l[(e.u, e.v)] -= e.w;
            l[(e.v, e.u)] -= e.w;
        }
        l
    }

    /// Connected-component label per vertex, numbered by smallest vertex.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let a = find(&mut parent, e.u);
            let b = find(&mut parent, e.v);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut labels = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut by_root = BTreeMap::new();
        for x in 0..self.n {
            let r = find(&mut parent, x);
            let id = *by_root.entry(r).or_insert_with(|| {
                next += 1;
                next - 1
            });
            labels[x] = id;
        }
        labels
    }

    pub fn num_components(&self) -> usize {
        self.component_labels().iter().max().map_or(0, |m| m + 1)
    }
}

/// A finite measure space with a Dirichlet form given by graph conductances.
#[derive(Debug, Clone)]
pub struct FiniteModel {
    label: String,
    space: FiniteMeasureSpace,
    graph: WeightedGraph,
    geometry: Option<Vec<[f64; 2]>>,
    spectral: OnceLock<SpectralData>,
}

/// Results of [`FiniteModel::check_invariants`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// `max |μ_x A(x,y) − μ_y A(y,x)|`.
    pub mu_symmetry: f64,
    /// Smallest eigenvalue of `A` divided by `max(1, ‖A‖_max)`.
    pub min_eigenvalue_rel: f64,
    /// `‖A·1‖_∞ / max(1, ‖A‖_max)`.
    pub row_sum: f64,
}

impl FiniteModel {
    pub fn new(label: impl Into<String>, space: FiniteMeasureSpace, graph: WeightedGraph) -> Result<Self> {
        if space.n() != graph.n() {
            return Err(Error::Shape(format!(
                "measure space has {} atoms but the graph has {} vertices",
                space.n(),
                graph.n()
            )));
        }
        Ok(FiniteModel { label: label.into(), space, graph, geometry: None, spectral: OnceLock::new() })
    }

    pub fn with_geometry(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.n() {
            return Err(Error::Shape("one coordinate pair per vertex required".into()));
        }
        self.geometry = Some(coords);
        Ok(self)
    }

    /// Installs a precomputed decomposition of [`Self::symmetric_generator`].
    pub fn with_spectral(self, s: SpectralData) -> Result<Self> {
        if s.eigenvalues.len() != self.n() || s.eigenvectors.shape() != (self.n(), self.n()) {
            return Err(Error::Shape("seeded spectral data does not match the model size".into()));
        }
        let _ = self.spectral.set(s);
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn space(&self) -> &FiniteMeasureSpace {
        &self.space
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn geometry(&self) -> Option<&[[f64; 2]]> {
        self.geometry.as_deref()
    }

    /// `A = M⁻¹ L` in function coordinates.
    pub fn generator(&self) -> DMatrix<f64> {
        let mut a = self.graph.laplacian();
        for (i, m) in self.space.weights().iter().enumerate() {
            a.row_mut(i).scale_mut(1.0 / m);
        }
        a
    }

    /// `M^{-1/2} L M^{-1/2}`, the generator in the orthonormal basis of L²(μ).
    pub fn symmetric_generator(&self) -> SymMatrix {
        let s = self.space.sqrt_weights();
        let l = self.graph.laplacian();
        SymMatrix::symmetrize(DMatrix::from_fn(self.n(), self.n(), |i, j| l[(i, j)] / (s[i] * s[j])))
    }

    /// `Af` evaluated edge by edge.
    pub fn apply_generator(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for e in self.graph.edges() {
            let d = e.w * (f[e.u] - f[e.v]);
            out[e.u] += d;
            out[e.v] -= d;
        }
        for (o, m) in out.iter_mut().zip(self.space.weights()) {
            *o /= m;
        }
        out
    }

    /// Cached eigendecomposition of [`Self::symmetric_generator`].
    pub fn spectral(&self) -> Result<&SpectralData> {
        if let Some(s) = self.spectral.get() {
            return Ok(s);
        }
        let s = sym_eig_auto(&self.symmetric_generator())?;
        let _ = self.spectral.set(s);
        Ok(self.spectral.get().expect("spectral cache filled"))
    }

    pub fn has_spectral(&self) -> bool {
        self.spectral.get().is_some()
    }

    /// Eigenvalues of `A`, ascending. Uses the cache when present.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        match self.spectral.get() {
            Some(s) => Ok(s.eigenvalues.clone()),
            None => sym_eigenvalues(&self.symmetric_generator()),
        }
    }

    /// L²(μ)-orthonormal eigenfunction `φ_k` as a vector.
    pub fn eigenfunction(&self, k: usize) -> Result<Vec<f64>> {
        let s = self.spectral()?;
        let r = self.space.sqrt_weights();
        Ok(s.eigenvectors.column(k).iter().zip(&r).map(|(p, q)| p / q).collect())
    }

    pub fn lambda_max(&self) -> Result<f64> {
        Ok(self.spectral()?.eigenvalues.last().copied().unwrap_or(0.0))
    }

    /// Smallest eigenvalue above the kernel threshold, if any.
    pub fn spectral_gap(&self) -> Result<Option<f64>> {
        Ok(self.spectral()?.nonzero_eigenvalues().first().copied())
    }

    pub fn check_invariants(&self) -> Result<ModelDiagnostics> {
        let a = self.generator();
        let w = self.space.weights();
        let scale = a.amax().max(1.0);
        let mut mu_symmetry = 0.0_f64;
        let mut row_sum = 0.0_f64;
        for i in 0..self.n() {
            row_sum = row_sum.max(a.row(i).sum().abs());
            for j in 0..i {
                mu_symmetry = mu_symmetry.max((w[i] * a[(i, j)] - w[j] * a[(j, i)]).abs());
            }
        }
        let min_eig = self.spectral()?.eigenvalues.first().copied().unwrap_or(0.0);
        Ok(ModelDiagnostics { mu_symmetry, min_eigenvalue_rel: min_eig / scale, row_sum: row_sum / scale })
    }
}

/// `E(f,g) = ⟨Af, g⟩_{L²(μ)}`.
pub fn dirichlet_energy(model: &FiniteModel, f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != model.n() || g.len() != model.n() {
        return Err(Error::Shape(format!("energy arguments must have length {}", model.n())));
    }
    Ok(model.space().inner(&model.apply_generator(f), g))
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_VERTICES {
        return Err(Error::Size(format!("{n} vertices exceeds the limit of {MAX_VERTICES}")));
    }
    Ok(())
}

/// Nearest-neighbour lattice on `(Z_N)^d` with uniform `μ = N^{-d}` and
/// conductances `N^{2-d}`, so `Af(x) = N² Σ_{y~x} (f(x) − f(y))`.
///
/// Vertex `(i₀, …, i_{d−1})` has index `i₀ + N i₁ + N² i₂`. For `d ≥ 2` the
/// spectral cache is filled from the Kronecker-sum structure of the
/// one-dimensional cycle.
pub fn build_torus_lattice(d: usize, n: usize) -> Result<FiniteModel> {
    if !(1..=3).contains(&d) {
        return Err(Error::Parameter(format!("torus dimension must be 1, 2 or 3, got {d}")));
    }
    if n < 3 {
        return Err(Error::Parameter(format!("torus side must be at least 3, got {n}")));
    }
    let total = n.checked_pow(d as u32).unwrap_or(usize::MAX);
    check_size(total)?;
    let w = (n as f64).powi(2 - d as i32);
    let mut edges = Vec::with_capacity(d * total);
    let stride = |axis: usize| n.pow(axis as u32);
    for x in 0..total {
        for axis in 0..d {
            let s = stride(axis);
            let i = (x / s) % n;
            let y = x - i * s + ((i + 1) % n) * s;
            edges.push((x, y, w));
        }
    }
    let coords = (0..total)
        .map(|x| {
            let c0 = (x % n) as f64 / n as f64;
            let c1 = if d >= 2 { ((x / n) % n) as f64 / n as f64 } else { 0.0 };
            [c0, c1]
        })
        .collect();
    let model = FiniteModel::new(format!("torus(d={d}, N={n})"), FiniteMeasureSpace::uniform(total)?, WeightedGraph::new(total, edges)?)?
        .with_geometry(coords)?;
    if d == 1 {
        return Ok(model);
    }
    let line = build_torus_lattice(1, n)?;
    let seeded = kronecker_sum_spectral(line.spectral()?, d);
    model.with_spectral(seeded)
}

/// Decomposition of `S ⊕ S ⊕ … ⊕ S` (`d` terms) from that of `S`, with the
/// first factor varying fastest.
fn kronecker_sum_spectral(base: &SpectralData, d: usize) -> SpectralData {
    let n = base.eigenvalues.len();
    let total = n.pow(d as u32);
    let mut values = Vec::with_capacity(total);
    let mut vectors = DMatrix::zeros(total, total);
    for k in 0..total {
        let idx: Vec<usize> = (0..d).map(|a| (k / n.pow(a as u32)) % n).collect();
        values.push(idx.iter().map(|&i| base.eigenvalues[i]).sum());
        let mut col = vectors.column_mut(k);
        for x in 0..total {
            let mut p = 1.0;
            for (a, &i) in idx.iter().enumerate() {
                p *= base.eigenvectors[((x / n.pow(a as u32)) % n, i)];
            }
            col[x] = p;
        }
    }
    SpectralData::sorted(values, vectors)
}

/// Circle grid with conductance `N·a_e` on edge `e = (e, e+1 mod N)` and
/// uniform `μ = 1/N`, so `Af(x) = N² Σ a_e (f(x) − f(y))`.
pub fn build_elliptic_grid(n: usize, coeffs: &[f64], delta: f64, gamma: f64) -> Result<FiniteModel> {
    if n < 3 {
        return Err(Error::Parameter(format!("grid size must be at least 3, got {n}")));
    }
    check_size(n)?;
    if !(delta > 0.0 && delta <= gamma && gamma.is_finite()) {
        return Err(Error::Parameter(format!("ellipticity bounds need 0 < delta <= gamma, got ({delta}, {gamma})")));
    }
    if coeffs.len() != n {
        return Err(Error::Shape(format!("{n} coefficients expected, got {}", coeffs.len())));
    }
    for (edge, &value) in coeffs.iter().enumerate() {
        if !(value >= delta && value <= gamma) {
            return Err(Error::Coefficient { edge, value, delta, gamma });
        }
    }
    let scale = n as f64;
    let edges = (0..n).map(|e| (e, (e + 1) % n, scale * coeffs[e]));
    let coords = (0..n).map(|x| [x as f64 / n as f64, 0.0]).collect();
    FiniteModel::new(
        format!("elliptic(N={n}, delta={delta}, gamma={gamma})"),
        FiniteMeasureSpace::uniform(n)?,
        WeightedGraph::new(n, edges)?,
    )?
    .with_geometry(coords)
}

/// Coefficients drawn uniformly from `[lo, hi]` with a ChaCha8 stream.
pub fn random_coefficients(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// `|V_m| = (3^{m+1} + 3)/2`.
pub fn gasket_vertex_count(m: usize) -> usize {
    (3usize.pow(m as u32 + 1) + 3) / 2
}

/// Level-`m` approximation of the Sierpiński gasket with conductance
/// `(5/3)^m` on each side of each `m`-cell and uniform `μ = 1/|V_m|`.
///
/// Points are tracked in integer coordinates on the triangular lattice of
/// mesh `2^{-m}` (basis `(1,0)`, `(1/2, √3/2)`); vertices are numbered in
/// lexicographic order of (row, column).
pub fn build_sierpinski(m: usize) -> Result<FiniteModel> {
    if m == 0 {
        return Err(Error::Parameter("gasket level must be at least 1".into()));
    }
    if m > MAX_GASKET_LEVEL {
        return Err(Error::Size(format!(
            "gasket level {m} exceeds {MAX_GASKET_LEVEL} ({} vertices)",
            gasket_vertex_count(m)
        )));
    }
    let side = 1i64 << m;
    let mut cells: Vec<[(i64, i64); 3]> = vec![[(0, 0), (side, 0), (0, side)]];
    for _ in 0..m {
        let mut next = Vec::with_capacity(cells.len() * 3);
        for c in &cells {
            for i in 0..3 {
                let mid = |j: usize| ((c[i].0 + c[j].0) / 2, (c[i].1 + c[j].1) / 2);
                next.push([mid(0), mid(1), mid(2)]);
            }
        }
        cells = next;
    }
    let mut index: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for c in &cells {
        for p in c {
            index.insert((p.1, p.0), 0);
        }
    }
    for (k, v) in index.values_mut().enumerate() {
        *v = k;
    }
    let n = index.len();
    let w = (5.0_f64 / 3.0).powi(m as i32);
    let mut edges = Vec::with_capacity(cells.len() * 3);
    for c in &cells {
        let id = |p: (i64, i64)| index[&(p.1, p.0)];
        edges.push((id(c[0]), id(c[1]), w));
        edges.push((id(c[1]), id(c[2]), w));
        edges.push((id(c[0]), id(c[2]), w));
    }
    let h = 3.0_f64.sqrt() / 2.0;
    let coords = index
        .keys()
        .map(|&(b, a)| {
            let (a, b) = (a as f64 / side as f64, b as f64 / side as f64);
            [a + 0.5 * b, h * b]
        })
        .collect();
    FiniteModel::new(format!("gasket(m={m})"), FiniteMeasureSpace::uniform(n)?, WeightedGraph::new(n, edges)?)?
        .with_geometry(coords)
}

/// Parses the line-oriented graph format.
///
/// ```text
/// # comment
/// graph <n> <e>
/// measure <x> <mu_x>     (either none or exactly one per vertex)
/// edge <u> <v> <w>       (exactly e lines)
/// ```
///
/// Without `measure` lines the counting measure `μ ≡ 1` is used.
pub fn parse_graph(text: &str, origin: &str) -> Result<FiniteModel> {
    let err = |line: usize, message: String| Error::Parse { path: origin.to_string(), line, message };
    let mut header: Option<(usize, usize)> = None;
    let mut measure: Vec<Option<f64>> = Vec::new();
    let mut measure_lines = 0;
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut edge_line: Vec<usize> = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(line, format!("expected a non-negative integer, got `{s}`")));
        let real = |s: &str| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(err(line, format!("expected a finite real number, got `{s}`"))),
        };
        match fields[0] {
            "graph" => {
                if header.is_some() {
                    return Err(err(line, "duplicate `graph` header".into()));
                }
                if fields.len() != 3 {
                    return Err(err(line, "expected `graph <n> <e>`".into()));
                }
                let n = int(fields[1])?;
                if n == 0 {
                    return Err(err(line, "graph needs at least one vertex".into()));
                }
                check_size(n).map_err(|e| err(line, e.to_string()))?;
                header = Some((n, int(fields[2])?));
                measure = vec![None; n];
            }
            "measure" => {
                let (n, _) = header.ok_or_else(|| err(line, "`measure` before `graph` header".into()))?;
                if !edges.is_empty() {
                    return Err(err(line, "`measure` lines must precede `edge` lines".into()));
                }
                if fields.len() != 3 {
                    return Err(err(line, "expected `measure <x> <mu>`".into()));
                }
                let x = int(fields[1])?;
                if x >= n {
                    return Err(err(line, format!("vertex {x} outside 0..{n}")));
                }
                let mu = real(fields[2])?;
                if mu <= 0.0 {
                    return Err(Error::Validation(format!("{origin}:{line}: measure of vertex {x} must be positive, got {mu}")));
                }
                if measure[x].replace(mu).is_some() {
                    return Err(err(line, format!("measure of vertex {x} given twice")));
                }
                measure_lines += 1;
            }
            "edge" => {
                let (n, _) = header.ok_or_else(|| err(line, "`edge` before `graph` header".into()))?;
                if fields.len() != 4 {
                    return Err(err(line, "expected `edge <u> <v> <w>`".into()));
                }
                let (u, v, w) = (int(fields[1])?, int(fields[2])?, real(fields[3])?);
                if u >= n || v >= n {
                    return Err(err(line, format!("edge ({u}, {v}) references a vertex outside 0..{n}")));
                }
                if w <= 0.0 {
                    return Err(Error::Validation(format!("{origin}:{line}: edge ({u}, {v}) has non-positive weight {w}")));
                }
                if u == v {
                    return Err(Error::Validation(format!("{origin}:{line}: self-loop at vertex {u}")));
                }
                let key = (u.min(v), u.max(v));
                if let Some(prev) = edges.iter().position(|&(a, b, _)| (a.min(b), a.max(b)) == key) {
                    return Err(Error::Validation(format!(
                        "{origin}:{line}: duplicate edge ({}, {}), first given on line {}",
                        key.0, key.1, edge_line[prev]
                    )));
                }
                edges.push((u, v, w));
                edge_line.push(line);
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        }
    }

    let (n, e) = header.ok_or_else(|| err(0, "missing `graph <n> <e>` header".into()))?;
    if edges.len() != e {
        return Err(err(0, format!("header declares {e} edges, found {}", edges.len())));
    }
    let weights = if measure_lines == 0 {
        vec![1.0; n]
    } else if measure_lines == n {
        measure.into_iter().map(|m| m.expect("all measures present")).collect()
    } else {
        return Err(err(0, format!("measure given for {measure_lines} of {n} vertices; give all or none")));
    };
    let label = Path::new(origin).file_stem().and_then(|s| s.to_str()).unwrap_or(origin).to_string();
    FiniteModel::new(format!("file({label})"), FiniteMeasureSpace::new(weights)?, WeightedGraph::new(n, edges)?)
}

pub fn build_from_file(path: impl AsRef<Path>) -> Result<FiniteModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(&text, &path.display().to_string())
}

/// Serializes a model in the graph file format. Reals use the shortest
/// representation that parses back to the same `f64`.
pub fn to_graph_text(model: &FiniteModel) -> String {
    let mut s = format!("graph {} {}\n", model.n(), model.graph().num_edges());
    for (x, m) in model.space().weights().iter().enumerate() {
        s.push_str(&format!("measure {x} {m}\n"));
    }
    for e in model.graph().edges() {
        s.push_str(&format!("edge {} {} {}\n", e.u, e.v, e.w));
    }
    s
}

/// Fourier model of the heat semigroup on the flat torus `T^d`: frequency
/// `m ∈ {−M..M}^d` has eigenvalue `4π²|m|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusFourierModel {
    pub dim: usize,
    pub cutoff: usize,
    pub rate: f64,
}

impl TorusFourierModel {
    pub fn new(dim: usize, cutoff: usize) -> Result<Self> {
        if dim == 0 || cutoff == 0 {
            return Err(Error::Parameter("torus Fourier model needs dim >= 1 and cutoff >= 1".into()));
        }
        Ok(TorusFourierModel { dim, cutoff, rate: 4.0 * PI * PI })
    }

    /// Cutoff `⌈√(40/(4π² t_min))⌉`, enough for every `t ≥ t_min`.
    pub fn for_min_time(dim: usize, t_min: f64) -> Result<Self> {
        if !(t_min > 0.0) {
            return Err(Error::Parameter(format!("t_min must be positive, got {t_min}")));
        }
        let m = (40.0 / (4.0 * PI * PI * t_min)).sqrt().ceil() as usize;
        Self::new(dim, m.max(1))
    }

    pub fn eigenvalue(&self, freq: &[i64]) -> f64 {
        self.rate * freq.iter().map(|k| (k * k) as f64).sum::<f64>()
    }
}

/// `‖h_t‖_∞ = h_t(0) = (Σ_{|k|≤M} e^{−4π² t k²})^d`. All Fourier coefficients
/// of `h_t` are positive, so the supremum sits at the origin.
pub fn torus_fourier_heat_sup(model: &TorusFourierModel, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("t must be positive, got {t}")));
    }
    let m = model.cutoff as f64;
    let tail = (-model.rate * t * m * m).exp();
    if !(tail < 1e-15) {
        return Err(Error::Cutoff { cutoff: model.cutoff, t, tail });
    }
    // Smallest terms first.
    let mut s = 0.0;
    for k in (1..=model.cutoff).rev() {
        s += 2.0 * (-model.rate * t * (k * k) as f64).exp();
    }
    s += 1.0;
    Ok(s.powi(model.dim as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, sym_eig};

    fn assert_spectrum(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() <= tol * b.abs().max(1.0), "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn torus_line_n4() {
        let m = build_torus_lattice(1, 4).unwrap();
        assert_spectrum(&m.eigenvalues().unwrap(), &[0.0, 32.0, 32.0, 64.0], 1e-12);
        let k = m.spectral().unwrap().kernel_dim();
        assert_eq!(k, 1);
        let phi0 = m.eigenfunction(0).unwrap();
        assert!(phi0.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn torus_generator_is_scaled_cycle() {
        let n = 9;
        let a = build_torus_lattice(1, n).unwrap().generator();
        for x in 0..n {
            assert!((a[(x, x)] - 2.0 * (n * n) as f64).abs() < 1e-9);
            assert!((a[(x, (x + 1) % n)] + (n * n) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn torus_2d_tensor_sum() {
        let n = 8;
        let line = build_torus_lattice(1, n).unwrap().eigenvalues().unwrap();
        let mut sums: Vec<f64> = line.iter().flat_map(|a| line.iter().map(move |b| a + b)).collect();
        sums.sort_by(f64::total_cmp);
        let sq = build_torus_lattice(2, n).unwrap();
        assert_spectrum(&sq.eigenvalues().unwrap(), &sums, 1e-12);
    }

    #[test]
    fn kronecker_seed_matches_direct_solve() {
        for (d, n) in [(2, 6), (3, 4)] {
            let m = build_torus_lattice(d, n).unwrap();
            let seeded = m.spectral().unwrap();
            let direct = sym_eig(&m.symmetric_generator(), 1e-13).unwrap();
            assert_spectrum(&seeded.eigenvalues, &direct.eigenvalues, 1e-10);
            assert!(seeded.orthonormality_error() < 1e-12);
            let s = m.symmetric_generator();
            assert!(max_abs_diff(&seeded.reconstruct(), s.entries()) < 1e-9 * s.entries().amax());
        }
    }

    #[test]
    fn torus_size_limit() {
        assert!(matches!(build_torus_lattice(2, 71), Err(Error::Size(_))));
        assert!(build_torus_lattice(3, 17).is_ok());
        assert!(matches!(build_torus_lattice(4, 8), Err(Error::Parameter(_))));
    }

    #[test]
    fn elliptic_reductions() {
        let n = 16;
        let flat = build_torus_lattice(1, n).unwrap().generator();
        let one = build_elliptic_grid(n, &vec![1.0; n], 0.5, 2.0).unwrap().generator();
        assert!(max_abs_diff(&flat, &one) < 1e-12 * flat.amax());
        let two = build_elliptic_grid(n, &vec![2.0; n], 0.5, 2.0).unwrap().generator();
        assert!(max_abs_diff(&(flat * 2.0), &two) < 1e-12 * two.amax());
    }

    #[test]
    fn elliptic_eigenvalues_between_bounds() {
        let n = 16;
        let c = random_coefficients(n, 0.5, 2.0, 7);
        let mid = build_elliptic_grid(n, &c, 0.5, 2.0).unwrap().eigenvalues().unwrap();
        let lo = build_elliptic_grid(n, &vec![0.5; n], 0.5, 2.0).unwrap().eigenvalues().unwrap();
        let hi = build_elliptic_grid(n, &vec![2.0; n], 0.5, 2.0).unwrap().eigenvalues().unwrap();
        for k in 0..n {
            assert!(lo[k] <= mid[k] + 1e-9 && mid[k] <= hi[k] + 1e-9);
        }
    }

    #[test]
    fn elliptic_rejects_out_of_range() {
        let mut c = vec![1.0; 8];
        c[3] = 3.0;
        assert!(matches!(build_elliptic_grid(8, &c, 0.5, 2.0), Err(Error::Coefficient { edge: 3, .. })));
    }

    #[test]
    fn gasket_counts() {
        let g1 = build_sierpinski(1).unwrap();
        assert_eq!(g1.n(), 6);
        assert_eq!(g1.graph().num_edges(), 9);
        assert!(g1.graph().edges().iter().all(|e| (e.w - 5.0 / 3.0).abs() < 1e-15));
        let mut prev = 3;
        for m in 1..=5 {
            let g = build_sierpinski(m).unwrap();
            assert_eq!(g.n(), 3 * prev - 3);
            assert_eq!(g.n(), gasket_vertex_count(m));
            assert_eq!(g.graph().num_edges(), 3usize.pow(m as u32 + 1));
            assert_eq!(g.graph().num_components(), 1);
            prev = g.n();
        }
        assert!(matches!(build_sierpinski(8), Err(Error::Size(_))));
    }

    #[test]
    fn gasket_edges_have_mesh_length() {
        let m = 3;
        let g = build_sierpinski(m).unwrap();
        let xy = g.geometry().unwrap();
        let h = 0.5_f64.powi(m as i32);
        for e in g.graph().edges() {
            let d = ((xy[e.u][0] - xy[e.v][0]).powi(2) + (xy[e.u][1] - xy[e.v][1]).powi(2)).sqrt();
            assert!((d - h).abs() < 1e-12);
        }
    }

    #[test]
    fn gasket_has_one_dimensional_kernel() {
        for m in 1..=3 {
            assert_eq!(build_sierpinski(m).unwrap().spectral().unwrap().kernel_dim(), 1);
        }
    }

    #[test]
    fn parse_c4_counting_measure() {
        let text = "# C4\ngraph 4 4\nedge 0 1 1\nedge 1 2 1\nedge 2 3 1.0\nedge 3 0 1e0\n";
        let m = parse_graph(text, "c4.graph").unwrap();
        assert_spectrum(&m.eigenvalues().unwrap(), &[0.0, 2.0, 2.0, 4.0], 1e-12);
        assert_eq!(m.generator(), m.graph().laplacian());
    }

    #[test]
    fn parse_errors_carry_lines() {
        let neg = "graph 2 1\nedge 0 1 -1\n";
        assert!(matches!(parse_graph(neg, "x"), Err(Error::Validation(_))));
        let dup = "graph 3 2\nedge 0 1 1\nedge 1 0 2\n";
        assert!(matches!(parse_graph(dup, "x"), Err(Error::Validation(_))));
        let bad = "graph 3 1\n\nedge 0 one 1\n";
        assert!(matches!(parse_graph(bad, "x"), Err(Error::Parse { line: 3, .. })));
        let partial = "graph 2 1\nmeasure 0 0.5\nedge 0 1 1\n";
        assert!(matches!(parse_graph(partial, "x"), Err(Error::Parse { .. })));
        let late = "graph 2 1\nedge 0 1 1\nmeasure 0 0.5\n";
        assert!(matches!(parse_graph(late, "x"), Err(Error::Parse { line: 3, .. })));
        let count = "graph 2 2\nedge 0 1 1\n";
        assert!(matches!(parse_graph(count, "x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn graph_text_round_trip() {
        let g = build_sierpinski(2).unwrap();
        let back = parse_graph(&to_graph_text(&g), "g2").unwrap();
        assert_eq!(back.space(), g.space());
        assert_eq!(back.graph(), g.graph());
    }

    #[test]
    fn energy_examples() {
        let c8 = build_torus_lattice(1, 8).unwrap();
        let ones = vec![1.0; 8];
        let g: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        assert!(dirichlet_energy(&c8, &ones, &g).unwrap().abs() < 1e-12);

        let edge = FiniteModel::new("edge", FiniteMeasureSpace::uniform(2).unwrap(), WeightedGraph::new(2, [(0, 1, 1.0)]).unwrap()).unwrap();
        assert!((dirichlet_energy(&edge, &[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_matches_edge_sum_and_dense_form() {
        let c8 = build_torus_lattice(1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let edge_sum: f64 = c8.graph().edges().iter().map(|e| e.w * (f[e.u] - f[e.v]) * (g[e.u] - g[e.v])).sum();
        let af = crate::kernel::apply(&c8.generator(), &f);
        let dense = c8.space().inner(&af, &g);
        let e = dirichlet_energy(&c8, &f, &g).unwrap();
        assert!((e - edge_sum).abs() < 1e-12 * edge_sum.abs().max(1.0));
        assert!((dense - edge_sum).abs() < 1e-12 * edge_sum.abs().max(1.0));
    }

    #[test]
    fn invariants_of_builders() {
        let models = [
            build_torus_lattice(1, 16).unwrap(),
            build_torus_lattice(2, 6).unwrap(),
            build_elliptic_grid(12, &random_coefficients(12, 0.5, 2.0, 1), 0.5, 2.0).unwrap(),
            build_sierpinski(2).unwrap(),
        ];
        for m in &models {
            let d = m.check_invariants().unwrap();
            assert!(d.mu_symmetry <= 1e-12 * m.generator().amax().max(1.0), "{}", m.label());
            assert!(d.min_eigenvalue_rel >= -1e-9);
            assert!(d.row_sum <= 1e-12);
        }
    }

    #[test]
    fn torus_low_modes_approach_continuum() {
        let m = build_torus_lattice(1, 512).unwrap();
        let ev = m.eigenvalues().unwrap();
        // Nonzero eigenvalues come in pairs: 4π²k², k = 1..5.
        for (j, l) in ev[1..11].iter().enumerate() {
            let k = (j / 2 + 1) as f64;
            let c = 4.0 * PI * PI * k * k;
            assert!((l - c).abs() <= 0.02 * c);
        }
    }

    #[test]
    fn fourier_sup() {
        let one = TorusFourierModel::new(1, 200).unwrap();
        let two = TorusFourierModel::new(2, 200).unwrap();
        let a = torus_fourier_heat_sup(&one, 0.01).unwrap();
        let b = torus_fourier_heat_sup(&two, 0.01).unwrap();
        assert!((b - a * a).abs() < 1e-12 * b);
        let direct: f64 = (-200i64..=200).map(|k| (-4.0 * PI * PI * 0.01 * (k * k) as f64).exp()).sum();
        assert!((a - direct).abs() < 1e-12);
        assert!((torus_fourier_heat_sup(&one, 50.0).unwrap() - 1.0).abs() < 1e-15);

        let small = TorusFourierModel::new(1, 2).unwrap();
        assert!(matches!(torus_fourier_heat_sup(&small, 0.01), Err(Error::Cutoff { .. })));
        let auto = TorusFourierModel::for_min_time(3, 1e-4).unwrap();
        assert!(torus_fourier_heat_sup(&auto, 1e-4).is_ok());
    }
}
