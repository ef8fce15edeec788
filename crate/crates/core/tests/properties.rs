use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::collection::vec;
use proptest::prelude::*;

use heatdim::dims::{fit_exponent, sphere_count, sphere_counts_bfs};
use heatdim::dirac::{commutator_norm, HodgeDirac};
use heatdim::experiment::{ExperimentConfig, GridSpec, ModelSpec};
use heatdim::forms::{build_torus_lattice, dirichlet_energy, FiniteModel, WeightedGraph};
use heatdim::kernel::{compose, dunford_pettis_check, hilbert_schmidt_check, kernel_to_operator, FiniteMeasureSpace, Kernel};
use heatdim::linalg::{schatten_norm, spectral_function, sym_eig, SchattenP, SymMatrix};
use heatdim::semigroup::{dirac_heat_trace, ergodic_data, heat_kernel, heat_operator, heat_trace, TimeGrid};

/// Component label per vertex by union-find, numbered in order of first
/// appearance.
fn components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let roots: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
    let mut seen = Vec::new();
    roots
        .iter()
        .map(|r| match seen.iter().position(|s| s == r) {
            Some(i) => i,
            None => {
                seen.push(*r);
                seen.len() - 1
            }
        })
        .collect()
}

fn model_strategy(max_n: usize) -> impl Strategy<Value = FiniteModel> {
    (2..=max_n)
        .prop_flat_map(|n| (Just(n), vec(0.05f64..3.0, n), vec(prop::option::weighted(0.45, 0.1f64..5.0), n * (n - 1) / 2)))
        .prop_map(|(n, mu, ws)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if let Some(w) = ws[k] {
                        edges.push((i, j, w));
                    }
                    k += 1;
                }
            }
            FiniteModel::new("random", FiniteMeasureSpace::new(mu).unwrap(), WeightedGraph::new(n, edges).unwrap()).unwrap()
        })
}

fn labels(m: &FiniteModel) -> Vec<usize> {
    let edges: Vec<(usize, usize)> = m.graph().edges().iter().map(|e| (e.u, e.v)).collect();
    components(m.n(), &edges)
}

fn square(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    vec(lo..hi, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn symmetric(max_n: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_n).prop_flat_map(|n| square(n, -5.0, 5.0)).prop_map(|m| SymMatrix::symmetrize(&m + m.transpose()))
}

fn gram(max_n: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_n).prop_flat_map(|n| square(n, -1.0, 1.0)).prop_map(|g| SymMatrix::symmetrize(g.transpose() * g))
}

fn kernel(max_n: usize) -> impl Strategy<Value = (Kernel, DMatrix<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (vec(0.05f64..3.0, n), square(n, -2.0, 2.0))).prop_map(|(mu, values)| {
        (Kernel::new(FiniteMeasureSpace::new(mu.clone()).unwrap(), values.clone()).unwrap(), values, mu)
    })
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn eigendecomposition_is_sorted_orthonormal_and_reconstructs(a in symmetric(12)) {
        let s = sym_eig(&a, 1e-13).unwrap();
        prop_assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(s.orthonormality_error() <= 1e-9);
        let scale = a.entries().amax().max(1.0);
        prop_assert!((s.reconstruct() - a.entries()).amax() <= 1e-8 * scale);
    }

    #[test]
    fn trace_norm_dominates_trace(a in symmetric(10), g in gram(10)) {
        prop_assert!(schatten_norm(&a, SchattenP::One).unwrap() >= a.trace().abs() - 1e-10 * a.entries().amax().max(1.0));
        let t1 = schatten_norm(&g, SchattenP::One).unwrap();
        prop_assert!((t1 - g.trace()).abs() <= 1e-10 * t1.max(1.0));
    }

    #[test]
    fn exponential_semigroup_law(g in gram(10), t1 in 0.01f64..2.0, t2 in 0.01f64..2.0) {
        let s = sym_eig(&g, 1e-13).unwrap();
        let both = spectral_function(&s, |l| (-(t1 + t2) * l).exp()).unwrap();
        let a = spectral_function(&s, |l| (-t1 * l).exp()).unwrap();
        let b = spectral_function(&s, |l| (-t2 * l).exp()).unwrap();
        let n = g.dim() as f64;
        prop_assert!((a.entries() * b.entries() - both.entries()).amax() <= 1e-10 * n);
    }

    #[test]
    fn spectrum_is_orthogonally_invariant(a in symmetric(10), seed in square(10, -1.0, 1.0)) {
        let n = a.dim();
        let q = seed.view((0, 0), (n, n)).into_owned().qr().q();
        let rotated = SymMatrix::symmetrize(q.transpose() * a.entries() * &q);
        let (x, y) = (sym_eig(&a, 1e-13).unwrap().eigenvalues, sym_eig(&rotated, 1e-13).unwrap().eigenvalues);
        let scale = a.entries().amax().max(1.0);
        for (l, m) in x.iter().zip(&y) {
            prop_assert!((l - m).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn dunford_pettis_and_hilbert_schmidt_equalities((k, values, mu) in kernel(12)) {
        let (lhs, rhs) = dunford_pettis_check(&k);
        prop_assert!((lhs - rhs).abs() <= 1e-12);
        prop_assert!((lhs - values.amax()).abs() <= 1e-12);
        let (lhs, rhs) = hilbert_schmidt_check(&k);
        let n = mu.len();
        let direct: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| values[(i, j)].powi(2) * mu[i] * mu[j]).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
        prop_assert!((lhs - direct).abs() <= 1e-10 * lhs.max(1.0));
    }

    #[test]
    fn kernel_operator_is_additive_and_composes((k1, v1, mu) in kernel(10), v2 in square(10, -2.0, 2.0)) {
        let n = mu.len();
        let v2 = v2.view((0, 0), (n, n)).into_owned();
        let space = FiniteMeasureSpace::new(mu.clone()).unwrap();
        let k2 = Kernel::new(space.clone(), v2.clone()).unwrap();
        let sum = Kernel::new(space, &v1 + &v2).unwrap();
        let lin = kernel_to_operator(&sum) - kernel_to_operator(&k1) - kernel_to_operator(&k2);
        prop_assert!(lin.amax() <= 1e-12);

        let composed = compose(&k1, &k2).unwrap();
        let via_ops = kernel_to_operator(&k1) * kernel_to_operator(&k2);
        prop_assert!((kernel_to_operator(&composed) - via_ops).amax() <= 1e-12 * n as f64 * 12.0);
        for x in 0..n {
            for z in 0..n {
                let want: f64 = (0..n).map(|y| v1[(x, y)] * v2[(y, z)] * mu[y]).sum();
                let got = kernel_to_operator(&composed)[(x, z)] / mu[z];
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0) * n as f64);
            }
        }
    }

    #[test]
    fn random_models_satisfy_generator_invariants(m in model_strategy(10)) {
        let d = m.check_invariants().unwrap();
        prop_assert!(d.mu_symmetry <= 1e-12 * m.generator().amax().max(1.0));
        prop_assert!(d.min_eigenvalue_rel >= -1e-9);
        prop_assert!(d.row_sum <= 1e-12);
    }

    #[test]
    fn energy_is_nonnegative_and_vanishes_on_component_constants(
        m in model_strategy(10),
        f in vec(-3.0f64..3.0, 10),
        c in vec(-3.0f64..3.0, 10),
    ) {
        let n = m.n();
        let f = &f[..n];
        let e = dirichlet_energy(&m, f, f).unwrap();
        prop_assert!(e >= -1e-12);
        let comp = labels(&m);
        let constant: Vec<f64> = comp.iter().map(|&k| c[k]).collect();
        prop_assert!(dirichlet_energy(&m, &constant, &constant).unwrap().abs() <= 1e-12);
        // Zero energy only for functions constant on components.
        let varies = m.graph().edges().iter().any(|e| (f[e.u] - f[e.v]).abs() > 1e-6);
        if varies {
            prop_assert!(e > 0.0);
        }
    }

    #[test]
    fn heat_semigroup_is_markov(m in model_strategy(10), t in prop::sample::select(vec![0.01, 0.1, 1.0])) {
        let p = heat_operator(&m, t).unwrap();
        prop_assert!(p.min() >= -1e-12);
        for row in p.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
        }
        let k = heat_kernel(&m, t).unwrap();
        let values = k.values();
        let top = values.amax();
        prop_assert!((values - values.transpose()).amax() <= 1e-12 * top);
        prop_assert!(values.min() >= -1e-9 * top);
        prop_assert!((k.operator() - &p).amax() <= 1e-10);
    }

    #[test]
    fn ergodic_projection(m in model_strategy(10), t in 0.01f64..3.0) {
        let e = ergodic_data(&m).unwrap();
        let comp = labels(&m);
        prop_assert_eq!(e.fix_dim, comp.iter().max().unwrap() + 1);
        prop_assert_eq!(m.spectral().unwrap().kernel_dim(), e.fix_dim);
        let p = &e.projection;
        prop_assert!((p * p - p).amax() <= 1e-10);
        let mu = m.space().weights();
        let n = m.n();
        for x in 0..n {
            for y in 0..n {
                prop_assert!((mu[x] * p[(x, y)] - mu[y] * p[(y, x)]).abs() <= 1e-10);
            }
        }
        let tt = heat_operator(&m, t).unwrap();
        prop_assert!((&tt * p - p).amax() <= 1e-10);
        prop_assert!((p * &tt - p).amax() <= 1e-10);
    }

    #[test]
    fn heat_trace_decreases_and_obeys_gap_bound(m in model_strategy(10)) {
        prop_assume!(m.graph().num_edges() > 0);
        let grid = TimeGrid::dyadic(9);
        let traces: Vec<f64> = grid.times().iter().map(|&t| heat_trace(&m, t, false).unwrap()).collect();
        // Times are stored descending, so traces ascend.
        prop_assert!(traces.windows(2).all(|w| w[0] < w[1]));
        let gap = m.spectral_gap().unwrap().unwrap();
        let count = m.n() - m.spectral().unwrap().kernel_dim();
        for t in [1.0, 2.0, 5.0] {
            let restricted = heat_trace(&m, t, true).unwrap();
            prop_assert!(restricted <= count as f64 * (-gap * t).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn derivation_adjoint_factorization_and_kernel(m in model_strategy(10), f in vec(-2.0f64..2.0, 10), g in vec(-2.0f64..2.0, 45)) {
        let m = Arc::new(m);
        let hd = HodgeDirac::from_model(Arc::clone(&m));
        let d = hd.derivation();
        let (f, g) = (&f[..m.n()], &g[..d.num_edges()]);
        let lhs = inner(&d.apply(f), g);
        let rhs = m.space().inner(f, &d.apply_adjoint(g));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0) * 10.0);
        prop_assert!(d.factorization_error() <= 1e-10);
        prop_assert!(hd.square_block_error() <= 1e-12);
        prop_assert_eq!(d.kernel_dim().unwrap(), m.spectral().unwrap().kernel_dim());
    }

    #[test]
    fn dirac_spectrum_is_symmetric(m in model_strategy(9)) {
        let hd = HodgeDirac::from_model(Arc::new(m));
        let ev = hd.eigenvalues().unwrap();
        let scale = ev.iter().fold(1.0_f64, |a, l| a.max(l.abs()));
        for (a, b) in ev.iter().zip(ev.iter().rev()) {
            prop_assert!((a + b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn dirac_heat_trace_splits_over_blocks(m in model_strategy(9), t in 0.001f64..2.0) {
        let m = Arc::new(m);
        let hd = HodgeDirac::from_model(Arc::clone(&m));
        let b = hd.derivation().orthonormal_matrix();
        let edge_block: f64 = if b.nrows() == 0 {
            0.0
        } else {
            (&b * b.transpose()).symmetric_eigenvalues().iter().map(|l| (-t * l).exp()).sum()
        };
        let whole = dirac_heat_trace(&hd, t, false).unwrap();
        let vertex_block = heat_trace(&m, t, false).unwrap();
        prop_assert!((whole - vertex_block - edge_block).abs() <= 1e-10 * whole);
    }

    #[test]
    fn commutator_vanishes_exactly_on_harmonic_functions(m in model_strategy(9), c in vec(-3.0f64..3.0, 9), f in vec(-3.0f64..3.0, 9)) {
        let m = Arc::new(m);
        let hd = HodgeDirac::from_model(Arc::clone(&m));
        let comp = labels(&m);
        let constant: Vec<f64> = comp.iter().map(|&k| c[k]).collect();
        prop_assert!(commutator_norm(&hd, &constant).unwrap() <= 1e-12);
        let f = &f[..m.n()];
        let varies = m.graph().edges().iter().any(|e| (f[e.u] - f[e.v]).abs() > 1e-6);
        if varies {
            prop_assert!(commutator_norm(&hd, f).unwrap() > 0.0);
        }
    }

    #[test]
    fn fit_is_scale_invariant(exponent in 0.1f64..5.0, c in 1e-3f64..1e3, noise in vec(-0.01f64..0.01, 12)) {
        let samples: Vec<(f64, f64)> =
            (0..12).map(|i| 0.5f64.powi(i)).zip(&noise).map(|(t, e)| (t, t.powf(-exponent) * (1.0 + e))).collect();
        let scaled: Vec<(f64, f64)> = samples.iter().map(|(t, y)| (*t, c * y)).collect();
        let window = (0.5f64.powi(11), 1.0);
        let (a, b) = (fit_exponent(&samples, window).unwrap(), fit_exponent(&scaled, window).unwrap());
        prop_assert!((a.slope - b.slope).abs() <= 1e-10);
        prop_assert!((a.residual - b.residual).abs() <= 1e-10);
        let exact: Vec<(f64, f64)> = samples.iter().map(|(t, _)| (*t, t.powf(-exponent))).collect();
        prop_assert!((fit_exponent(&exact, window).unwrap().exponent - exponent).abs() <= 1e-10);
    }

    #[test]
    fn config_round_trips_through_text(
        dim in 1usize..=3,
        side in 8usize..=16,
        depth in 4usize..20,
        seed in any::<u32>(),
    ) {
        let text = format!("seed = {seed}\n[model]\nbuilder = \"torus\"\ndim = {dim}\nside = {side}\n[time_grid]\nkind = \"dyadic\"\ndepth = {depth}\n");
        let cfg = ExperimentConfig::parse(&text, "prop.cfg", ".").unwrap();
        prop_assert_eq!(&cfg.model, &ModelSpec::Torus { dim, side });
        prop_assert_eq!(&cfg.time_grid, &GridSpec::Dyadic { depth });
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap(), "prop.cfg", ".").unwrap();
        prop_assert_eq!(cfg, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn torus_tensorizes(side in prop::sample::select(vec![16usize, 24, 32])) {
        let one = build_torus_lattice(1, side).unwrap();
        let two = build_torus_lattice(2, side).unwrap();
        let (a, b) = (one.eigenvalues().unwrap(), two.eigenvalues().unwrap());
        let mut sums: Vec<f64> = a.iter().flat_map(|x| a.iter().map(move |y| x + y)).collect();
        sums.sort_by(f64::total_cmp);
        let top = sums.last().copied().unwrap();
        for (x, y) in sums.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * top);
        }
    }
}

#[test]
fn sphere_counts_match_enumeration() {
    for k in [2, 3] {
        let bfs = sphere_counts_bfs(k, 8);
        for (n, c) in bfs.iter().enumerate() {
            assert_eq!(Some(*c), sphere_count(k, n));
        }
    }
}

#[test]
fn torus_low_modes_approach_continuum() {
    let m = build_torus_lattice(1, 512).unwrap();
    let ev = m.eigenvalues().unwrap();
    // Nonzero modes come in pairs ±k.
    for k in 1..=10 {
        let want = 4.0 * std::f64::consts::PI.powi(2) * (k * k) as f64;
        for l in [ev[2 * k - 1], ev[2 * k]] {
            assert!((l - want).abs() <= 0.02 * want, "mode {k}: {l} vs {want}");
        }
    }
}
