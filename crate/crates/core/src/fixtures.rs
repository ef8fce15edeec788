//! Models shipped with the crate and used by `verify` and the test suites.

use std::sync::Arc;

use crate::error::Result;
use crate::forms::{
    build_elliptic_grid, build_sierpinski, build_torus_lattice, parse_graph, random_coefficients, FiniteModel, WeightedGraph,
};
use crate::kernel::FiniteMeasureSpace;

pub const C4_GRAPH: &str = include_str!("../../../fixtures/graphs/c4.graph");
pub const TWO_C4_GRAPH: &str = include_str!("../../../fixtures/graphs/two_c4.graph");
pub const GASKET1_GRAPH: &str = include_str!("../../../fixtures/graphs/gasket1.graph");

/// Ellipticity bounds of the shipped random-coefficient grids.
pub const ELLIPTIC_BOUNDS: (f64, f64) = (0.5, 2.0);

pub fn elliptic_random(n: usize, seed: u64) -> Result<FiniteModel> {
    let (lo, hi) = ELLIPTIC_BOUNDS;
    build_elliptic_grid(n, &random_coefficients(n, lo, hi, seed), lo, hi)
}

/// Two vertices, one unit edge, `μ = (1/2, 1/2)`.
pub fn two_point() -> Result<FiniteModel> {
    FiniteModel::new("two-point", FiniteMeasureSpace::uniform(2)?, WeightedGraph::new(2, [(0, 1, 1.0)])?)
}

/// Path on three vertices, unit edges, uniform probability measure.
pub fn path3() -> Result<FiniteModel> {
    FiniteModel::new("path-3", FiniteMeasureSpace::uniform(3)?, WeightedGraph::new(3, [(0, 1, 1.0), (1, 2, 1.0)])?)
}

/// Models on which every exact identity is checked.
pub fn identity_models(seed: u64) -> Result<Vec<Arc<FiniteModel>>> {
    Ok(vec![
        Arc::new(build_torus_lattice(1, 128)?),
        Arc::new(build_torus_lattice(2, 16)?),
        Arc::new(build_sierpinski(3)?),
        Arc::new(elliptic_random(64, seed)?),
        Arc::new(parse_graph(C4_GRAPH, "c4.graph")?),
        Arc::new(parse_graph(GASKET1_GRAPH, "gasket1.graph")?),
        Arc::new(parse_graph(TWO_C4_GRAPH, "two_c4.graph")?),
    ])
}

/// Models on which the dimension estimators and theorem gates run in `verify`.
pub fn gate_models(seed: u64) -> Result<Vec<Arc<FiniteModel>>> {
    Ok(vec![
        Arc::new(build_torus_lattice(1, 512)?),
        Arc::new(build_torus_lattice(2, 64)?),
        Arc::new(elliptic_random(512, seed)?),
        Arc::new(build_sierpinski(6)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gasket_file_matches_builder_spectrum() {
        let file = parse_graph(GASKET1_GRAPH, "gasket1.graph").unwrap();
        let built = build_sierpinski(1).unwrap();
        let (a, b) = (file.eigenvalues().unwrap(), built.eigenvalues().unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }

    #[test]
    fn fixtures_load() {
        assert_eq!(identity_models(1).unwrap().len(), 7);
        assert_eq!(gate_models(1).unwrap().len(), 4);
        assert_eq!(parse_graph(TWO_C4_GRAPH, "x").unwrap().graph().num_components(), 2);
    }
}
