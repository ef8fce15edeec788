use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use super::config::{EstimatorKind, ExperimentConfig, GateKind, GridSpec, ModelSpec, TraceTarget};
use super::identities::{identity_report, IdentityLimits};
use super::report::{
    ConnesOutcome, ConnesResult, EstimatorResults, GateResults, ModelSummary, RunOutcome, RunReport, StageTiming, TorusCbResult,
    TraceEstimate, ZetaResult,
};
use crate::dims::{
    cv_local_dimension, default_rapid_decay_grid, default_time_grid, heat_trace_dimension_from_spectrum, mean_diagonal_dimension,
    rapid_decay_profile, theorem_gate, torus_cb_dimension, two_sided_gate, weyl_counting, zeta_probe,
};
use crate::dirac::{connes_distance, DiracSpectrumSource, HodgeDirac};
use crate::error::{Error, Result};
use crate::forms::{build_elliptic_grid, build_from_file, build_sierpinski, build_torus_lattice, random_coefficients, FiniteModel, TorusFourierModel};
use crate::semigroup::TimeGrid;

/// Exit status: every requested gate passed.
pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE_FAILURE: i32 = 1;
/// Config, parse, validation or IO error.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code_for_error(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Builds the configured model. Elliptic coefficients not given explicitly
/// are drawn from `[delta, gamma]` with `seed`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<FiniteModel> {
    match &cfg.model {
        ModelSpec::Torus { dim, side } => build_torus_lattice(*dim, *side),
        ModelSpec::Elliptic { side, delta, gamma, coefficients } => {
            let coeffs = match coefficients {
                Some(c) => c.clone(),
                None => random_coefficients(*side, *delta, *gamma, cfg.seed),
            };
            build_elliptic_grid(*side, &coeffs, *delta, *gamma)
        }
        ModelSpec::Gasket { level } => build_sierpinski(*level),
        ModelSpec::File { path } => build_from_file(cfg.resolve(path)),
    }
}

/// The refinement sequence of the configured builder, coarsest first.
pub fn zeta_levels(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    if let Some(l) = &cfg.estimators.zeta.levels {
        return Ok(l.clone());
    }
    let levels: Vec<usize> = match &cfg.model {
        ModelSpec::Torus { side, .. } | ModelSpec::Elliptic { side, .. } => {
            (0..4).rev().map(|k| side >> k).filter(|s| *s >= 3).collect()
        }
        ModelSpec::Gasket { level } => (level.saturating_sub(3).max(1)..=*level).collect(),
        ModelSpec::File { .. } => return Err(Error::Config("the zeta probe needs a builder model, not a graph file".into())),
    };
    if levels.len() < 3 {
        return Err(Error::InsufficientLevels(levels.len()));
    }
    Ok(levels)
}

fn refinement(cfg: &ExperimentConfig, level: usize) -> Result<FiniteModel> {
    match &cfg.model {
        ModelSpec::Torus { dim, .. } => build_torus_lattice(*dim, level),
        ModelSpec::Elliptic { delta, gamma, .. } => {
            build_elliptic_grid(level, &random_coefficients(level, *delta, *gamma, cfg.seed), *delta, *gamma)
        }
        ModelSpec::Gasket { .. } => build_sierpinski(level),
        ModelSpec::File { .. } => Err(Error::Config("the zeta probe needs a builder model, not a graph file".into())),
    }
}

fn time_grid(cfg: &ExperimentConfig, lambda_max: f64) -> Result<TimeGrid> {
    Ok(match &cfg.time_grid {
        GridSpec::Auto => default_time_grid(lambda_max),
        GridSpec::Dyadic { depth } => TimeGrid::dyadic(*depth),
        GridSpec::Geometric { depth, per_octave } => TimeGrid::geometric(*depth, *per_octave),
        GridSpec::List { times } => TimeGrid::explicit(times.clone())?,
    })
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(name));
        self.timings.push(StageTiming { stage: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

/// Build, spectral decomposition, estimators, gates.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut clock = Clock { timings: Vec::new() };
    let model = Arc::new(clock.stage("build", || build_model(cfg))?);
    let (lambda_max, spectral_gap) = clock.stage("spectral", || Ok((model.lambda_max()?, model.spectral_gap()?)))?;
    let grid = time_grid(cfg, lambda_max)?;
    let tw = cfg.estimators.time_window.map(|[a, b]| (a, b));
    let lw = cfg.estimators.lambda_window.map(|[a, b]| (a, b));

    let needs_trace = cfg.runs(EstimatorKind::HeatTrace) || cfg.runs(EstimatorKind::Weyl);
    let hd = HodgeDirac::from_model(Arc::clone(&model));
    let trace_spectrum: Option<(Vec<f64>, Option<DiracSpectrumSource>)> = if needs_trace {
        Some(clock.stage("trace_spectrum", || match cfg.estimators.heat_trace_target {
            TraceTarget::Dirac => hd.squared_spectrum().map(|(v, s)| (v, Some(s))),
            TraceTarget::Generator => model.eigenvalues().map(|v| (v, None)),
        })?)
    } else {
        None
    };

    let mut est = EstimatorResults::default();
    if cfg.runs(EstimatorKind::Cv) {
        est.cv = Some(clock.stage("cv", || cv_local_dimension(&model, &grid, tw))?);
    }
    if let Some((values, source)) = &trace_spectrum {
        let target = cfg.estimators.heat_trace_target;
        if cfg.runs(EstimatorKind::HeatTrace) {
            let estimate = clock.stage("heat_trace", || heat_trace_dimension_from_spectrum(values, &grid, tw, true))?;
            est.heat_trace = Some(TraceEstimate { target, source: *source, estimate });
        }
        if cfg.runs(EstimatorKind::Weyl) {
            let estimate = clock.stage("weyl", || weyl_counting(values, None, lw))?;
            est.weyl = Some(TraceEstimate { target, source: *source, estimate });
        }
    }
    if cfg.runs(EstimatorKind::Zeta) {
        est.zeta = Some(clock.stage("zeta", || {
            let levels = zeta_levels(cfg)?;
            let mut spectra = Vec::with_capacity(levels.len());
            let mut labels = Vec::with_capacity(levels.len());
            for &l in &levels {
                let m = Arc::new(refinement(cfg, l)?);
                labels.push(m.label().to_string());
                spectra.push(HodgeDirac::from_model(m).squared_spectrum()?.0);
            }
            Ok(ZetaResult { probe: zeta_probe(&spectra, &cfg.estimators.zeta.alphas)?, levels, labels })
        })?);
    }
    if cfg.runs(EstimatorKind::Connes) {
        est.connes = Some(clock.stage("connes", || {
            let n = model.n();
            let pairs = if cfg.estimators.connes.pairs.is_empty() { vec![[0, n / 2]] } else { cfg.estimators.connes.pairs.clone() };
            let tol = cfg.estimators.connes.tol;
            pairs
                .into_iter()
                .map(|[x, y]| {
                    let outcome = match connes_distance(&hd, x, y, tol) {
                        Ok(d) => ConnesOutcome::Finite { value: d.value, lower: d.lower, upper: d.upper, iterations: d.iterations },
                        Err(Error::Unbounded { .. }) => ConnesOutcome::Infinite,
                        Err(e) => return Err(e),
                    };
                    Ok(ConnesResult { x, y, tol, outcome })
                })
                .collect()
        })?);
    }
    if cfg.runs(EstimatorKind::RapidDecay) {
        est.rapid_decay = Some(clock.stage("rapid_decay", || {
            let spec = &cfg.estimators.rapid_decay;
            let g = default_rapid_decay_grid();
            spec.orders.iter().map(|&r| rapid_decay_profile(spec.k, r, &g, None)).collect()
        })?);
    }
    if cfg.runs(EstimatorKind::TorusCb) {
        est.torus_cb = Some(clock.stage("torus_cb", || {
            let spec = &cfg.estimators.torus_cb;
            let g = TimeGrid::dyadic(spec.depth);
            spec.dims
                .iter()
                .map(|&d| {
                    let fourier = TorusFourierModel::for_min_time(d, g.min())?;
                    Ok(TorusCbResult { dim: d, cutoff: fourier.cutoff, estimate: torus_cb_dimension(&fourier, &g, None)? })
                })
                .collect()
        })?);
    }

    let mut gates = GateResults::default();
    let fits = || -> Result<_> {
        let cv = est.cv.as_ref().ok_or_else(|| Error::Dependency { gate: "theorem".into(), missing: "cv".into() })?;
        let ht = est.heat_trace.as_ref().ok_or_else(|| Error::Dependency { gate: "theorem".into(), missing: "heat_trace".into() })?;
        Ok((cv.estimate.fit.clone(), ht.estimate.fit.clone()))
    };
    if cfg.gates(GateKind::Theorem) {
        let (cv, ht) = fits()?;
        gates.theorem = Some(theorem_gate(&ht, &cv, cfg.gates.theorem_slack));
    }
    if cfg.gates(GateKind::TwoSided) {
        let (cv, ht) = fits()?;
        let lower = clock.stage("mean_diagonal", || mean_diagonal_dimension(&model, &grid, tw))?;
        gates.two_sided = Some(two_sided_gate(&ht, &cv, &lower.fit, cfg.gates.two_sided_slack));
        est.mean_diagonal = Some(lower);
    }
    if cfg.gates(GateKind::Identities) {
        gates.identities = Some(clock.stage("identities", || identity_report(&model, IdentityLimits::default()))?);
    }

    let mut echo = cfg.clone();
    echo.base_dir = PathBuf::new();
    let report = RunReport {
        seed: cfg.seed,
        config: echo,
        model: ModelSummary {
            label: model.label().to_string(),
            vertices: model.n(),
            edges: model.graph().num_edges(),
            components: model.graph().num_components(),
            total_mass: model.space().total(),
            lambda_max,
            spectral_gap,
        },
        time_grid: grid.times().to_vec(),
        all_gates_passed: gates.all_passed(),
        estimators: est,
        gates,
    };
    Ok(RunOutcome { report, timings: clock.timings })
}

/// Eigenvalues of the configured model as CSV `index,eigenvalue`.
pub fn spectrum_csv(cfg: &ExperimentConfig) -> Result<String> {
    let model = build_model(cfg)?;
    let mut s = format!("# seed={}\nindex,eigenvalue\n", cfg.seed);
    for (k, l) in model.eigenvalues()?.iter().enumerate() {
        s.push_str(&format!("{k},{l}\n"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::report::{csv_files, report_from_json, summary_text, to_json};

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, "t.cfg", ".").unwrap()
    }

    const GASKET: &str = "seed = 3\n[model]\nbuilder = \"gasket\"\nlevel = 4\n\
                          [estimators]\nrun = [\"cv\", \"heat_trace\", \"weyl\", \"zeta\", \"connes\"]\n\
                          [gates]\nrun = [\"theorem\", \"two_sided\", \"identities\"]\n";

    #[test]
    fn gasket_pipeline_round_trips_and_is_deterministic() {
        let c = cfg(GASKET);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        let ja = to_json(&a.report).unwrap();
        assert_eq!(ja, to_json(&b.report).unwrap());
        assert_eq!(report_from_json(&ja).unwrap(), a.report);
        assert_eq!(csv_files(&a.report).unwrap(), csv_files(&b.report).unwrap());
        let cv = a.report.estimators.cv.as_ref().unwrap();
        let rows = csv_files(&a.report).unwrap().into_iter().find(|(n, _)| n == "cv.csv").unwrap().1;
        assert_eq!(rows.lines().count(), a.report.time_grid.len() + 2);
        assert!(rows.starts_with("# seed=3\nt,value,log_t,log_value,in_window\n"));
        assert_eq!(cv.estimate.samples.len(), a.report.time_grid.len());
        let summary = summary_text(&a);
        for g in ["theorem", "two_sided", "identities"] {
            assert!(summary.lines().any(|l| l.starts_with(g) && (l.contains("PASS") || l.contains("FAIL"))), "{summary}");
        }
        assert!(a.report.gates.identities.as_ref().unwrap().passed);
        assert_eq!(a.report.estimators.zeta.as_ref().unwrap().levels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn file_models_resolve_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p.graph"), "graph 3 2\nedge 0 1 1\nedge 1 2 1\n").unwrap();
        let c = ExperimentConfig::parse("[model]\nbuilder = \"file\"\npath = \"p.graph\"\n", "x", dir.path()).unwrap();
        assert_eq!(build_model(&c).unwrap().n(), 3);
        let s = spectrum_csv(&c).unwrap();
        assert_eq!(s.lines().count(), 5);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let missing = ExperimentConfig::parse("[model]\nbuilder = \"file\"\npath = \"nope.graph\"\n", "x", "/nonexistent").unwrap();
        let e = run(&missing).unwrap_err();
        assert_eq!(exit_code_for_error(&e), EXIT_CONFIG);
        let e = Error::NonConvergence { sweeps: 1, off_diagonal: 1.0 }.in_stage("spectral");
        assert_eq!(exit_code_for_error(&e), EXIT_NUMERICAL);
        assert!(e.to_string().starts_with("stage `spectral`"));
    }

    #[test]
    fn too_few_zeta_levels_is_numerical() {
        let c = cfg("[model]\nbuilder = \"torus\"\ndim = 1\nside = 8\n[estimators]\nrun = [\"zeta\"]\n");
        assert!(matches!(run(&c).unwrap_err().root(), Error::InsufficientLevels(2)));
    }
}
