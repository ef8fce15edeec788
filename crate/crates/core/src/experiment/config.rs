use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{gasket_vertex_count, MAX_GASKET_LEVEL, MAX_VERTICES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub time_grid: GridSpec,
    #[serde(default)]
    pub estimators: EstimatorSpec,
    #[serde(default)]
    pub gates: GateSpec,
    /// Directory relative paths in the config are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Torus {
        dim: usize,
        side: usize,
    },
    Elliptic {
        side: usize,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        /// One coefficient per edge; drawn from `[delta, gamma]` with the
        /// config seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coefficients: Option<Vec<f64>>,
    },
    Gasket {
        level: usize,
    },
    File {
        path: PathBuf,
    },
}

fn default_delta() -> f64 {
    0.5
}

fn default_gamma() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Quarter-octave grid from 1 down to `20/λ_max`.
    #[default]
    Auto,
    Dyadic {
        depth: usize,
    },
    Geometric {
        depth: usize,
        per_octave: usize,
    },
    List {
        times: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Cv,
    HeatTrace,
    Weyl,
    Zeta,
    Connes,
    RapidDecay,
    TorusCb,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Cv => "cv",
            EstimatorKind::HeatTrace => "heat_trace",
            EstimatorKind::Weyl => "weyl",
            EstimatorKind::Zeta => "zeta",
            EstimatorKind::Connes => "connes",
            EstimatorKind::RapidDecay => "rapid_decay",
            EstimatorKind::TorusCb => "torus_cb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Theorem,
    TwoSided,
    Identities,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::Theorem => "theorem",
            GateKind::TwoSided => "two_sided",
            GateKind::Identities => "identities",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceTarget {
    /// `tr e^{−tD²}`.
    #[default]
    Dirac,
    /// `tr e^{−tA}`.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default)]
    pub run: Vec<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_window: Option<[f64; 2]>,
    #[serde(default)]
    pub heat_trace_target: TraceTarget,
    #[serde(default)]
    pub zeta: ZetaSpec,
    #[serde(default)]
    pub connes: ConnesSpec,
    #[serde(default)]
    pub rapid_decay: RapidDecaySpec,
    #[serde(default)]
    pub torus_cb: TorusCbSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZetaSpec {
    /// Refinement sequence of the configured builder: torus and elliptic
    /// sides, or gasket levels. Defaults to the model and its three
    /// predecessors (halved sides, or lower levels).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

impl Default for ZetaSpec {
    fn default() -> Self {
        ZetaSpec { levels: None, alphas: default_alphas() }
    }
}

/// `α = 0.05, 0.10, …, 4.00`.
pub fn default_alphas() -> Vec<f64> {
    (1..=80).map(|i| 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnesSpec {
    /// Vertex pairs; defaults to `(0, n/2)`.
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
    #[serde(default = "default_connes_tol")]
    pub tol: f64,
}

impl Default for ConnesSpec {
    fn default() -> Self {
        ConnesSpec { pairs: Vec::new(), tol: default_connes_tol() }
    }
}

fn default_connes_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RapidDecaySpec {
    #[serde(default = "default_free_rank")]
    pub k: usize,
    #[serde(default = "default_orders")]
    pub orders: Vec<u32>,
}

impl Default for RapidDecaySpec {
    fn default() -> Self {
        RapidDecaySpec { k: default_free_rank(), orders: default_orders() }
    }
}

fn default_free_rank() -> usize {
    2
}

fn default_orders() -> Vec<u32> {
    vec![1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusCbSpec {
    #[serde(default = "default_cb_dims")]
    pub dims: Vec<usize>,
    /// Dyadic grid depth.
    #[serde(default = "default_cb_depth")]
    pub depth: usize,
}

impl Default for TorusCbSpec {
    fn default() -> Self {
        TorusCbSpec { dims: default_cb_dims(), depth: default_cb_depth() }
    }
}

fn default_cb_dims() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_cb_depth() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    #[serde(default)]
    pub run: Vec<GateKind>,
    #[serde(default = "default_theorem_slack")]
    pub theorem_slack: f64,
    #[serde(default = "default_two_sided_slack")]
    pub two_sided_slack: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        GateSpec { run: Vec::new(), theorem_slack: default_theorem_slack(), two_sided_slack: default_two_sided_slack() }
    }
}

fn default_theorem_slack() -> f64 {
    0.1
}

fn default_two_sided_slack() -> f64 {
    0.2
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of a TOML error. Errors inside tagged tables point at the table
/// header; when the message names a key, the line of that key inside the
/// table is used instead.
fn error_line(text: &str, e: &toml::de::Error) -> usize {
    let Some(span) = e.span() else { return 0 };
    let start = span.start.min(text.len());
    let key = e.message().split('`').nth(1).filter(|k| !k.is_empty());
    if let Some(key) = key {
        let mut offset = start;
        for (i, line) in text[start..].split_inclusive('\n').enumerate() {
            let t = line.trim_start();
            if i > 0 && t.starts_with('[') {
                break;
            }
            if t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')) {
                return line_of(text, offset);
            }
            offset += line.len();
        }
    }
    line_of(text, start)
}

impl ExperimentConfig {
    /// Parses and validates a config. `origin` names the source in
    /// diagnostics; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, origin: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: error_line(text, &e),
            message: e.message().to_string(),
        })?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn runs(&self, k: EstimatorKind) -> bool {
        self.estimators.run.contains(&k)
    }

    pub fn gates(&self, g: GateKind) -> bool {
        self.gates.run.contains(&g)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Builder preconditions, window sanity and gate dependencies.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match &self.time_grid {
            GridSpec::Auto => {}
            GridSpec::Dyadic { depth } | GridSpec::Geometric { depth, .. } if *depth == 0 || *depth > 60 => {
                return Err(Error::Config(format!("time_grid.depth must lie in 1..=60, got {depth}")));
            }
            GridSpec::Geometric { per_octave, .. } if *per_octave == 0 || *per_octave > 64 => {
                return Err(Error::Config(format!("time_grid.per_octave must lie in 1..=64, got {per_octave}")));
            }
            GridSpec::List { times } => {
                if times.is_empty() {
                    return Err(Error::Config("time_grid.times is empty".into()));
                }
                if let Some(t) = times.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
                    return Err(Error::Config(format!("time_grid.times must lie in (0, 1], got {t}")));
                }
            }
            _ => {}
        }
        let est = &self.estimators;
        for (name, w) in [("time_window", est.time_window), ("lambda_window", est.lambda_window)] {
            if let Some([lo, hi]) = w {
                if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                    return Err(Error::Config(format!("estimators.{name} needs 0 < lo < hi, got [{lo}, {hi}]")));
                }
            }
        }
        let alphas = &est.zeta.alphas;
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) || alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("estimators.zeta.alphas must be positive and strictly ascending".into()));
        }
        if let Some(levels) = &est.zeta.levels {
            if levels.len() < 3 {
                return Err(Error::Config(format!("estimators.zeta.levels needs at least 3 entries, got {}", levels.len())));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("estimators.zeta.levels must be strictly ascending".into()));
            }
        }
        if self.runs(EstimatorKind::Zeta) && matches!(self.model, ModelSpec::File { .. }) {
            return Err(Error::Config("the zeta probe needs a builder model, not a graph file".into()));
        }
        if !(est.connes.tol > 0.0) {
            return Err(Error::Config(format!("estimators.connes.tol must be positive, got {}", est.connes.tol)));
        }
        if let Some([x, y]) = est.connes.pairs.iter().find(|[x, y]| x == y) {
            return Err(Error::Config(format!("estimators.connes.pairs: endpoints must differ, got [{x}, {y}]")));
        }
        if est.rapid_decay.k < 2 {
            return Err(Error::Config(format!("estimators.rapid_decay.k must be at least 2, got {}", est.rapid_decay.k)));
        }
        if est.rapid_decay.orders.is_empty() || est.rapid_decay.orders.iter().any(|r| !(1..=8).contains(r)) {
            return Err(Error::Config("estimators.rapid_decay.orders must be non-empty with entries in 1..=8".into()));
        }
        if est.torus_cb.dims.is_empty() || est.torus_cb.dims.iter().any(|d| !(1..=3).contains(d)) {
            return Err(Error::Config("estimators.torus_cb.dims must be non-empty with entries in 1..=3".into()));
        }
        if !(4..=40).contains(&est.torus_cb.depth) {
            return Err(Error::Config(format!("estimators.torus_cb.depth must lie in 4..=40, got {}", est.torus_cb.depth)));
        }
        for (name, s) in [("theorem_slack", self.gates.theorem_slack), ("two_sided_slack", self.gates.two_sided_slack)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("gates.{name} must be finite and non-negative, got {s}")));
            }
        }
        for gate in [GateKind::Theorem, GateKind::TwoSided] {
            if self.gates(gate) {
                for need in [EstimatorKind::Cv, EstimatorKind::HeatTrace] {
                    if !self.runs(need) {
                        return Err(Error::Dependency { gate: gate.name().into(), missing: need.name().into() });
                    }
                }
            }
        }
        Ok(())
    }
}

impl ModelSpec {
    fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Torus { dim, side } => {
                if !(1..=3).contains(dim) {
                    return Err(Error::Config(format!("model.dim must be 1, 2 or 3, got {dim}")));
                }
                if *side < 3 {
                    return Err(Error::Config(format!("model.side must be at least 3, got {side}")));
                }
                let n = side.checked_pow(*dim as u32).unwrap_or(usize::MAX);
                if n > MAX_VERTICES {
                    return Err(Error::Config(format!("torus has {n} vertices, limit {MAX_VERTICES}")));
                }
            }
            ModelSpec::Elliptic { side, delta, gamma, coefficients } => {
                if *side < 3 || *side > MAX_VERTICES {
                    return Err(Error::Config(format!("model.side must lie in 3..={MAX_VERTICES}, got {side}")));
                }
                if !(*delta > 0.0 && delta <= gamma && gamma.is_finite()) {
                    return Err(Error::Config(format!("model needs 0 < delta <= gamma, got ({delta}, {gamma})")));
                }
                if let Some(c) = coefficients {
                    if c.len() != *side {
                        return Err(Error::Config(format!("model.coefficients has {} entries, side is {side}", c.len())));
                    }
                    if let Some((e, a)) = c.iter().enumerate().find(|(_, a)| !(**a >= *delta && **a <= *gamma)) {
                        return Err(Error::Config(format!("model.coefficients[{e}] = {a} lies outside [{delta}, {gamma}]")));
                    }
                }
            }
            ModelSpec::Gasket { level } => {
                if !(1..=MAX_GASKET_LEVEL).contains(level) {
                    return Err(Error::Config(format!(
                        "model.level must lie in 1..={MAX_GASKET_LEVEL} (level {MAX_GASKET_LEVEL} has {} vertices), got {level}",
                        gasket_vertex_count(MAX_GASKET_LEVEL)
                    )));
                }
            }
            ModelSpec::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config("model.path is empty".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(s, "test.cfg", ".")
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("[model]\nbuilder = \"gasket\"\nlevel = 3\n").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.time_grid, GridSpec::Auto);
        assert_eq!(c.gates.theorem_slack, 0.1);
        assert_eq!(c.estimators.heat_trace_target, TraceTarget::Dirac);
    }

    #[test]
    fn unknown_builder_reports_line() {
        let e = parse("seed = 1\n\n[model]\nbuilder = \"klein\"\nside = 4\n").unwrap_err();
        match e {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4, "{message}");
                assert!(message.contains("klein"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let r = parse("[model]\nbuilder = \"gasket\"\nlevel = 3\ncolour = 1\n");
        assert!(matches!(r, Err(Error::Parse { line: 4, .. })), "{r:?}");
        assert!(matches!(parse("sed = 3\n[model]\nbuilder = \"gasket\"\nlevel = 3\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn builder_preconditions_checked_at_parse_time() {
        assert!(matches!(parse("[model]\nbuilder = \"torus\"\ndim = 4\nside = 8\n"), Err(Error::Config(_))));
        assert!(matches!(parse("[model]\nbuilder = \"torus\"\ndim = 2\nside = 100\n"), Err(Error::Config(_))));
        assert!(matches!(parse("[model]\nbuilder = \"gasket\"\nlevel = 9\n"), Err(Error::Config(_))));
        let bad = "[model]\nbuilder = \"elliptic\"\nside = 3\ncoefficients = [1.0, 3.0, 1.0]\n";
        assert!(matches!(parse(bad), Err(Error::Config(_))));
    }

    #[test]
    fn gate_without_estimators_names_missing_one() {
        let text = "[model]\nbuilder = \"gasket\"\nlevel = 3\n[estimators]\nrun = [\"heat_trace\"]\n[gates]\nrun = [\"theorem\"]\n";
        match parse(text).unwrap_err() {
            Error::Dependency { gate, missing } => {
                assert_eq!(gate, "theorem");
                assert_eq!(missing, "cv");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn toml_echo_round_trips() {
        let text = "seed = 9\n[model]\nbuilder = \"torus\"\ndim = 2\nside = 16\n[time_grid]\nkind = \"dyadic\"\ndepth = 8\n\
                    [estimators]\nrun = [\"cv\", \"heat_trace\"]\ntime_window = [0.01, 0.1]\n[gates]\nrun = [\"theorem\"]\n";
        let c = parse(text).unwrap();
        assert_eq!(parse(&c.to_toml().unwrap()).unwrap(), c);
    }
}
