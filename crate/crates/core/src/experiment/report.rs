use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TraceTarget};
use super::identities::IdentityReport;
use crate::dims::{CvEstimate, DimensionFit, Estimate, GateOutcome, RapidDecayProfile, ZetaProbe};
use crate::dirac::DiracSpectrumSource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub vertices: usize,
    pub edges: usize,
    pub components: usize,
    pub total_mass: f64,
    pub lambda_max: f64,
    pub spectral_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub target: TraceTarget,
    /// How the `D²` spectrum was obtained; absent for the generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DiracSpectrumSource>,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaResult {
    pub levels: Vec<usize>,
    pub labels: Vec<String>,
    pub probe: ZetaProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConnesOutcome {
    Finite { value: f64, lower: f64, upper: f64, iterations: usize },
    /// `x` and `y` lie in different components.
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnesResult {
    pub x: usize,
    pub y: usize,
    pub tol: f64,
    pub outcome: ConnesOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusCbResult {
    pub dim: usize,
    pub cutoff: usize,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimatorResults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_trace: Option<TraceEstimate>,
    /// Lower-estimate samples, computed for the two-sided gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_diagonal: Option<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weyl: Option<TraceEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<ZetaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connes: Option<Vec<ConnesResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rapid_decay: Option<Vec<RapidDecayProfile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus_cb: Option<Vec<TorusCbResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GateResults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<GateOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_sided: Option<GateOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityReport>,
}

/// One line of a gate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl GateResults {
    pub fn lines(&self) -> Vec<GateLine> {
        let mut out = Vec::new();
        for g in [&self.theorem, &self.two_sided].into_iter().flatten() {
            out.push(GateLine { name: g.name.clone(), passed: g.passed, detail: g.detail.clone() });
        }
        if let Some(r) = &self.identities {
            let detail = if r.passed {
                format!("max deviation {:.3e}, {} checks skipped", r.max_deviation(), r.skipped.len())
            } else {
                r.failures.join("; ")
            };
            out.push(GateLine { name: "identities".into(), passed: r.passed, detail });
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.lines().iter().all(|l| l.passed)
    }
}

/// Deterministic record of a run; wall-clock times live in [`RunOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub model: ModelSummary,
    pub time_grid: Vec<f64>,
    pub estimators: EstimatorResults,
    pub gates: GateResults,
    pub all_gates_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Vec<StageTiming>,
}

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn report_from_json(text: &str) -> Result<RunReport> {
    serde_json::from_str(text).map_err(|e| Error::Serialize(e.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn log_field(v: f64) -> String {
    if v > 0.0 {
        format!("{}", v.ln())
    } else {
        String::new()
    }
}

/// Plot data for one estimator. `x_name`/`y_name` head the first two columns;
/// the log columns use natural logarithms and are empty where the value is 0.
pub fn samples_csv(seed: u64, x_name: &str, y_name: &str, estimate: &Estimate) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([x_name, y_name, &format!("log_{x_name}"), &format!("log_{y_name}"), "in_window"])
        .map_err(csv_err)?;
    for s in &estimate.samples {
        w.write_record([s.x.to_string(), s.value.to_string(), log_field(s.x), log_field(s.value), s.in_window.to_string()])
            .map_err(csv_err)?;
    }
    finish_csv(seed, w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

fn finish_csv(seed: u64, w: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| Error::Serialize(e.to_string()))?;
    Ok(format!("# seed={seed}\n{body}"))
}

fn rapid_decay_csv(seed: u64, p: &RapidDecayProfile) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "value", "log_t", "log_value", "in_window"]).map_err(csv_err)?;
    let (lo, hi) = p.fit.window;
    for &(t, b) in &p.bound_samples {
        let v = b * b;
        w.write_record([t.to_string(), v.to_string(), log_field(t), log_field(v), (t >= lo && t <= hi).to_string()])
            .map_err(csv_err)?;
    }
    finish_csv(seed, w)
}

fn zeta_csv(seed: u64, z: &ZetaResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["alpha".to_string()];
    header.extend(z.levels.iter().map(|l| format!("sum_{l}")));
    header.push("increment_ratio".into());
    w.write_record(&header).map_err(csv_err)?;
    let last = z.probe.increment_ratios.last();
    for (j, a) in z.probe.alphas.iter().enumerate() {
        let mut row = vec![a.to_string()];
        row.extend(z.probe.sums.iter().map(|s| s[j].to_string()));
        row.push(last.map_or(String::new(), |r| r[j].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish_csv(seed, w)
}

fn connes_csv(seed: u64, rows: &[ConnesResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "distance", "lower", "upper", "iterations"]).map_err(csv_err)?;
    for r in rows {
        let rec = match &r.outcome {
            ConnesOutcome::Finite { value, lower, upper, iterations } => {
                [r.x.to_string(), r.y.to_string(), value.to_string(), lower.to_string(), upper.to_string(), iterations.to_string()]
            }
            ConnesOutcome::Infinite => {
                [r.x.to_string(), r.y.to_string(), "inf".into(), "inf".into(), "inf".into(), "0".into()]
            }
        };
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(seed, w)
}

/// `(file name, contents)` for every CSV the report produces.
pub fn csv_files(report: &RunReport) -> Result<Vec<(String, String)>> {
    let seed = report.seed;
    let e = &report.estimators;
    let mut out = Vec::new();
    if let Some(cv) = &e.cv {
        out.push(("cv.csv".into(), samples_csv(seed, "t", "value", &cv.estimate)?));
    }
    if let Some(h) = &e.heat_trace {
        out.push(("heat_trace.csv".into(), samples_csv(seed, "t", "value", &h.estimate)?));
    }
    if let Some(m) = &e.mean_diagonal {
        out.push(("mean_diagonal.csv".into(), samples_csv(seed, "t", "value", m)?));
    }
    if let Some(wl) = &e.weyl {
        out.push(("weyl.csv".into(), samples_csv(seed, "lambda", "count", &wl.estimate)?));
    }
    if let Some(z) = &e.zeta {
        out.push(("zeta.csv".into(), zeta_csv(seed, z)?));
    }
    if let Some(c) = &e.connes {
        out.push(("connes.csv".into(), connes_csv(seed, c)?));
    }
    for p in e.rapid_decay.iter().flatten() {
        out.push((format!("rapid_decay_k{}_r{}.csv", p.k, p.r), rapid_decay_csv(seed, p)?));
    }
    for t in e.torus_cb.iter().flatten() {
        out.push((format!("torus_cb_d{}.csv", t.dim), samples_csv(seed, "t", "value", &t.estimate)?));
    }
    Ok(out)
}

fn fit_row(s: &mut String, name: &str, fit: &DimensionFit) {
    let _ = writeln!(
        s,
        "{name:<16} {:>9.4} [{:.3e}, {:.3e}] {:>7} {:>11.3e}",
        fit.exponent, fit.window.0, fit.window.1, fit.n_points, fit.residual
    );
}

/// Plain-text table of estimates, gates and stage timings.
pub fn summary_text(outcome: &RunOutcome) -> String {
    let r = &outcome.report;
    let m = &r.model;
    let mut s = String::new();
    let _ = writeln!(s, "heatdim run  seed={}", r.seed);
    let _ = writeln!(s, "model  {}  vertices={} edges={} components={}", m.label, m.vertices, m.edges, m.components);
    let gap = m.spectral_gap.map_or("none".to_string(), |g| format!("{g:.6e}"));
    let _ = writeln!(s, "lambda_max={:.6e} gap={gap} time points={}", m.lambda_max, r.time_grid.len());
    s.push('\n');
    let _ = writeln!(s, "{:<16} {:>9} {:<25} {:>7} {:>11}", "estimator", "value", "window", "points", "residual");
    let e = &r.estimators;
    if let Some(cv) = &e.cv {
        fit_row(&mut s, "cv", &cv.estimate.fit);
    }
    if let Some(h) = &e.heat_trace {
        fit_row(&mut s, "heat_trace", &h.estimate.fit);
    }
    if let Some(md) = &e.mean_diagonal {
        fit_row(&mut s, "mean_diagonal", &md.fit);
    }
    if let Some(w) = &e.weyl {
        fit_row(&mut s, "weyl", &w.estimate.fit);
    }
    for p in e.rapid_decay.iter().flatten() {
        fit_row(&mut s, &format!("rapid_decay r={}", p.r), &p.fit);
    }
    for t in e.torus_cb.iter().flatten() {
        fit_row(&mut s, &format!("torus_cb d={}", t.dim), &t.estimate.fit);
    }
    if let Some(z) = &e.zeta {
        let a = z.probe.critical_alpha.map_or("none".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(s, "{:<16} {a:>9} levels {:?}", "zeta", z.levels);
    }
    for c in e.connes.iter().flatten() {
        let v = match &c.outcome {
            ConnesOutcome::Finite { value, .. } => format!("{value:.6}"),
            ConnesOutcome::Infinite => "inf".into(),
        };
        let _ = writeln!(s, "{:<16} {v:>9} ({}, {})", "connes", c.x, c.y);
    }
    s.push('\n');
    let lines = r.gates.lines();
    if lines.is_empty() {
        s.push_str("no gates requested\n");
    } else {
        let _ = writeln!(s, "{:<12} {:<6} detail", "gate", "result");
        for l in &lines {
            let _ = writeln!(s, "{:<12} {:<6} {}", l.name, if l.passed { "PASS" } else { "FAIL" }, l.detail);
        }
    }
    s.push('\n');
    let _ = writeln!(s, "stage timings (s)");
    for t in &outcome.timings {
        let _ = writeln!(s, "  {:<20} {:.3}", t.stage, t.seconds);
    }
    s
}

/// Writes the JSON report, the summary table and every CSV into `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: &str| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, contents)?;
        written.push(p);
        Ok(())
    };
    put(REPORT_FILE, &to_json(&outcome.report)?)?;
    put(SUMMARY_FILE, &summary_text(outcome))?;
    for (name, body) in csv_files(&outcome.report)? {
        put(&name, &body)?;
    }
    Ok(written)
}
