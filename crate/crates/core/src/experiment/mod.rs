//! Config-driven runs: model construction, estimator suites, gates and
//! report files.

pub mod config;
pub mod identities;
pub mod report;
pub mod run;
pub mod verify;

pub use config::{EstimatorKind, ExperimentConfig, GateKind, GridSpec, ModelSpec, TraceTarget};
pub use identities::{identity_report, IdentityLimits, IdentityReport};
pub use report::{write_outputs, RunOutcome, RunReport};
pub use run::{build_model, exit_code_for_error, run, spectrum_csv, EXIT_CONFIG, EXIT_GATE_FAILURE, EXIT_NUMERICAL, EXIT_OK};
pub use verify::{verify, verify_summary, VerifyReport};
