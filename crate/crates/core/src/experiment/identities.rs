use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dirac::{susy_pairing_check, Derivation, HodgeDirac};
use crate::error::Result;
use crate::forms::FiniteModel;
use crate::semigroup::{decay_check, ergodic_identities, kernel_identities, DecayReport, ErgodicIdentities, KernelIdentities, TimeGrid};

/// Times at which the pointwise kernel identities are checked.
pub const IDENTITY_TIMES: [f64; 4] = [0.01, 0.1, 0.5, 1.0];
/// Depth of the dyadic grid `1, 1/2, …, 2^{−9}` for the decay bound.
pub const DECAY_DEPTH: usize = 9;

pub const KERNEL_TOL: f64 = 1e-9;
pub const ERGODIC_TOL: f64 = 1e-9;
pub const SQUARE_TOL: f64 = 1e-12;
pub const FACTORIZATION_TOL: f64 = 1e-10;
pub const SUSY_TOL: f64 = 1e-9;

/// Size caps on the dense checks. Each check above its cap is skipped and
/// listed in [`IdentityReport::skipped`]. The `D²` and factorization checks
/// are sparse and always run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityLimits {
    /// Vertex count for the heat-kernel, ergodic and decay checks.
    pub dense_vertices: usize,
    /// `|E|` for the `∂∂*` eigensolve of the SUSY check.
    pub susy_edges: usize,
}

impl Default for IdentityLimits {
    fn default() -> Self {
        IdentityLimits { dense_vertices: 1200, susy_edges: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusyCheck {
    /// `None` when the nonzero spectra differ in size.
    pub max_relative_deviation: Option<f64>,
    pub star_d_kernel: usize,
    pub d_star_kernel: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub model: String,
    pub vertices: usize,
    pub edges: usize,
    pub components: usize,
    pub kernel: Vec<KernelIdentities>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicIdentities>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayReport>,
    pub square_block_error: f64,
    pub factorization_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub susy: Option<SusyCheck>,
    pub skipped: Vec<String>,
    pub failures: Vec<String>,
    pub passed: bool,
}

impl IdentityReport {
    /// Largest relative deviation among the tolerance-checked quantities.
    pub fn max_deviation(&self) -> f64 {
        let mut m = self.kernel.iter().map(KernelIdentities::max_deviation).fold(0.0, f64::max);
        if let Some(e) = &self.ergodic {
            m = m.max(e.idempotence).max(e.selfadjointness).max(e.invariance);
        }
        for v in [Some(self.square_block_error), Some(self.factorization_error), self.susy.as_ref().and_then(|s| s.max_relative_deviation)]
            .into_iter()
            .flatten()
        {
            m = m.max(v);
        }
        m
    }
}

pub fn susy_check(d: &Derivation) -> Result<SusyCheck> {
    let r = susy_pairing_check(d)?;
    Ok(SusyCheck {
        max_relative_deviation: r.max_relative_deviation.is_finite().then_some(r.max_relative_deviation),
        star_d_kernel: r.star_d_kernel,
        d_star_kernel: r.d_star_kernel,
        passed: r.passed,
    })
}

/// Every exact identity of the model that fits within `limits`.
pub fn identity_report(model: &Arc<FiniteModel>, limits: IdentityLimits) -> Result<IdentityReport> {
    let n = model.n();
    let edges = model.graph().num_edges();
    let components = model.graph().num_components();
    let mut skipped = Vec::new();
    let mut failures = Vec::new();
    let mut kernel = Vec::new();
    let (mut ergodic, mut decay) = (None, None);

    if n <= limits.dense_vertices {
        for t in IDENTITY_TIMES {
            let k = kernel_identities(model, t)?;
            if !(k.max_deviation() <= KERNEL_TOL) {
                failures.push(format!("kernel identities at t = {t}: deviation {:.3e}", k.max_deviation()));
            }
            kernel.push(k);
        }
        let e = ergodic_identities(model, &IDENTITY_TIMES)?;
        let worst = e.idempotence.max(e.selfadjointness).max(e.invariance);
        if !(worst <= ERGODIC_TOL) {
            failures.push(format!("ergodic projection: deviation {worst:.3e}"));
        }
        if e.fix_dim != components || e.kernel_dim != components {
            failures.push(format!(
                "fixed space: fix_dim {}, dim ker A {}, components {components}",
                e.fix_dim, e.kernel_dim
            ));
        }
        ergodic = Some(e);
        let d = decay_check(model, TimeGrid::dyadic(DECAY_DEPTH).times())?;
        if !d.passed {
            failures.push("spectral-gap decay bound violated".into());
        }
        decay = Some(d);
    } else {
        skipped.push(format!("heat-kernel, ergodic and decay checks ({n} vertices > {})", limits.dense_vertices));
    }

    let derivation = Derivation::new(Arc::clone(model));
    let square_block_error = HodgeDirac::new(derivation.clone()).square_block_error();
    if !(square_block_error <= SQUARE_TOL) {
        failures.push(format!("D² block structure: deviation {square_block_error:.3e}"));
    }
    let factorization_error = derivation.factorization_error();
    if !(factorization_error <= FACTORIZATION_TOL) {
        failures.push(format!("∂*∂ = A: deviation {factorization_error:.3e}"));
    }

    let susy = if edges <= limits.susy_edges {
        let s = susy_check(&derivation)?;
        if !s.passed {
            failures.push(match s.max_relative_deviation {
                Some(v) => format!("SUSY pairing: deviation {v:.3e}"),
                None => "SUSY pairing: nonzero spectra differ in size".into(),
            });
        }
        Some(s)
    } else {
        skipped.push(format!("SUSY pairing ({edges} edges > {})", limits.susy_edges));
        None
    };

    Ok(IdentityReport {
        model: model.label().to_string(),
        vertices: n,
        edges,
        components,
        kernel,
        ergodic,
        decay,
        square_block_error,
        factorization_error,
        susy,
        passed: failures.is_empty(),
        skipped,
        failures,
    })
}
