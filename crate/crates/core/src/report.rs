//! Serializable reports and manifests: per-check results, bracket
//! comparisons, symmetry residuals, and run manifests. Output ordering is
//! deterministic; the timing block sits last so reproducibility comparisons
//! can strip it.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// FNV-1a over bytes; used for config and input hashing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: residual.is_finite() && residual < tolerance,
            residual,
            tolerance,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: residual {:.3e} (tol {:.1e}){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.residual,
            self.tolerance,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" — {}", self.detail)
            }
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub checks: Vec<CheckResult>,
    pub failures: usize,
    /// Wall-clock milliseconds; excluded from reproducibility comparisons.
    pub timing_ms: u128,
}

impl ResultManifest {
    pub fn new(config_hash: u64) -> Self {
        ResultManifest {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: hex64(config_hash),
            input_hashes: BTreeMap::new(),
            checks: Vec::new(),
            failures: 0,
            timing_ms: 0,
        }
    }

    pub fn push(&mut self, check: CheckResult) {
        if !check.passed {
            self.failures += 1;
        }
        self.checks.push(check);
    }

    pub fn all_passed(&self) -> bool {
        self.failures == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// JSON with the timing stripped: byte-identical across runs for a
    /// fixed configuration and version.
    pub fn to_comparable_json(&self) -> String {
        let mut clone = self.clone();
        clone.timing_ms = 0;
        serde_json::to_string_pretty(&clone).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BracketComparison {
    pub description: String,
    pub raw_re: f64,
    pub raw_im: f64,
    pub predicted_re: f64,
    pub predicted_im: f64,
    pub rel_error: f64,
    /// (window, value) convergence trace of the raw side.
    pub trace: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub corner: f64,
    pub dets: f64,
    pub actions: f64,
    pub angles: f64,
    pub block_form: f64,
    pub action_reality: f64,
    pub worst: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterManifest {
    pub tool_version: String,
    pub n: usize,
    pub potential_hash: String,
    pub r_min: f64,
    pub r_max: f64,
    pub count: usize,
    pub rays: Vec<usize>,
    pub solver_tol: f64,
    pub rk_rtol: f64,
    pub worst_x_dependence: f64,
    pub worst_leakage: f64,
    pub worst_limit_diff: f64,
    pub worst_det_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub flow: String,
    pub n: usize,
    pub k: usize,
    pub t_final: f64,
    pub dt: f64,
    pub time_anchor: String,
    pub snapshots: usize,
    pub spectral_cutoff: f64,
    pub retained_growth: f64,
    pub offdiag_phase_rel: f64,
    pub diag_drift: f64,
    pub action_drift_rel: f64,
    pub angle_slope_rel: f64,
    pub hamiltonian_drift_rel: f64,
    pub snapshot_files: Vec<String>,
}

/// Emit a plotter-agnostic command file: one directive per series,
/// referencing columns of the CSVs written alongside.
pub fn plot_script(title: &str, series: &[(&str, &str, &str, &str)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# plot: {title}\n"));
    out.push_str("# format: series <label> file=<csv> x=<column> y=<column>\n");
    for (label, file, x, y) in series {
        out.push_str(&format!("series {label} file={file} x={x} y={y}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_comparability() {
        let mut m = ResultManifest::new(42);
        m.push(CheckResult::new("alpha", 1e-9, 1e-6));
        m.push(CheckResult::new("beta", 2.0, 1e-6).with_detail("forced"));
        m.timing_ms = 1234;
        assert_eq!(m.failures, 1);
        assert!(!m.all_passed());
        let json = m.to_json();
        let back: ResultManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.checks.len(), 2);
        let mut m2 = m.clone();
        m2.timing_ms = 99999;
        assert_eq!(m.to_comparable_json(), m2.to_comparable_json());
        assert_ne!(m.to_json(), m2.to_json());
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), fnv1a(b"a"));
        assert_ne!(fnv1a(b"a"), fnv1a(b"b"));
    }
}
