//! Experiment reports: typed check rows, JSON and CSV serialization, and
//! the gate arithmetic every driver shares.
//!
//! A report is self-describing: it embeds the schema version, the code
//! version that produced it, the fully resolved config (overrides included),
//! and one row per check. `all_pass` aggregates gating rows only —
//! informational rows (conjectured constants, trend context) never veto.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::MomentEstimate;
use crate::harness::config::{ExperimentConfig, TolerancePolicy};

/// Bump on any incompatible change to the report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Version string stamped into every report: package version plus the git
/// commit the binary was built from.
pub fn code_version() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), "+", env!("LOCTIME_GIT_HASH"))
}

/// Signed distance in combined standard errors. Exact agreement is z = 0
/// even when both uncertainties vanish; disagreement with zero uncertainty
/// is infinite, never clamped.
pub fn z_value(estimate: f64, std_error: f64, oracle: f64, oracle_se: f64) -> f64 {
    let diff = estimate - oracle;
    if diff == 0.0 {
        return 0.0;
    }
    diff / (std_error * std_error + oracle_se * oracle_se).sqrt()
}

/// One verdict: an estimate, the reference it was held against, and whether
/// it passed its gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    /// Stable machine-readable check name, e.g. `clt3.variance`.
    pub check_id: String,
    /// Lag the row was computed at, when meaningful.
    #[serde(default)]
    pub h: Option<f64>,
    pub estimate: f64,
    pub std_error: f64,
    /// Sample count behind the estimate (paths, pairs, or grid points).
    pub n: u64,
    pub oracle: f64,
    pub oracle_se: f64,
    /// Distance in combined standard errors; for deterministic gates
    /// (zero uncertainty) the deviation normalized by the base tolerance.
    /// Serialized as the strings "inf"/"-inf"/"nan" when non-finite, since
    /// JSON has no representation for those.
    #[serde(with = "z_repr")]
    pub z: f64,
    /// estimate / oracle where that is the natural reading.
    #[serde(default)]
    pub ratio: Option<f64>,
    /// Human-readable description of the gate that was applied.
    pub gate: String,
    pub pass: bool,
    /// Gating rows decide `all_pass`; informational rows are reported only.
    pub gating: bool,
    #[serde(default)]
    pub note: String,
}

impl CheckRow {
    /// Statistical gate: |z| <= 3 * z_multiplier.
    pub fn z_gate(
        check_id: &str,
        h: Option<f64>,
        est: &MomentEstimate,
        oracle: f64,
        oracle_se: f64,
        policy: &TolerancePolicy,
    ) -> CheckRow {
        let z = z_value(est.mean, est.std_error, oracle, oracle_se);
        let gate = policy.z_gate();
        CheckRow {
            check_id: check_id.to_string(),
            h,
            estimate: est.mean,
            std_error: est.std_error,
            n: est.n,
            oracle,
            oracle_se,
            z,
            ratio: None,
            gate: format!("|z| <= {gate}"),
            pass: z.abs() <= gate,
            gating: true,
            note: String::new(),
        }
    }

    /// Looser-of gate for variance comparisons: pass when the deviation is
    /// within rel_tol of the oracle OR within 3 combined standard errors,
    /// each scaled by its policy multiplier.
    pub fn looser_gate(
        check_id: &str,
        h: Option<f64>,
        est: &MomentEstimate,
        oracle: f64,
        oracle_se: f64,
        rel_tol: f64,
        policy: &TolerancePolicy,
    ) -> CheckRow {
        let z = z_value(est.mean, est.std_error, oracle, oracle_se);
        let zg = policy.z_gate();
        let rel = rel_tol * policy.rel_multiplier;
        let rel_ok = (est.mean - oracle).abs() <= rel * oracle.abs();
        let pass = rel_ok || z.abs() <= zg;
        CheckRow {
            check_id: check_id.to_string(),
            h,
            estimate: est.mean,
            std_error: est.std_error,
            n: est.n,
            oracle,
            oracle_se,
            z,
            ratio: (oracle != 0.0).then(|| est.mean / oracle),
            gate: format!("looser of |rel| <= {rel} and |z| <= {zg}"),
            pass,
            gating: true,
            note: String::new(),
        }
    }

    /// Deterministic relative-error gate for quadrature-backed values.
    pub fn rel_gate(
        check_id: &str,
        h: Option<f64>,
        value: f64,
        target: f64,
        rel_tol: f64,
        policy: &TolerancePolicy,
    ) -> CheckRow {
        let tol = rel_tol * policy.rel_multiplier;
        let rel = (value - target).abs() / target.abs().max(f64::MIN_POSITIVE);
        CheckRow {
            check_id: check_id.to_string(),
            h,
            estimate: value,
            std_error: 0.0,
            n: 1,
            oracle: target,
            oracle_se: 0.0,
            z: (value - target) / (rel_tol * target.abs().max(f64::MIN_POSITIVE)),
            ratio: (target != 0.0).then(|| value / target),
            gate: format!("|rel| <= {tol}"),
            pass: rel <= tol,
            gating: true,
            note: String::new(),
        }
    }

    /// Deterministic absolute gate (e.g. max deviation <= 1e-6).
    pub fn abs_gate(
        check_id: &str,
        h: Option<f64>,
        value: f64,
        abs_tol: f64,
        policy: &TolerancePolicy,
    ) -> CheckRow {
        let tol = abs_tol * policy.rel_multiplier;
        CheckRow {
            check_id: check_id.to_string(),
            h,
            estimate: value,
            std_error: 0.0,
            n: 1,
            oracle: 0.0,
            oracle_se: 0.0,
            z: value / abs_tol,
            ratio: None,
            gate: format!("|value| <= {tol:e}"),
            pass: value.abs() <= tol,
            gating: true,
            note: String::new(),
        }
    }

    /// Band gate on a ratio: pass when lo <= ratio <= hi, with the band
    /// widened around 1 by the relative multiplier.
    pub fn band_gate(
        check_id: &str,
        h: Option<f64>,
        ratio: f64,
        ratio_se: f64,
        n: u64,
        lo: f64,
        hi: f64,
        policy: &TolerancePolicy,
    ) -> CheckRow {
        let m = policy.rel_multiplier;
        let lo = 1.0 - (1.0 - lo) * m;
        let hi = 1.0 + (hi - 1.0) * m;
        CheckRow {
            check_id: check_id.to_string(),
            h,
            estimate: ratio,
            std_error: ratio_se,
            n,
            oracle: 1.0,
            oracle_se: 0.0,
            z: z_value(ratio, ratio_se, 1.0, 0.0),
            ratio: Some(ratio),
            gate: format!("ratio in [{lo}, {hi}]"),
            pass: (lo..=hi).contains(&ratio),
            gating: true,
            note: String::new(),
        }
    }

    /// Pass/fail condition already decided by the caller.
    pub fn condition_gate(check_id: &str, description: &str, pass: bool) -> CheckRow {
        CheckRow {
            check_id: check_id.to_string(),
            h: None,
            estimate: if pass { 1.0 } else { 0.0 },
            std_error: 0.0,
            n: 1,
            oracle: 1.0,
            oracle_se: 0.0,
            z: 0.0,
            ratio: None,
            gate: description.to_string(),
            pass,
            gating: true,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    /// Demote to an informational row: reported, never gated.
    pub fn informational(mut self) -> Self {
        self.gating = false;
        self
    }

    /// One-line human rendering for terminals and logs.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let gating = if self.gating { "" } else { " (info)" };
        let h = self
            .h
            .map(|h| format!(" h={h}"))
            .unwrap_or_default();
        let ratio = self
            .ratio
            .map(|r| format!(" ratio={r:.4}"))
            .unwrap_or_default();
        format!(
            "[{verdict}]{gating} {id}{h}: est={est:.6e} se={se:.2e} oracle={oracle:.6e} z={z:+.2}{ratio} gate: {gate}",
            id = self.check_id,
            est = self.estimate,
            se = self.std_error,
            oracle = self.oracle,
            z = self.z,
            gate = self.gate,
        )
    }
}

/// A full experiment outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    /// Command-line overrides that were applied to the config file, verbatim.
    #[serde(default)]
    pub overrides: Vec<String>,
    pub rows: Vec<CheckRow>,
    /// Paths re-run on a widened grid after leaving the configured one.
    pub retries: u64,
    /// True when more than 1% of paths needed a retry.
    pub degraded: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub wall_time_secs: f64,
    pub all_pass: bool,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            code_version: code_version().to_string(),
            config,
            overrides: Vec::new(),
            rows: Vec::new(),
            retries: 0,
            degraded: false,
            warnings: Vec::new(),
            wall_time_secs: 0.0,
            all_pass: false,
        }
    }

    /// Recompute the aggregate verdict and the degraded flag; call once all
    /// rows are in.
    pub fn finalize(&mut self, n_paths_simulated: u64) {
        self.all_pass = self.rows.iter().filter(|r| r.gating).all(|r| r.pass);
        if n_paths_simulated > 0 {
            self.degraded = (self.retries as f64) > 0.01 * n_paths_simulated as f64;
            if self.degraded {
                self.warnings.push(format!(
                    "{} of {} paths left the configured grid; results use widened grids",
                    self.retries, n_paths_simulated
                ));
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("report parse: {e}")))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema {} unsupported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Flat CSV: one record per check row.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer
                .serialize(row)
                .map_err(|e| Error::Config(format!("csv row: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Config(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(format!("csv utf8: {e}")))
    }

    /// Hash of everything except wall time — two runs of the same build and
    /// config must agree on this exactly, at any thread count.
    pub fn body_fingerprint(&self) -> String {
        let mut clone = self.clone();
        clone.wall_time_secs = 0.0;
        let json = serde_json::to_string(&clone).expect("report is always serializable");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.rows.iter().map(CheckRow::summary_line).collect();
        for w in &self.warnings {
            lines.push(format!("[WARN] {w}"));
        }
        lines.push(format!(
            "[{}] {}: {} rows, retries={}, {:.1}s",
            if self.all_pass { "PASS" } else { "FAIL" },
            self.config.kind.as_str(),
            self.rows.len(),
            self.retries,
            self.wall_time_secs
        ));
        lines
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lossless (de)serialization for a score that is legitimately infinite when
/// a zero-uncertainty comparison disagrees: numbers stay numbers, non-finite
/// values become the strings "inf" / "-inf" / "nan".
mod z_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "unrecognized score encoding {other:?}"
                ))),
            },
        }
    }
}
