//! Experiment plans: what to run, at which resolutions, with which gates.
//!
//! Configs live in flat key–value files (TOML: top-level keys plus `[grid]`
//! and `[tolerance]` sections) and can be patched from the command line with
//! repeatable `key=value` overrides. Every config is validated before any
//! simulation starts; a malformed file is a usage error, not a failed run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_time::GridSpec;

/// The experiment families the runner knows how to drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Centered second moment of local-time increments, CLT normalization.
    Clt2,
    /// Centered third moment, CLT normalization.
    Clt3,
    /// Centered fourth moment with the conjectured normalization; reported,
    /// never gated.
    Clt4Conjecture,
    /// Distributional lag-scaling identities for increment integrals.
    Scaling,
    /// Permutation-sum moment formulas versus closed forms and Monte Carlo.
    KacOracle,
    /// Exponential-time moment identities for the third-moment statistic.
    ExpTimeMoments,
    /// Product-moment identity linking the centered second moment of one
    /// path's increments, integrated against an independent path.
    VarianceIdentity,
    /// Resolvent-density integrals and envelopes (quadrature only).
    PotentialIntegrals,
    /// Heat-kernel difference-power integrals and spectral cross-checks
    /// (quadrature only).
    HeatIntegrals,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Clt2 => "clt2",
            ExperimentKind::Clt3 => "clt3",
            ExperimentKind::Clt4Conjecture => "clt4_conjecture",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::KacOracle => "kac_oracle",
            ExperimentKind::ExpTimeMoments => "exp_time_moments",
            ExperimentKind::VarianceIdentity => "variance_identity",
            ExperimentKind::PotentialIntegrals => "potential_integrals",
            ExperimentKind::HeatIntegrals => "heat_integrals",
        }
    }

    /// Whether the kind simulates paths (and therefore cares about dt,
    /// n_paths and the grid resolution rules).
    pub fn simulates(&self) -> bool {
        !matches!(
            self,
            ExperimentKind::PotentialIntegrals | ExperimentKind::HeatIntegrals
        )
    }

    /// Whether lag statistics are read off a shared occupation grid, so
    /// every lag must be a whole number of cells.
    pub fn needs_lattice_lags(&self) -> bool {
        matches!(
            self,
            ExperimentKind::Clt2
                | ExperimentKind::Clt3
                | ExperimentKind::Clt4Conjecture
                | ExperimentKind::Scaling
                | ExperimentKind::VarianceIdentity
                | ExperimentKind::ExpTimeMoments
        )
    }

    /// Whether the kind needs a killing rate.
    pub fn needs_zeta(&self) -> bool {
        matches!(
            self,
            ExperimentKind::ExpTimeMoments | ExperimentKind::KacOracle
        )
    }
}

/// Multipliers applied to the default gates: statistical gates pass at
/// |z| <= 3 * z_multiplier, relative gates at tol * rel_multiplier. Values
/// above 1 loosen, below 1 tighten; gates are never clamped or floored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancePolicy {
    pub z_multiplier: f64,
    pub rel_multiplier: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            z_multiplier: 1.0,
            rel_multiplier: 1.0,
        }
    }
}

impl TolerancePolicy {
    pub fn z_gate(&self) -> f64 {
        3.0 * self.z_multiplier
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tolerance.z_multiplier", self.z_multiplier),
            ("tolerance.rel_multiplier", self.rel_multiplier),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn default_t() -> f64 {
    1.0
}

fn default_scaling_p() -> u32 {
    3
}

/// A complete, self-describing experiment plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Path horizon (fixed-time kinds). Defaults to 1.
    #[serde(default = "default_t")]
    pub t: f64,
    /// Spatial lags, largest first by convention; trend checks follow this
    /// order after an explicit descending sort.
    pub h_list: Vec<f64>,
    /// Euler time step for path simulation.
    pub dt: f64,
    /// Occupation grid. Paths that leave it are retried on a widened copy.
    pub grid: GridSpec,
    /// Sample count: paths, or pairs for the product-moment identity.
    pub n_paths: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// Killing rate for exponential-time kinds.
    #[serde(default)]
    pub zeta: Option<f64>,
    /// Horizon of the independent second path in the product-moment
    /// identity; defaults to t.
    #[serde(default)]
    pub s: Option<f64>,
    /// Moment order for the lag-scaling experiment.
    #[serde(default = "default_scaling_p")]
    pub scaling_p: u32,
    /// Permit h <= 2 sqrt(dt), where increment statistics are dominated by
    /// time-discretization error. Off by default.
    #[serde(default)]
    pub allow_coarse_dt: bool,
    #[serde(default)]
    pub tolerance: TolerancePolicy,
}

impl ExperimentConfig {
    /// Full invariant check. Everything here is a config error (usage exit
    /// code), not a run failure.
    pub fn validate(&self) -> Result<()> {
        let c = |msg: String| Err(Error::Config(msg));

        if !self.t.is_finite() || self.t <= 0.0 {
            return c(format!("t must be finite and > 0, got {}", self.t));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return c(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if self.n_paths < 100 {
            return c(format!("n_paths must be at least 100, got {}", self.n_paths));
        }
        if self.h_list.is_empty() {
            return c("h_list must not be empty".into());
        }
        for &h in &self.h_list {
            if !h.is_finite() || h <= 0.0 {
                return c(format!("every h must be finite and > 0, got {h}"));
            }
        }
        let mut sorted = self.h_list.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.dedup();
        if sorted.len() != self.h_list.len() {
            return c("h_list must not contain duplicates".into());
        }

        GridSpec::new(self.grid.x_min, self.grid.x_max, self.grid.dx)
            .map_err(|e| Error::Config(format!("grid: {e}")))?;

        if self.kind.simulates() && !self.allow_coarse_dt {
            let floor = 2.0 * self.dt.sqrt();
            for &h in &self.h_list {
                if h <= floor {
                    return c(format!(
                        "h = {h} is not above the resolution floor 2 sqrt(dt) = {floor:.3e}; \
                         shrink dt or set allow_coarse_dt = true"
                    ));
                }
            }
        }

        if self.kind.needs_lattice_lags() {
            for &h in &self.h_list {
                let cells = h / self.grid.dx;
                if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
                    return c(format!(
                        "h = {h} is not a whole number of grid cells (dx = {})",
                        self.grid.dx
                    ));
                }
            }
        }

        match self.zeta {
            Some(z) if !z.is_finite() || z <= 0.0 => {
                return c(format!("zeta must be finite and > 0, got {z}"));
            }
            None if self.kind.needs_zeta() => {
                return c(format!("kind {} requires zeta", self.kind.as_str()));
            }
            _ => {}
        }

        if let Some(s) = self.s {
            if !s.is_finite() || s <= 0.0 {
                return c(format!("s must be finite and > 0, got {s}"));
            }
        }

        if !(2..=4).contains(&self.scaling_p) {
            return c(format!("scaling_p must be 2, 3 or 4, got {}", self.scaling_p));
        }

        self.tolerance.validate()
    }

    /// Lags sorted descending — the order every driver and trend check uses.
    pub fn lags_descending(&self) -> Vec<f64> {
        let mut hs = self.h_list.clone();
        hs.sort_by(|a, b| b.total_cmp(a));
        hs
    }

    /// Second-path horizon for the product-moment identity.
    pub fn s_or_t(&self) -> f64 {
        self.s.unwrap_or(self.t)
    }
}

/// Parse a TOML literal for an override value; unquoted non-numeric text
/// falls back to a string so `kind=clt2` works without quotes.
fn parse_override_literal(raw: &str) -> toml::Value {
    let attempt: std::result::Result<toml::Value, _> = format!("v = {raw}").parse::<toml::Table>()
        .map(|mut t| t.remove("v").expect("key v was just parsed"));
    attempt.unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

/// Apply one `path.to.key=value` override to a parsed TOML tree, creating
/// intermediate tables as needed.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key segment")));
    }
    let mut table = root;
    for seg in &segments[..segments.len() - 1] {
        table = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override {spec:?}: {seg} is not a section"))
            })?;
    }
    let leaf = segments[segments.len() - 1];
    table.insert(leaf.to_string(), parse_override_literal(raw.trim()));
    Ok(())
}

/// Parse config text, apply overrides in order, deserialize and validate.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut tree: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
    for spec in overrides {
        apply_override(&mut tree, spec)?;
    }
    let config: ExperimentConfig = toml::Value::Table(tree)
        .try_into()
        .map_err(|e| Error::Config(format!("config shape: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Read and parse a config file.
pub fn load_config(path: &std::path::Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_text() -> &'static str {
        r#"
kind = "clt2"
t = 1.0
h_list = [0.05, 0.02]
dt = 1.0e-5
n_paths = 1000
base_seed = 7

[grid]
x_min = -6.0
x_max = 6.0
dx = 0.0025
"#
    }

    #[test]
    fn parses_and_validates_a_full_config() {
        let cfg = parse_config(base_text(), &[]).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Clt2);
        assert_eq!(cfg.h_list, vec![0.05, 0.02]);
        assert_eq!(cfg.n_paths, 1000);
        assert_eq!(cfg.tolerance, TolerancePolicy::default());
        assert_eq!(cfg.lags_descending(), vec![0.05, 0.02]);
        assert!(cfg.s_or_t() == 1.0);
    }

    #[test]
    fn overrides_patch_scalars_sections_and_arrays() {
        let overrides = vec![
            "n_paths=2000".to_string(),
            "grid.dx=0.005".to_string(),
            "h_list=[0.05]".to_string(),
            "tolerance.z_multiplier=2.0".to_string(),
            "kind=clt3".to_string(),
        ];
        let cfg = parse_config(base_text(), &overrides).unwrap();
        assert_eq!(cfg.n_paths, 2000);
        assert_eq!(cfg.grid.dx, 0.005);
        assert_eq!(cfg.h_list, vec![0.05]);
        assert_eq!(cfg.tolerance.z_multiplier, 2.0);
        assert_eq!(cfg.kind, ExperimentKind::Clt3);
    }

    #[test]
    fn rejects_invalid_configs() {
        // Malformed TOML.
        assert!(parse_config("kind = [unclosed", &[]).is_err());
        // Unknown top-level field.
        assert!(parse_config(&format!("bogus = 1\n{}", base_text()), &[]).is_err());
        // Too few paths.
        assert!(parse_config(base_text(), &["n_paths=50".into()]).is_err());
        // Lag below the resolution floor...
        assert!(parse_config(base_text(), &["h_list=[0.005]".into()]).is_err());
        // ...unless explicitly allowed (0.005 is still 2 grid cells).
        assert!(
            parse_config(
                base_text(),
                &["h_list=[0.005]".into(), "allow_coarse_dt=true".into()]
            )
            .is_ok()
        );
        // Lag not on the grid.
        assert!(parse_config(base_text(), &["h_list=[0.0511]".into()]).is_err());
        // Duplicate lags.
        assert!(parse_config(base_text(), &["h_list=[0.05,0.05]".into()]).is_err());
        // Missing zeta for a kind that needs it.
        assert!(parse_config(base_text(), &["kind=exp_time_moments".into()]).is_err());
        // Bad override shapes.
        assert!(parse_config(base_text(), &["n_paths".into()]).is_err());
        assert!(parse_config(base_text(), &["grid..dx=1".into()]).is_err());
        // Nonpositive tolerance multiplier.
        assert!(parse_config(base_text(), &["tolerance.rel_multiplier=0".into()]).is_err());
    }

    #[test]
    fn exp_time_config_accepts_zeta() {
        let overrides = vec![
            "kind=exp_time_moments".to_string(),
            "zeta=1.0".to_string(),
            "h_list=[0.2]".to_string(),
        ];
        let cfg = parse_config(base_text(), &overrides).unwrap();
        assert_eq!(cfg.zeta, Some(1.0));
        assert!(cfg.kind.needs_zeta());
        assert!(cfg.kind.simulates());
    }

    #[test]
    fn quadrature_kinds_skip_path_resolution_rules() {
        // dt is irrelevant for quadrature-only kinds; a coarse value passes.
        let overrides = vec![
            "kind=potential_integrals".to_string(),
            "h_list=[0.1,0.05,0.02,0.01]".to_string(),
            "dt=1.0".to_string(),
        ];
        let cfg = parse_config(base_text(), &overrides).unwrap();
        assert!(!cfg.kind.simulates());
        assert!(!cfg.kind.needs_lattice_lags());
        cfg.validate().unwrap();
    }
}
