//! Experiment configuration: strict JSON parsing plus per-kind semantic
//! validation against the preconditions of the operations being
//! dispatched to.

use serde::{Deserialize, Serialize};
use zerocross::flow::PowerLawDrive;
use zerocross::pde::GridSpec;

/// Experiment families exposed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Discrete,
    Survival,
    LimitLaw,
    Generator,
    Pde,
    BlowupScan,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Sample => "sample",
            ExperimentKind::Discrete => "discrete",
            ExperimentKind::Survival => "survival",
            ExperimentKind::LimitLaw => "limit-law",
            ExperimentKind::Generator => "generator",
            ExperimentKind::Pde => "pde",
            ExperimentKind::BlowupScan => "blowup-scan",
        }
    }
}

/// Initial data shapes for pde experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialData {
    /// Mollified point mass at `(0, a0)`.
    #[default]
    Point,
    /// Unit-mass box `|x| <= box_x_half`, `a in [box_a_lo, box_a_hi]` —
    /// bounded data for blow-up probes.
    Box,
}

/// Discrete-scheme update rule names accepted in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeModeName {
    #[default]
    SdeConsistent,
    Unnormalized,
}

impl From<SchemeModeName> for zerocross::process::SchemeMode {
    fn from(m: SchemeModeName) -> Self {
        match m {
            SchemeModeName::SdeConsistent => Self::SdeConsistent,
            SchemeModeName::Unnormalized => Self::Unnormalized,
        }
    }
}

/// Grid section of a pde/blowup-scan config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    pub nx: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub na: usize,
    pub dt: f64,
    pub t_end: f64,
}

impl From<GridConfig> for GridSpec {
    fn from(g: GridConfig) -> Self {
        GridSpec {
            x_max: g.x_max,
            nx: g.nx,
            a_min: g.a_min,
            a_max: g.a_max,
            na: g.na,
            dt: g.dt,
            t_end: g.t_end,
        }
    }
}

fn default_a0() -> f64 {
    1.0
}

fn default_m() -> usize {
    10_000
}

fn default_n() -> usize {
    10_000
}

fn default_t_small() -> f64 {
    1e-3
}

fn default_samples_cap() -> usize {
    10_000
}

/// A fully parsed experiment configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must agree with the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    /// Drive sign, +1 or -1.
    pub sigma: i8,
    /// Drive exponent, >= 0.
    pub gamma: f64,
    #[serde(default = "default_a0")]
    pub a0: f64,
    #[serde(default)]
    pub x0: f64,
    /// Horizons; one row of output per entry.
    #[serde(default)]
    pub t: Vec<f64>,
    /// Ensemble size.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Discrete-scheme step count.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub mode: SchemeModeName,
    #[serde(default)]
    pub seed: u64,
    /// Small horizon of the generator probes.
    #[serde(default = "default_t_small")]
    pub t_small: f64,
    /// Raw samples are written to CSV only up to this many per horizon.
    #[serde(default = "default_samples_cap")]
    pub samples_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Initial data shape for pde runs.
    #[serde(default)]
    pub init: InitialData,
    /// Box half-width in x (default a0/4).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_x_half: Option<f64>,
    /// Box a-range (defaults a0/2 and a0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_a_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_a_hi: Option<f64>,
    /// Snapshot times for pde runs (final time always included).
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// Drive exponents swept by blowup-scan.
    #[serde(default)]
    pub gammas: Vec<f64>,
}

/// A named validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

const REGIME_TABLE: &str = "limit laws hold for sigma=-1 with gamma > 3/2 (decay regime) or sigma=+1 with gamma < 1 (growth regime); see classify_regime for the full table";

/// Parse and validate a JSON config for a given experiment kind.
/// Returns either a config with defaults filled or the full list of field
/// errors.
pub fn parse_config(text: &str, kind: ExperimentKind) -> Result<ExperimentConfig, Vec<FieldError>> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        vec![FieldError {
            field: "<json>".into(),
            message: e.to_string(),
        }]
    })?;
    if cfg.kind.is_none() {
        cfg.kind = Some(kind);
    }
    let mut errors = Vec::new();
    let mut err = |field: &str, message: String| {
        errors.push(FieldError {
            field: field.into(),
            message,
        })
    };

    if cfg.kind != Some(kind) {
        err(
            "kind",
            format!(
                "config says {:?} but the {} subcommand was invoked",
                cfg.kind.map(|k| k.name()),
                kind.name()
            ),
        );
    }
    if cfg.sigma != 1 && cfg.sigma != -1 {
        err("sigma", format!("must be +1 or -1, got {}", cfg.sigma));
    }
    if !(cfg.gamma >= 0.0) || !cfg.gamma.is_finite() {
        err(
            "gamma",
            format!("must satisfy gamma >= 0 and be finite, got {}", cfg.gamma),
        );
    }
    if !(cfg.a0 > 0.0) {
        err("a0", format!("must be positive, got {}", cfg.a0));
    }
    if cfg.t.is_empty() && !matches!(kind, ExperimentKind::Pde | ExperimentKind::BlowupScan) {
        err("t", "at least one horizon is required".into());
    }
    for &t in &cfg.t {
        if !(t > 0.0) {
            err("t", format!("horizons must be positive, got {t}"));
        }
    }
    if cfg.m == 0 {
        err("m", "ensemble size must be >= 1".into());
    }

    match kind {
        ExperimentKind::Discrete => {
            if cfg.n == 0 {
                err("n", "discrete step count must be >= 1".into());
            }
        }
        ExperimentKind::Survival => {
            if cfg.sigma != -1 || cfg.gamma >= 1.5 {
                err(
                    "gamma",
                    format!(
                        "survival requires sigma=-1 and gamma < 3/2 (survival is identically 1 for gamma >= 3/2), got sigma={} gamma={}",
                        cfg.sigma, cfg.gamma
                    ),
                );
            }
            if cfg.x0 != 0.0 {
                err("x0", "the analytic survival column assumes x0 = 0".into());
            }
        }
        ExperimentKind::LimitLaw => {
            let in_regime = (cfg.sigma == -1 && cfg.gamma > 1.5)
                || (cfg.sigma == 1 && cfg.gamma < 1.0);
            if !in_regime {
                err(
                    "gamma",
                    format!(
                        "drive (sigma={}, gamma={}) is outside the limit-law regimes: {}",
                        cfg.sigma, cfg.gamma, REGIME_TABLE
                    ),
                );
            }
            if cfg.x0 != 0.0 || cfg.a0 != 1.0 {
                err(
                    "a0",
                    "the rescaled limit comparison assumes the unit start (x0, a0) = (0, 1)".into(),
                );
            }
        }
        ExperimentKind::Generator => {
            if !(cfg.t_small > 0.0 && cfg.t_small < 0.1) {
                err(
                    "t_small",
                    format!("must lie in (0, 0.1) so the O(sqrt(t)) bias stays small, got {}", cfg.t_small),
                );
            }
        }
        ExperimentKind::Pde | ExperimentKind::BlowupScan => {
            if cfg.x0 != 0.0 {
                err("x0", "pde initial data is centered at x = 0".into());
            }
            match cfg.grid {
                None => err("grid", "a grid section is required for pde experiments".into()),
                Some(g) => {
                    let grid = GridSpec::from(g);
                    if let Err(e) = grid.validate() {
                        err("grid", e.to_string());
                    } else if cfg.sigma == 1 || cfg.sigma == -1 {
                        // The column transport tightens the stability
                        // bound beyond the heat-only constraint.
                        let gammas: Vec<f64> = if kind == ExperimentKind::BlowupScan {
                            cfg.gammas.clone()
                        } else {
                            vec![cfg.gamma]
                        };
                        for gamma in gammas.into_iter().filter(|g| *g >= 0.0) {
                            let drive = PowerLawDrive::new(cfg.sigma, gamma).expect("checked");
                            let f_max = grid.power_drive_f_max(&drive);
                            if grid.dt > grid.positivity_limit(f_max) {
                                err(
                                    "grid",
                                    format!(
                                        "dt = {} violates the positivity bound with the x = 0 column transport at gamma = {gamma}; use dt <= {:.6e}",
                                        grid.dt,
                                        grid.stable_dt(f_max)
                                    ),
                                );
                            }
                        }
                    }
                }
            }
            if kind == ExperimentKind::BlowupScan {
                if cfg.gammas.is_empty() {
                    err("gammas", "at least one drive exponent is required".into());
                }
                for &g in &cfg.gammas {
                    if !(g >= 0.0) {
                        err("gammas", format!("must satisfy gamma >= 0, got {g}"));
                    }
                }
            }
        }
        ExperimentKind::Sample => {}
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

impl ExperimentConfig {
    pub fn drive(&self) -> PowerLawDrive {
        PowerLawDrive::new(self.sigma, self.gamma).expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sample_config_fills_defaults() {
        let cfg = parse_config(
            r#"{"sigma": -1, "gamma": 0.5, "t": [1.0], "seed": 7}"#,
            ExperimentKind::Sample,
        )
        .unwrap();
        assert_eq!(cfg.x0, 0.0);
        assert_eq!(cfg.a0, 1.0);
        assert_eq!(cfg.m, 10_000);
        assert_eq!(cfg.kind, Some(ExperimentKind::Sample));
    }

    #[test]
    fn negative_gamma_rejected_naming_constraint() {
        let errs = parse_config(
            r#"{"sigma": -1, "gamma": -1.0, "t": [1.0]}"#,
            ExperimentKind::Sample,
        )
        .unwrap_err();
        assert!(errs.iter().any(|e| e.field == "gamma" && e.message.contains("gamma >= 0")));
    }

    #[test]
    fn limit_law_out_of_regime_cites_table() {
        let errs = parse_config(
            r#"{"sigma": -1, "gamma": 1.0, "t": [100.0]}"#,
            ExperimentKind::LimitLaw,
        )
        .unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("gamma > 3/2")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let errs = parse_config(
            r#"{"sigma": -1, "gamma": 0.0, "t": [1.0], "bogus": 3}"#,
            ExperimentKind::Sample,
        )
        .unwrap_err();
        assert!(errs[0].message.contains("bogus"));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let errs = parse_config(
            r#"{"kind": "sample", "sigma": -1, "gamma": 0.0, "t": [1.0]}"#,
            ExperimentKind::Survival,
        )
        .unwrap_err();
        assert!(errs.iter().any(|e| e.field == "kind"));
    }

    #[test]
    fn unstable_grid_rejected_with_bound() {
        let errs = parse_config(
            r#"{"sigma": -1, "gamma": 0.0,
                "grid": {"x_max": 4.0, "nx": 201, "a_min": 0.005, "a_max": 1.0, "na": 200, "dt": 0.1, "t_end": 1.0}}"#,
            ExperimentKind::Pde,
        )
        .unwrap_err();
        assert!(errs.iter().any(|e| e.field == "grid" && e.message.contains("stability bound")));
    }
}
