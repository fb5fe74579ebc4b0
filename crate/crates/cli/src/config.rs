//! Experiment configuration: a TOML file with four sections.
//!
//! `[model]` fixes the renewal process (tail exponent, horizon, slowly
//! varying correction), `[disorder]` the charge law, `[run]` the grids and
//! the Monte Carlo budget, `[method]` the change-of-measure and
//! coarse-graining knobs. Every recipe reads the same file and ignores the
//! parts it does not need, so one config can drive a whole campaign.

use pinlab::disorder::{DisorderFamily, DisorderSpec};
use pinlab::renewal::{build_model, RenewalModel};
use pinlab::slowvar::SlowlyVaryingSpec;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub disorder: DisorderSection,
    pub run: RunSection,
    #[serde(default)]
    pub method: MethodSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Inter-arrival tail exponent.
    pub alpha: f64,
    /// Horizon of the precomputed contact law.
    pub n_max: usize,
    pub l: LSection,
}

/// Slowly varying correction, tagged by `kind`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LSection {
    /// "trivial", "log" or "table".
    pub kind: String,
    /// Constant value (kind = "trivial").
    pub c: Option<f64>,
    /// Amplitude of the logarithmic factor (kind = "log").
    pub a: Option<f64>,
    /// Exponent of the logarithmic factor (kind = "log").
    pub b: Option<f64>,
    /// Grid of (x, L(x)) pairs (kind = "table").
    pub points: Option<Vec<(f64, f64)>>,
    /// Certified asymptotic regularity margin of the slowly varying
    /// function.
    pub epsilon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSection {
    /// "gaussian", "rademacher", "centered-exponential" or
    /// "truncated-gaussian".
    pub family: String,
    /// Truncation level, required for the truncated Gaussian only.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub betas: Vec<f64>,
    pub hs: Vec<f64>,
    /// System (or block) sizes, recipe dependent.
    pub n_list: Vec<usize>,
    /// Monte Carlo replicas or samples per grid point.
    pub replicas: usize,
    /// Root of every derived random stream; `--seed` overrides it.
    pub master_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSection {
    /// Body count of the change-of-measure potential.
    pub q: usize,
    /// Amplitude in the coarse-graining length threshold.
    pub a_strength: f64,
    /// Fractional moment exponent.
    pub gamma: f64,
    /// Truncation level; derived from gamma when absent.
    pub k_cut: Option<f64>,
    /// Gap-decay exponent for the visit-probability fit.
    pub xi_exponent: f64,
    /// Regularity margin used when the slowly varying spec is rebuilt at
    /// block scale.
    pub epsilon_block: f64,
    /// Blocks per coarse-grained system.
    pub block_count: usize,
    pub thresholds: Thresholds,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            q: 3,
            a_strength: 1.0,
            gamma: 6.0 / 7.0,
            k_cut: None,
            xi_exponent: 1.4,
            epsilon_block: 0.25,
            block_count: 3,
            thresholds: Thresholds::default(),
        }
    }
}

/// Verdict levels for the pass/fail column of each report.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Half-width of the window around 1 for the density ratio.
    pub doney_window: f64,
    /// Largest tolerated relative defect of the block identity.
    pub identity_defect: f64,
    /// Half-width of the window around 1 for the variance ratio.
    pub variance_window: f64,
    /// Relative window around the averaging-law target.
    pub ce_window: f64,
    /// Significance level of the Kolmogorov-Smirnov test for the
    /// local-time law.
    pub ks_level: f64,
    /// Boundedness level for the fractional moment.
    pub moment_bound: f64,
    /// Largest tolerated |z| for the annealed identity.
    pub annealed_z: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            doney_window: 0.1,
            identity_defect: 1e-10,
            variance_window: 0.1,
            ce_window: 0.15,
            ks_level: 0.05,
            moment_bound: 2.0,
            annealed_z: 4.0,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks with field paths; semantic feasibility (horizon
    /// large enough, margins compatible) is left to the library, whose
    /// construction errors also map to the config exit code.
    fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        if !self.model.alpha.is_finite() || self.model.alpha < 0.0 {
            errs.push(format!(
                "model.alpha must be finite and >= 0, got {}",
                self.model.alpha
            ));
        }
        if self.model.n_max < 2 {
            errs.push(format!("model.n_max must be >= 2, got {}", self.model.n_max));
        }
        match self.model.l.kind.as_str() {
            "trivial" => {
                if self.model.l.c.is_none() {
                    errs.push("model.l.c is required when kind = \"trivial\"".into());
                }
            }
            "log" => {
                if self.model.l.a.is_none() || self.model.l.b.is_none() {
                    errs.push("model.l.a and model.l.b are required when kind = \"log\"".into());
                }
            }
            "table" => {
                if self.model.l.points.is_none() {
                    errs.push("model.l.points is required when kind = \"table\"".into());
                }
            }
            other => errs.push(format!(
                "model.l.kind must be \"trivial\", \"log\" or \"table\", got \"{other}\""
            )),
        }
        if !(self.model.l.epsilon > 0.0) {
            errs.push(format!(
                "model.l.epsilon must be positive, got {}",
                self.model.l.epsilon
            ));
        }
        match self.disorder.family.as_str() {
            "gaussian" | "rademacher" | "centered-exponential" => {}
            "truncated-gaussian" => {
                if self.disorder.bound.is_none() {
                    errs.push(
                        "disorder.bound is required when family = \"truncated-gaussian\"".into(),
                    );
                }
            }
            other => errs.push(format!(
                "disorder.family must be \"gaussian\", \"rademacher\", \
                 \"centered-exponential\" or \"truncated-gaussian\", got \"{other}\""
            )),
        }
        if self.run.betas.is_empty() {
            errs.push("run.betas must not be empty".into());
        }
        if self.run.hs.is_empty() {
            errs.push("run.hs must not be empty".into());
        }
        if self.run.n_list.is_empty() {
            errs.push("run.n_list must not be empty".into());
        }
        if self.run.replicas < 2 {
            errs.push(format!(
                "run.replicas must be >= 2, got {}",
                self.run.replicas
            ));
        }
        if !(2..=12).contains(&self.method.q) {
            errs.push(format!("method.q must lie in 2..=12, got {}", self.method.q));
        }
        if !(self.method.gamma > 0.0 && self.method.gamma < 1.0) {
            errs.push(format!(
                "method.gamma must lie in (0, 1), got {}",
                self.method.gamma
            ));
        }
        if let Some(k_cut) = self.method.k_cut {
            if !(k_cut > 0.0) {
                errs.push(format!("method.k_cut must be positive, got {k_cut}"));
            }
        }
        if !(1.0..1.5).contains(&self.method.xi_exponent) {
            errs.push(format!(
                "method.xi_exponent must lie in [1.0, 1.5), got {}",
                self.method.xi_exponent
            ));
        }
        if !(self.method.epsilon_block > 0.0) {
            errs.push(format!(
                "method.epsilon_block must be positive, got {}",
                self.method.epsilon_block
            ));
        }
        if self.method.block_count == 0 {
            errs.push("method.block_count must be >= 1".into());
        }
        if !(self.method.a_strength > 0.0) {
            errs.push(format!(
                "method.a_strength must be positive, got {}",
                self.method.a_strength
            ));
        }
        let ks = self.method.thresholds.ks_level;
        if !(ks > 0.0 && ks < 1.0) {
            errs.push(format!(
                "method.thresholds.ks_level must lie in (0, 1), got {ks}"
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("config: {}", errs.join("; "))))
        }
    }

    /// The slowly varying spec at the configured margin.
    pub fn l_spec(&self) -> Result<SlowlyVaryingSpec, CliError> {
        build_l(&self.model.l, self.model.l.epsilon)
    }

    /// The same spec with the block-scale margin, for recipes that reason
    /// about coarse-grained lengths.
    pub fn l_spec_block(&self) -> Result<SlowlyVaryingSpec, CliError> {
        build_l(&self.model.l, self.method.epsilon_block)
    }

    pub fn disorder(&self) -> Result<DisorderSpec, CliError> {
        let family = match self.disorder.family.as_str() {
            "gaussian" => DisorderFamily::Gaussian,
            "rademacher" => DisorderFamily::Rademacher,
            "centered-exponential" => DisorderFamily::CenteredExponential,
            "truncated-gaussian" => DisorderFamily::TruncatedGaussian {
                bound: self.disorder.bound.expect("validated"),
            },
            _ => unreachable!("validated"),
        };
        Ok(DisorderSpec::new(family)?)
    }

    pub fn build_model(&self) -> Result<RenewalModel, CliError> {
        Ok(build_model(self.model.alpha, &self.l_spec()?, self.model.n_max)?)
    }
}

fn build_l(l: &LSection, epsilon: f64) -> Result<SlowlyVaryingSpec, CliError> {
    let spec = match l.kind.as_str() {
        "trivial" => SlowlyVaryingSpec::trivial(l.c.expect("validated"), epsilon)?,
        "log" => {
            SlowlyVaryingSpec::logarithmic(l.a.expect("validated"), l.b.expect("validated"), epsilon)?
        }
        "table" => SlowlyVaryingSpec::tabulated(l.points.clone().expect("validated"), epsilon)?,
        _ => unreachable!("validated"),
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [model]
        alpha = 0.5
        n_max = 64
        l = { kind = "trivial", c = 1.0, epsilon = 0.25 }

        [disorder]
        family = "gaussian"

        [run]
        betas = [0.5]
        hs = [0.5]
        n_list = [32]
        replicas = 8
        master_seed = 11
    "#;

    #[test]
    fn minimal_config_parses_with_method_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.method.q, 3);
        assert!(cfg.method.k_cut.is_none());
        assert_eq!(cfg.method.block_count, 3);
        assert!((cfg.method.gamma - 6.0 / 7.0).abs() < 1e-15);
        cfg.build_model().unwrap();
        cfg.disorder().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let text = MINIMAL.replace("master_seed = 11", "master_seed = 11\nbogus = 3");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let CliError::Config(msg) = err else {
            panic!("expected a config error")
        };
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn missing_variant_field_is_reported_by_path() {
        let text = MINIMAL.replace(
            "l = { kind = \"trivial\", c = 1.0, epsilon = 0.25 }",
            "l = { kind = \"log\", a = 1.0, epsilon = 0.25 }",
        );
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let CliError::Config(msg) = err else {
            panic!("expected a config error")
        };
        assert!(msg.contains("model.l.a and model.l.b"), "{msg}");
    }

    #[test]
    fn out_of_range_method_values_are_rejected() {
        let text = format!("{MINIMAL}\n[method]\ngamma = 1.5\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let CliError::Config(msg) = err else {
            panic!("expected a config error")
        };
        assert!(msg.contains("method.gamma"), "{msg}");
    }

    #[test]
    fn truncated_gaussian_requires_its_bound() {
        let text = MINIMAL.replace("family = \"gaussian\"", "family = \"truncated-gaussian\"");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let CliError::Config(msg) = err else {
            panic!("expected a config error")
        };
        assert!(msg.contains("disorder.bound"), "{msg}");
    }
}
