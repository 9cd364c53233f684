//! Experiment configuration, stored as TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credit::{CompliancePredicate, DEFAULT_ALPHA, DEFAULT_INITIAL_CREDITS, DEFAULT_TRACE_THRESHOLD};
use crate::field::{generate_farm_concentrations, FarmConfig, FieldError};
use crate::kinetics::SensorParams;

/// Upper bound on proof-of-work difficulty so nonce search stays short.
pub const MAX_DIFFICULTY: u32 = 24;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_farms: usize,
    pub sensors_per_gateway: u32,
    /// Association rate, M^-1 s^-1.
    pub k_a: f64,
    /// Disassociation rate, s^-1.
    pub k_d: f64,
    pub r_max: f64,
    /// Step-change threshold for the settled response.
    pub epsilon_r: f64,
    /// When set, replaces `k_a` with `k_d / k_dissociation`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_dissociation: Option<f64>,
    /// Farm means are drawn uniformly from this range, molar.
    pub inter_farm_range: [f64; 2],
    pub intra_sigma: f64,
    /// Half-width of the per-round uniform offset on each farm mean.
    pub application_spread: f64,
    /// Sensor sweeps per mining round.
    pub tw: u32,
    pub rounds: u32,
    /// Posterior change (L1) at which a round's updating stops.
    pub sbu_epsilon: f64,
    pub alpha: f64,
    pub initial_credits: f64,
    pub difficulty: u32,
    pub fn_count: u32,
    pub compliance: CompliancePredicate,
    pub trace_threshold: f64,
    /// Independent seeds for multi-seed experiments.
    pub replicates: u32,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_farms: 40,
            sensors_per_gateway: 100,
            k_a: 1e-4,
            k_d: 1e-3,
            r_max: 100.0,
            epsilon_r: 1e-5,
            k_dissociation: None,
            inter_farm_range: [0.0, 50.0],
            intra_sigma: 1.0,
            application_spread: 0.0,
            tw: 50,
            rounds: 15,
            sbu_epsilon: 1e-5,
            alpha: DEFAULT_ALPHA,
            initial_credits: DEFAULT_INITIAL_CREDITS,
            difficulty: 12,
            fn_count: 3,
            compliance: CompliancePredicate::Argmax,
            trace_threshold: DEFAULT_TRACE_THRESHOLD,
            replicates: 10,
            out_dir: PathBuf::from("results"),
        }
    }
}

fn finite_positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and positive, got {v}")))
    }
}

fn finite_non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and non-negative, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_farms == 0 {
            return Err(invalid("n_farms", "must be at least 1"));
        }
        if self.n_farms > u32::MAX as usize {
            return Err(invalid("n_farms", "too large"));
        }
        if self.sensors_per_gateway == 0 {
            return Err(invalid("sensors_per_gateway", "must be at least 1"));
        }
        finite_positive("k_a", self.k_a)?;
        finite_positive("k_d", self.k_d)?;
        finite_positive("r_max", self.r_max)?;
        finite_positive("epsilon_r", self.epsilon_r)?;
        if let Some(k) = self.k_dissociation {
            finite_positive("k_dissociation", k)?;
        }
        let [lo, hi] = self.inter_farm_range;
        finite_non_negative("inter_farm_range", lo)?;
        finite_non_negative("inter_farm_range", hi)?;
        if lo > hi {
            return Err(invalid("inter_farm_range", format!("lower bound {lo} exceeds upper {hi}")));
        }
        finite_non_negative("intra_sigma", self.intra_sigma)?;
        finite_non_negative("application_spread", self.application_spread)?;
        if self.tw == 0 {
            return Err(invalid("tw", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        finite_positive("sbu_epsilon", self.sbu_epsilon)?;
        finite_non_negative("alpha", self.alpha)?;
        if !self.initial_credits.is_finite() {
            return Err(invalid("initial_credits", "must be finite"));
        }
        if self.difficulty > MAX_DIFFICULTY {
            return Err(invalid("difficulty", format!("must be at most {MAX_DIFFICULTY}")));
        }
        if self.fn_count == 0 {
            return Err(invalid("fn_count", "must be at least 1"));
        }
        if let CompliancePredicate::NotEThreshold(t) = self.compliance {
            if !(t > 0.0 && t <= 1.0) {
                return Err(invalid("compliance", format!("threshold must lie in (0, 1], got {t}")));
            }
        }
        finite_positive("trace_threshold", self.trace_threshold)?;
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        Ok(())
    }

    pub fn sensor_params(&self) -> SensorParams {
        let k_a = match self.k_dissociation {
            Some(k) => self.k_d / k,
            None => self.k_a,
        };
        SensorParams {
            k_a,
            k_d: self.k_d,
            r_max: self.r_max,
            epsilon_r: self.epsilon_r,
        }
    }

    pub fn affinity_constant(&self) -> f64 {
        self.sensor_params().affinity_constant()
    }

    pub fn farms(&self) -> Result<Vec<FarmConfig>, FieldError> {
        let mut farms = generate_farm_concentrations(
            self.seed,
            self.n_farms,
            (self.inter_farm_range[0], self.inter_farm_range[1]),
            self.intra_sigma,
            self.sensors_per_gateway,
        )?;
        for f in &mut farms {
            f.application_spread = self.application_spread;
        }
        Ok(farms)
    }

    /// Master seed of replicate `k` in a multi-seed experiment.
    pub fn replicate_seed(&self, k: u32) -> u64 {
        crate::rng::stream_u64(self.seed, "replicate", &[u64::from(k)])
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::default().load_over(path)
    }

    /// Fields present in `text` replace the matching fields of `self`.
    pub fn overlay_toml(&self, text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()?)?;
        let overlay: toml::Table = toml::from_str(text)?;
        table.extend(overlay);
        Ok(table.try_into()?)
    }

    pub fn load_over(&self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.overlay_toml(&text)
    }
}

impl FromStr for CompliancePredicate {
    type Err = String;

    /// `argmax` or `not-e:<threshold>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "argmax" => Ok(CompliancePredicate::Argmax),
            _ => s
                .strip_prefix("not-e:")
                .and_then(|t| t.parse().ok())
                .map(CompliancePredicate::NotEThreshold)
                .ok_or_else(|| format!("expected `argmax` or `not-e:<threshold>`, got `{s}`")),
        }
    }
}
