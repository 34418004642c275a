//! Strict TOML configuration. Every table rejects unknown keys and every
//! value passes through the library's validating constructors; errors carry
//! the offending key path.

use anyhow::{anyhow, Result};
use binar::experiments::{CheckKind, ExperimentConfig, Tolerances};
use binar::model::{ImmigrationSpec, ModelParams, OffspringFamily};
use serde::Deserialize;

/// Defaults shipped with the repository (`config/default.toml`); used when
/// no `--config` is given and embedded so the binary is self-contained.
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub limits: LimitsSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub offspring_a: FamilySection,
    pub offspring_b: FamilySection,
    pub immigration: ImmigrationSection,
    #[serde(default)]
    pub x1: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub family: String,
    pub mean: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmigrationSection {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub depth: u32,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { depth: 10 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSection {
    pub draws: u64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self { draws: 1_000_000 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_min: u32,
    pub n_max: u32,
    pub replicates: u32,
    pub seed: u64,
    pub checks: Vec<CheckKind>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("config: {e}"))
    }

    fn family(section: &FamilySection, path: &str) -> Result<OffspringFamily> {
        match section.family.as_str() {
            "bernoulli" => OffspringFamily::bernoulli(section.mean)
                .map_err(|e| anyhow!("config key {path}: {e}")),
            "poisson" => OffspringFamily::poisson(section.mean)
                .map_err(|e| anyhow!("config key {path}: {e}")),
            other => Err(anyhow!(
                "config key {path}.family: unknown family `{other}` (expected bernoulli or poisson)"
            )),
        }
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let a = Self::family(&self.model.offspring_a, "model.offspring_a")?;
        let b = Self::family(&self.model.offspring_b, "model.offspring_b")?;
        let imm = ImmigrationSpec::new(
            self.model.immigration.lambda0,
            self.model.immigration.lambda1,
            self.model.immigration.lambda2,
        )
        .map_err(|e| anyhow!("config key model.immigration: {e}"))?;
        ModelParams::new(a, b, imm, self.model.x1).map_err(|e| anyhow!("config key model: {e}"))
    }

    pub fn experiment_config(&self, seed_override: Option<u64>) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            params: self.model_params()?,
            n_min: self.experiment.n_min,
            n_max: self.experiment.n_max,
            replicates: self.experiment.replicates,
            seed: seed_override.unwrap_or(self.experiment.seed),
            checks: self.experiment.checks.clone(),
            tolerances: self.experiment.tolerances,
            limit_draws: self.limits.draws,
        })
    }
}
