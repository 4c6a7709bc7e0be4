use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use tustin_core::euler_lagrange::{ELParameters, SpringMode};
use tustin_core::identify::{IdentifyConfig, ParameterBox};
use tustin_core::synth::LayoutConfig;
use tustin_core::train::TrainingConfig;

/// Environment variable that roots relative `--out` directories.
pub const OUTPUT_ROOT_ENV: &str = "TUSTIN_OUTPUT_ROOT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Training procedure used by `train`; `--procedure` overrides it.
    pub procedure: Procedure,
    /// Spring modes identified by `identify`; `--spring` overrides it.
    pub spring: SpringChoice,
    pub paths: Paths,
    pub generation: LayoutConfig,
    pub training: TrainingConfig,
    pub identification: IdentificationSection,
    pub evaluation: EvaluationSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    #[default]
    Transfer,
    Standard,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SpringChoice {
    On,
    Off,
    #[default]
    Both,
}

impl SpringChoice {
    pub fn modes(self) -> Vec<SpringMode> {
        match self {
            SpringChoice::On => vec![SpringMode::WithSpring],
            SpringChoice::Off => vec![SpringMode::NoSpring],
            SpringChoice::Both => vec![SpringMode::WithSpring, SpringMode::NoSpring],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding `manifest.toml`; defaults to `<out>/data`.
    pub data: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationSection {
    pub theta0: ELParameters<f64>,
    /// Defaults to a factor-10 box around `theta0`.
    pub bounds: Option<ParameterBox>,
    pub search: IdentifyConfig,
}

impl Default for IdentificationSection {
    fn default() -> Self {
        Self {
            theta0: ELParameters::default(),
            bounds: None,
            search: IdentifyConfig::default(),
        }
    }
}

impl IdentificationSection {
    pub fn resolved_bounds(&self) -> ParameterBox {
        self.bounds.clone().unwrap_or_else(|| ParameterBox::around(&self.theta0, 10.0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    Train,
    #[default]
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    EulerLagrange {
        name: String,
        params: PathBuf,
        #[serde(default = "with_spring")]
        spring: SpringMode,
    },
    TustinNet {
        name: String,
        checkpoint: PathBuf,
    },
}

fn with_spring() -> SpringMode {
    SpringMode::WithSpring
}

impl ModelSpec {
    pub fn name(&self) -> &str {
        match self {
            ModelSpec::EulerLagrange { name, .. } | ModelSpec::TustinNet { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub split: EvalSplit,
    /// Models to compare; when empty, the standard artifacts under `--out` are used.
    #[serde(rename = "model")]
    pub models: Vec<ModelSpec>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing resolved config")
    }

    pub fn data_dir(&self, out: &Path) -> PathBuf {
        self.paths.data.clone().unwrap_or_else(|| out.join("data"))
    }
}

/// Resolves `--out` against the output-root override.
pub fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}
