//! Experiment configuration: one JSON document drives every subcommand;
//! command-line flags override individual fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gentest_core::deformations::DeformationKind;
use gentest_core::error::{Error, Result};
use gentest_core::generators::{GeneratorConfig, GeneratorSpec};
use gentest_core::power::{self, BisectionConfig};
use gentest_core::presets;
use gentest_core::statistics::StatisticSpec;

/// Either a named preset or an inline generator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorRef {
    Preset(String),
    Inline(GeneratorConfig),
}

impl GeneratorRef {
    pub fn build(&self, base_dir: Option<&Path>, registry: Option<&Path>) -> Result<GeneratorSpec> {
        match self {
            GeneratorRef::Preset(name) => {
                if let Some(reg_path) = registry {
                    let reg = presets::load_registry(reg_path)?;
                    if let Some(cfg) = reg.get(name) {
                        return cfg.build(reg_path.parent());
                    }
                }
                presets::builtin(name)
            }
            GeneratorRef::Inline(cfg) => cfg.build(base_dir),
        }
    }

    pub fn label(&self) -> String {
        match self {
            GeneratorRef::Preset(name) => name.clone(),
            GeneratorRef::Inline(_) => "inline".to_string(),
        }
    }
}

fn default_sigma_percentile() -> f64 {
    0.9
}

fn default_tuning_repeats() -> usize {
    20
}

/// Settings for the NPLM hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    #[serde(default = "default_sigma_percentile")]
    pub sigma_percentile: f64,
    /// Defaults to ceil(sqrt(n+m)) * {1, 2, 4, 8}.
    #[serde(default)]
    pub m_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_tuning_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub time_budget_seconds: Option<f64>,
    /// Sample size for the kernel-width heuristic; defaults to n.
    #[serde(default)]
    pub tune_n: Option<usize>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            sigma_percentile: default_sigma_percentile(),
            m_grid: None,
            lambda_grid: None,
            repeats: default_tuning_repeats(),
            time_budget_seconds: None,
            tune_n: None,
        }
    }
}

impl TuningConfig {
    pub fn default_m_grid(n: usize, m: usize) -> Vec<usize> {
        let floor = ((n + m) as f64).sqrt().ceil() as usize;
        [1usize, 2, 4, 8]
            .iter()
            .map(|k| (floor * k).min(n + m))
            .collect()
    }

    pub fn default_lambda_grid() -> Vec<f64> {
        vec![1e-4, 1e-6, 1e-8]
    }
}

fn default_rel_tol() -> f64 {
    1e-2
}

fn default_max_steps() -> usize {
    48
}

/// Bisection settings; per-kind bracket caps may be overridden by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionSettings {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub initial_hi: Option<f64>,
    #[serde(default)]
    pub caps: BTreeMap<String, f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        BisectionSettings {
            rel_tol: default_rel_tol(),
            initial_hi: None,
            caps: BTreeMap::new(),
            max_steps: default_max_steps(),
        }
    }
}

impl BisectionSettings {
    pub fn config_for(&self, kind: DeformationKind, repeats: usize) -> BisectionConfig {
        let cap = self
            .caps
            .get(kind.name())
            .copied()
            .unwrap_or_else(|| power::default_cap(kind));
        BisectionConfig {
            rel_tol: self.rel_tol,
            initial_hi: self.initial_hi,
            cap: Some(cap),
            max_steps: self.max_steps,
            repeats,
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.01]
}

fn default_null_tests() -> usize {
    1000
}

fn default_repeats() -> usize {
    100
}

/// The experiment: generator, sample sizes, statistics, deformations, and
/// execution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorRef,
    pub n: usize,
    pub m: usize,
    pub statistics: Vec<StatisticSpec>,
    pub deformations: Vec<DeformationKind>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_null_tests")]
    pub null_tests: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub bisection: BisectionSettings,
    /// Null tests per probed epsilon for the likelihood ratio; defaults to
    /// `null_tests`.
    #[serde(default)]
    pub llr_null_tests: Option<usize>,
    /// Optional preset registry file consulted before the builtins.
    #[serde(default)]
    pub registry: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m < 2 {
            return Err(Error::InvalidInput("sample sizes must be >= 2".into()));
        }
        if self.statistics.is_empty() {
            return Err(Error::InvalidInput("no statistics configured".into()));
        }
        if self.deformations.is_empty() {
            return Err(Error::InvalidInput("no deformations configured".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidInput(
                "alphas must be a non-empty list of fractions in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Hash of everything that affects results. The worker count and the
    /// output location are execution details and excluded.
    pub fn content_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.workers = None;
        normalized.output_dir = PathBuf::new();
        let text = serde_json::to_string(&normalized).expect("config serialization");
        sha256_hex(text.as_bytes())
    }

    pub fn llr_null_tests(&self) -> usize {
        self.llr_null_tests.unwrap_or(self.null_tests)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    gentest_core::sha256_hex(bytes)
}

/// A short display name for a statistic within a config: the kind name,
/// suffixed with a spec digest when the same kind appears more than once.
pub fn statistic_names(specs: &[StatisticSpec]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in specs {
        *counts.entry(s.kind.name()).or_default() += 1;
    }
    specs
        .iter()
        .map(|s| {
            let base = s.kind.name().to_string();
            if counts[s.kind.name()] > 1 {
                let digest = sha256_hex(
                    serde_json::to_string(s)
                        .expect("spec serialization")
                        .as_bytes(),
                );
                format!("{base}-{}", &digest[..6])
            } else {
                base
            }
        })
        .collect()
}
