//! Subcommand implementations.

pub mod calibrate;
pub mod gen;
pub mod report;
pub mod scan;
pub mod tune;

use std::path::{Path, PathBuf};

use gentest_core::error::{Error, Result};
use gentest_core::generators::GeneratorSpec;
use gentest_core::nplm::TuningReport;
use gentest_core::rng::RngStream;
use gentest_core::statistics::{ResolvedStatistic, StatisticKind, StatisticSpec};

use crate::config::ExperimentConfig;

/// A stream rooted at the master seed and a stable textual task id, so task
/// seeds never depend on enumeration or scheduling order.
pub fn stream_for(master_seed: u64, tag: &str) -> RngStream {
    let digest = gentest_core::sha256_hex(tag.as_bytes());
    let stream_id = u64::from_str_radix(&digest[..16], 16).expect("hex prefix");
    RngStream::new(master_seed, stream_id)
}

pub fn tuning_report_path(output_dir: &Path) -> PathBuf {
    output_dir.join("tuning.json")
}

/// Fill in NPLM hyperparameters from a prior tuning report when the config
/// leaves them unset.
pub fn complete_statistic(spec: &StatisticSpec, output_dir: &Path) -> Result<StatisticSpec> {
    if spec.kind != StatisticKind::Nplm || spec.nplm_hyperparams.is_some() {
        return Ok(spec.clone());
    }
    let path = tuning_report_path(output_dir);
    let text = std::fs::read_to_string(&path).map_err(|_| {
        Error::InvalidInput(
            "nplm statistic has no hyperparameters and no tuning report exists; \
             run `gentest tune` first or set nplm_hyperparams in the config"
                .into(),
        )
    })?;
    let report: TuningReport =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let mut filled = spec.clone();
    filled.nplm_hyperparams = Some(report.chosen_hyperparams());
    Ok(filled)
}

/// Resolve a statistic with the experiment's generator and sizes. The
/// resolution stream is derived from the spec content, so calibrate and
/// scan agree on frozen parameters (and hence on fingerprints).
pub fn resolve_statistic(
    spec: &StatisticSpec,
    g: &GeneratorSpec,
    config: &ExperimentConfig,
) -> Result<ResolvedStatistic> {
    let completed = complete_statistic(spec, &config.output_dir)?;
    let tag = format!(
        "resolve:{}",
        serde_json::to_string(&completed).expect("spec serialization")
    );
    completed.resolve(
        g,
        config.n,
        config.m,
        &mut stream_for(config.master_seed, &tag),
    )
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn build_generator(
    config: &ExperimentConfig,
    config_dir: Option<&Path>,
) -> Result<GeneratorSpec> {
    let registry = config.registry.as_deref();
    config.generator.build(config_dir, registry)
}
