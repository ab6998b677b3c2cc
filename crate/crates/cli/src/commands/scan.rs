//! `gentest scan`: run the critical-deformation search for every
//! (statistic, deformation) cell, with crash resumption from completed cell
//! files, and emit the summary tables.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use gentest_core::deformations::DeformationKind;
use gentest_core::error::{Error, Result};
use gentest_core::power::{self, EpsilonScanResult};
use gentest_core::statistics::{ResolvedStatistic, StatisticKind};

use crate::commands::{
    build_generator, calibrate, ensure_dir, resolve_statistic, stream_for, write_text,
};
use crate::config::{statistic_names, ExperimentConfig};
use crate::manifest::{ArtifactEntry, RunManifest};
use crate::table::{self, CellStatus, CellSummary};

/// One per-alpha record inside a cell file; flattening puts the scan-result
/// keys (alpha, eps_alpha, eps_low, eps_up, repeats, cap, trace,
/// threshold_used) at the top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub statistic: ResolvedStatistic,
    pub deformation: String,
    #[serde(flatten)]
    pub result: EpsilonScanResult,
    pub wall_time_seconds: f64,
}

/// The persisted outcome of one (statistic, deformation) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFile {
    pub config_hash: String,
    pub statistic_name: String,
    pub deformation: DeformationKind,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub wall_time_seconds: f64,
    #[serde(default)]
    pub results: Vec<AlphaRecord>,
}

pub fn scans_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("scans")
}

fn cell_path(dir: &Path, stat_name: &str, kind: DeformationKind) -> PathBuf {
    dir.join(format!("{stat_name}__{}.json", kind.name()))
}

fn load_cell(path: &Path) -> Option<CellFile> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn run_cell(
    config: &ExperimentConfig,
    g: &gentest_core::generators::GeneratorSpec,
    name: &str,
    resolved: &ResolvedStatistic,
    kind: DeformationKind,
) -> Result<Vec<AlphaRecord>> {
    let cfg = config.bisection.config_for(kind, config.repeats);
    let tag = format!("scan:{name}__{}", kind.name());
    let rng = stream_for(config.master_seed, &tag);
    let started = Instant::now();
    let results = if resolved.kind == StatisticKind::Llr {
        power::scan_deformation_llr(
            g,
            kind,
            &config.alphas,
            config.n,
            config.m,
            &cfg,
            config.llr_null_tests(),
            &rng,
        )?
    } else {
        let (null, _, _) =
            calibrate::ensure_null(config, g, name, resolved, &calibrate::nulls_dir(config))?;
        power::scan_deformation(
            resolved,
            g,
            kind,
            &config.alphas,
            &null,
            config.n,
            config.m,
            &cfg,
            &rng,
        )?
    };
    let seconds = started.elapsed().as_secs_f64();
    Ok(results
        .into_iter()
        .map(|result| AlphaRecord {
            statistic: resolved.clone(),
            deformation: kind.name().to_string(),
            result,
            wall_time_seconds: seconds,
        })
        .collect())
}

pub fn run(config: &ExperimentConfig, config_dir: Option<&Path>) -> Result<()> {
    let g = build_generator(config, config_dir)?;
    let dir = scans_dir(config);
    ensure_dir(&config.output_dir)?;
    ensure_dir(&dir)?;
    let config_hash = config.content_hash();
    let mut manifest = RunManifest::load_or_new(
        &config.output_dir,
        &config_hash,
        config.master_seed,
        env!("CARGO_PKG_VERSION"),
    );
    let names = statistic_names(&config.statistics);
    let mut cells: Vec<CellFile> = Vec::new();
    let mut first_failure: Option<Error> = None;

    for (spec, name) in config.statistics.iter().zip(&names) {
        let resolved = resolve_statistic(spec, &g, config)?;
        for &kind in &config.deformations {
            let path = cell_path(&dir, name, kind);
            if let Some(existing) = load_cell(&path) {
                if existing.config_hash == config_hash && existing.status != "failed" {
                    log::info!("resuming: cell {} already done", path.display());
                    cells.push(existing);
                    continue;
                }
            }
            let started = Instant::now();
            let cell = match run_cell(config, &g, name, &resolved, kind) {
                Ok(results) => {
                    let seconds = started.elapsed().as_secs_f64();
                    println!(
                        "scanned {name} x {}: {} in {seconds:.1}s",
                        kind.name(),
                        results
                            .iter()
                            .map(|r| if r.result.eps_alpha.is_finite() {
                                format!("eps({}) = {:.5}", r.result.alpha, r.result.eps_alpha)
                            } else {
                                format!("eps({}) > {}", r.result.alpha, r.result.cap)
                            })
                            .collect::<Vec<_>>()
                            .join(", "),
                    );
                    CellFile {
                        config_hash: config_hash.clone(),
                        statistic_name: name.clone(),
                        deformation: kind,
                        status: "done".into(),
                        reason: None,
                        wall_time_seconds: seconds,
                        results,
                    }
                }
                Err(e)
                    if matches!(
                        e,
                        Error::UnsupportedDeformation(_) | Error::DensityUnavailable(_)
                    ) =>
                {
                    CellFile {
                        config_hash: config_hash.clone(),
                        statistic_name: name.clone(),
                        deformation: kind,
                        status: "unsupported".into(),
                        reason: Some(e.to_string()),
                        wall_time_seconds: started.elapsed().as_secs_f64(),
                        results: Vec::new(),
                    }
                }
                Err(e) => {
                    log::error!("cell {name} x {} failed: {e}", kind.name());
                    let failure_text = e.to_string();
                    if first_failure.is_none() {
                        first_failure = Some(e);
                    }
                    CellFile {
                        config_hash: config_hash.clone(),
                        statistic_name: name.clone(),
                        deformation: kind,
                        status: "failed".into(),
                        reason: Some(failure_text),
                        wall_time_seconds: started.elapsed().as_secs_f64(),
                        results: Vec::new(),
                    }
                }
            };
            write_text(
                &path,
                &serde_json::to_string_pretty(&cell).expect("cell serialization"),
            )?;
            manifest.record(ArtifactEntry {
                kind: "scan".into(),
                name: format!("{name}__{}", kind.name()),
                path: path.display().to_string(),
                fingerprint: config_hash.clone(),
                seconds: cell.wall_time_seconds,
            });
            manifest.save(&config.output_dir)?;
            cells.push(cell);
        }
    }

    write_summary(config, &cells)?;
    match first_failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn to_summaries(cells: &[CellFile]) -> Vec<CellSummary> {
    cells
        .iter()
        .map(|c| CellSummary {
            statistic: c.statistic_name.clone(),
            deformation: c.deformation,
            status: match c.status.as_str() {
                "done" => CellStatus::Done,
                "unsupported" => CellStatus::Unsupported,
                _ => CellStatus::Failed(c.reason.clone().unwrap_or_default()),
            },
            wall_time_seconds: c.wall_time_seconds,
            results: c.results.iter().map(|r| r.result.clone()).collect(),
        })
        .collect()
}

pub fn write_summary(config: &ExperimentConfig, cells: &[CellFile]) -> Result<()> {
    let summaries = to_summaries(cells);
    let dir = scans_dir(config);
    write_text(&dir.join("summary.csv"), &table::render_csv(&summaries))?;
    let text = table::render_text(&summaries);
    write_text(&dir.join("summary.txt"), &text)?;
    println!("{text}");
    Ok(())
}
