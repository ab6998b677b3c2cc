//! `gentest calibrate`: build (or reuse) one empirical null per configured
//! statistic and emit pdf/cdf plot data with threshold markers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gentest_core::calibration::{self, NullDistribution};
use gentest_core::error::Result;
use gentest_core::generators::GeneratorSpec;
use gentest_core::statistics::{ResolvedStatistic, StatisticKind};

use crate::commands::{build_generator, ensure_dir, resolve_statistic, stream_for, write_text};
use crate::config::{statistic_names, ExperimentConfig};
use crate::manifest::{ArtifactEntry, RunManifest};

/// Thresholds marked on the null plots.
const MARKER_ALPHAS: [f64; 3] = [0.32, 0.05, 0.01];

pub fn nulls_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("nulls")
}

pub fn null_stem(dir: &Path, name: &str, fingerprint: &str) -> PathBuf {
    dir.join(format!("{name}-{}", &fingerprint[..12]))
}

/// Load a fingerprint-matched null with the configured test count, or build
/// and persist it. Returns the null and whether it was rebuilt.
pub fn ensure_null(
    config: &ExperimentConfig,
    g: &GeneratorSpec,
    name: &str,
    resolved: &ResolvedStatistic,
    dir: &Path,
) -> Result<(NullDistribution, PathBuf, bool)> {
    let fp = calibration::fingerprint(resolved, g, config.n, config.m);
    let stem = null_stem(dir, name, &fp);
    if stem.with_extension("json").exists() {
        if let Ok((null, header)) = calibration::load_null(&stem) {
            if header.fingerprint == fp && header.n_tests == config.null_tests {
                log::info!("reusing null {}", stem.display());
                return Ok((null, stem, false));
            }
        }
    }
    ensure_dir(dir)?;
    let null = calibration::build_null(
        resolved,
        g,
        config.n,
        config.m,
        config.null_tests,
        &stream_for(config.master_seed, &format!("null:{name}")),
    )?;
    calibration::save_null(&stem, &null, resolved, g, config.n, config.m)?;
    Ok((null, stem, true))
}

fn emit_plot_data(stem: &Path, null: &NullDistribution) -> Result<()> {
    let t0 = null.sorted_t0();
    let n = t0.len();
    // pdf: 60 equal-width bins
    let (lo, hi) = (t0[0], t0[n - 1]);
    let bins = 60usize;
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0u64; bins];
    for &v in t0 {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut pdf = String::from("bin_center,count\n");
    for (i, c) in counts.iter().enumerate() {
        pdf.push_str(&format!("{},{c}\n", lo + (i as f64 + 0.5) * width));
    }
    write_text(&stem_with_suffix(stem, "_pdf.csv"), &pdf)?;

    let mut cdf = String::from("t0,cdf\n");
    for (i, v) in t0.iter().enumerate() {
        cdf.push_str(&format!("{v},{}\n", (i + 1) as f64 / n as f64));
    }
    write_text(&stem_with_suffix(stem, "_cdf.csv"), &cdf)?;

    let mut thresholds = serde_json::Map::new();
    for alpha in MARKER_ALPHAS {
        let value = null
            .threshold(alpha)
            .map(serde_json::Value::from)
            .unwrap_or(serde_json::Value::Null);
        thresholds.insert(format!("{alpha}"), value);
    }
    write_text(
        &stem_with_suffix(stem, "_thresholds.json"),
        &serde_json::to_string_pretty(&serde_json::Value::Object(thresholds)).expect("thresholds"),
    )?;
    Ok(())
}

fn stem_with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(config: &ExperimentConfig, config_dir: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let g = build_generator(config, config_dir)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| nulls_dir(config));
    ensure_dir(&config.output_dir)?;
    ensure_dir(&dir)?;
    let mut manifest = RunManifest::load_or_new(
        &config.output_dir,
        &config.content_hash(),
        config.master_seed,
        env!("CARGO_PKG_VERSION"),
    );
    let names = statistic_names(&config.statistics);
    for (spec, name) in config.statistics.iter().zip(&names) {
        if spec.kind == StatisticKind::Llr {
            log::info!("skipping llr: its null is epsilon-dependent and is built during scans");
            continue;
        }
        let resolved = resolve_statistic(spec, &g, config)?;
        let started = Instant::now();
        let (null, stem, rebuilt) = ensure_null(config, &g, name, &resolved, &dir)?;
        let seconds = started.elapsed().as_secs_f64();
        emit_plot_data(&stem, &null)?;
        if rebuilt {
            println!(
                "built {name} null: {} tests in {seconds:.1}s ({})",
                null.n_tests(),
                stem.display()
            );
        } else {
            println!("kept {name} null ({})", stem.display());
        }
        manifest.record(ArtifactEntry {
            kind: "null".into(),
            name: name.clone(),
            path: stem.display().to_string(),
            fingerprint: null.fingerprint().to_string(),
            seconds,
        });
        manifest.save(&config.output_dir)?;
    }
    Ok(())
}
