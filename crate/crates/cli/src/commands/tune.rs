//! `gentest tune`: kernel-width heuristic plus the (M, lambda) grid search,
//! with plot-ready CSV output for the lambda-vs-time, M-vs-time and
//! M-vs-statistic views.

use std::path::Path;
use std::time::Instant;

use gentest_core::error::{Error, Result};
use gentest_core::nplm;
use gentest_core::statistics::StatisticKind;

use crate::commands::{build_generator, ensure_dir, stream_for, tuning_report_path, write_text};
use crate::config::{ExperimentConfig, TuningConfig};
use crate::manifest::{ArtifactEntry, RunManifest};

pub fn run(config: &ExperimentConfig, config_dir: Option<&Path>) -> Result<()> {
    if !config
        .statistics
        .iter()
        .any(|s| s.kind == StatisticKind::Nplm)
    {
        return Err(Error::InvalidInput(
            "tune only applies when the nplm statistic is configured".into(),
        ));
    }
    let g = build_generator(config, config_dir)?;
    ensure_dir(&config.output_dir)?;
    let mut manifest = RunManifest::load_or_new(
        &config.output_dir,
        &config.content_hash(),
        config.master_seed,
        env!("CARGO_PKG_VERSION"),
    );

    let started = Instant::now();
    let tune_n = config.tuning.tune_n.unwrap_or(config.n);
    let reference = g.sample(tune_n, &mut stream_for(config.master_seed, "tune:data"))?;
    let sigma = nplm::tune_sigma(
        &reference,
        config.tuning.sigma_percentile,
        &mut stream_for(config.master_seed, "tune:sigma"),
    )?;
    log::info!(
        "kernel width {:.4} ({} peak(s) in the distance distribution)",
        sigma.sigma,
        sigma.n_peaks
    );

    let m_grid = config
        .tuning
        .m_grid
        .clone()
        .unwrap_or_else(|| TuningConfig::default_m_grid(config.n, config.m));
    let lambda_grid = config
        .tuning
        .lambda_grid
        .clone()
        .unwrap_or_else(TuningConfig::default_lambda_grid);
    let mut report = nplm::scan_m_lambda(
        &g,
        config.n,
        config.m,
        sigma.sigma,
        &m_grid,
        &lambda_grid,
        config.tuning.repeats,
        config.tuning.time_budget_seconds,
        &stream_for(config.master_seed, "tune:grid"),
    )?;
    report.distance_histogram = sigma.histogram.clone();
    let seconds = started.elapsed().as_secs_f64();

    let json_path = tuning_report_path(&config.output_dir);
    write_text(
        &json_path,
        &serde_json::to_string_pretty(&report).expect("tuning report"),
    )?;

    // Long-form grid plus the three plot-ready projections.
    let mut grid_csv = String::from("m_centers,lambda,mean_t0,std_t0,mean_wall_time_seconds\n");
    for c in &report.grid {
        grid_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.m_centers, c.lambda, c.mean_t0, c.std_t0, c.mean_wall_time_seconds
        ));
    }
    write_text(&config.output_dir.join("tuning_grid.csv"), &grid_csv)?;

    let mut lambda_time = String::from("lambda,mean_wall_time_seconds\n");
    for &l in &lambda_grid {
        let cells: Vec<&nplm::TuningCell> = report.grid.iter().filter(|c| c.lambda == l).collect();
        let mean =
            cells.iter().map(|c| c.mean_wall_time_seconds).sum::<f64>() / cells.len().max(1) as f64;
        lambda_time.push_str(&format!("{l},{mean}\n"));
    }
    write_text(
        &config.output_dir.join("plot_lambda_vs_time.csv"),
        &lambda_time,
    )?;

    let mut sorted_m = m_grid.clone();
    sorted_m.sort_unstable();
    sorted_m.dedup();
    let mut sorted_l = lambda_grid.clone();
    sorted_l.sort_by(f64::total_cmp);
    let wide = |value: &dyn Fn(&nplm::TuningCell) -> f64, header: &str| -> String {
        let mut out = String::from("m_centers");
        for l in &sorted_l {
            out.push_str(&format!(",{header}_lambda_{l:e}"));
        }
        out.push('\n');
        for &mc in &sorted_m {
            out.push_str(&format!("{mc}"));
            for &l in &sorted_l {
                let cell = report
                    .grid
                    .iter()
                    .find(|c| c.m_centers == mc && c.lambda == l);
                match cell {
                    Some(c) => out.push_str(&format!(",{}", value(c))),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    };
    write_text(
        &config.output_dir.join("plot_m_vs_time.csv"),
        &wide(&|c| c.mean_wall_time_seconds, "seconds"),
    )?;
    write_text(
        &config.output_dir.join("plot_m_vs_t0.csv"),
        &wide(&|c| c.mean_t0, "mean_t0"),
    )?;

    manifest.record(ArtifactEntry {
        kind: "tuning".into(),
        name: "nplm".into(),
        path: json_path.display().to_string(),
        fingerprint: String::new(),
        seconds,
    });
    manifest.timings.insert("tune".into(), seconds);
    manifest.save(&config.output_dir)?;

    println!(
        "chosen hyperparameters: sigma {:.4}, M {}, lambda {:e}{}",
        report.sigma_chosen,
        report.chosen_m_centers,
        report.chosen_lambda,
        if report.plateau_found {
            ""
        } else {
            " (no plateau found; largest M fallback)"
        }
    );
    Ok(())
}
