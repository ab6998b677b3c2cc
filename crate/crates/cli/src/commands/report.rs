//! `gentest report`: regenerate the summary tables from the artifacts of a
//! finished (or partially finished) run directory.

use std::path::Path;

use gentest_core::error::{Error, Result};

use crate::commands::scan::{to_summaries, CellFile};
use crate::manifest::RunManifest;
use crate::table;

pub fn run(dir: &Path) -> Result<()> {
    let scans = dir.join("scans");
    let mut cells: Vec<CellFile> = Vec::new();
    if scans.is_dir() {
        let mut paths: Vec<_> = std::fs::read_dir(&scans)
            .map_err(|e| Error::io(&scans, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().and_then(|e| e.to_str()) == Some("json")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.contains("__"))
                        .unwrap_or(false)
            })
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            match serde_json::from_str::<CellFile>(&text) {
                Ok(cell) => cells.push(cell),
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
    }
    if cells.is_empty() {
        println!("no scan cells found under {}", scans.display());
    } else {
        let summaries = to_summaries(&cells);
        let csv = table::render_csv(&summaries);
        let text = table::render_text(&summaries);
        std::fs::write(scans.join("summary.csv"), &csv)
            .map_err(|e| Error::io(scans.join("summary.csv"), e))?;
        std::fs::write(scans.join("summary.txt"), &text)
            .map_err(|e| Error::io(scans.join("summary.txt"), e))?;
        println!("{text}");
    }

    let manifest_path = RunManifest::path_in(dir);
    if manifest_path.exists() {
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
            println!(
                "run {} (seed {}): {} artifact(s)",
                &manifest.config_hash[..12.min(manifest.config_hash.len())],
                manifest.master_seed,
                manifest.artifacts.len()
            );
            for a in &manifest.artifacts {
                println!(
                    "  [{}] {} -> {} ({:.1}s)",
                    a.kind, a.name, a.path, a.seconds
                );
            }
        }
    }
    Ok(())
}
