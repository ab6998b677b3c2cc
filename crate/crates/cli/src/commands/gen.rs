//! `gentest gen`: write sample files from a generator or preset.

use std::path::{Path, PathBuf};

use gentest_core::error::{Error, Result};
use gentest_core::presets;
use gentest_core::sample_io;

use crate::commands::{build_generator, stream_for};
use crate::config::{ExperimentConfig, GeneratorRef};

pub struct GenArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub count: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub registry: Option<PathBuf>,
    pub list_presets: bool,
    pub export_registry: Option<PathBuf>,
}

pub fn run(args: &GenArgs) -> Result<()> {
    if args.list_presets {
        for name in presets::PRESET_NAMES {
            println!("{name}");
        }
        if let Some(reg) = &args.registry {
            for name in presets::load_registry(reg)?.keys() {
                println!("{name} (from {})", reg.display());
            }
        }
        return Ok(());
    }
    if let Some(path) = &args.export_registry {
        let text = serde_json::to_string_pretty(&presets::registry()).expect("registry");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        println!("wrote preset registry to {}", path.display());
        return Ok(());
    }

    let config = match &args.config {
        Some(path) => Some(ExperimentConfig::load(path)?),
        None => None,
    };
    let config_dir = args.config.as_deref().and_then(Path::parent);

    let generator = if let Some(name) = &args.preset {
        let reference = GeneratorRef::Preset(name.clone());
        reference.build(config_dir, args.registry.as_deref())?
    } else if let Some(cfg) = &config {
        build_generator(cfg, config_dir)?
    } else {
        return Err(Error::InvalidInput(
            "gen needs --preset or --config to know what to sample".into(),
        ));
    };

    let count = args
        .count
        .or(config.as_ref().map(|c| c.n))
        .ok_or_else(|| Error::InvalidInput("gen needs --count or a config with n".into()))?;
    let seed = args
        .seed
        .or(config.as_ref().map(|c| c.master_seed))
        .ok_or_else(|| Error::InvalidInput("gen needs --seed or a config master_seed".into()))?;
    let out = args
        .out
        .clone()
        .ok_or_else(|| Error::InvalidInput("gen needs --out".into()))?;

    let sample = generator.sample(count, &mut stream_for(seed, "gen"))?;
    let format =
        args.format
            .as_deref()
            .unwrap_or_else(|| match out.extension().and_then(|e| e.to_str()) {
                Some("f64") => "binary",
                _ => "csv",
            });
    match format {
        "csv" => sample_io::write_csv(&out, &sample)?,
        "binary" => sample_io::write_binary(&out, &sample)?,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown format {other:?}: expected csv or binary"
            )))
        }
    }
    println!(
        "wrote {} points in {} dimensions to {}",
        sample.n(),
        sample.d(),
        out.display()
    );
    Ok(())
}
