//! Named generator presets.
//!
//! The reference Gaussian-mixture and correlated-Gaussian configurations are
//! drawn once from fixed seeds, so every run of the library sees identical
//! parameters. `registry()` exports them as a plain JSON map, and
//! `load_registry` reads a user-supplied file of the same shape.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::generators::{GeneratorConfig, GeneratorSpec, MixtureComponent};
use crate::linalg::SymmetricMatrix;
use crate::rng::RngStream;

/// Master seed from which all preset parameters are drawn.
const PRESET_SEED: u64 = 0x67656e_74657374;

pub const PRESET_NAMES: [&str; 6] = [
    "mog-d5", "mog-d20", "mog-d100", "cg-d5", "cg-d20", "cg-d100",
];

/// Build a preset by name.
pub fn builtin(name: &str) -> Result<GeneratorSpec> {
    match name {
        "mog-d5" => mixture_preset(3, 5, 1),
        "mog-d20" => mixture_preset(5, 20, 2),
        "mog-d100" => mixture_preset(10, 100, 3),
        "cg-d5" => correlated_preset(5, 4),
        "cg-d20" => correlated_preset(20, 5),
        "cg-d100" => correlated_preset(100, 6),
        _ => Err(Error::InvalidInput(format!(
            "unknown preset {name:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// The full builtin registry as declarative configs.
pub fn registry() -> BTreeMap<String, GeneratorConfig> {
    PRESET_NAMES
        .iter()
        .map(|name| {
            let spec = builtin(name).expect("builtin preset");
            let cfg = GeneratorConfig::from_spec(&spec).expect("parametric preset");
            (name.to_string(), cfg)
        })
        .collect()
}

/// Read a JSON registry file mapping preset names to generator configs.
pub fn load_registry(path: &Path) -> Result<BTreeMap<String, GeneratorConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Mixture of `q` diagonal Gaussians in `d` dimensions: weights from
/// normalized U[0.5, 1.5] draws, means U[-3, 3], widths U[0.5, 1.5].
fn mixture_preset(q: usize, d: usize, stream: u64) -> Result<GeneratorSpec> {
    let mut rng = RngStream::new(PRESET_SEED, stream);
    let raw: Vec<f64> = (0..q).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .into_iter()
        .map(|w| MixtureComponent {
            weight: w / total,
            mean: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            diag_std: (0..d).map(|_| rng.random_range(0.5..1.5)).collect(),
        })
        .collect();
    GeneratorSpec::mixture(components)
}

/// Correlated unimodal Gaussian: a random full-rank correlation structure
/// rescaled by per-dimension standard deviations in U[0.7, 1.4].
fn correlated_preset(d: usize, stream: u64) -> Result<GeneratorSpec> {
    let mut rng = RngStream::new(PRESET_SEED, stream);
    let b: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    // S = B B^T / d + 0.05 I, then normalize to a correlation matrix.
    let mut s = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..d {
                acc += b[i][k] * b[j][k];
            }
            acc /= d as f64;
            if i == j {
                acc += 0.05;
            }
            s[i][j] = acc;
            s[j][i] = acc;
        }
    }
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.7..1.4)).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let c = s[i][j] / (s[i][i] * s[j][j]).sqrt();
            cov[i][j] = c * scales[i] * scales[j];
        }
    }
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    GeneratorSpec::correlated_gaussian(mean, SymmetricMatrix::from_dense(&cov)?)
}
