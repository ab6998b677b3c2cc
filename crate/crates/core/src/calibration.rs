//! Empirical null distributions: repeated reference-vs-reference tests,
//! significance thresholds, p-values, and null persistence.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformations::{self, DeformationSpec};
use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::linalg::empirical_quantile;
use crate::rng::RngStream;
use crate::statistics::{llr_statistic, DeformedDensity, ResolvedStatistic};

/// Minimum number of null tests for a usable distribution.
pub const MIN_NULL_TESTS: usize = 20;

/// Sorted null values of a statistic with threshold and p-value queries.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    sorted_t0: Vec<f64>,
    fingerprint: String,
    generation_seed: u64,
}

impl NullDistribution {
    /// Wrap raw null values; sorts them and checks shape invariants.
    pub fn from_values(mut values: Vec<f64>, fingerprint: String, seed: u64) -> Result<Self> {
        if values.len() < MIN_NULL_TESTS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_NULL_TESTS} null tests, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("null value at index {bad}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(NullDistribution {
            sorted_t0: values,
            fingerprint,
            generation_seed: seed,
        })
    }

    pub fn sorted_t0(&self) -> &[f64] {
        &self.sorted_t0
    }

    pub fn n_tests(&self) -> usize {
        self.sorted_t0.len()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn generation_seed(&self) -> u64 {
        self.generation_seed
    }

    /// Significance threshold t0^alpha: the ceil((1-alpha) T)-th order
    /// statistic, so at most a fraction alpha of stored values lie strictly
    /// above it.
    pub fn threshold(&self, alpha: f64) -> Result<f64> {
        let t = self.n_tests();
        if !(alpha < 1.0) || alpha < 1.0 / t as f64 {
            return Err(Error::InsufficientTests { alpha, n_tests: t });
        }
        empirical_quantile(&self.sorted_t0, 1.0 - alpha)
    }

    /// Add-one p-value (1 + #{t0 >= t}) / (T + 1); always in (0, 1].
    pub fn p_value(&self, t: f64) -> f64 {
        let below = self.sorted_t0.partition_point(|&v| v < t);
        let at_or_above = self.n_tests() - below;
        (1.0 + at_or_above as f64) / (self.n_tests() as f64 + 1.0)
    }
}

/// Hash binding a null to its statistic, generator, and sample sizes.
/// The statistic is hashed in resolved form, so a frozen median bandwidth
/// or tuned hyperparameters are part of the identity.
pub fn fingerprint(stat: &ResolvedStatistic, g: &GeneratorSpec, n: usize, m: usize) -> String {
    let payload = serde_json::json!({
        "statistic": stat,
        "generator": g.identity(),
        "n": n,
        "m": m,
    });
    let text = serde_json::to_string(&payload).expect("fingerprint payload");
    crate::generators::hex_digest(text.as_bytes())
}

/// Fingerprint for the epsilon-dependent LLR null.
pub fn fingerprint_llr(
    g: &GeneratorSpec,
    deformation: &DeformationSpec,
    n: usize,
    m: usize,
) -> String {
    let payload = serde_json::json!({
        "statistic": {"kind": "llr", "deformation": deformation},
        "generator": g.identity(),
        "n": n,
        "m": m,
    });
    let text = serde_json::to_string(&payload).expect("fingerprint payload");
    crate::generators::hex_digest(text.as_bytes())
}

/// Build the empirical null of a statistic by evaluating it on `n_tests`
/// independent reference-vs-reference pairs. Test `i` owns stream
/// `rng.derive(i)`, so results are identical for any worker count.
pub fn build_null(
    stat: &ResolvedStatistic,
    g: &GeneratorSpec,
    n: usize,
    m: usize,
    n_tests: usize,
    rng: &RngStream,
) -> Result<NullDistribution> {
    if n_tests < MIN_NULL_TESTS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_NULL_TESTS} null tests, got {n_tests}"
        )));
    }
    let values: Vec<f64> = (0..n_tests)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let s = rng.derive(i as u64);
            let run = || -> Result<f64> {
                let x = g.sample(n, &mut s.derive(0))?;
                let y = g.sample(m, &mut s.derive(1))?;
                stat.evaluate(&x, &y, &mut s.derive(2))
            };
            run().map_err(|e| Error::TestFailure {
                stream_id: s.stream_id(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NullDistribution::from_values(values, fingerprint(stat, g, n, m), rng.stream_id())
}

/// Null of the exact likelihood-ratio statistic at a fixed epsilon: the
/// candidate sample is drawn from the reference, the denominator density is
/// the epsilon-deformed one with a fresh nuisance draw per test.
pub fn build_null_llr(
    g: &GeneratorSpec,
    deformation: &DeformationSpec,
    n: usize,
    m: usize,
    n_tests: usize,
    rng: &RngStream,
) -> Result<NullDistribution> {
    if n_tests < MIN_NULL_TESTS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_NULL_TESTS} null tests, got {n_tests}"
        )));
    }
    if !deformation.kind.density_tractable() {
        return Err(Error::UnsupportedDeformation(format!(
            "{} has no tractable deformed density for the likelihood ratio",
            deformation.kind.name()
        )));
    }
    let d = g.d();
    let values: Vec<f64> = (0..n_tests)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let s = rng.derive(i as u64);
            let run = || -> Result<f64> {
                let y = g.sample(m, &mut s.derive(0))?;
                let draw = deformations::draw(deformation, m, d, &mut s.derive(1))?;
                let q = DeformedDensity {
                    generator: g,
                    draw: &draw,
                };
                llr_statistic(&y, g, &q)
            };
            run().map_err(|e| Error::TestFailure {
                stream_id: s.stream_id(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NullDistribution::from_values(
        values,
        fingerprint_llr(g, deformation, n, m),
        rng.stream_id(),
    )
}

/// JSON header stored next to the binary null vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullHeader {
    pub n_tests: usize,
    pub fingerprint: String,
    pub seed: u64,
    pub statistic_spec: serde_json::Value,
    pub generator_ref: serde_json::Value,
    pub n: usize,
    pub m: usize,
    pub created_at: u64,
}

/// Persist a null as `<stem>.f64` (sorted values, little-endian) plus
/// `<stem>.json` (header).
pub fn save_null(
    stem: &Path,
    null: &NullDistribution,
    stat: &ResolvedStatistic,
    g: &GeneratorSpec,
    n: usize,
    m: usize,
) -> Result<()> {
    let bin_path = stem.with_extension("f64");
    let mut bytes = Vec::with_capacity(null.n_tests() * 8);
    for v in &null.sorted_t0 {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    let header = NullHeader {
        n_tests: null.n_tests(),
        fingerprint: null.fingerprint.clone(),
        seed: null.generation_seed,
        statistic_spec: serde_json::to_value(stat.to_spec()).expect("statistic spec"),
        generator_ref: g.identity(),
        n,
        m,
        created_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let json_path = stem.with_extension("json");
    let text = serde_json::to_string_pretty(&header).expect("header serialization");
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

/// Load a persisted null with its header.
pub fn load_null(stem: &Path) -> Result<(NullDistribution, NullHeader)> {
    let json_path = stem.with_extension("json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: NullHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e.to_string()))?;
    let bin_path = stem.with_extension("f64");
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != header.n_tests * 8 {
        return Err(Error::format(
            &bin_path,
            format!(
                "expected {} bytes for {} tests, found {}",
                header.n_tests * 8,
                header.n_tests,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let null = NullDistribution::from_values(values, header.fingerprint.clone(), header.seed)?;
    Ok((null, header))
}

/// Load a persisted null and reject it unless its fingerprint matches the
/// requested context.
pub fn load_null_checked(
    stem: &Path,
    stat: &ResolvedStatistic,
    g: &GeneratorSpec,
    n: usize,
    m: usize,
) -> Result<NullDistribution> {
    let (null, header) = load_null(stem)?;
    let expected = fingerprint(stat, g, n, m);
    if header.fingerprint != expected {
        return Err(Error::FingerprintMismatch {
            expected: header.fingerprint,
            actual: expected,
        });
    }
    Ok(null)
}
