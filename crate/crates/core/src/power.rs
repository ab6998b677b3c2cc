//! Sensitivity measurement: estimates the statistic under epsilon-deformed
//! alternatives and solves for the critical deformation where the mean (and
//! its one-sigma band edges) meet the null threshold, by bisection with a
//! shared evaluation cache and common random numbers across epsilon.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{build_null_llr, NullDistribution};
use crate::deformations::{self, DeformationKind, DeformationSpec};
use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::rng::RngStream;
use crate::statistics::{llr_statistic, DeformedDensity, ResolvedStatistic};

/// Mean and standard deviation of a statistic at one epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatEstimate {
    pub epsilon: f64,
    pub mean_t: f64,
    pub std_t: f64,
    pub repeats: usize,
}

/// Serialize +-infinity (the insensitive-statistic sentinel) as JSON null.
mod serde_maybe_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Threshold(s) a scan compared against: one value for statistics with a
/// fixed null, a per-epsilon table for the likelihood ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdUsed {
    Fixed(f64),
    PerEpsilon(Vec<EpsilonThreshold>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonThreshold {
    pub epsilon: f64,
    pub threshold: f64,
}

/// Critical deformation with its uncertainty bounds and the evaluation
/// trace. Infinite values mean the statistic never crossed the threshold
/// below the bracket cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonScanResult {
    pub alpha: f64,
    #[serde(with = "serde_maybe_inf")]
    pub eps_alpha: f64,
    #[serde(with = "serde_maybe_inf")]
    pub eps_low: f64,
    #[serde(with = "serde_maybe_inf")]
    pub eps_up: f64,
    pub repeats: usize,
    pub cap: f64,
    pub trace: Vec<StatEstimate>,
    pub threshold_used: ThresholdUsed,
}

impl EpsilonScanResult {
    fn new(
        alpha: f64,
        roots: BandRoots,
        repeats: usize,
        cap: f64,
        trace: Vec<StatEstimate>,
        threshold_used: ThresholdUsed,
    ) -> Self {
        // The bands are ordered pointwise, so their crossings are ordered up
        // to bisection tolerance; clamp to keep the invariant exact.
        let eps_alpha = roots.mid;
        let eps_low = roots.low.min(eps_alpha);
        let eps_up = roots.up.max(eps_alpha);
        EpsilonScanResult {
            alpha,
            eps_alpha,
            eps_low,
            eps_up,
            repeats,
            cap,
            trace,
            threshold_used,
        }
    }

    pub fn is_insensitive(&self) -> bool {
        !self.eps_alpha.is_finite()
    }
}

/// Bisection search configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    /// Convergence: relative bracket width (hi - lo) / hi.
    pub rel_tol: f64,
    /// First bracket guess; defaults to cap / 16.
    pub initial_hi: Option<f64>,
    /// Bracket cap; defaults to 1 for the permutation deformation (its
    /// domain bound) and 10 otherwise.
    pub cap: Option<f64>,
    /// Hard limit on bisection steps per root.
    pub max_steps: usize,
    /// Test repetitions per probed epsilon.
    pub repeats: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig {
            rel_tol: 1e-2,
            initial_hi: None,
            cap: None,
            max_steps: 48,
            repeats: 100,
        }
    }
}

pub fn default_cap(kind: DeformationKind) -> f64 {
    match kind {
        DeformationKind::SigmaOffDiag => 1.0,
        _ => 10.0,
    }
}

/// Mean/std band at one epsilon together with the threshold to compare
/// against (epsilon-dependent for the likelihood ratio).
#[derive(Debug, Clone, Copy)]
pub struct BandPoint {
    pub epsilon: f64,
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BandRoots {
    /// Where mean + std meets the threshold.
    pub low: f64,
    /// Where the mean meets the threshold.
    pub mid: f64,
    /// Where mean - std meets the threshold.
    pub up: f64,
}

#[derive(Clone, Copy)]
enum Band {
    Low,
    Mid,
    Up,
}

fn crosses(p: &BandPoint, band: Band) -> bool {
    match band {
        Band::Low => p.mean + p.std > p.threshold,
        Band::Mid => p.mean > p.threshold,
        Band::Up => p.mean - p.std > p.threshold,
    }
}

/// Solve the three band crossings by interleaved bisections over a shared
/// evaluator. The evaluator is expected to cache: every distinct epsilon is
/// typically probed by more than one band.
pub fn bisect_bands(
    eval: &mut dyn FnMut(f64) -> Result<BandPoint>,
    cfg: &BisectionConfig,
    cap: f64,
) -> Result<BandRoots> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bracket cap must be positive, got {cap}"
        )));
    }
    if !(cfg.rel_tol > 0.0) {
        return Err(Error::InvalidInput("rel_tol must be positive".into()));
    }
    let initial = cfg.initial_hi.unwrap_or(cap / 16.0).min(cap);
    if !(initial > 0.0) {
        return Err(Error::InvalidInput(
            "initial bracket must be positive".into(),
        ));
    }
    let mut root_for = |band: Band| -> Result<f64> {
        // The statistic sits at its null level at epsilon = 0, below the
        // threshold by construction; the lower bracket edge starts there
        // without being evaluated.
        let mut lo = 0.0;
        let mut hi = initial;
        loop {
            let p = eval(hi)?;
            if crosses(&p, band) {
                break;
            }
            if hi >= cap {
                return Ok(f64::INFINITY);
            }
            lo = hi;
            hi = (hi * 2.0).min(cap);
        }
        let mut steps = 0;
        while (hi - lo) > cfg.rel_tol * hi && steps < cfg.max_steps {
            let mid = 0.5 * (lo + hi);
            if crosses(&eval(mid)?, band) {
                hi = mid;
            } else {
                lo = mid;
            }
            steps += 1;
        }
        Ok(0.5 * (lo + hi))
    };
    let mid = root_for(Band::Mid)?;
    let low = root_for(Band::Low)?;
    let up = root_for(Band::Up)?;
    Ok(BandRoots { low, mid, up })
}

/// Estimate the statistic's mean and (n-1)-denominator standard deviation
/// under the epsilon-deformed alternative: each repeat draws a fresh
/// reference sample, a fresh deformation draw, and a fresh deformed sample.
///
/// Repeat `r` always derives child stream `r` of `rng`, so calls that share
/// a parent stream across epsilon values reuse common random numbers.
pub fn estimate_at(
    stat: &ResolvedStatistic,
    g: &GeneratorSpec,
    deformation: &DeformationSpec,
    n: usize,
    m: usize,
    repeats: usize,
    rng: &RngStream,
) -> Result<StatEstimate> {
    if repeats < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 repeats, got {repeats}"
        )));
    }
    deformation.validate()?;
    let stats = g.reference_stats();
    let d = g.d();
    let values: Vec<f64> = (0..repeats)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let s = rng.derive(r as u64);
            let run = || -> Result<f64> {
                let x = g.sample(n, &mut s.derive(0))?;
                let base = g.sample(m, &mut s.derive(1))?;
                let draw = deformations::draw(deformation, m, d, &mut s.derive(2))?;
                let y = deformations::apply(&draw, &base, Some(&stats))?;
                stat.evaluate(&x, &y, &mut s.derive(3))
            };
            run().map_err(|e| Error::TestFailure {
                stream_id: s.stream_id(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = values.iter().sum::<f64>() / repeats as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (repeats as f64 - 1.0);
    Ok(StatEstimate {
        epsilon: deformation.epsilon,
        mean_t: mean,
        std_t: var.sqrt(),
        repeats,
    })
}

fn sorted_trace(cache: &BTreeMap<u64, StatEstimate>) -> Vec<StatEstimate> {
    let mut trace: Vec<StatEstimate> = cache.values().copied().collect();
    trace.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    trace
}

/// Raise the non-monotonicity diagnostic when a capped (insensitive) search
/// contradicts evaluations that did cross the threshold.
fn check_capped_consistency(
    trace: &[StatEstimate],
    threshold_of: impl Fn(f64) -> f64,
    cap: f64,
) -> Result<()> {
    let witnesses: Vec<&StatEstimate> = trace
        .iter()
        .filter(|e| e.mean_t > threshold_of(e.epsilon))
        .collect();
    if witnesses.is_empty() {
        return Ok(());
    }
    let detail: Vec<String> = witnesses
        .iter()
        .map(|e| format!("mean {:.6} > threshold at eps {:.6}", e.mean_t, e.epsilon))
        .collect();
    Err(Error::Bracketing(format!(
        "mean statistic stayed below the threshold at the bracket cap {cap} \
         but crossed it at smaller epsilon ({}); the response is non-monotone \
         at this noise level",
        detail.join("; ")
    )))
}

/// Solve the critical deformation for each significance level against a
/// pre-built null. All alphas share one evaluation cache.
#[allow(clippy::too_many_arguments)]
pub fn scan_deformation(
    stat: &ResolvedStatistic,
    g: &GeneratorSpec,
    kind: DeformationKind,
    alphas: &[f64],
    null: &NullDistribution,
    n: usize,
    m: usize,
    cfg: &BisectionConfig,
    rng: &RngStream,
) -> Result<Vec<EpsilonScanResult>> {
    let cap = cfg.cap.unwrap_or_else(|| default_cap(kind));
    let mut cache: BTreeMap<u64, StatEstimate> = BTreeMap::new();
    let mut results = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let tau = null.threshold(alpha)?;
        let mut eval = |eps: f64| -> Result<BandPoint> {
            let bits = eps.to_bits();
            if let Some(e) = cache.get(&bits) {
                return Ok(BandPoint {
                    epsilon: eps,
                    mean: e.mean_t,
                    std: e.std_t,
                    threshold: tau,
                });
            }
            let spec = DeformationSpec::new(kind, eps)?;
            let est = estimate_at(stat, g, &spec, n, m, cfg.repeats, rng)?;
            cache.insert(bits, est);
            Ok(BandPoint {
                epsilon: eps,
                mean: est.mean_t,
                std: est.std_t,
                threshold: tau,
            })
        };
        let roots = bisect_bands(&mut eval, cfg, cap)?;
        let trace = sorted_trace(&cache);
        if !roots.mid.is_finite() {
            check_capped_consistency(&trace, |_| tau, cap)?;
        }
        results.push(EpsilonScanResult::new(
            alpha,
            roots,
            cfg.repeats,
            cap,
            trace,
            ThresholdUsed::Fixed(tau),
        ));
    }
    Ok(results)
}

/// Single-alpha wrapper over [`scan_deformation`].
#[allow(clippy::too_many_arguments)]
pub fn bisect_epsilon(
    stat: &ResolvedStatistic,
    g: &GeneratorSpec,
    kind: DeformationKind,
    alpha: f64,
    null: &NullDistribution,
    n: usize,
    m: usize,
    cfg: &BisectionConfig,
    rng: &RngStream,
) -> Result<EpsilonScanResult> {
    Ok(scan_deformation(stat, g, kind, &[alpha], null, n, m, cfg, rng)?.remove(0))
}

/// Critical deformation for the exact likelihood ratio, whose null (and so
/// its threshold) is epsilon-dependent: a fresh bootstrap-style null is
/// built at every probed epsilon and cached alongside the estimate.
#[allow(clippy::too_many_arguments)]
pub fn scan_deformation_llr(
    g: &GeneratorSpec,
    kind: DeformationKind,
    alphas: &[f64],
    n: usize,
    m: usize,
    cfg: &BisectionConfig,
    null_tests_per_eps: usize,
    rng: &RngStream,
) -> Result<Vec<EpsilonScanResult>> {
    if !kind.density_tractable() {
        return Err(Error::UnsupportedDeformation(format!(
            "{} has no tractable deformed density for the likelihood ratio",
            kind.name()
        )));
    }
    if !g.is_parametric() {
        return Err(Error::DensityUnavailable(
            "likelihood-ratio scans need a parametric reference".into(),
        ));
    }
    let cap = cfg.cap.unwrap_or_else(|| default_cap(kind));
    let d = g.d();
    let stats = g.reference_stats();
    // One fixed sub-stream per role, shared across epsilon probes: repeat r
    // and null test j reuse their seeds at every epsilon.
    let h1_rng = rng.derive(1);
    let null_rng = rng.derive(2);

    let mut cache: BTreeMap<u64, (StatEstimate, NullDistribution)> = BTreeMap::new();
    let evaluate = |eps: f64| -> Result<(StatEstimate, NullDistribution)> {
        let spec = DeformationSpec::new(kind, eps)?;
        let null = build_null_llr(g, &spec, n, m, null_tests_per_eps, &null_rng)?;
        let values: Vec<f64> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let s = h1_rng.derive(r as u64);
                let run = || -> Result<f64> {
                    let base = g.sample(m, &mut s.derive(0))?;
                    let draw = deformations::draw(&spec, m, d, &mut s.derive(1))?;
                    let y = deformations::apply(&draw, &base, Some(&stats))?;
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
        let mean = values.iter().sum::<f64>() / cfg.repeats as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (cfg.repeats as f64 - 1.0);
        Ok((
            StatEstimate {
                epsilon: eps,
                mean_t: mean,
                std_t: var.sqrt(),
                repeats: cfg.repeats,
            },
            null,
        ))
    };

    let mut results = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut eval = |eps: f64| -> Result<BandPoint> {
            let bits = eps.to_bits();
            if !cache.contains_key(&bits) {
                let entry = evaluate(eps)?;
                cache.insert(bits, entry);
            }
            let (est, null) = cache.get(&bits).expect("just inserted");
            Ok(BandPoint {
                epsilon: eps,
                mean: est.mean_t,
                std: est.std_t,
                threshold: null.threshold(alpha)?,
            })
        };
        let roots = bisect_bands(&mut eval, cfg, cap)?;
        let trace: Vec<StatEstimate> = {
            let mut t: Vec<StatEstimate> = cache.values().map(|(e, _)| *e).collect();
            t.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
            t
        };
        let thresholds: Vec<EpsilonThreshold> = {
            let mut t: Vec<EpsilonThreshold> = cache
                .values()
                .map(|(e, null)| {
                    Ok(EpsilonThreshold {
                        epsilon: e.epsilon,
                        threshold: null.threshold(alpha)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            t.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
            t
        };
        if !roots.mid.is_finite() {
            let by_eps: BTreeMap<u64, f64> = thresholds
                .iter()
                .map(|t| (t.epsilon.to_bits(), t.threshold))
                .collect();
            check_capped_consistency(
                &trace,
                |eps| by_eps.get(&eps.to_bits()).copied().unwrap_or(f64::INFINITY),
                cap,
            )?;
        }
        results.push(EpsilonScanResult::new(
            alpha,
            roots,
            cfg.repeats,
            cap,
            trace,
            ThresholdUsed::PerEpsilon(thresholds),
        ));
    }
    Ok(results)
}

/// Single-alpha wrapper over [`scan_deformation_llr`].
#[allow(clippy::too_many_arguments)]
pub fn bisect_epsilon_llr(
    g: &GeneratorSpec,
    kind: DeformationKind,
    alpha: f64,
    n: usize,
    m: usize,
    cfg: &BisectionConfig,
    null_tests_per_eps: usize,
    rng: &RngStream,
) -> Result<EpsilonScanResult> {
    Ok(scan_deformation_llr(g, kind, &[alpha], n, m, cfg, null_tests_per_eps, rng)?.remove(0))
}
