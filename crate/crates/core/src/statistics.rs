//! Two-sample test statistics: each is a pure map from a pair of samples to
//! a real number. Classical statistics live here; the NPLM classifier
//! statistic lives in [`crate::nplm`] and is dispatched through
//! [`ResolvedStatistic`].

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformations::DeformationDraw;
use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::linalg::{self, psd_sqrt, SymmetricMatrix, DEFAULT_MAX_PAIRWISE_POINTS};
use crate::nplm::{self, NplmHyperparams, SolverConfig};
use crate::rng::RngStream;
use crate::sample::Sample;

/// First Wasserstein distance between two 1-D empirical distributions.
///
/// Equal sizes use the order-statistic pairing; unequal sizes integrate the
/// quantile-function gap over the merged quantile grid (breakpoints handled
/// in exact integer arithmetic).
pub fn wasserstein_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("empty input to wasserstein_1d".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    if n == m {
        let sum: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum();
        return Ok(sum / n as f64);
    }
    // Quantile breakpoints i/n and j/m compared as i*m vs j*n; segment
    // lengths accumulate in units of 1/(n*m).
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u64;
    let mut total = 0.0;
    while i < n && j < m {
        let bx = ((i + 1) * m) as u64;
        let by = ((j + 1) * n) as u64;
        let next = bx.min(by);
        total += (next - prev) as f64 * (xs[i] - ys[j]).abs();
        if bx <= by {
            i += 1;
        }
        if by <= bx {
            j += 1;
        }
        prev = next;
    }
    Ok(total / (n as f64 * m as f64))
}

/// Two-sample Kolmogorov-Smirnov statistic: the sup-norm distance between
/// the empirical CDFs, in [0, 1].
pub fn ks_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("empty input to ks_1d".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < xs.len() || j < ys.len() {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        let gap = (i as f64 / n - j as f64 / m).abs();
        if gap > sup {
            sup = gap;
        }
    }
    Ok(sup)
}

fn check_dims(x: &Sample, y: &Sample) -> Result<()> {
    if x.d() != y.d() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            x.d(),
            y.d()
        )));
    }
    Ok(())
}

/// Draw a uniform random unit direction in d dimensions.
pub fn random_unit_direction(d: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Sliced Wasserstein over explicit directions (mean aggregation).
pub fn sw_with_directions(x: &Sample, y: &Sample, directions: &[Vec<f64>]) -> Result<f64> {
    check_dims(x, y)?;
    if directions.is_empty() {
        return Err(Error::InvalidInput("need at least one slice".into()));
    }
    let mut acc = 0.0;
    for u in directions {
        acc += wasserstein_1d(&x.project(u)?, &y.project(u)?)?;
    }
    Ok(acc / directions.len() as f64)
}

/// Sliced Wasserstein distance: mean 1-D W1 over `n_slices` random unit
/// directions drawn fresh from `rng`.
pub fn sw_statistic(x: &Sample, y: &Sample, n_slices: usize, rng: &mut RngStream) -> Result<f64> {
    check_dims(x, y)?;
    if n_slices == 0 {
        return Err(Error::InvalidInput("n_slices must be >= 1".into()));
    }
    let dirs: Vec<Vec<f64>> = (0..n_slices)
        .map(|_| random_unit_direction(x.d(), rng))
        .collect();
    sw_with_directions(x, y, &dirs)
}

/// KS statistic averaged over the d coordinate marginals.
pub fn ks_bar(x: &Sample, y: &Sample) -> Result<f64> {
    check_dims(x, y)?;
    let mut acc = 0.0;
    for j in 0..x.d() {
        acc += ks_1d(&x.column(j), &y.column(j))?;
    }
    Ok(acc / x.d() as f64)
}

/// Sliced KS over explicit directions.
pub fn sks_with_directions(x: &Sample, y: &Sample, directions: &[Vec<f64>]) -> Result<f64> {
    check_dims(x, y)?;
    if directions.is_empty() {
        return Err(Error::InvalidInput("need at least one slice".into()));
    }
    let mut acc = 0.0;
    for u in directions {
        acc += ks_1d(&x.project(u)?, &y.project(u)?)?;
    }
    Ok(acc / directions.len() as f64)
}

/// Sliced KS: mean 1-D KS over random unit directions.
pub fn sks_statistic(x: &Sample, y: &Sample, n_slices: usize, rng: &mut RngStream) -> Result<f64> {
    check_dims(x, y)?;
    if n_slices == 0 {
        return Err(Error::InvalidInput("n_slices must be >= 1".into()));
    }
    let dirs: Vec<Vec<f64>> = (0..n_slices)
        .map(|_| random_unit_direction(x.d(), rng))
        .collect();
    sks_with_directions(x, y, &dirs)
}

/// Frechet Gaussian distance from explicit moments:
/// |mu_x - mu_y|^2 + Tr(S_x + S_y - 2 (S_x S_y)^{1/2}), clamped at 0.
///
/// Tr (S_x S_y)^{1/2} is evaluated through the symmetric product
/// A S_y A with A = S_x^{1/2}, which shares its eigenvalues.
pub fn fgd_from_moments(
    mean_x: &[f64],
    cov_x: &SymmetricMatrix,
    mean_y: &[f64],
    cov_y: &SymmetricMatrix,
) -> Result<f64> {
    if mean_x.len() != mean_y.len() || cov_x.dim() != cov_y.dim() || cov_x.dim() != mean_x.len() {
        return Err(Error::InvalidInput("moment dimension mismatch".into()));
    }
    let mean_gap: f64 = mean_x
        .iter()
        .zip(mean_y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let a = psd_sqrt(cov_x)?;
    let an = a.to_nalgebra();
    let prod = &an * cov_y.to_nalgebra() * &an;
    let cross = psd_sqrt(&SymmetricMatrix::from_nalgebra(&prod))?;
    let value = mean_gap + cov_x.trace() + cov_y.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Frechet Gaussian distance between Gaussians fitted to the two samples
/// (plug-in sample mean and unbiased covariance).
pub fn fgd_statistic(x: &Sample, y: &Sample) -> Result<f64> {
    check_dims(x, y)?;
    fgd_from_moments(
        &x.column_means(),
        &SymmetricMatrix::covariance_of(x),
        &y.column_means(),
        &SymmetricMatrix::covariance_of(y),
    )
}

#[inline]
fn gauss_kernel_sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unbiased squared-MMD estimator with the Gaussian kernel
/// k(a, b) = exp(-|a-b|^2 / (2 h^2)). May be negative.
pub fn mmd_statistic(x: &Sample, y: &Sample, bandwidth: f64) -> Result<f64> {
    check_dims(x, y)?;
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let (n, m) = (x.n(), y.n());
    if n < 2 || m < 2 {
        return Err(Error::InvalidInput(
            "unbiased MMD needs at least 2 points per sample".into(),
        ));
    }
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let within = |s: &Sample| -> f64 {
        let partial: Vec<f64> = (0..s.n() - 1)
            .into_par_iter()
            .map(|i| {
                let ri = s.row(i);
                let mut acc = 0.0;
                for j in (i + 1)..s.n() {
                    acc += (-gauss_kernel_sqdist(ri, s.row(j)) * inv_two_h2).exp();
                }
                acc
            })
            .collect();
        2.0 * partial.iter().sum::<f64>()
    };
    let sxx = within(x);
    let syy = within(y);
    let cross_partial: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = x.row(i);
            let mut acc = 0.0;
            for j in 0..m {
                acc += (-gauss_kernel_sqdist(ri, y.row(j)) * inv_two_h2).exp();
            }
            acc
        })
        .collect();
    let sxy: f64 = cross_partial.iter().sum();
    Ok(
        sxx / (n as f64 * (n as f64 - 1.0)) + syy / (m as f64 * (m as f64 - 1.0))
            - 2.0 * sxy / (n as f64 * m as f64),
    )
}

/// Median of the pairwise distances of the pooled (subsampled) data.
pub fn median_heuristic_bandwidth(x: &Sample, y: &Sample, rng: &mut RngStream) -> Result<f64> {
    check_dims(x, y)?;
    let pooled = x.vstack(y)?;
    let mut dists = linalg::pairwise_distances(&pooled, DEFAULT_MAX_PAIRWISE_POINTS, rng)?;
    dists.sort_by(f64::total_cmp);
    let h = linalg::empirical_quantile(&dists, 0.5)?;
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::DegenerateBandwidth)
    }
}

/// Anything that can evaluate a log-density row-wise on a sample.
pub trait LogDensity {
    fn log_density(&self, pts: &Sample) -> Result<Vec<f64>>;
}

impl LogDensity for GeneratorSpec {
    fn log_density(&self, pts: &Sample) -> Result<Vec<f64>> {
        self.log_pdf(pts)
    }
}

/// The deformed density q_eps for a specific nuisance draw.
pub struct DeformedDensity<'a> {
    pub generator: &'a GeneratorSpec,
    pub draw: &'a DeformationDraw,
}

impl LogDensity for DeformedDensity<'_> {
    fn log_density(&self, pts: &Sample) -> Result<Vec<f64>> {
        crate::deformations::deformed_log_pdf(self.generator, self.draw, pts)
    }
}

/// Exact log-likelihood-ratio statistic t = -2 sum_y [log p(y) - log q(y)].
/// Uses only the candidate sample, never the reference sample.
pub fn llr_statistic(y: &Sample, log_p: &dyn LogDensity, log_q: &dyn LogDensity) -> Result<f64> {
    let lp = log_p.log_density(y)?;
    let lq = log_q.log_density(y)?;
    let mut total = 0.0;
    for (row, (a, b)) in lp.iter().zip(&lq).enumerate() {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite(format!(
                "log-density at row {row}: log p = {a}, log q = {b}"
            )));
        }
        total += a - b;
    }
    Ok(-2.0 * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Sw,
    KsBar,
    Sks,
    Fgd,
    Mmd,
    Llr,
    Nplm,
}

impl StatisticKind {
    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::Sw => "sw",
            StatisticKind::KsBar => "ks_bar",
            StatisticKind::Sks => "sks",
            StatisticKind::Fgd => "fgd",
            StatisticKind::Mmd => "mmd",
            StatisticKind::Llr => "llr",
            StatisticKind::Nplm => "nplm",
        }
    }
}

/// How the MMD kernel bandwidth is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum BandwidthPolicy {
    #[default]
    Median,
    Fixed {
        value: f64,
    },
}

fn default_n_slices() -> usize {
    100
}

/// Declarative statistic description, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatisticKind,
    #[serde(default = "default_n_slices")]
    pub n_slices: usize,
    #[serde(default)]
    pub mmd_bandwidth: BandwidthPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nplm_hyperparams: Option<NplmHyperparams>,
}

impl StatisticSpec {
    pub fn new(kind: StatisticKind) -> Self {
        StatisticSpec {
            kind,
            n_slices: default_n_slices(),
            mmd_bandwidth: BandwidthPolicy::default(),
            nplm_hyperparams: None,
        }
    }

    pub fn with_nplm(hp: NplmHyperparams) -> Self {
        StatisticSpec {
            nplm_hyperparams: Some(hp),
            ..Self::new(StatisticKind::Nplm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slices == 0 {
            return Err(Error::InvalidInput("n_slices must be >= 1".into()));
        }
        if let BandwidthPolicy::Fixed { value } = self.mmd_bandwidth {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "fixed bandwidth must be positive, got {value}"
                )));
            }
        }
        if let Some(hp) = &self.nplm_hyperparams {
            hp.validate()?;
        } else if self.kind == StatisticKind::Nplm {
            return Err(Error::InvalidInput(
                "nplm statistic needs hyperparameters (run tuning or set them in the config)"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Freeze per-experiment parameters: the MMD median bandwidth is
    /// computed once on reference draws of the experiment's sizes so the
    /// statistic is a fixed function across all null and alternative tests.
    pub fn resolve(
        &self,
        g: &GeneratorSpec,
        n: usize,
        m: usize,
        rng: &mut RngStream,
    ) -> Result<ResolvedStatistic> {
        self.validate()?;
        let mmd_bandwidth = match (self.kind, self.mmd_bandwidth) {
            (StatisticKind::Mmd, BandwidthPolicy::Median) => {
                let x0 = g.sample(n, &mut rng.derive(0))?;
                let y0 = g.sample(m, &mut rng.derive(1))?;
                Some(median_heuristic_bandwidth(&x0, &y0, &mut rng.derive(2))?)
            }
            (StatisticKind::Mmd, BandwidthPolicy::Fixed { value }) => Some(value),
            _ => None,
        };
        Ok(ResolvedStatistic {
            kind: self.kind,
            n_slices: self.n_slices,
            mmd_bandwidth,
            nplm_hyperparams: self.nplm_hyperparams,
        })
    }
}

/// A statistic with every free parameter pinned; evaluation only needs the
/// two samples (plus a stream for slice directions / center sampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedStatistic {
    pub kind: StatisticKind,
    #[serde(default = "default_n_slices")]
    pub n_slices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd_bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nplm_hyperparams: Option<NplmHyperparams>,
}

impl ResolvedStatistic {
    pub fn evaluate(&self, x: &Sample, y: &Sample, rng: &mut RngStream) -> Result<f64> {
        match self.kind {
            StatisticKind::Sw => sw_statistic(x, y, self.n_slices, rng),
            StatisticKind::KsBar => ks_bar(x, y),
            StatisticKind::Sks => sks_statistic(x, y, self.n_slices, rng),
            StatisticKind::Fgd => fgd_statistic(x, y),
            StatisticKind::Mmd => {
                let h = self.mmd_bandwidth.ok_or_else(|| {
                    Error::InvalidInput("mmd statistic was not resolved with a bandwidth".into())
                })?;
                mmd_statistic(x, y, h)
            }
            StatisticKind::Nplm => {
                let hp = self.nplm_hyperparams.ok_or_else(|| {
                    Error::InvalidInput(
                        "nplm statistic was not resolved with hyperparameters".into(),
                    )
                })?;
                nplm::nplm_test(x, y, &hp, rng, &SolverConfig::default())
            }
            StatisticKind::Llr => Err(Error::InvalidInput(
                "llr needs explicit densities; it is driven by the power module".into(),
            )),
        }
    }

    /// Spec form with all resolved values pinned, for artifact headers.
    pub fn to_spec(&self) -> StatisticSpec {
        StatisticSpec {
            kind: self.kind,
            n_slices: self.n_slices,
            mmd_bandwidth: match self.mmd_bandwidth {
                Some(value) => BandwidthPolicy::Fixed { value },
                None => BandwidthPolicy::Median,
            },
            nplm_hyperparams: self.nplm_hyperparams,
        }
    }
}
