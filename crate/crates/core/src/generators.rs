//! Data sources: parametric generators with tractable log-density (Gaussian
//! mixtures, correlated Gaussians) and file-backed empirical pools with
//! bootstrap resampling.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, LowerTriangular, SymmetricMatrix};
use crate::rng::RngStream;
use crate::sample::Sample;
use crate::sample_io;

const LN_2PI: f64 = 1.8378770664093453;

/// Per-dimension mean and standard deviation of a reference generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// One Gaussian mixture component with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub diag_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MixtureOfGaussians {
    components: Vec<MixtureComponent>,
    d: usize,
}

impl MixtureOfGaussians {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("mixture needs at least one component".into()))?;
        let d = first.mean.len();
        if d == 0 {
            return Err(Error::InvalidInput("mixture dimension must be >= 1".into()));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.diag_std.len() != d {
                return Err(Error::InvalidInput(format!(
                    "component {k} has inconsistent dimension"
                )));
            }
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "component {k} weight must be positive, got {}",
                    c.weight
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("component {k} mean")));
            }
            if c.diag_std.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "component {k} standard deviations must be positive"
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(MixtureOfGaussians { components, d })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }
}

#[derive(Debug, Clone)]
pub struct CorrelatedGaussian {
    mean: Vec<f64>,
    covariance: SymmetricMatrix,
    chol: LowerTriangular,
}

impl CorrelatedGaussian {
    pub fn new(mean: Vec<f64>, covariance: SymmetricMatrix) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidInput("mean must have dimension >= 1".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("correlated Gaussian mean".into()));
        }
        if covariance.dim() != mean.len() {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{} but mean has dimension {}",
                covariance.dim(),
                covariance.dim(),
                mean.len()
            )));
        }
        let chol = cholesky(&covariance)?;
        Ok(CorrelatedGaussian {
            mean,
            covariance,
            chol,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &SymmetricMatrix {
        &self.covariance
    }
}

#[derive(Debug, Clone)]
pub struct EmpiricalPool {
    source_path: Option<PathBuf>,
    pool: Sample,
    with_replacement: bool,
}

impl EmpiricalPool {
    pub fn new(pool: Sample, with_replacement: bool, source_path: Option<PathBuf>) -> Self {
        // Sample enforces n >= 2, the pool invariant.
        EmpiricalPool {
            source_path,
            pool,
            with_replacement,
        }
    }

    pub fn pool(&self) -> &Sample {
        &self.pool
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }
}

/// A data source able to sample and, for the parametric variants, evaluate
/// its log-density.
#[derive(Debug, Clone)]
pub enum GeneratorSpec {
    MixtureOfGaussians(MixtureOfGaussians),
    CorrelatedGaussian(CorrelatedGaussian),
    EmpiricalPool(EmpiricalPool),
}

impl GeneratorSpec {
    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        Ok(GeneratorSpec::MixtureOfGaussians(MixtureOfGaussians::new(
            components,
        )?))
    }

    pub fn correlated_gaussian(mean: Vec<f64>, covariance: SymmetricMatrix) -> Result<Self> {
        Ok(GeneratorSpec::CorrelatedGaussian(CorrelatedGaussian::new(
            mean, covariance,
        )?))
    }

    pub fn empirical_pool(pool: Sample, with_replacement: bool, source: Option<PathBuf>) -> Self {
        GeneratorSpec::EmpiricalPool(EmpiricalPool::new(pool, with_replacement, source))
    }

    /// A convenience constructor for an isotropic standard normal.
    pub fn standard_normal(d: usize) -> Result<Self> {
        Self::correlated_gaussian(vec![0.0; d], SymmetricMatrix::identity(d))
    }

    pub fn d(&self) -> usize {
        match self {
            GeneratorSpec::MixtureOfGaussians(g) => g.d,
            GeneratorSpec::CorrelatedGaussian(g) => g.mean.len(),
            GeneratorSpec::EmpiricalPool(g) => g.pool.d(),
        }
    }

    pub fn is_parametric(&self) -> bool {
        !matches!(self, GeneratorSpec::EmpiricalPool(_))
    }

    /// Draw `n` points: i.i.d. for the parametric variants, resampled rows
    /// for an empirical pool (with replacement when the pool says so).
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Sample> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "sample size must be >= 2, got {n}"
            )));
        }
        match self {
            GeneratorSpec::MixtureOfGaussians(g) => {
                let d = g.d;
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = g.components.len() - 1;
                    for (k, c) in g.components.iter().enumerate() {
                        acc += c.weight;
                        if u < acc {
                            chosen = k;
                            break;
                        }
                    }
                    let c = &g.components[chosen];
                    for i in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        data.push(c.mean[i] + c.diag_std[i] * z);
                    }
                }
                Sample::from_vec(data, n, d)
            }
            GeneratorSpec::CorrelatedGaussian(g) => {
                let d = g.mean.len();
                let mut data = Vec::with_capacity(n * d);
                let mut z = vec![0.0; d];
                for _ in 0..n {
                    for zi in &mut z {
                        *zi = rng.sample(StandardNormal);
                    }
                    let y = g.chol.matvec(&z);
                    data.extend(y.iter().zip(&g.mean).map(|(a, b)| a + b));
                }
                Sample::from_vec(data, n, d)
            }
            GeneratorSpec::EmpiricalPool(g) => {
                let pool_n = g.pool.n();
                let rows: Vec<usize> = if g.with_replacement {
                    (0..n).map(|_| rng.random_range(0..pool_n)).collect()
                } else {
                    if n > pool_n {
                        return Err(Error::PoolExhausted {
                            requested: n,
                            available: pool_n,
                        });
                    }
                    index::sample(rng, pool_n, n).into_vec()
                };
                let d = g.pool.d();
                let mut data = Vec::with_capacity(n * d);
                for i in rows {
                    data.extend_from_slice(g.pool.row(i));
                }
                Sample::from_vec(data, n, d)
            }
        }
    }

    /// log p(x) per row; mixtures use a log-sum-exp over components.
    pub fn log_pdf(&self, pts: &Sample) -> Result<Vec<f64>> {
        if pts.d() != self.d() {
            return Err(Error::InvalidInput(format!(
                "points have dimension {}, generator has {}",
                pts.d(),
                self.d()
            )));
        }
        match self {
            GeneratorSpec::MixtureOfGaussians(g) => {
                let d = g.d as f64;
                // Per-component constants: ln w_k - d/2 ln 2pi - sum ln sigma.
                let consts: Vec<f64> = g
                    .components
                    .iter()
                    .map(|c| {
                        c.weight.ln()
                            - 0.5 * d * LN_2PI
                            - c.diag_std.iter().map(|s| s.ln()).sum::<f64>()
                    })
                    .collect();
                let mut terms = vec![0.0; g.components.len()];
                Ok(pts
                    .rows()
                    .map(|x| {
                        for (t, (c, k)) in terms.iter_mut().zip(g.components.iter().zip(&consts)) {
                            let q: f64 = x
                                .iter()
                                .zip(c.mean.iter().zip(&c.diag_std))
                                .map(|(v, (m, s))| {
                                    let z = (v - m) / s;
                                    z * z
                                })
                                .sum();
                            *t = k - 0.5 * q;
                        }
                        log_sum_exp(&terms)
                    })
                    .collect())
            }
            GeneratorSpec::CorrelatedGaussian(g) => {
                let d = g.mean.len() as f64;
                let log_norm = -0.5 * d * LN_2PI - g.chol.log_diag_sum();
                let mut centered = vec![0.0; g.mean.len()];
                Ok(pts
                    .rows()
                    .map(|x| {
                        for (c, (v, m)) in centered.iter_mut().zip(x.iter().zip(&g.mean)) {
                            *c = v - m;
                        }
                        let u = g.chol.solve_forward(&centered);
                        log_norm - 0.5 * u.iter().map(|v| v * v).sum::<f64>()
                    })
                    .collect())
            }
            GeneratorSpec::EmpiricalPool(_) => Err(Error::DensityUnavailable(
                "empirical pools have no tractable density".into(),
            )),
        }
    }

    /// Per-dimension means and standard deviations: analytic for the
    /// parametric variants, population (1/n) moments of the pool otherwise.
    pub fn reference_stats(&self) -> ReferenceStats {
        match self {
            GeneratorSpec::MixtureOfGaussians(g) => {
                let d = g.d;
                let mut mean = vec![0.0; d];
                let mut second = vec![0.0; d];
                for c in &g.components {
                    for i in 0..d {
                        mean[i] += c.weight * c.mean[i];
                        second[i] +=
                            c.weight * (c.diag_std[i] * c.diag_std[i] + c.mean[i] * c.mean[i]);
                    }
                }
                let std = mean
                    .iter()
                    .zip(&second)
                    .map(|(m, s2)| (s2 - m * m).max(0.0).sqrt())
                    .collect();
                ReferenceStats { mean, std }
            }
            GeneratorSpec::CorrelatedGaussian(g) => ReferenceStats {
                mean: g.mean.clone(),
                std: g.covariance.diagonal().iter().map(|v| v.sqrt()).collect(),
            },
            GeneratorSpec::EmpiricalPool(g) => {
                let mean = g.pool.column_means();
                let n = g.pool.n() as f64;
                let d = g.pool.d();
                let mut var = vec![0.0; d];
                for row in g.pool.rows() {
                    for (v, (x, m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                        let c = x - m;
                        *v += c * c;
                    }
                }
                let std = var.iter().map(|v| (v / n).sqrt()).collect();
                ReferenceStats { mean, std }
            }
        }
    }

    /// A compact, stable JSON identity used in fingerprints and headers.
    pub fn identity(&self) -> serde_json::Value {
        match self {
            GeneratorSpec::MixtureOfGaussians(g) => {
                let payload = serde_json::to_string(&g.components).expect("serialize components");
                serde_json::json!({
                    "kind": "mixture_of_gaussians",
                    "d": g.d,
                    "components": g.components.len(),
                    "sha256": hex_digest(payload.as_bytes()),
                })
            }
            GeneratorSpec::CorrelatedGaussian(g) => {
                let mut bytes = Vec::new();
                for v in &g.mean {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                for row in g.covariance.to_dense() {
                    for v in row {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                serde_json::json!({
                    "kind": "correlated_gaussian",
                    "d": g.mean.len(),
                    "sha256": hex_digest(&bytes),
                })
            }
            GeneratorSpec::EmpiricalPool(g) => {
                let mut bytes = Vec::new();
                for v in g.pool.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                serde_json::json!({
                    "kind": "empirical_pool",
                    "d": g.pool.d(),
                    "n_pool": g.pool.n(),
                    "with_replacement": g.with_replacement,
                    "source_path": g.source_path.as_ref().map(|p| p.display().to_string()),
                    "sha256": hex_digest(&bytes),
                })
            }
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Numerically stable log(sum(exp(terms))).
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Declarative form of a generator, as it appears in config files and
/// preset registries. `build` resolves file-backed pools into memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum GeneratorConfig {
    MixtureOfGaussians {
        components: Vec<MixtureComponent>,
    },
    CorrelatedGaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    EmpiricalPool {
        source_path: PathBuf,
        #[serde(default = "default_true")]
        with_replacement: bool,
    },
}

fn default_true() -> bool {
    true
}

impl GeneratorConfig {
    /// Resolve into a runtime generator; `base_dir` anchors relative pool
    /// paths (typically the config file's directory).
    pub fn build(&self, base_dir: Option<&Path>) -> Result<GeneratorSpec> {
        match self {
            GeneratorConfig::MixtureOfGaussians { components } => {
                GeneratorSpec::mixture(components.clone())
            }
            GeneratorConfig::CorrelatedGaussian { mean, covariance } => {
                GeneratorSpec::correlated_gaussian(
                    mean.clone(),
                    SymmetricMatrix::from_dense(covariance)?,
                )
            }
            GeneratorConfig::EmpiricalPool {
                source_path,
                with_replacement,
            } => {
                let resolved = match base_dir {
                    Some(dir) if source_path.is_relative() => dir.join(source_path),
                    _ => source_path.clone(),
                };
                let pool = sample_io::read_sample(&resolved)?;
                Ok(GeneratorSpec::empirical_pool(
                    pool,
                    *with_replacement,
                    Some(resolved),
                ))
            }
        }
    }

    pub fn from_spec(spec: &GeneratorSpec) -> Option<Self> {
        match spec {
            GeneratorSpec::MixtureOfGaussians(g) => Some(GeneratorConfig::MixtureOfGaussians {
                components: g.components.clone(),
            }),
            GeneratorSpec::CorrelatedGaussian(g) => Some(GeneratorConfig::CorrelatedGaussian {
                mean: g.mean.clone(),
                covariance: g.covariance.to_dense(),
            }),
            GeneratorSpec::EmpiricalPool(g) => {
                g.source_path
                    .clone()
                    .map(|p| GeneratorConfig::EmpiricalPool {
                        source_path: p,
                        with_replacement: g.with_replacement,
                    })
            }
        }
    }
}
