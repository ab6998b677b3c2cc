//! The seven epsilon-parameterized deformations that turn a reference sample
//! into an alternative-hypothesis sample, plus change-of-variable
//! log-densities for the kinds where they are tractable.
//!
//! All randomness is consumed by [`draw`]; [`apply`] is a pure function of
//! the draw, so a deformed dataset is fully reproducible from its stream.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{GeneratorSpec, ReferenceStats};
use crate::linalg::robust_floor;
use crate::rng::RngStream;
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformationKind {
    /// Mean shift: y = x + delta, delta_I ~ U[-eps, eps].
    MuShift,
    /// Per-dimension variance inflation: y = mu + c (x - mu), c_I ~ U[1, 1+eps].
    SigmaDiag,
    /// Correlation shrinkage: an independent per-column row permutation
    /// touching a fraction eps of the rows. Marginals are exactly preserved.
    SigmaOffDiag,
    /// y = sign(x) |x|^(1+eps).
    PowPlus,
    /// y = sign(x) |x|^(1-eps).
    PowMinus,
    /// Additive per-entry N(0, eps) noise (eps is the standard deviation).
    NormalSmear,
    /// Additive per-entry U[-eps, eps] noise.
    UniformSmear,
}

impl DeformationKind {
    pub const ALL: [DeformationKind; 7] = [
        DeformationKind::MuShift,
        DeformationKind::SigmaDiag,
        DeformationKind::SigmaOffDiag,
        DeformationKind::PowPlus,
        DeformationKind::PowMinus,
        DeformationKind::NormalSmear,
        DeformationKind::UniformSmear,
    ];

    /// Kinds with a tractable change-of-variables density, usable by the
    /// exact likelihood-ratio statistic.
    pub fn density_tractable(self) -> bool {
        matches!(
            self,
            DeformationKind::MuShift
                | DeformationKind::SigmaDiag
                | DeformationKind::PowPlus
                | DeformationKind::PowMinus
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            DeformationKind::MuShift => "mu_shift",
            DeformationKind::SigmaDiag => "sigma_diag",
            DeformationKind::SigmaOffDiag => "sigma_off_diag",
            DeformationKind::PowPlus => "pow_plus",
            DeformationKind::PowMinus => "pow_minus",
            DeformationKind::NormalSmear => "normal_smear",
            DeformationKind::UniformSmear => "uniform_smear",
        }
    }
}

/// A deformation kind together with its strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    pub kind: DeformationKind,
    pub epsilon: f64,
}

impl DeformationSpec {
    pub fn new(kind: DeformationKind, epsilon: f64) -> Result<Self> {
        let spec = DeformationSpec { kind, epsilon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.kind == DeformationKind::SigmaOffDiag && self.epsilon > 1.0 {
            return Err(Error::InvalidInput(format!(
                "sigma_off_diag moves a row fraction; epsilon {} exceeds 1",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// All nuisance randomness for one deformed dataset, sampled once by
/// [`draw`].
#[derive(Debug, Clone, PartialEq)]
pub enum DeformationDraw {
    MuShift { shift: Vec<f64> },
    SigmaDiag { scale: Vec<f64> },
    SigmaOffDiag { perms: Vec<Vec<u32>> },
    PowPlus { exponent: f64 },
    PowMinus { exponent: f64 },
    NormalSmear { sigma: f64, noise: Vec<f64> },
    UniformSmear { halfwidth: f64, noise: Vec<f64> },
}

impl DeformationDraw {
    pub fn kind(&self) -> DeformationKind {
        match self {
            DeformationDraw::MuShift { .. } => DeformationKind::MuShift,
            DeformationDraw::SigmaDiag { .. } => DeformationKind::SigmaDiag,
            DeformationDraw::SigmaOffDiag { .. } => DeformationKind::SigmaOffDiag,
            DeformationDraw::PowPlus { .. } => DeformationKind::PowPlus,
            DeformationDraw::PowMinus { .. } => DeformationKind::PowMinus,
            DeformationDraw::NormalSmear { .. } => DeformationKind::NormalSmear,
            DeformationDraw::UniformSmear { .. } => DeformationKind::UniformSmear,
        }
    }
}

/// A uniformly random fixed-point-free permutation of 0..k (k >= 2), by
/// rejection from uniform shuffles.
fn derangement(k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..k).collect();
    loop {
        for i in (1..k).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().all(|(i, &p)| p != i) {
            return perm;
        }
    }
}

/// Sample the nuisance parameters of one deformed dataset of shape `n x d`.
pub fn draw(
    spec: &DeformationSpec,
    n: usize,
    d: usize,
    rng: &mut RngStream,
) -> Result<DeformationDraw> {
    spec.validate()?;
    if n < 2 || d < 1 {
        return Err(Error::InvalidInput(format!(
            "deformation target must be at least 2 x 1, got {n} x {d}"
        )));
    }
    let eps = spec.epsilon;
    if eps == 0.0 {
        // Exact identity draws; no randomness consumed.
        return Ok(match spec.kind {
            DeformationKind::MuShift => DeformationDraw::MuShift {
                shift: vec![0.0; d],
            },
            DeformationKind::SigmaDiag => DeformationDraw::SigmaDiag {
                scale: vec![1.0; d],
            },
            DeformationKind::SigmaOffDiag => DeformationDraw::SigmaOffDiag {
                perms: vec![(0..n as u32).collect(); d],
            },
            DeformationKind::PowPlus => DeformationDraw::PowPlus { exponent: 1.0 },
            DeformationKind::PowMinus => DeformationDraw::PowMinus { exponent: 1.0 },
            DeformationKind::NormalSmear => DeformationDraw::NormalSmear {
                sigma: 0.0,
                noise: vec![0.0; n * d],
            },
            DeformationKind::UniformSmear => DeformationDraw::UniformSmear {
                halfwidth: 0.0,
                noise: vec![0.0; n * d],
            },
        });
    }
    Ok(match spec.kind {
        DeformationKind::MuShift => DeformationDraw::MuShift {
            shift: (0..d).map(|_| rng.random_range(-eps..=eps)).collect(),
        },
        DeformationKind::SigmaDiag => DeformationDraw::SigmaDiag {
            scale: (0..d).map(|_| rng.random_range(1.0..=1.0 + eps)).collect(),
        },
        DeformationKind::SigmaOffDiag => {
            let moved = robust_floor(eps * n as f64) as usize;
            let perms = (0..d)
                .map(|_| {
                    let mut perm: Vec<u32> = (0..n as u32).collect();
                    if moved >= 2 {
                        let mut selected = index::sample(rng, n, moved).into_vec();
                        selected.sort_unstable();
                        let cycle = derangement(moved, rng);
                        for (a, &row) in selected.iter().enumerate() {
                            perm[row] = selected[cycle[a]] as u32;
                        }
                    }
                    perm
                })
                .collect();
            DeformationDraw::SigmaOffDiag { perms }
        }
        DeformationKind::PowPlus => DeformationDraw::PowPlus {
            exponent: 1.0 + eps,
        },
        DeformationKind::PowMinus => DeformationDraw::PowMinus {
            exponent: 1.0 - eps,
        },
        DeformationKind::NormalSmear => DeformationDraw::NormalSmear {
            sigma: eps,
            noise: (0..n * d)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    eps * z
                })
                .collect(),
        },
        DeformationKind::UniformSmear => DeformationDraw::UniformSmear {
            halfwidth: eps,
            noise: (0..n * d).map(|_| rng.random_range(-eps..=eps)).collect(),
        },
    })
}

#[inline]
fn signed_pow(x: f64, exponent: f64) -> f64 {
    // x = 0 maps to 0; exponent = 1 must be the exact identity.
    if x == 0.0 || exponent == 1.0 {
        x
    } else {
        x.signum() * x.abs().powf(exponent)
    }
}

/// Apply a drawn deformation to a sample. `stats` (reference means) is
/// required only by `SigmaDiag`, which recenters around the reference mean.
pub fn apply(draw: &DeformationDraw, x: &Sample, stats: Option<&ReferenceStats>) -> Result<Sample> {
    let (n, d) = (x.n(), x.d());
    match draw {
        DeformationDraw::MuShift { shift } => {
            if shift.len() != d {
                return Err(dim_mismatch(shift.len(), d));
            }
            let mut data = Vec::with_capacity(n * d);
            for row in x.rows() {
                for (v, s) in row.iter().zip(shift) {
                    // s == 0 must be the bit-exact identity.
                    data.push(if *s == 0.0 { *v } else { v + s });
                }
            }
            Sample::from_vec(data, n, d)
        }
        DeformationDraw::SigmaDiag { scale } => {
            if scale.len() != d {
                return Err(dim_mismatch(scale.len(), d));
            }
            let stats = stats.ok_or_else(|| {
                Error::InvalidInput("sigma_diag deformation needs reference stats".into())
            })?;
            if stats.mean.len() != d {
                return Err(dim_mismatch(stats.mean.len(), d));
            }
            let mut data = Vec::with_capacity(n * d);
            for row in x.rows() {
                for ((v, c), mu) in row.iter().zip(scale).zip(&stats.mean) {
                    // c == 1 short-circuits: mu + (v - mu) is not bit-exact.
                    data.push(if *c == 1.0 { *v } else { mu + c * (v - mu) });
                }
            }
            Sample::from_vec(data, n, d)
        }
        DeformationDraw::SigmaOffDiag { perms } => {
            if perms.len() != d {
                return Err(dim_mismatch(perms.len(), d));
            }
            if perms.iter().any(|p| p.len() != n) {
                return Err(Error::InvalidInput(format!(
                    "permutation length does not match {n} rows"
                )));
            }
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                for (j, perm) in perms.iter().enumerate() {
                    data[i * d + j] = x.row(perm[i] as usize)[j];
                }
            }
            Sample::from_vec(data, n, d)
        }
        DeformationDraw::PowPlus { exponent } | DeformationDraw::PowMinus { exponent } => {
            let data = x.data().iter().map(|v| signed_pow(*v, *exponent)).collect();
            Sample::from_vec(data, n, d)
        }
        DeformationDraw::NormalSmear { noise, .. }
        | DeformationDraw::UniformSmear { noise, .. } => {
            if noise.len() != n * d {
                return Err(Error::InvalidInput(format!(
                    "noise buffer of {} does not match {n} x {d}",
                    noise.len()
                )));
            }
            let data = x
                .data()
                .iter()
                .zip(noise)
                .map(|(v, e)| if *e == 0.0 { *v } else { v + e })
                .collect();
            Sample::from_vec(data, n, d)
        }
    }
}

/// log q(y) for the deformed density, via change of variables from the
/// reference log-density. Only MuShift, SigmaDiag and the power kinds are
/// tractable; the others report a density-unavailable error.
pub fn deformed_log_pdf(
    g: &GeneratorSpec,
    draw: &DeformationDraw,
    pts: &Sample,
) -> Result<Vec<f64>> {
    if !g.is_parametric() {
        return Err(Error::DensityUnavailable(
            "reference generator has no tractable density".into(),
        ));
    }
    let d = pts.d();
    match draw {
        DeformationDraw::MuShift { shift } => {
            if shift.len() != d {
                return Err(dim_mismatch(shift.len(), d));
            }
            let data = pts
                .data()
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let s = shift[idx % d];
                    if s == 0.0 {
                        *v
                    } else {
                        v - s
                    }
                })
                .collect();
            g.log_pdf(&Sample::from_vec(data, pts.n(), d)?)
        }
        DeformationDraw::SigmaDiag { scale } => {
            if scale.len() != d {
                return Err(dim_mismatch(scale.len(), d));
            }
            let stats = g.reference_stats();
            let log_jac: f64 = scale.iter().map(|c| c.ln()).sum();
            let data = pts
                .data()
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let j = idx % d;
                    let c = scale[j];
                    if c == 1.0 {
                        *v
                    } else {
                        stats.mean[j] + (v - stats.mean[j]) / c
                    }
                })
                .collect();
            let lp = g.log_pdf(&Sample::from_vec(data, pts.n(), d)?)?;
            Ok(lp.into_iter().map(|v| v - log_jac).collect())
        }
        DeformationDraw::PowPlus { exponent } | DeformationDraw::PowMinus { exponent } => {
            let e = *exponent;
            if e == 1.0 {
                return g.log_pdf(pts);
            }
            if e <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "power deformation with exponent {e} has no tractable density"
                )));
            }
            let inv = 1.0 / e;
            let data: Vec<f64> = pts.data().iter().map(|v| signed_pow(*v, inv)).collect();
            let lp = g.log_pdf(&Sample::from_vec(data, pts.n(), d)?)?;
            let ln_e = e.ln();
            Ok(lp
                .into_iter()
                .enumerate()
                .map(|(i, base)| {
                    let row = &pts.data()[i * d..(i + 1) * d];
                    let jac: f64 = row.iter().map(|y| (inv - 1.0) * y.abs().ln() - ln_e).sum();
                    base + jac
                })
                .collect())
        }
        DeformationDraw::SigmaOffDiag { .. } => Err(Error::DensityUnavailable(
            "per-column permutations have no closed-form density".into(),
        )),
        DeformationDraw::NormalSmear { .. } | DeformationDraw::UniformSmear { .. } => {
            Err(Error::DensityUnavailable(
                "additive smearing has no closed-form deformed density here".into(),
            ))
        }
    }
}

fn dim_mismatch(got: usize, want: usize) -> Error {
    Error::InvalidInput(format!(
        "dimension mismatch: draw has {got}, sample has {want}"
    ))
}
