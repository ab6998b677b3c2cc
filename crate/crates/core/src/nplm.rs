//! The NPLM two-sample statistic: a Nyström kernel logistic classifier
//! trained on the pooled samples with a weighted cross-entropy risk, scored
//! in-sample with the extended-likelihood statistic, plus the
//! sigma / M / lambda tuning pipeline.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::linalg::{
    cholesky, empirical_quantile, pairwise_distances, SymmetricMatrix, DEFAULT_MAX_PAIRWISE_POINTS,
};
use crate::rng::RngStream;
use crate::sample::Sample;

/// Scores are clipped to this magnitude inside exp() when evaluating the
/// statistic; values that large only arise for pathological lambda ~ 0.
const SCORE_CLIP: f64 = 30.0;

/// The three NPLM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NplmHyperparams {
    /// Gaussian kernel width.
    pub sigma: f64,
    /// Number of Nystrom centers.
    pub m_centers: usize,
    /// Regularization weight on w^T K_MM w.
    pub lambda: f64,
}

impl NplmHyperparams {
    pub fn new(sigma: f64, m_centers: usize, lambda: f64) -> Result<Self> {
        let hp = NplmHyperparams {
            sigma,
            m_centers,
            lambda,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel width must be positive, got {}",
                self.sigma
            )));
        }
        if self.m_centers == 0 {
            return Err(Error::InvalidInput("need at least one center".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Solver knobs for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_newton_iters: usize,
    /// Gradient tolerance per data point: converged when
    /// ||grad|| <= grad_tol_per_point * (n + m).
    pub grad_tol_per_point: f64,
    /// 0 means automatic (M + 50).
    pub max_cg_iters: usize,
    pub cg_rel_tol: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_newton_iters: 50,
            grad_tol_per_point: 1e-6,
            max_cg_iters: 0,
            cg_rel_tol: 1e-10,
            max_backtracks: 40,
        }
    }
}

/// The trained classifier: Nystrom centers, weights, and context.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    centers: Vec<f64>, // M x d row-major
    m_centers: usize,
    d: usize,
    weights: Vec<f64>,
    hyperparams: NplmHyperparams,
    class_ratio: f64, // m / n
}

impl KernelModel {
    pub fn m_centers(&self) -> usize {
        self.m_centers
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn hyperparams(&self) -> &NplmHyperparams {
        &self.hyperparams
    }

    pub fn class_ratio(&self) -> f64 {
        self.class_ratio
    }

    /// Kernel norm w^T K_MM w of the fitted function.
    pub fn kernel_norm_sq(&self) -> f64 {
        let kmm = kernel_matrix(
            &self.centers,
            self.m_centers,
            self.d,
            &self.centers,
            self.m_centers,
            self.hyperparams.sigma,
        );
        let kw = mat_vec(&kmm, self.m_centers, &self.weights);
        dot(&self.weights, &kw)
    }
}

/// Convergence diagnostics from a fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Loss after the initial point and after each accepted Newton step.
    pub loss_trace: Vec<f64>,
}

#[inline]
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian kernel matrix between two row-major point sets.
fn kernel_matrix(
    rows: &[f64],
    n: usize,
    d: usize,
    centers: &[f64],
    m: usize,
    sigma: f64,
) -> Vec<f64> {
    let inv_two_s2 = 1.0 / (2.0 * sigma * sigma);
    let mut out = vec![0.0; n * m];
    out.par_chunks_mut(m).enumerate().for_each(|(i, orow)| {
        let zi = &rows[i * d..(i + 1) * d];
        for (j, o) in orow.iter_mut().enumerate() {
            let cj = &centers[j * d..(j + 1) * d];
            let sq: f64 = zi.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum();
            *o = (-sq * inv_two_s2).exp();
        }
    });
    out
}

/// y = A v for a row-major matrix with `cols` columns.
fn mat_vec(a: &[f64], cols: usize, v: &[f64]) -> Vec<f64> {
    a.par_chunks(cols)
        .map(|row| row.iter().zip(v).map(|(k, x)| k * x).sum())
        .collect()
}

/// y = A^T u, accumulated over fixed-size row blocks so the reduction order
/// (and hence the result) is independent of the worker count.
fn mat_t_vec(a: &[f64], cols: usize, u: &[f64]) -> Vec<f64> {
    const BLOCK: usize = 1024;
    let partials: Vec<Vec<f64>> = a
        .par_chunks(BLOCK * cols)
        .zip(u.par_chunks(BLOCK))
        .map(|(block, ub)| {
            let mut acc = vec![0.0; cols];
            for (row, &ui) in block.chunks_exact(cols).zip(ub) {
                if ui != 0.0 {
                    for (s, k) in acc.iter_mut().zip(row) {
                        *s += ui * k;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; cols];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Weighted binary cross-entropy of the pooled scores: the first `n_x`
/// entries of `f` belong to class 0 (reference, weighted m/n), the rest to
/// class 1 (candidate). Returns the mean over all points.
fn data_loss(f: &[f64], n_x: usize, w0: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &v) in f.iter().enumerate() {
        acc += if i < n_x {
            w0 * softplus(v)
        } else {
            softplus(-v)
        };
    }
    acc / f.len() as f64
}

/// d loss / d f per point (same layout as `data_loss`), already divided by
/// nothing: the 1/(n+m) factor is applied by the caller.
fn loss_slope(f: &[f64], n_x: usize, w0: f64) -> Vec<f64> {
    f.iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < n_x {
                w0 * sigmoid(v)
            } else {
                -sigmoid(-v)
            }
        })
        .collect()
}

/// Per-point logistic curvature with class weights.
fn loss_curvature(f: &[f64], n_x: usize, w0: f64) -> Vec<f64> {
    f.iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = sigmoid(v);
            let wt = if i < n_x { w0 } else { 1.0 };
            wt * s * (1.0 - s)
        })
        .collect()
}

struct Pcg<'a> {
    chol: &'a crate::linalg::LowerTriangular,
}

impl Pcg<'_> {
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.chol.solve_backward(&self.chol.solve_forward(r))
    }

    fn solve(
        &self,
        apply_h: impl Fn(&[f64]) -> Vec<f64>,
        b: &[f64],
        rel_tol: f64,
        max_iters: usize,
    ) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        let mut r = b.to_vec();
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return x;
        }
        let tol = rel_tol * b_norm;
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..max_iters {
            let hp = apply_h(&p);
            let php = dot(&p, &hp);
            if php <= 0.0 || !php.is_finite() {
                break;
            }
            let alpha = rz / php;
            for ((xi, pi), (ri, hi)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&hp)) {
                *xi += alpha * pi;
                *ri -= alpha * hi;
            }
            if dot(&r, &r).sqrt() <= tol {
                break;
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        x
    }
}

/// Fit the Nystrom kernel logistic model by damped Newton iterations, each
/// step solved with preconditioned conjugate gradient (Cholesky of K_MM).
pub fn fit_with_report(
    x: &Sample,
    y: &Sample,
    hp: &NplmHyperparams,
    rng: &mut RngStream,
    solver: &SolverConfig,
) -> Result<(KernelModel, FitReport)> {
    if x.d() != y.d() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            x.d(),
            y.d()
        )));
    }
    hp.validate()?;
    let (n_x, n_y, d) = (x.n(), y.n(), x.d());
    let n_total = n_x + n_y;
    let m = hp.m_centers;
    if m > n_total {
        return Err(Error::InvalidInput(format!(
            "m_centers {m} exceeds pooled size {n_total}"
        )));
    }
    let w0 = n_y as f64 / n_x as f64;

    let mut pooled = Vec::with_capacity(n_total * d);
    pooled.extend_from_slice(x.data());
    pooled.extend_from_slice(y.data());

    // Centers: uniform without replacement from the pooled rows.
    let mut picked = index::sample(rng, n_total, m).into_vec();
    picked.sort_unstable();
    let mut centers = Vec::with_capacity(m * d);
    for &i in &picked {
        centers.extend_from_slice(&pooled[i * d..(i + 1) * d]);
    }

    let knm = kernel_matrix(&pooled, n_total, d, &centers, m, hp.sigma);
    let kmm = kernel_matrix(&centers, m, d, &centers, m, hp.sigma);

    // Jitter for rank safety of both the preconditioner and the Hessian.
    let trace: f64 = (0..m).map(|j| kmm[j * m + j]).sum();
    let tau = 1e-10 * trace / m as f64;
    let chol = {
        let mut shift = tau;
        loop {
            let mut reg = SymmetricMatrix::zeros(m);
            for i in 0..m {
                for j in 0..=i {
                    reg.set(i, j, kmm[i * m + j] + if i == j { shift } else { 0.0 });
                }
            }
            match cholesky(&reg) {
                Ok(l) => break l,
                Err(_) if shift < 1e-2 * trace.max(1.0) => shift *= 100.0,
                Err(e) => return Err(e),
            }
        }
    };
    let pcg = Pcg { chol: &chol };
    let max_cg = if solver.max_cg_iters == 0 {
        m + 50
    } else {
        solver.max_cg_iters
    };

    let lambda = hp.lambda;
    let inv_n = 1.0 / n_total as f64;
    let tol = solver.grad_tol_per_point * n_total as f64;

    // Zero weights make f identically 0, the exact null model.
    let mut w = vec![0.0; m];
    let mut f = vec![0.0; n_total];
    let mut kmm_w = vec![0.0; m];
    let mut loss = data_loss(&f, n_x, w0); // regularizer is 0 at w = 0
    let mut trace_loss = vec![loss];
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..solver.max_newton_iters {
        iterations = iter;
        let slope = loss_slope(&f, n_x, w0);
        let mut grad = mat_t_vec(&knm, m, &slope);
        for (g, kw) in grad.iter_mut().zip(&kmm_w) {
            *g = *g * inv_n + 2.0 * lambda * kw;
        }
        grad_norm = dot(&grad, &grad).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("gradient during NPLM fit".into()));
        }
        if grad_norm <= tol {
            converged = true;
            break;
        }

        let curv = loss_curvature(&f, n_x, w0);
        let apply_h = |v: &[f64]| -> Vec<f64> {
            let kv = mat_vec(&knm, m, v);
            let dkv: Vec<f64> = kv.iter().zip(&curv).map(|(a, c)| a * c).collect();
            let mut h = mat_t_vec(&knm, m, &dkv);
            let kmv = mat_vec(&kmm, m, v);
            for ((hi, ki), vi) in h.iter_mut().zip(&kmv).zip(v) {
                *hi = *hi * inv_n + 2.0 * lambda * ki + tau * vi;
            }
            h
        };
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut direction = pcg.solve(apply_h, &rhs, solver.cg_rel_tol, max_cg);
        let mut dir_slope = dot(&grad, &direction);
        if !(dir_slope < 0.0) {
            // CG returned a non-descent direction (numerical breakdown);
            // fall back to steepest descent.
            direction = rhs.clone();
            dir_slope = -grad_norm * grad_norm;
        }

        let knm_dir = mat_vec(&knm, m, &direction);
        let kmm_dir = mat_vec(&kmm, m, &direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..solver.max_backtracks {
            let f_new: Vec<f64> = f.iter().zip(&knm_dir).map(|(a, b)| a + step * b).collect();
            let w_new: Vec<f64> = w
                .iter()
                .zip(&direction)
                .map(|(a, b)| a + step * b)
                .collect();
            let kmm_w_new: Vec<f64> = kmm_w
                .iter()
                .zip(&kmm_dir)
                .map(|(a, b)| a + step * b)
                .collect();
            let loss_new = data_loss(&f_new, n_x, w0) + lambda * dot(&w_new, &kmm_w_new);
            if loss_new.is_finite() && loss_new <= loss + 1e-4 * step * dir_slope {
                f = f_new;
                w = w_new;
                kmm_w = kmm_w_new;
                loss = loss_new;
                trace_loss.push(loss);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No decrease along the Newton direction: stationary to line
            // search resolution.
            break;
        }
    }

    if !converged {
        // Re-evaluate in case the loop ended by line-search stagnation at
        // an acceptable gradient.
        let slope = loss_slope(&f, n_x, w0);
        let mut grad = mat_t_vec(&knm, m, &slope);
        for (g, kw) in grad.iter_mut().zip(&kmm_w) {
            *g = *g * inv_n + 2.0 * lambda * kw;
        }
        grad_norm = dot(&grad, &grad).sqrt();
        converged = grad_norm <= tol;
    }

    if !converged {
        return Err(Error::SolverFailure {
            grad_norm,
            iterations: solver.max_newton_iters,
            tolerance: tol,
        });
    }

    Ok((
        KernelModel {
            centers,
            m_centers: m,
            d,
            weights: w,
            hyperparams: *hp,
            class_ratio: n_y as f64 / n_x as f64,
        },
        FitReport {
            iterations,
            grad_norm,
            converged,
            loss_trace: trace_loss,
        },
    ))
}

/// Fit the classifier; see [`fit_with_report`] for diagnostics.
pub fn fit(
    x: &Sample,
    y: &Sample,
    hp: &NplmHyperparams,
    rng: &mut RngStream,
    solver: &SolverConfig,
) -> Result<KernelModel> {
    fit_with_report(x, y, hp, rng, solver).map(|(model, _)| model)
}

/// Evaluate the fitted function f_w at each row of `pts`.
pub fn kernel_eval(model: &KernelModel, pts: &Sample) -> Result<Vec<f64>> {
    if pts.d() != model.d {
        return Err(Error::InvalidInput(format!(
            "points have dimension {}, model has {}",
            pts.d(),
            model.d
        )));
    }
    let k = kernel_matrix(
        pts.data(),
        pts.n(),
        model.d,
        &model.centers,
        model.m_centers,
        model.hyperparams.sigma,
    );
    let f = mat_vec(&k, model.m_centers, &model.weights);
    if let Some(bad) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score at row {bad}")));
    }
    Ok(f)
}

/// The extended-likelihood statistic from per-point scores:
/// t = -2 [ (m/n) sum_x (e^{f} - 1) - sum_y f ], with f clipped to +-30
/// inside the exponential.
pub fn nplm_statistic_from_scores(f_x: &[f64], f_y: &[f64]) -> f64 {
    let ratio = f_y.len() as f64 / f_x.len() as f64;
    let sum_x: f64 = f_x
        .iter()
        .map(|f| f.clamp(-SCORE_CLIP, SCORE_CLIP).exp() - 1.0)
        .sum();
    let sum_y: f64 = f_y.iter().sum();
    -2.0 * (ratio * sum_x - sum_y)
}

/// Evaluate the NPLM statistic in-sample on the full training pair.
pub fn nplm_statistic(model: &KernelModel, x: &Sample, y: &Sample) -> Result<f64> {
    let f_x = kernel_eval(model, x)?;
    let f_y = kernel_eval(model, y)?;
    let t = nplm_statistic_from_scores(&f_x, &f_y);
    if !t.is_finite() {
        return Err(Error::NonFinite("nplm statistic".into()));
    }
    Ok(t)
}

/// Train-and-score composite: the NPLM two-sample test statistic.
pub fn nplm_test(
    x: &Sample,
    y: &Sample,
    hp: &NplmHyperparams,
    rng: &mut RngStream,
    solver: &SolverConfig,
) -> Result<f64> {
    let model = fit(x, y, hp, rng, solver)?;
    nplm_statistic(&model, x, y)
}

/// Empirical risk of Eq.-style weighted cross-entropy plus kernel-norm
/// regularizer, evaluated at arbitrary weights with the model's centers.
/// Used by gradient checks and diagnostics.
pub fn empirical_risk(x: &Sample, y: &Sample, model: &KernelModel, weights: &[f64]) -> Result<f64> {
    if weights.len() != model.m_centers {
        return Err(Error::InvalidInput("weight length mismatch".into()));
    }
    let (n_x, d) = (x.n(), x.d());
    let n_total = n_x + y.n();
    let mut pooled = Vec::with_capacity(n_total * d);
    pooled.extend_from_slice(x.data());
    pooled.extend_from_slice(y.data());
    let knm = kernel_matrix(
        &pooled,
        n_total,
        d,
        &model.centers,
        model.m_centers,
        model.hyperparams.sigma,
    );
    let kmm = kernel_matrix(
        &model.centers,
        model.m_centers,
        d,
        &model.centers,
        model.m_centers,
        model.hyperparams.sigma,
    );
    let f = mat_vec(&knm, model.m_centers, weights);
    let w0 = y.n() as f64 / n_x as f64;
    let kw = mat_vec(&kmm, model.m_centers, weights);
    Ok(data_loss(&f, n_x, w0) + model.hyperparams.lambda * dot(weights, &kw))
}

/// Analytic gradient of [`empirical_risk`] at the given weights.
pub fn risk_gradient(
    x: &Sample,
    y: &Sample,
    model: &KernelModel,
    weights: &[f64],
) -> Result<Vec<f64>> {
    if weights.len() != model.m_centers {
        return Err(Error::InvalidInput("weight length mismatch".into()));
    }
    let (n_x, d) = (x.n(), x.d());
    let n_total = n_x + y.n();
    let mut pooled = Vec::with_capacity(n_total * d);
    pooled.extend_from_slice(x.data());
    pooled.extend_from_slice(y.data());
    let knm = kernel_matrix(
        &pooled,
        n_total,
        d,
        &model.centers,
        model.m_centers,
        model.hyperparams.sigma,
    );
    let kmm = kernel_matrix(
        &model.centers,
        model.m_centers,
        d,
        &model.centers,
        model.m_centers,
        model.hyperparams.sigma,
    );
    let f = mat_vec(&knm, model.m_centers, weights);
    let w0 = y.n() as f64 / n_x as f64;
    let slope = loss_slope(&f, n_x, w0);
    let mut grad = mat_t_vec(&knm, model.m_centers, &slope);
    let kw = mat_vec(&kmm, model.m_centers, weights);
    let inv_n = 1.0 / n_total as f64;
    for (g, k) in grad.iter_mut().zip(&kw) {
        *g = *g * inv_n + 2.0 * model.hyperparams.lambda * k;
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Hyperparameter tuning
// ---------------------------------------------------------------------------

/// Bin edges and raw counts of the pairwise-distance distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Result of the kernel-width heuristic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaTuning {
    pub sigma: f64,
    pub histogram: DistanceHistogram,
    pub n_peaks: usize,
    /// Distance cutoff of the first-peak segment when multimodal.
    pub first_peak_cut: Option<f64>,
}

/// Kernel width heuristic: the requested percentile (default 0.9) of the
/// pairwise distances among reference points. If the distance distribution
/// is multimodal the percentile is taken over the first-peak segment only
/// (below the first inter-peak valley), which lands on the right tail of
/// the first peak.
pub fn tune_sigma(reference: &Sample, percentile: f64, rng: &mut RngStream) -> Result<SigmaTuning> {
    let mut dists = pairwise_distances(reference, DEFAULT_MAX_PAIRWISE_POINTS, rng)?;
    dists.sort_by(f64::total_cmp);
    let max = *dists.last().unwrap();
    if max <= 0.0 {
        return Err(Error::DegenerateDistances);
    }
    let histogram = build_histogram(&dists);
    let smoothed = moving_average(&histogram.counts, 2);
    let peaks = detect_peaks(&smoothed);
    if peaks.len() <= 1 {
        return Ok(SigmaTuning {
            sigma: empirical_quantile(&dists, percentile)?,
            histogram,
            n_peaks: peaks.len(),
            first_peak_cut: None,
        });
    }
    // Valley between the first two peaks; restrict to distances below it.
    let (p1, p2) = (peaks[0], peaks[1]);
    let valley = (p1 + 1..p2)
        .min_by(|&a, &b| smoothed[a].total_cmp(&smoothed[b]))
        .unwrap_or(p1 + 1);
    let cut = 0.5 * (histogram.edges[valley] + histogram.edges[valley + 1]);
    let split = dists.partition_point(|&v| v < cut);
    let first_segment = &dists[..split.max(1)];
    Ok(SigmaTuning {
        sigma: empirical_quantile(first_segment, percentile)?,
        histogram,
        n_peaks: peaks.len(),
        first_peak_cut: Some(cut),
    })
}

/// Freedman-Diaconis histogram (falls back to a sqrt rule for zero IQR).
fn build_histogram(sorted: &[f64]) -> DistanceHistogram {
    let k = sorted.len();
    let lo = sorted[0];
    let hi = sorted[k - 1];
    let iqr = empirical_quantile(sorted, 0.75).unwrap() - empirical_quantile(sorted, 0.25).unwrap();
    let width = 2.0 * iqr / (k as f64).cbrt();
    let bins = if width > 0.0 && (hi - lo) > 0.0 {
        (((hi - lo) / width).ceil() as usize).clamp(1, 2000)
    } else if hi > lo {
        ((k as f64).sqrt().ceil() as usize).clamp(1, 2000)
    } else {
        1
    };
    let bin_width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0u64; bins];
    for &v in sorted {
        let mut idx = ((v - lo) / bin_width) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * bin_width).collect();
    DistanceHistogram { edges, counts }
}

fn moving_average(counts: &[u64], half_window: usize) -> Vec<f64> {
    let n = counts.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_window);
            let hi = (i + half_window).min(n - 1);
            let sum: u64 = counts[lo..=hi].iter().sum();
            sum as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// Local maxima of the smoothed histogram that exceed 5% of the global
/// maximum and are separated from every taller accepted peak by a valley
/// dipping at least 20% below the candidate. Returned in bin order.
fn detect_peaks(smoothed: &[f64]) -> Vec<usize> {
    let b = smoothed.len();
    if b == 0 {
        return Vec::new();
    }
    let smax = smoothed.iter().cloned().fold(0.0f64, f64::max);
    let floor = 0.05 * smax;
    let window = 2usize;
    let mut candidates = Vec::new();
    for i in 0..b {
        if smoothed[i] <= floor {
            continue;
        }
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(b - 1);
        if (lo..=hi).all(|j| smoothed[j] <= smoothed[i]) {
            candidates.push(i);
        }
    }
    // Collapse runs of nearby candidates (plateaus) to their highest bin.
    let mut groups: Vec<usize> = Vec::new();
    for &c in &candidates {
        match groups.last() {
            Some(&last) if c <= last + window => {
                if smoothed[c] > smoothed[last] {
                    *groups.last_mut().unwrap() = c;
                }
            }
            _ => groups.push(c),
        }
    }
    // Prominence pruning.
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| smoothed[groups[b]].total_cmp(&smoothed[groups[a]]));
    let mut accepted: Vec<usize> = Vec::new();
    for gi in order {
        let c = groups[gi];
        let ok = accepted.iter().all(|&a| {
            let (lo, hi) = if a < c { (a, c) } else { (c, a) };
            let valley = smoothed[lo + 1..hi]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            valley <= 0.8 * smoothed[c]
        });
        if ok {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// One evaluated cell of the (M, lambda) tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCell {
    pub m_centers: usize,
    pub lambda: f64,
    pub mean_t0: f64,
    pub std_t0: f64,
    pub mean_wall_time_seconds: f64,
}

/// Tuning outcome: the chosen (sigma, M, lambda) with the evidence grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningReport {
    pub sigma_chosen: f64,
    pub distance_histogram: DistanceHistogram,
    pub grid: Vec<TuningCell>,
    pub chosen_m_centers: usize,
    pub chosen_lambda: f64,
    pub plateau_found: bool,
}

impl TuningReport {
    pub fn chosen_hyperparams(&self) -> NplmHyperparams {
        NplmHyperparams {
            sigma: self.sigma_chosen,
            m_centers: self.chosen_m_centers,
            lambda: self.chosen_lambda,
        }
    }
}

/// Grid search over centers and regularization: each cell averages the null
/// statistic and wall time over `repeats` reference-vs-reference tests. The
/// chosen cell is the smallest M on the t0 plateau (mean within 5% of the
/// next larger M with overlapping one-sigma bands) at the smallest lambda
/// whose plateau-cell wall time fits the budget.
#[allow(clippy::too_many_arguments)]
pub fn scan_m_lambda(
    g: &GeneratorSpec,
    n: usize,
    m: usize,
    sigma: f64,
    m_grid: &[usize],
    lambda_grid: &[f64],
    repeats: usize,
    time_budget_seconds: Option<f64>,
    rng: &RngStream,
) -> Result<TuningReport> {
    if m_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty tuning grid".into()));
    }
    if repeats < 2 {
        return Err(Error::InvalidInput(
            "tuning needs at least 2 repeats".into(),
        ));
    }
    if lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidInput("lambda grid must be positive".into()));
    }
    let floor = ((n + m) as f64).sqrt().ceil() as usize;
    for &mc in m_grid {
        if mc < floor {
            log::warn!("m_centers {mc} is below the sqrt(n+m) = {floor} guideline");
        }
        if mc > n + m {
            return Err(Error::InvalidInput(format!(
                "m_centers {mc} exceeds pooled size {}",
                n + m
            )));
        }
    }
    let mut m_grid = m_grid.to_vec();
    m_grid.sort_unstable();
    let mut lambda_grid = lambda_grid.to_vec();
    lambda_grid.sort_by(f64::total_cmp);

    let solver = SolverConfig::default();
    let mut grid = Vec::with_capacity(m_grid.len() * lambda_grid.len());
    for (li, &lambda) in lambda_grid.iter().enumerate() {
        for (mi, &m_centers) in m_grid.iter().enumerate() {
            let hp = NplmHyperparams {
                sigma,
                m_centers,
                lambda,
            };
            let cell_id = (li * m_grid.len() + mi) as u64;
            let cell_rng = rng.derive(cell_id);
            let results: Vec<(f64, f64)> = (0..repeats)
                .into_par_iter()
                .map(|r| -> Result<(f64, f64)> {
                    let s = cell_rng.derive(r as u64);
                    let x = g.sample(n, &mut s.derive(0))?;
                    let y = g.sample(m, &mut s.derive(1))?;
                    let start = Instant::now();
                    let t = nplm_test(&x, &y, &hp, &mut s.derive(2), &solver)?;
                    Ok((t, start.elapsed().as_secs_f64()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = results.iter().map(|(t, _)| t).sum::<f64>() / repeats as f64;
            let var = results
                .iter()
                .map(|(t, _)| (t - mean) * (t - mean))
                .sum::<f64>()
                / (repeats as f64 - 1.0);
            let secs = results.iter().map(|(_, s)| s).sum::<f64>() / repeats as f64;
            grid.push(TuningCell {
                m_centers,
                lambda,
                mean_t0: mean,
                std_t0: var.sqrt(),
                mean_wall_time_seconds: secs,
            });
        }
    }

    let budget = time_budget_seconds.unwrap_or(f64::INFINITY);
    let mut chosen: Option<(usize, f64)> = None;
    let mut plateau_found = false;
    'outer: for &lambda in &lambda_grid {
        let col: Vec<&TuningCell> = grid.iter().filter(|c| c.lambda == lambda).collect();
        for w in col.windows(2) {
            let (a, b) = (w[0], w[1]);
            let rel = (a.mean_t0 - b.mean_t0).abs() / b.mean_t0.abs().max(1e-12);
            let bands_overlap = a.mean_t0 - a.std_t0 <= b.mean_t0 + b.std_t0
                && b.mean_t0 - b.std_t0 <= a.mean_t0 + a.std_t0;
            if rel < 0.05 && bands_overlap && a.mean_wall_time_seconds <= budget {
                chosen = Some((a.m_centers, lambda));
                plateau_found = true;
                break 'outer;
            }
        }
    }
    let (chosen_m_centers, chosen_lambda) = chosen.unwrap_or_else(|| {
        log::warn!("no t0 plateau found on the tuning grid; falling back to the largest M");
        (*m_grid.last().unwrap(), lambda_grid[0])
    });

    Ok(TuningReport {
        sigma_chosen: sigma,
        distance_histogram: DistanceHistogram {
            edges: Vec::new(),
            counts: Vec::new(),
        },
        grid,
        chosen_m_centers,
        chosen_lambda,
        plateau_found,
    })
}

// ---------------------------------------------------------------------------
// Model persistence: centers + weights as little-endian f64 with a JSON
// header {sigma, M, lambda, class_ratio, d}.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    sigma: f64,
    #[serde(rename = "M")]
    m_centers: usize,
    lambda: f64,
    class_ratio: f64,
    d: usize,
}

pub fn save_model(stem: &Path, model: &KernelModel) -> Result<()> {
    let bin_path = stem.with_extension("f64");
    let mut bytes = Vec::with_capacity((model.centers.len() + model.weights.len()) * 8);
    for v in model.centers.iter().chain(&model.weights) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    let header = ModelHeader {
        sigma: model.hyperparams.sigma,
        m_centers: model.m_centers,
        lambda: model.hyperparams.lambda,
        class_ratio: model.class_ratio,
        d: model.d,
    };
    let json_path = stem.with_extension("json");
    let text = serde_json::to_string_pretty(&header).expect("header serialization");
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_model(stem: &Path) -> Result<KernelModel> {
    let json_path = stem.with_extension("json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: ModelHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e.to_string()))?;
    let bin_path = stem.with_extension("f64");
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = (header.m_centers * header.d + header.m_centers) * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            &bin_path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let split = header.m_centers * header.d;
    Ok(KernelModel {
        centers: values[..split].to_vec(),
        m_centers: header.m_centers,
        d: header.d,
        weights: values[split..].to_vec(),
        hyperparams: NplmHyperparams {
            sigma: header.sigma,
            m_centers: header.m_centers,
            lambda: header.lambda,
        },
        class_ratio: header.class_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model_with(centers: Vec<f64>, d: usize, weights: Vec<f64>, sigma: f64) -> KernelModel {
        let m = weights.len();
        KernelModel {
            centers,
            m_centers: m,
            d,
            weights,
            hyperparams: NplmHyperparams {
                sigma,
                m_centers: m,
                lambda: 1e-6,
            },
            class_ratio: 1.0,
        }
    }

    #[test]
    fn kernel_eval_examples() {
        let pts = Sample::from_rows(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        // all weights zero -> identically 0
        let zero = model_with(vec![0.0, 0.0], 2, vec![0.0], 1.0);
        assert_eq!(kernel_eval(&zero, &pts).unwrap(), vec![0.0, 0.0]);
        // single unit-weight center at the origin
        let unit = model_with(vec![0.0, 0.0], 2, vec![1.0], 1.0);
        let f = kernel_eval(&unit, &pts).unwrap();
        assert_eq!(f[0], 1.0);
        assert_relative_eq!(f[1], (-1.0f64).exp(), epsilon = 1e-15); // distance sqrt(2)
    }

    #[test]
    fn statistic_identities() {
        // f == 0 -> t == 0 exactly
        assert_eq!(nplm_statistic_from_scores(&[0.0; 4], &[0.0; 4]), 0.0);
        // f == ln 2, n = m = 2 -> -2 [2 (2 - 1) - 2 ln 2]
        let c = 2.0f64.ln();
        let t = nplm_statistic_from_scores(&[c, c], &[c, c]);
        assert_relative_eq!(t, -2.0 * (2.0 - 2.0 * c), epsilon = 1e-12);
        // constant c with n = m: t = -2 m (e^c - 1 - c)
        for c in [-1.5, -0.1, 0.3, 2.0] {
            let m = 7;
            let t = nplm_statistic_from_scores(&vec![c; m], &vec![c; m]);
            assert_relative_eq!(
                t,
                -2.0 * m as f64 * (c.exp() - 1.0 - c),
                max_relative = 1e-12
            );
            assert!(t <= 0.0);
        }
    }

    fn gaussian_pair(n: usize, shift: f64, seed: u64) -> (Sample, Sample) {
        let g = GeneratorSpec::standard_normal(1).unwrap();
        let x = g.sample(n, &mut RngStream::new(seed, 0)).unwrap();
        let y0 = g.sample(n, &mut RngStream::new(seed, 1)).unwrap();
        let y = Sample::from_vec(y0.data().iter().map(|v| v + shift).collect(), n, 1).unwrap();
        (x, y)
    }

    #[test]
    fn strong_regularization_pins_scores_near_zero() {
        let (x, y) = gaussian_pair(300, 0.0, 42);
        let hp = NplmHyperparams::new(1.0, 50, 1.0).unwrap();
        let model = fit(
            &x,
            &y,
            &hp,
            &mut RngStream::new(1, 2),
            &SolverConfig::default(),
        )
        .unwrap();
        let f = kernel_eval(&model, &x).unwrap();
        assert!(f.iter().all(|v| v.abs() < 0.05), "scores not pinned");
        assert!(model.kernel_norm_sq() < 1e-3);
    }

    #[test]
    fn gradient_norm_meets_tolerance_and_matches_finite_differences() {
        let (x, y) = gaussian_pair(200, 0.4, 7);
        let hp = NplmHyperparams::new(1.5, 40, 1e-4).unwrap();
        let solver = SolverConfig::default();
        let model = fit(&x, &y, &hp, &mut RngStream::new(2, 3), &solver).unwrap();
        let grad = risk_gradient(&x, &y, &model, model.weights()).unwrap();
        let norm = dot(&grad, &grad).sqrt();
        assert!(norm <= solver.grad_tol_per_point * 400.0, "norm {norm}");

        // Central differences away from the optimum, where the derivative is
        // large against the f64 cancellation floor of the difference.
        let base: Vec<f64> = model
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w + 0.05 * ((i % 5) as f64 - 2.0))
            .collect();
        let grad = risk_gradient(&x, &y, &model, &base).unwrap();
        let h = 1e-6;
        for idx in [0usize, 7, 23] {
            let mut wp = base.clone();
            wp[idx] += h;
            let mut wm = base.clone();
            wm[idx] -= h;
            let fd = (empirical_risk(&x, &y, &model, &wp).unwrap()
                - empirical_risk(&x, &y, &model, &wm).unwrap())
                / (2.0 * h);
            let scale = fd.abs().max(grad[idx].abs());
            assert!(
                (fd - grad[idx]).abs() / scale < 1e-5,
                "fd {fd} vs analytic {}",
                grad[idx]
            );
        }
    }

    #[test]
    fn loss_is_non_increasing_over_iterations() {
        let (x, y) = gaussian_pair(200, 0.6, 8);
        let hp = NplmHyperparams::new(1.5, 30, 1e-5).unwrap();
        let (_, report) = fit_with_report(
            &x,
            &y,
            &hp,
            &mut RngStream::new(3, 4),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert!(
            report.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-15),
            "{:?}",
            report.loss_trace
        );
    }

    #[test]
    fn kernel_norm_is_non_increasing_in_lambda() {
        let (x, y) = gaussian_pair(300, 0.5, 9);
        let mut norms = Vec::new();
        for lambda in [1e-2, 1e-4, 1e-6] {
            let hp = NplmHyperparams::new(1.5, 40, lambda).unwrap();
            let model = fit(
                &x,
                &y,
                &hp,
                &mut RngStream::new(4, 5),
                &SolverConfig::default(),
            )
            .unwrap();
            norms.push(model.kernel_norm_sq());
        }
        assert!(
            norms[0] <= norms[1] + 1e-9 && norms[1] <= norms[2] + 1e-9,
            "{norms:?}"
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = gaussian_pair(150, 0.3, 10);
        let hp = NplmHyperparams::new(1.2, 25, 1e-4).unwrap();
        let solver = SolverConfig::default();
        let a = nplm_test(&x, &y, &hp, &mut RngStream::new(5, 6), &solver).unwrap();
        let b = nplm_test(&x, &y, &hp, &mut RngStream::new(5, 6), &solver).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn center_count_cannot_exceed_pool() {
        let (x, y) = gaussian_pair(10, 0.0, 11);
        let hp = NplmHyperparams::new(1.0, 21, 1e-4).unwrap();
        assert!(fit(
            &x,
            &y,
            &hp,
            &mut RngStream::new(6, 7),
            &SolverConfig::default()
        )
        .is_err());
    }

    #[test]
    fn tune_sigma_bimodal_uses_first_peak() {
        // two tight clusters separated by 100
        let g = GeneratorSpec::mixture(vec![
            crate::generators::MixtureComponent {
                weight: 0.5,
                mean: vec![0.0],
                diag_std: vec![0.1],
            },
            crate::generators::MixtureComponent {
                weight: 0.5,
                mean: vec![100.0],
                diag_std: vec![0.1],
            },
        ])
        .unwrap();
        let s = g.sample(2000, &mut RngStream::new(7, 8)).unwrap();
        let tuned = tune_sigma(&s, 0.9, &mut RngStream::new(7, 9)).unwrap();
        assert!(
            tuned.n_peaks >= 2,
            "expected multimodal, got {}",
            tuned.n_peaks
        );
        assert!(
            tuned.sigma < 1.0,
            "sigma {} should sit on the first peak",
            tuned.sigma
        );
    }

    #[test]
    fn tune_sigma_degenerate_points_error() {
        let s = Sample::from_rows(vec![vec![1.0, 1.0]; 5]).unwrap();
        assert!(matches!(
            tune_sigma(&s, 0.9, &mut RngStream::new(8, 0)),
            Err(Error::DegenerateDistances)
        ));
    }

    #[test]
    fn model_roundtrips_through_files() {
        let (x, y) = gaussian_pair(100, 0.4, 12);
        let hp = NplmHyperparams::new(1.3, 20, 1e-4).unwrap();
        let model = fit(
            &x,
            &y,
            &hp,
            &mut RngStream::new(9, 1),
            &SolverConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        save_model(&stem, &model).unwrap();
        let back = load_model(&stem).unwrap();
        assert_eq!(model, back);
    }
}
