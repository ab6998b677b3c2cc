//! Numerical substrate shared by the statistics: symmetric matrices, a PSD
//! square root, Cholesky factorization, pairwise distances, and empirical
//! quantiles.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sample::{euclidean, Sample};

/// Default cap on the number of rows entering a pairwise-distance
/// computation (~1.25e7 pairs); bounds memory and time at large n without
/// materially shifting the distance percentiles.
pub const DEFAULT_MAX_PAIRWISE_POINTS: usize = 5000;

/// Relative eigenvalue tolerance below which a matrix is declared not PSD.
pub const PSD_EIGENVALUE_TOLERANCE: f64 = 1e-10;

/// A `d x d` symmetric matrix storing only the lower triangle, so symmetry
/// is exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    // Row-packed lower triangle: (i, j) with j <= i lives at i(i+1)/2 + j.
    lower: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymmetricMatrix {
            dim,
            lower: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    /// Build from a full square matrix, averaging the two triangles.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("matrix must be square".into()));
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = 0.5 * (rows[i][j] + rows[j][i]);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("matrix entry ({i}, {j})")));
                }
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.lower[r * (r + 1) / 2 + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.lower[r * (r + 1) / 2 + c] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                sum += v * v;
            }
        }
        sum.sqrt()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        out
    }

    /// Unbiased sample covariance of a dataset (1/(n-1) denominator).
    pub fn covariance_of(sample: &Sample) -> Self {
        let d = sample.d();
        let means = sample.column_means();
        let mut acc = Self::zeros(d);
        let mut centered = vec![0.0; d];
        for row in sample.rows() {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&means)) {
                *c = v - m;
            }
            for i in 0..d {
                for j in 0..=i {
                    let idx = i * (i + 1) / 2 + j;
                    acc.lower[idx] += centered[i] * centered[j];
                }
            }
        }
        let inv = 1.0 / (sample.n() as f64 - 1.0);
        for v in &mut acc.lower {
            *v *= inv;
        }
        acc
    }
}

/// Packed lower-triangular matrix, e.g. a Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>, // same row-packed layout as SymmetricMatrix::lower
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[i * (i + 1) / 2 + j]
        }
    }

    /// y = L x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
            y[i] = row.iter().zip(&x[..=i]).map(|(l, v)| l * v).sum();
        }
        y
    }

    /// Solve L y = b by forward substitution.
    pub fn solve_forward(&self, b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let base = i * (i + 1) / 2;
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.data[base + j] * y[j];
            }
            y[i] = acc / self.data[base + i];
        }
        y
    }

    /// Solve L^T x = b by backward substitution.
    pub fn solve_backward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                x[i] -= self.get(j, i) * x[j];
            }
            x[i] /= self.get(i, i);
        }
        x
    }

    /// Sum of log diagonal entries; `2 * log_diag_sum()` is log det(L L^T).
    pub fn log_diag_sum(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).ln()).sum()
    }
}

/// Cholesky factorization `a = L L^T` for a positive-definite matrix.
pub fn cholesky(a: &SymmetricMatrix) -> Result<LowerTriangular> {
    let n = a.dim();
    let mut l = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a.get(i, j);
            for k in 0..j {
                acc -= l[i * (i + 1) / 2 + k] * l[j * (j + 1) / 2 + k];
            }
            if i == j {
                if acc <= 0.0 || !acc.is_finite() {
                    return Err(Error::NotPositiveDefinite { row: i });
                }
                l[i * (i + 1) / 2 + j] = acc.sqrt();
            } else {
                l[i * (i + 1) / 2 + j] = acc / l[j * (j + 1) / 2 + j];
            }
        }
    }
    Ok(LowerTriangular { dim: n, data: l })
}

/// Symmetric PSD square root: returns S with S S = a.
///
/// Eigenvalues in [-tol, 0) with tol = 1e-10 * max|eigenvalue| are clamped
/// to zero (sample covariances are PSD only up to round-off); anything below
/// -tol is an error.
pub fn psd_sqrt(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = SymmetricEigen::new(a.to_nalgebra());
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = PSD_EIGENVALUE_TOLERANCE * scale;
    let mut sqrt_vals = Vec::with_capacity(eig.eigenvalues.len());
    for &v in eig.eigenvalues.iter() {
        if v < -tol {
            return Err(Error::NotPsd {
                eigenvalue: v,
                tolerance: tol,
            });
        }
        sqrt_vals.push(v.max(0.0).sqrt());
    }
    let d = a.dim();
    let u = &eig.eigenvectors;
    let mut out = SymmetricMatrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let mut acc = 0.0;
            for (k, s) in sqrt_vals.iter().enumerate() {
                acc += u[(i, k)] * s * u[(j, k)];
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Euclidean distances between all unordered pairs of a uniform subsample of
/// `min(n, max_points)` rows. Length is `k(k-1)/2` for `k` retained rows.
pub fn pairwise_distances(s: &Sample, max_points: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if max_points < 2 {
        return Err(Error::InvalidInput(format!(
            "max_points must be >= 2, got {max_points}"
        )));
    }
    if s.n() < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let k = s.n().min(max_points);
    let kept: Vec<usize> = if k < s.n() {
        let mut idx = index::sample(rng, s.n(), k).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..s.n()).collect()
    };
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for (a, &i) in kept.iter().enumerate() {
        let ri = s.row(i);
        for &j in &kept[a + 1..] {
            out.push(euclidean(ri, s.row(j)));
        }
    }
    Ok(out)
}

/// Round `x` to the nearest integer when it is within 1e-9 of one, then take
/// the ceiling. Shields index arithmetic like ceil(0.82 * 100) from the
/// 82.00000000000001 representation problem.
pub(crate) fn robust_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x.ceil()
    }
}

/// Floor counterpart of [`robust_ceil`].
pub(crate) fn robust_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x.floor()
    }
}

/// The k-th order statistic with k = ceil(q * T) clamped to [1, T].
///
/// With this convention at most a fraction (1 - q) of the values strictly
/// exceed the result. `values` must be sorted ascending.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty vector has no quantiles".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!(
            "quantile fraction {q} outside [0, 1]"
        )));
    }
    debug_assert!(values.windows(2).all(|w| w[0] <= w[1]), "values not sorted");
    let t = values.len();
    let k = (robust_ceil(q * t as f64) as usize).clamp(1, t);
    Ok(values[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn sym(rows: &[&[f64]]) -> SymmetricMatrix {
        SymmetricMatrix::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(
            empirical_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(),
            3.0
        );
        assert_eq!(
            empirical_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 1.0).unwrap(),
            5.0
        );
        assert_eq!(empirical_quantile(&[7.0], 0.9).unwrap(), 7.0);
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn quantile_handles_near_integer_products() {
        // 0.82 * 100 = 82.00000000000001 in f64; the order statistic must be
        // the 82nd, not the 83rd.
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&v, 0.82).unwrap(), 82.0);
    }

    #[test]
    fn cholesky_hand_case() {
        let a = sym(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let l = cholesky(&a).unwrap();
        assert_eq!(l.get(0, 0), 2.0);
        assert_eq!(l.get(1, 0), 1.0);
        assert_eq!(l.get(1, 1), 2.0);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn cholesky_identity_and_diag() {
        let l = cholesky(&SymmetricMatrix::identity(3)).unwrap();
        for i in 0..3 {
            assert_eq!(l.get(i, i), 1.0);
        }
        let l = cholesky(&SymmetricMatrix::from_diagonal(&[4.0])).unwrap();
        assert_eq!(l.get(0, 0), 2.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = sym(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let err = cholesky(&a).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { row: 1 }));
    }

    #[test]
    fn triangular_solves_invert_matvec() {
        let a = sym(&[&[4.0, 2.0, 1.0], &[2.0, 5.0, 2.0], &[1.0, 2.0, 6.0]]);
        let l = cholesky(&a).unwrap();
        let x = vec![1.0, -2.0, 3.0];
        let y = l.matvec(&x);
        let back = l.solve_forward(&y);
        for (a, b) in back.iter().zip(&x) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        let z = l.solve_backward(&x);
        // check L^T z = x
        for i in 0..3 {
            let acc: f64 = (0..3).map(|j| l.get(j, i) * z[j]).sum();
            assert_relative_eq!(acc, x[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn psd_sqrt_diagonal_and_identity() {
        let s = psd_sqrt(&SymmetricMatrix::identity(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(s.get(i, j), if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        let s = psd_sqrt(&SymmetricMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_relative_eq!(s.get(0, 0), 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.get(1, 1), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = sym(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let s = psd_sqrt(&a).unwrap().to_nalgebra();
        let sq = &s * &s;
        let orig = a.to_nalgebra();
        assert!((sq - orig).norm() <= 1e-10);
    }

    #[test]
    fn psd_sqrt_rejects_negative_eigenvalue() {
        let a = sym(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(psd_sqrt(&a), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn psd_sqrt_clamps_roundoff_negatives() {
        let a = sym(&[&[1.0, 0.0], &[0.0, -1e-12]]);
        let s = psd_sqrt(&a).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
    }

    #[test]
    fn pairwise_distance_examples() {
        let mut rng = RngStream::new(0, 0);
        let s = Sample::from_rows(vec![vec![0.0], vec![3.0]]).unwrap();
        assert_eq!(pairwise_distances(&s, 100, &mut rng).unwrap(), vec![3.0]);

        let s = Sample::from_rows(vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let mut d = pairwise_distances(&s, 100, &mut rng).unwrap();
        d.sort_by(f64::total_cmp);
        assert_eq!(d, vec![0.0, 5.0, 5.0]);
    }

    #[test]
    fn pairwise_distances_subsamples() {
        let mut rng = RngStream::new(1, 0);
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let s = Sample::from_rows(rows).unwrap();
        let d = pairwise_distances(&s, 10, &mut rng).unwrap();
        assert_eq!(d.len(), 45);
    }

    #[test]
    fn psd_sqrt_roundtrip_random_up_to_d100() {
        let mut rng = RngStream::new(7, 0);
        for &d in &[3usize, 17, 100] {
            // random PSD: B^T B / d
            let b: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let mut a = SymmetricMatrix::zeros(d);
            for i in 0..d {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for row in &b {
                        acc += row[i] * row[j];
                    }
                    a.set(i, j, acc / d as f64);
                }
            }
            let s = psd_sqrt(&a).unwrap().to_nalgebra();
            let err = (&s * &s - a.to_nalgebra()).norm() / a.frobenius_norm();
            assert!(err <= 1e-8, "d={d}: relative error {err}");
        }
    }

    proptest! {
        #[test]
        fn quantile_is_member_and_monotone(
            mut v in proptest::collection::vec(-1e6..1e6f64, 1..200),
            q1 in 0.0..1.0f64,
            q2 in 0.0..1.0f64,
        ) {
            v.sort_by(f64::total_cmp);
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = empirical_quantile(&v, lo).unwrap();
            let b = empirical_quantile(&v, hi).unwrap();
            prop_assert!(v.contains(&a));
            prop_assert!(a <= b);
        }

        #[test]
        fn pairwise_multiset_invariant_under_row_shuffle(
            rows in proptest::collection::vec(
                proptest::collection::vec(-10.0..10.0f64, 3), 2..20),
            seed in 0..1000u64,
        ) {
            let mut rng = RngStream::new(seed, 0);
            let s = Sample::from_rows(rows.clone()).unwrap();
            let mut shuffled = rows;
            shuffled.reverse();
            let t = Sample::from_rows(shuffled).unwrap();
            let mut d1 = pairwise_distances(&s, usize::MAX, &mut rng).unwrap();
            let mut d2 = pairwise_distances(&t, usize::MAX, &mut rng).unwrap();
            d1.sort_by(f64::total_cmp);
            d2.sort_by(f64::total_cmp);
            prop_assert_eq!(d1, d2);
        }
    }
}
