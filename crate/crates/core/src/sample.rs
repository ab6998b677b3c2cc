//! The sample container: an `n x d` row-major matrix of finite reals.

use crate::error::{Error, Result};

/// A dataset of `n` points in `d` dimensions, one row per point.
///
/// Every entry is finite and `n >= 2`, `d >= 1`; both are enforced at
/// construction so downstream statistics can assume well-formed input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    /// Build a sample from a flat row-major buffer.
    pub fn from_vec(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "sample needs at least 2 points, got {n}"
            )));
        }
        if d < 1 {
            return Err(Error::InvalidInput("sample dimension must be >= 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "buffer of length {} does not match {n} x {d}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sample entry at row {}, column {} is {}",
                idx / d,
                idx % d,
                data[idx]
            )));
        }
        Ok(Sample { data, n, d })
    }

    /// Build a sample from per-point rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged rows in sample".into()));
        }
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Sample::from_vec(data, n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.d).copied().collect()
    }

    /// Project every row onto a direction vector (`len == d`).
    pub fn project(&self, direction: &[f64]) -> Result<Vec<f64>> {
        if direction.len() != self.d {
            return Err(Error::InvalidInput(format!(
                "direction length {} does not match dimension {}",
                direction.len(),
                self.d
            )));
        }
        Ok(self
            .rows()
            .map(|r| r.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Per-column sample means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.d];
        for row in self.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv = 1.0 / self.n as f64;
        for m in &mut means {
            *m *= inv;
        }
        means
    }

    /// Stack two samples of equal dimension, `self` rows first.
    pub fn vstack(&self, other: &Sample) -> Result<Sample> {
        if self.d != other.d {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: {} vs {}",
                self.d, other.d
            )));
        }
        let mut data = Vec::with_capacity((self.n + other.n) * self.d);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Sample::from_vec(data, self.n + other.n, self.d)
    }
}

/// Euclidean distance between two equal-length slices.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_point() {
        assert!(Sample::from_rows(vec![vec![1.0]]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = Sample::from_vec(vec![0.0, f64::NAN, 1.0, 2.0], 2, 2).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(Sample::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn column_extraction() {
        let s = Sample::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(s.column(0), vec![1.0, 3.0, 5.0]);
        assert_eq!(s.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn projection_matches_hand_computation() {
        let s = Sample::from_rows(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let p = s.project(&[3.0, 4.0]).unwrap();
        assert_eq!(p, vec![3.0, 8.0]);
    }
}
