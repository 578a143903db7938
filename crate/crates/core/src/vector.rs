//! Dense row-major embedding matrices and the vector math shared by every stage.
//!
//! Values are held as `f64` in memory so that normalization and similarity
//! checks are exact to well below `1e-9`; the on-disk sidecar stores `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row norms for a matrix flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a raw (not normalized) matrix.
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape {
                rows,
                dim,
                len: data.len(),
            });
        }
        Ok(Self {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    /// Builds a matrix flagged as normalized, checking every row norm.
    pub fn new_normalized(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(rows, dim, data)?;
        for (i, row) in m.iter_rows().enumerate() {
            let norm = norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row: i, norm });
            }
        }
        m.normalized = true;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
            normalized: false,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Mutable row access; clears the normalized flag.
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        self.normalized = false;
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn try_row(&self, i: usize) -> Result<&[f64]> {
        if i >= self.rows {
            return Err(Error::RowOutOfRange {
                row: i,
                rows: self.rows,
            });
        }
        Ok(self.row(i))
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let dim = self.dim.max(1);
        let rows = self.rows;
        self.data
            .chunks_exact(dim)
            .take(if self.dim == 0 { 0 } else { rows })
    }

    /// Gathers the given rows into a new matrix, keeping the normalized flag.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.try_row(i)?);
        }
        Ok(Self {
            rows: indices.len(),
            dim: self.dim,
            data,
            normalized: self.normalized,
        })
    }

    /// Errors on the first row containing NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self
            .iter_rows()
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            Some(row) => Err(Error::NonFinite { row }),
            None => Ok(()),
        }
    }

    /// Cosine similarity between row `i` of `self` and row `j` of `other`;
    /// a plain dot product when both matrices are flagged normalized.
    pub fn cosine(&self, i: usize, other: &EmbeddingMatrix, j: usize) -> Result<f64> {
        let a = self.try_row(i)?;
        let b = other.try_row(j)?;
        if self.normalized && other.normalized {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    left: a.len(),
                    right: b.len(),
                });
            }
            Ok(dot(a, b))
        } else {
            cosine_similarity(a, b)
        }
    }
}

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Returns a copy of `m` with every row scaled to unit L2 norm.
pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = m.data.clone();
    if m.dim > 0 {
        for (i, row) in data.chunks_exact_mut(m.dim).enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
            if !n.is_finite() {
                return Err(Error::NonFinite { row: i });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(EmbeddingMatrix {
        rows: m.rows,
        dim: m.dim,
        data,
        normalized: true,
    })
}

/// Normalizes a single vector in place.
pub fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Error-free product and sum transforms (double-double arithmetic),
    /// used as an extended-precision reference for dot products.
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn dd_dot(a: &[f64], b: &[f64]) -> f64 {
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for (x, y) in a.iter().zip(b) {
            let p = x * y;
            let pe = x.mul_add(*y, -p);
            let (s, e) = two_sum(hi, p);
            hi = s;
            lo += e + pe;
        }
        hi + lo
    }

    fn reference_cosine(a: &[f64], b: &[f64]) -> f64 {
        dd_dot(a, b) / (dd_dot(a, a).sqrt() * dd_dot(b, b).sqrt())
    }

    #[test]
    fn cosine_trivial_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_matches_extended_precision_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = cosine_similarity(&a, &b).unwrap();
            assert!((got - reference_cosine(&a, &b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn normalized_cosine_is_plain_dot() {
        let m =
            l2_normalize(&EmbeddingMatrix::from_rows(&[[3.0, 4.0], [1.0, 1.0]]).unwrap()).unwrap();
        let c = m.cosine(0, &m, 1).unwrap();
        assert_eq!(c, dot(m.row(0), m.row(1)));
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = l2_normalize(&m).unwrap();
        assert!(n.is_normalized());
        assert!((n.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-15);
        // the input is untouched
        assert_eq!(m.row(0), &[3.0, 4.0]);
        assert!(!m.is_normalized());
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
        let n = l2_normalize(&EmbeddingMatrix::new(4, 16, data).unwrap()).unwrap();
        for row in n.iter_rows() {
            assert!((dd_dot(row, row).sqrt() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalize_reports_zero_row() {
        let m = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize(&m), Err(Error::ZeroRow { row: 1 })));
    }

    #[test]
    fn normalized_constructor_rejects_bad_rows() {
        assert!(matches!(
            EmbeddingMatrix::new_normalized(1, 2, vec![0.0, 0.0]),
            Err(Error::ZeroRow { row: 0 })
        ));
        assert!(matches!(
            EmbeddingMatrix::new_normalized(1, 2, vec![1.0, 1.0]),
            Err(Error::NotNormalized { row: 0, .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::new(2, 2, vec![1.0]),
            Err(Error::Shape { .. })
        ));
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, dim).prop_filter("non-zero", |v| norm(v) > 1e-6)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(rows in proptest::collection::vec(nonzero_vec(6), 1..8)) {
            let m = EmbeddingMatrix::from_rows(&rows).unwrap();
            let once = l2_normalize(&m).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_symmetric_and_bounded((a, b) in (nonzero_vec(5), nonzero_vec(5))) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
