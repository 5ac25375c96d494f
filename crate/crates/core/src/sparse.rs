//! Symmetric sparse matrices in full (both triangles) CSR storage.
//!
//! All operators on one mesh share a [`SparsityPattern`], so matrices can be
//! combined entry-wise by summing their value arrays.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern coupling every pair of dofs that appear together in a group.
    pub fn from_groups<'a, I>(dim: usize, groups: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut rows: Vec<Vec<usize>> = (0..dim).map(|i| vec![i]).collect();
        for g in groups {
            for &i in g {
                rows[i].extend_from_slice(g);
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        Self {
            dim,
            row_ptr,
            col_idx,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage position of entry `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }
}

#[derive(Debug, Clone)]
pub struct SparseSymMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_values(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch {
                expected: pattern.nnz(),
                actual: values.len(),
            });
        }
        Ok(Self { pattern, values })
    }

    /// Builds a matrix from `(row, col, value)` entries, mirroring each
    /// off-diagonal entry. Duplicate entries are summed.
    pub fn from_entries(dim: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in entries {
            if i >= dim || j >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: i.max(j) + 1,
                });
            }
        }
        let pairs: Vec<[usize; 2]> = entries.iter().map(|&(i, j, _)| [i, j]).collect();
        let pattern = Arc::new(SparsityPattern::from_groups(
            dim,
            pairs.iter().map(|p| p.as_slice()),
        ));
        let mut m = Self::zeros(pattern);
        for &(i, j, v) in entries {
            let p = m.pattern.position(i, j).unwrap();
            m.values[p] += v;
            if i != j {
                let q = m.pattern.position(j, i).unwrap();
                m.values[q] += v;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &self.pattern;
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let mut acc = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.values[k] * y[p.col_idx[k]];
            }
            total += xi * acc;
        }
        total
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `Σ c_i A_i` over matrices sharing this pattern.
    pub fn linear_combination(terms: &[(f64, &SparseSymMatrix)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidMesh("empty linear combination".into()))?
            .1;
        let mut out = Self::zeros(first.pattern.clone());
        for &(c, m) in terms {
            if !Arc::ptr_eq(&m.pattern, &first.pattern) && *m.pattern != *first.pattern {
                return Err(Error::DimensionMismatch {
                    expected: first.pattern.nnz(),
                    actual: m.pattern.nnz(),
                });
            }
            for (o, &v) in out.values.iter_mut().zip(&m.values) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Largest `|A[i][j] - A[j][i]|` in stored form.
    pub fn max_asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                let t = p.position(j, i).map_or(0.0, |q| self.values[q]);
                worst = worst.max((self.values[k] - t).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let p = &self.pattern;
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                d[(i, p.col_idx[k])] = self.values[k];
            }
        }
        d
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_mirrored_and_summed() {
        let m = SparseSymMatrix::from_entries(3, &[(0, 0, 2.0), (0, 2, -1.0), (0, 2, 0.5)])
            .unwrap();
        assert_eq!(m.get(0, 2), -0.5);
        assert_eq!(m.get(2, 0), -0.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.max_asymmetry(), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![1.5, 0.0, -0.5]);
    }

    #[test]
    fn out_of_range_entry_is_rejected() {
        assert!(SparseSymMatrix::from_entries(2, &[(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn linear_combination_matches_dense() {
        let a = SparseSymMatrix::from_entries(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]).unwrap();
        let b = SparseSymMatrix::from_values(a.pattern().clone(), vec![1.0; 4]).unwrap();
        let c = SparseSymMatrix::linear_combination(&[(2.0, &a), (-1.0, &b)]).unwrap();
        let expect = a.to_dense() * 2.0 - b.to_dense();
        assert_eq!(c.to_dense(), expect);
        assert_eq!(c.bilinear(&[1.0, 0.0], &[0.0, 1.0]), 3.0);
    }
}
