//! Sparse matrices assembled from triplets and a banded direct solver.
//!
//! Tensor-grid matrices in lexicographic ordering are banded with bandwidth
//! `nx`. Everything factorised here is either symmetric positive definite or
//! a column diagonally dominant M-matrix, so the LU runs without pivoting.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, de-duplicated columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicate entries are summed in a fixed order, so assembly is deterministic.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.n);
        let mut triplets = self.triplets();
        triplets.extend(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
        SparseMatrix::from_triplets(self.n, triplets)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// Exact symmetry, entry by entry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for (_, j, v) in self.triplets() {
            sums[j] += v;
        }
        sums
    }

    /// Number of sub- and super-diagonals holding structural entries.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        (lower, upper)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Plain-text triplet dump, one `row col value` per line.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v}")?;
        }
        Ok(())
    }
}

/// LU factors of a banded matrix, stored row-wise inside the band.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(matrix: &SparseMatrix) -> Result<Self> {
        let n = matrix.dim();
        let (lower, upper) = matrix.bandwidth();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0f64;
        for (i, j, v) in matrix.triplets() {
            band[i * width + j + lower - i] = v;
            scale = scale.max(v.abs());
        }
        let tiny = 1e-13 * scale;
        for k in 0..n {
            let pivot = band[k * width + lower];
            if !pivot.is_finite() || pivot.abs() <= tiny {
                return Err(Error::solver(
                    "linalg",
                    format!("zero pivot {pivot:e} at row {k} (matrix singular to working precision)"),
                ));
            }
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            for i in k + 1..=last_row {
                let ik = i * width + k + lower - i;
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    band[i * width + j + lower - i] -= l * band[k * width + j + lower - k];
                }
            }
        }
        Ok(BandedLu {
            n,
            lower,
            upper,
            band,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pivots(&self) -> impl Iterator<Item = f64> + '_ {
        let width = self.lower + self.upper + 1;
        (0..self.n).map(move |k| self.band[k * width + self.lower])
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let width = self.lower + self.upper + 1;
        let mut x = rhs.to_vec();
        for i in 0..self.n {
            let first = i.saturating_sub(self.lower);
            let mut acc = x[i];
            for j in first..i {
                acc -= self.band[i * width + j + self.lower - i] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..self.n).rev() {
            let last = (i + self.upper).min(self.n - 1);
            let mut acc = x[i];
            for j in i + 1..=last {
                acc -= self.band[i * width + j + self.lower - i] * x[j];
            }
            x[i] = acc / self.band[i * width + self.lower];
        }
        x
    }
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `sqrt(sum w_i x_i^2)`.
pub fn weighted_norm(x: &[f64], weights: &[f64]) -> f64 {
    x.iter()
        .zip(weights)
        .map(|(v, w)| w * v * v)
        .sum::<f64>()
        .sqrt()
}
