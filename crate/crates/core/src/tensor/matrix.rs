use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix with `rank` columns.
///
/// Used for every factor matrix, multiplier and the small R×R Gram
/// matrices built from them.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: usize,
    rank: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, rank: usize) -> Self {
        Self {
            rows,
            rank,
            data: vec![0.0; rows * rank],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, rank: usize, value: f64) -> Self {
        Self {
            rows,
            rank,
            data: vec![value; rows * rank],
        }
    }

    pub fn from_vec(rows: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * rank {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{rank} matrix",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite matrix entry {v}")));
        }
        Ok(Self { rows, rank, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rank = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != rank) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), rank, rows.concat())
    }

    /// Entries i.i.d. uniform on [0, 1).
    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, rank: usize, rng: &mut R) -> Self {
        let data = (0..rows * rank).map(|_| rng.random::<f64>()).collect();
        Self { rows, rank, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.rank)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, r: usize) -> f64 {
        self.data[i * self.rank + r]
    }

    #[inline]
    pub fn set(&mut self, i: usize, r: usize, v: f64) {
        self.data[i * self.rank + r] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, r)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> FactorMatrix {
        let mut out = FactorMatrix::zeros(self.rank, self.rows);
        for i in 0..self.rows {
            for r in 0..self.rank {
                out.set(r, i, self.get(i, r));
            }
        }
        out
    }

    /// `selfᵀ · self`, an R×R matrix.
    pub fn gram(&self) -> FactorMatrix {
        self.transpose_mul(self).expect("same matrix")
    }

    /// `selfᵀ · other`.
    pub fn transpose_mul(&self, other: &FactorMatrix) -> Result<FactorMatrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "transpose product of {}x{} and {}x{}",
                self.rows, self.rank, other.rows, other.rank
            )));
        }
        let mut out = FactorMatrix::zeros(self.rank, other.rank);
        for i in 0..self.rows {
            let a = self.row(i);
            let b = other.row(i);
            for (p, &ap) in a.iter().enumerate() {
                let dst = out.row_mut(p);
                for (q, &bq) in b.iter().enumerate() {
                    dst[q] += ap * bq;
                }
            }
        }
        Ok(out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &FactorMatrix) -> Result<FactorMatrix> {
        if self.rank != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "product of {}x{} and {}x{}",
                self.rows, self.rank, other.rows, other.rank
            )));
        }
        let mut out = FactorMatrix::zeros(self.rows, other.rank);
        for i in 0..self.rows {
            for k in 0..self.rank {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn mul_transpose(&self, other: &FactorMatrix) -> Result<FactorMatrix> {
        self.matmul(&other.transpose())
    }

    pub fn hadamard(&self, other: &FactorMatrix) -> Result<FactorMatrix> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &FactorMatrix) -> Result<FactorMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FactorMatrix) -> Result<FactorMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> FactorMatrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FactorMatrix {
        FactorMatrix {
            rows: self.rows,
            rank: self.rank,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &FactorMatrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Adds `v` to the diagonal of a square matrix.
    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.rank) {
            self.data[i * self.rank + i] += v;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.rank)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &FactorMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Reorders columns so that output column `r` is input column `perm[r]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<FactorMatrix> {
        if perm.len() != self.rank {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for rank {}",
                perm.len(),
                self.rank
            )));
        }
        let mut out = FactorMatrix::zeros(self.rows, self.rank);
        for i in 0..self.rows {
            for (r, &src) in perm.iter().enumerate() {
                out.set(i, r, self.get(i, src));
            }
        }
        Ok(out)
    }

    /// Stacks matrices vertically; all must share one rank.
    pub fn vstack(parts: &[FactorMatrix]) -> Result<FactorMatrix> {
        let rank = parts.first().map_or(0, |m| m.rank);
        if let Some(bad) = parts.iter().find(|m| m.rank != rank) {
            return Err(Error::RankMismatch {
                left: rank,
                right: bad.rank,
            });
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let data = parts.iter().flat_map(|m| m.data.iter().copied()).collect();
        Ok(FactorMatrix { rows, rank, data })
    }

    pub(crate) fn check_same_shape(&self, other: &FactorMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.rank, other.rows, other.rank
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &FactorMatrix, f: impl Fn(f64, f64) -> f64) -> Result<FactorMatrix> {
        self.check_same_shape(other)?;
        Ok(FactorMatrix {
            rows: self.rows,
            rank: self.rank,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

impl fmt::Debug for FactorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "FactorMatrix {}x{} [", self.rows, self.rank)?;
        for i in 0..self.rows.min(12) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 12 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}
