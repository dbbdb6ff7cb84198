//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use fedtensor::{CpModel, FactorMatrix, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every index vector of `shape`, first mode slowest.
pub fn all_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &d in shape {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..d).map(move |i| {
                    let mut v = prefix.clone();
                    v.push(i);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn dense_value(t: &SparseTensor, idx: &[usize]) -> f64 {
    t.entries().find(|(i, _)| *i == idx).map(|(_, v)| v).unwrap_or(0.0)
}

/// `Σ_r Π_n A_n[i_n, r]` straight from the definition.
pub fn cp_value(factors: &[FactorMatrix], idx: &[usize]) -> f64 {
    (0..factors[0].rank())
        .map(|r| factors.iter().zip(idx).map(|(f, &i)| f.get(i, r)).product::<f64>())
        .sum()
}

/// Column of cell `idx` in the mode-`mode` unfolding: the remaining modes in
/// increasing order, the lowest varying fastest.
pub fn unfold_column(shape: &[usize], idx: &[usize], mode: usize) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for m in 0..shape.len() {
        if m != mode {
            col += idx[m] * stride;
            stride *= shape[m];
        }
    }
    col
}

/// Dense mode-`mode` unfolding built cell by cell.
pub fn dense_unfold(shape: &[usize], mode: usize, value: impl Fn(&[usize]) -> f64) -> Vec<Vec<f64>> {
    let cols: usize = shape.iter().enumerate().filter(|(m, _)| *m != mode).map(|(_, d)| d).product();
    let mut out = vec![vec![0.0; cols]; shape[mode]];
    for idx in all_indices(shape) {
        out[idx[mode]][unfold_column(shape, &idx, mode)] = value(&idx);
    }
    out
}

/// Sparse tensor with about `density` of its cells set to small counts.
pub fn random_tensor<R: Rng>(shape: &[usize], density: f64, rng: &mut R) -> SparseTensor {
    let mut entries = Vec::new();
    for idx in all_indices(shape) {
        if rng.random::<f64>() < density {
            entries.push((idx, rng.random_range(1..=3) as f64));
        }
    }
    SparseTensor::new(shape.to_vec(), entries).unwrap()
}

pub fn random_factor<R: Rng>(rows: usize, rank: usize, rng: &mut R) -> FactorMatrix {
    FactorMatrix::random_uniform(rows, rank, rng)
}

/// Signed random entries in [-1, 1).
pub fn random_signed<R: Rng>(rows: usize, rank: usize, rng: &mut R) -> FactorMatrix {
    FactorMatrix::random_uniform(rows, rank, rng).map(|v| 2.0 * v - 1.0)
}

/// The full dense tensor of a CP model, stored as an exact sparse tensor.
pub fn exact_tensor(factors: &[FactorMatrix]) -> SparseTensor {
    let shape: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
    let entries = all_indices(&shape)
        .into_iter()
        .map(|idx| {
            let v = cp_value(factors, &idx);
            (idx, v)
        })
        .filter(|(_, v)| *v != 0.0)
        .collect();
    SparseTensor::new(shape, entries).unwrap()
}

/// `‖X − O‖²` over every cell.
pub fn dense_squared_error(factors: &[FactorMatrix], t: &SparseTensor) -> f64 {
    all_indices(t.shape())
        .iter()
        .map(|idx| {
            let d = cp_value(factors, idx) - dense_value(t, idx);
            d * d
        })
        .sum()
}

pub fn model(factors: Vec<FactorMatrix>) -> CpModel {
    CpModel::new(factors).unwrap()
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &FactorMatrix, step: f64, f: impl Fn(&FactorMatrix) -> f64) -> FactorMatrix {
    let mut g = FactorMatrix::zeros(x.rows(), x.rank());
    for i in 0..x.rows() {
        for r in 0..x.rank() {
            let mut plus = x.clone();
            plus.set(i, r, x.get(i, r) + step);
            let mut minus = x.clone();
            minus.set(i, r, x.get(i, r) - step);
            g.set(i, r, (f(&plus) - f(&minus)) / (2.0 * step));
        }
    }
    g
}

pub fn max_abs(m: &FactorMatrix) -> f64 {
    m.as_slice().iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
