//! Multilinear kernels: unfolding, Khatri-Rao products and MTTKRP.
//!
//! Unfolding convention: for mode `n`, the entry at index vector `i` lands in
//! row `i[n]` and column `Σ_{m≠n} i[m]·J[m]`, where `J[m]` is the product of
//! the sizes of the non-unfolded modes below `m`. The lowest remaining mode
//! varies fastest. This pairs with [`pi_product`], which chains Khatri-Rao
//! products from the highest mode down, so that `X_(n) = A_n · Πᵀ` holds.

use crate::error::{Error, Result};
use crate::tensor::{FactorMatrix, SparseTensor};

/// Coordinate-format matrix produced by [`matricize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for &(i, j, v) in &self.entries {
            out[i][j] += v;
        }
        out
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: &FactorMatrix) -> Result<FactorMatrix> {
        if rhs.rows() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "sparse {}x{} times dense {}x{}",
                self.rows,
                self.cols,
                rhs.rows(),
                rhs.rank()
            )));
        }
        let mut out = FactorMatrix::zeros(self.rows, rhs.rank());
        for &(i, j, v) in &self.entries {
            let src = rhs.row(j);
            for (d, &s) in out.row_mut(i).iter_mut().zip(src) {
                *d += v * s;
            }
        }
        Ok(out)
    }
}

/// Column strides of the mode-`mode` unfolding.
fn unfolding_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut stride = 1;
    for (m, &dim) in shape.iter().enumerate() {
        if m == mode {
            continue;
        }
        strides[m] = stride;
        stride *= dim;
    }
    strides
}

pub fn matricize(t: &SparseTensor, mode: usize) -> Result<SparseMatrix> {
    let order = t.order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    let shape = t.shape();
    let strides = unfolding_strides(shape, mode);
    let cols = shape
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode)
        .map(|(_, &d)| d)
        .product();
    let entries = t
        .entries()
        .map(|(idx, v)| {
            let col = idx
                .iter()
                .zip(&strides)
                .enumerate()
                .filter(|&(m, _)| m != mode)
                .map(|(_, (&i, &s))| i * s)
                .sum();
            (idx[mode], col, v)
        })
        .collect();
    Ok(SparseMatrix {
        rows: shape[mode],
        cols,
        entries,
    })
}

/// Columnwise Kronecker product: row `ia·b.rows + ib` of column `r` is `a[ia,r]·b[ib,r]`.
pub fn khatri_rao(a: &FactorMatrix, b: &FactorMatrix) -> Result<FactorMatrix> {
    if a.rank() != b.rank() {
        return Err(Error::RankMismatch {
            left: a.rank(),
            right: b.rank(),
        });
    }
    let rank = a.rank();
    let mut out = FactorMatrix::zeros(a.rows() * b.rows(), rank);
    for ia in 0..a.rows() {
        let ra = a.row(ia);
        for ib in 0..b.rows() {
            let rb = b.row(ib);
            let dst = out.row_mut(ia * b.rows() + ib);
            for r in 0..rank {
                dst[r] = ra[r] * rb[r];
            }
        }
    }
    Ok(out)
}

/// `A_{N-1} ⊙ … ⊙ A_{skip+1} ⊙ A_{skip-1} ⊙ … ⊙ A_0`.
///
/// With a single remaining factor the result is that factor.
pub fn pi_product(factors: &[FactorMatrix], skip_mode: usize) -> Result<FactorMatrix> {
    if factors.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pi_product needs at least 2 factors, got {}",
            factors.len()
        )));
    }
    if skip_mode >= factors.len() {
        return Err(Error::ModeOutOfRange {
            mode: skip_mode,
            order: factors.len(),
        });
    }
    let mut remaining = (0..factors.len()).rev().filter(|&m| m != skip_mode);
    let first = remaining.next().expect("at least one remaining factor");
    let mut acc = factors[first].clone();
    for m in remaining {
        acc = khatri_rao(&acc, &factors[m])?;
    }
    Ok(acc)
}

/// Matricized tensor times Khatri-Rao product, `X_(mode) · Π`, straight from
/// the sparse entries. `factors[mode]` is ignored.
pub fn mttkrp(t: &SparseTensor, factors: &[FactorMatrix], mode: usize) -> Result<FactorMatrix> {
    let refs: Vec<&FactorMatrix> = factors.iter().collect();
    mttkrp_refs(t, &refs, mode)
}

pub(crate) fn mttkrp_refs(t: &SparseTensor, factors: &[&FactorMatrix], mode: usize) -> Result<FactorMatrix> {
    let order = t.order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    if factors.len() != order {
        return Err(Error::DimensionMismatch(format!(
            "{} factors for a tensor of order {order}",
            factors.len()
        )));
    }
    let rank = factors[if mode == 0 { 1 } else { 0 }].rank();
    for (m, f) in factors.iter().enumerate() {
        if m == mode {
            continue;
        }
        if f.rows() != t.shape()[m] {
            return Err(Error::DimensionMismatch(format!(
                "factor {m} has {} rows, tensor mode has size {}",
                f.rows(),
                t.shape()[m]
            )));
        }
        if f.rank() != rank {
            return Err(Error::RankMismatch {
                left: rank,
                right: f.rank(),
            });
        }
    }

    let mut out = FactorMatrix::zeros(t.shape()[mode], rank);
    let mut scratch = vec![0.0; rank];
    for (idx, v) in t.entries() {
        scratch.iter_mut().for_each(|s| *s = v);
        for (m, f) in factors.iter().enumerate() {
            if m == mode {
                continue;
            }
            for (s, &a) in scratch.iter_mut().zip(f.row(idx[m])) {
                *s *= a;
            }
        }
        for (d, &s) in out.row_mut(idx[mode]).iter_mut().zip(&scratch) {
            *d += s;
        }
    }
    Ok(out)
}

/// `Πᵀ Π` computed as the Hadamard product of the Gram matrices of every
/// factor except `skip`.
pub(crate) fn gram_hadamard(factors: &[&FactorMatrix], skip: usize) -> Result<FactorMatrix> {
    let mut acc: Option<FactorMatrix> = None;
    for (m, f) in factors.iter().enumerate() {
        if m == skip {
            continue;
        }
        let g = f.gram();
        acc = Some(match acc {
            None => g,
            Some(a) => a.hadamard(&g)?,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("no factors outside the skipped mode".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_unfolds_to_itself() {
        let t = SparseTensor::new(vec![1, 1, 1], vec![(vec![0, 0, 0], 7.0)]).unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.to_dense(), vec![vec![7.0]]);
    }

    #[test]
    fn zero_tensor_unfolds_to_zeros() {
        let t = SparseTensor::zeros(vec![2, 3, 4]).unwrap();
        let m = matricize(&t, 1).unwrap();
        assert_eq!((m.rows, m.cols), (3, 8));
        assert!(m.to_dense().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn matricize_rejects_bad_mode() {
        let t = SparseTensor::zeros(vec![2, 3]).unwrap();
        assert!(matches!(matricize(&t, 2), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn khatri_rao_examples() {
        let ones = khatri_rao(&FactorMatrix::filled(2, 1, 1.0), &FactorMatrix::filled(3, 1, 1.0)).unwrap();
        assert_eq!(ones, FactorMatrix::filled(6, 1, 1.0));

        let a = FactorMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = FactorMatrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(khatri_rao(&a, &b).unwrap().as_slice(), &[3.0, 4.0, 6.0, 8.0]);

        let a = FactorMatrix::identity(2);
        let b = FactorMatrix::from_rows(&[vec![5.0, 7.0], vec![6.0, 8.0]]).unwrap();
        assert_eq!(
            khatri_rao(&a, &b).unwrap().as_slice(),
            &[5.0, 0.0, 6.0, 0.0, 0.0, 7.0, 0.0, 8.0]
        );
        assert!(khatri_rao(&a, &FactorMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn pi_product_of_ones() {
        let f = vec![
            FactorMatrix::filled(4, 3, 2.0),
            FactorMatrix::filled(1, 3, 1.0),
            FactorMatrix::filled(1, 3, 1.0),
        ];
        assert_eq!(pi_product(&f, 0).unwrap(), FactorMatrix::filled(1, 3, 1.0));
        assert!(pi_product(&f[..1], 0).is_err());
        assert!(pi_product(&f, 3).is_err());
    }

    #[test]
    fn mttkrp_of_zero_tensor_is_zero() {
        let t = SparseTensor::zeros(vec![2, 3, 4]).unwrap();
        let f = vec![
            FactorMatrix::filled(2, 2, 1.0),
            FactorMatrix::filled(3, 2, 1.0),
            FactorMatrix::filled(4, 2, 1.0),
        ];
        assert_eq!(mttkrp(&t, &f, 1).unwrap(), FactorMatrix::zeros(3, 2));
    }

    #[test]
    fn mttkrp_rejects_mismatched_factor() {
        let t = SparseTensor::zeros(vec![2, 3, 4]).unwrap();
        let f = vec![
            FactorMatrix::filled(2, 2, 1.0),
            FactorMatrix::filled(3, 2, 1.0),
            FactorMatrix::filled(5, 2, 1.0),
        ];
        assert!(mttkrp(&t, &f, 1).is_err());
        // the skipped mode is not checked
        assert!(mttkrp(&t, &f, 2).is_ok());
    }
}
