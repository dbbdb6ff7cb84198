use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate-format tensor of nonnegative values.
///
/// Coordinates are stored flat (`nnz × order`). Duplicate coordinates
/// passed to the constructor are summed; the first occurrence keeps its
/// position so entry order stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTensor {
    shape: Vec<usize>,
    coords: Vec<usize>,
    values: Vec<f64>,
    mode_names: Vec<String>,
}

impl SparseTensor {
    pub fn new(shape: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let order = shape.len();
        let mut coords = Vec::with_capacity(entries.len() * order);
        let mut values = Vec::with_capacity(entries.len());
        for (idx, v) in entries {
            if idx.len() != order {
                return Err(Error::InvalidTensor(format!(
                    "index {idx:?} has length {} for a tensor of order {order}",
                    idx.len()
                )));
            }
            coords.extend_from_slice(&idx);
            values.push(v);
        }
        Self::from_parts(shape, coords, values)
    }

    /// Builds a tensor from flat coordinates, summing duplicates.
    pub fn from_parts(shape: Vec<usize>, coords: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let order = shape.len();
        if order < 2 {
            return Err(Error::InvalidTensor(format!("order {order} < 2")));
        }
        if coords.len() != values.len() * order {
            return Err(Error::InvalidTensor("coordinate/value length mismatch".into()));
        }
        for (e, idx) in coords.chunks_exact(order).enumerate() {
            for (n, (&i, &dim)) in idx.iter().zip(&shape).enumerate() {
                if i >= dim {
                    return Err(Error::InvalidTensor(format!(
                        "entry {e}: index {i} out of range for mode {n} of size {dim}"
                    )));
                }
            }
            let v = values[e];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidTensor(format!("entry {e}: value {v} is not finite and >= 0")));
            }
        }

        let mut seen: HashMap<&[usize], usize> = HashMap::with_capacity(values.len());
        let mut keep = Vec::with_capacity(values.len());
        let mut merged = Vec::with_capacity(values.len());
        for (e, idx) in coords.chunks_exact(order).enumerate() {
            match seen.get(idx) {
                Some(&slot) => merged[slot] += values[e],
                None => {
                    seen.insert(idx, merged.len());
                    keep.push(e);
                    merged.push(values[e]);
                }
            }
        }
        let coords = if keep.len() == values.len() {
            coords
        } else {
            keep.iter()
                .flat_map(|&e| coords[e * order..(e + 1) * order].iter().copied())
                .collect()
        };
        let mode_names = default_mode_names(order);
        Ok(Self {
            shape,
            coords,
            values: merged,
            mode_names,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::from_parts(shape, Vec::new(), Vec::new())
    }

    pub fn with_mode_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.order() {
            return Err(Error::InvalidTensor(format!(
                "{} mode names for a tensor of order {}",
                names.len(),
                self.order()
            )));
        }
        self.mode_names = names;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mode_names(&self) -> &[String] {
        &self.mode_names
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    #[inline]
    pub fn index(&self, e: usize) -> &[usize] {
        let n = self.order();
        &self.coords[e * n..(e + 1) * n]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.coords
            .chunks_exact(self.order())
            .zip(self.values.iter().copied())
    }

    /// Number of cells in the full index grid.
    pub fn cell_count(&self) -> f64 {
        self.shape.iter().map(|&d| d as f64).product()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Dense row-major copy with the first mode slowest. Small tensors only.
    pub fn to_dense(&self) -> Vec<f64> {
        let total: usize = self.shape.iter().product();
        let mut out = vec![0.0; total];
        for (idx, v) in self.entries() {
            out[linear_index(&self.shape, idx)] += v;
        }
        out
    }

    /// Same entries, reordered by `perm` (entry `e` of the result is entry `perm[e]`).
    pub fn reorder_entries(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.nnz() {
            return Err(Error::InvalidArgument("permutation length differs from nnz".into()));
        }
        let n = self.order();
        let coords = perm
            .iter()
            .flat_map(|&e| self.coords[e * n..(e + 1) * n].iter().copied())
            .collect();
        let values = perm.iter().map(|&e| self.values[e]).collect();
        let mut t = Self::from_parts(self.shape.clone(), coords, values)?;
        t.mode_names = self.mode_names.clone();
        Ok(t)
    }

    /// Same entries sorted by index, first mode slowest. Two tensors hold the
    /// same entries iff their sorted forms are equal.
    pub fn sorted(&self) -> Self {
        let n = self.order();
        let mut perm: Vec<usize> = (0..self.nnz()).collect();
        perm.sort_by(|&a, &b| self.coords[a * n..(a + 1) * n].cmp(&self.coords[b * n..(b + 1) * n]));
        self.reorder_entries(&perm).expect("permutation of own entries")
    }

    /// Stacks tensors along mode 0; all other modes must agree.
    pub fn concat_mode0(parts: &[SparseTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no tensors to concatenate".into()))?;
        let n = first.order();
        let mut offset = 0;
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::DimensionMismatch(format!(
                    "feature shape {:?} vs {:?}",
                    &p.shape[1..],
                    &first.shape[1..]
                )));
            }
            for (idx, v) in p.entries() {
                coords.push(idx[0] + offset);
                coords.extend_from_slice(&idx[1..n]);
                values.push(v);
            }
            offset += p.shape[0];
        }
        let mut shape = first.shape.clone();
        shape[0] = offset;
        let mut t = Self::from_parts(shape, coords, values)?;
        t.mode_names = first.mode_names.clone();
        Ok(t)
    }
}

pub(crate) fn default_mode_names(order: usize) -> Vec<String> {
    (0..order)
        .map(|n| if n == 0 { "patient".to_string() } else { format!("feature{n}") })
        .collect()
}

/// Row-major linear index with the first mode slowest.
pub fn linear_index(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &d)| acc * d + i)
}
