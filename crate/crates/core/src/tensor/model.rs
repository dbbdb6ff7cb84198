use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::gram_hadamard;
use crate::tensor::sparse::default_mode_names;
use crate::tensor::{FactorMatrix, SparseTensor};

/// CP model `X = Σ_r A_0(:,r) ∘ … ∘ A_{N-1}(:,r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    factors: Vec<FactorMatrix>,
    mode_names: Vec<String>,
}

impl CpModel {
    pub fn new(factors: Vec<FactorMatrix>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a CP model needs at least 2 factors, got {}",
                factors.len()
            )));
        }
        let rank = factors[0].rank();
        if let Some(f) = factors.iter().find(|f| f.rank() != rank) {
            return Err(Error::RankMismatch {
                left: rank,
                right: f.rank(),
            });
        }
        let mode_names = default_mode_names(factors.len());
        Ok(Self { factors, mode_names })
    }

    pub fn with_mode_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.factors.len() {
            return Err(Error::InvalidArgument("mode name count differs from order".into()));
        }
        self.mode_names = names;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].rank()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(FactorMatrix::rows).collect()
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &FactorMatrix {
        &self.factors[mode]
    }

    pub fn into_factors(self) -> Vec<FactorMatrix> {
        self.factors
    }

    pub fn mode_names(&self) -> &[String] {
        &self.mode_names
    }

    /// Model value at one cell.
    pub fn value_at(&self, idx: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(idx)
                    .map(|(f, &i)| f.get(i, r))
                    .product::<f64>()
            })
            .sum()
    }

    /// `‖X‖²_F` via the Hadamard product of factor Gram matrices.
    pub fn norm_sq(&self) -> f64 {
        let refs: Vec<&FactorMatrix> = self.factors.iter().collect();
        // skip index past the end keeps every factor
        gram_hadamard(&refs, usize::MAX)
            .map(|g| g.sum())
            .unwrap_or(0.0)
    }

    /// Full dense reconstruction, first mode slowest. Small models only.
    pub fn to_dense(&self) -> Vec<f64> {
        let shape = self.shape();
        let total: usize = shape.iter().product();
        let mut idx = vec![0; shape.len()];
        let mut out = Vec::with_capacity(total);
        for _ in 0..total {
            out.push(self.value_at(&idx));
            for n in (0..shape.len()).rev() {
                idx[n] += 1;
                if idx[n] < shape[n] {
                    break;
                }
                idx[n] = 0;
            }
        }
        out
    }

    pub fn check_matches(&self, t: &SparseTensor) -> Result<()> {
        if self.shape() != t.shape() {
            return Err(Error::DimensionMismatch(format!(
                "model shape {:?} vs tensor shape {:?}",
                self.shape(),
                t.shape()
            )));
        }
        Ok(())
    }
}

/// Which cells enter the RMSE average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseScope {
    /// Every cell of the index grid, zeros included.
    #[default]
    AllCells,
    /// Only the stored nonzero cells.
    Nonzeros,
}

/// `‖X − O‖²_F` over the full grid, computed as `‖X‖² − 2⟨X,O⟩ + ‖O‖²`.
pub fn squared_error(model: &CpModel, t: &SparseTensor) -> Result<f64> {
    model.check_matches(t)?;
    let inner: f64 = t.entries().map(|(idx, v)| v * model.value_at(idx)).sum();
    Ok((model.norm_sq() - 2.0 * inner + t.norm_sq()).max(0.0))
}

fn nonzero_squared_error(model: &CpModel, t: &SparseTensor) -> Result<f64> {
    model.check_matches(t)?;
    Ok(t.entries()
        .map(|(idx, v)| {
            let d = model.value_at(idx) - v;
            d * d
        })
        .sum())
}

pub fn rmse(model: &CpModel, t: &SparseTensor) -> Result<f64> {
    rmse_with(model, t, RmseScope::AllCells)
}

pub fn rmse_with(model: &CpModel, t: &SparseTensor, scope: RmseScope) -> Result<f64> {
    let (sum, count) = match scope {
        RmseScope::AllCells => (squared_error(model, t)?, t.cell_count()),
        RmseScope::Nonzeros => (nonzero_squared_error(model, t)?, t.nnz() as f64),
    };
    Ok(if count > 0.0 { (sum / count).sqrt() } else { 0.0 })
}

/// RMSE of a horizontally partitioned model: one model per shard, pooled over all cells.
pub fn rmse_partitioned(models: &[CpModel], shards: &[SparseTensor], scope: RmseScope) -> Result<f64> {
    if models.len() != shards.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} models for {} shards",
            models.len(),
            shards.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    for (m, t) in models.iter().zip(shards) {
        match scope {
            RmseScope::AllCells => {
                sum += squared_error(m, t)?;
                count += t.cell_count();
            }
            RmseScope::Nonzeros => {
                sum += nonzero_squared_error(m, t)?;
                count += t.nnz() as f64;
            }
        }
    }
    Ok(if count > 0.0 { (sum / count).sqrt() } else { 0.0 })
}

/// `(λ/2)·‖I − AᵀA‖²_F`.
pub fn orthogonality_penalty(a: &FactorMatrix, lambda: f64) -> f64 {
    let mut g = a.gram();
    g.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
    g.add_diagonal(1.0);
    0.5 * lambda * g.frobenius_norm_sq()
}

/// `Σ_k ‖X_k − O_k‖² + Σ_{n≥1} (λ/2)‖I − A_nᵀA_n‖²`.
pub fn objective(
    models: &[CpModel],
    shards: &[SparseTensor],
    feature_factors: &[FactorMatrix],
    lambda: f64,
) -> Result<f64> {
    if models.is_empty() || models.len() != shards.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} models for {} shards",
            models.len(),
            shards.len()
        )));
    }
    let mut total = 0.0;
    for (m, t) in models.iter().zip(shards) {
        if feature_factors.len() + 1 != t.order() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature factors for a tensor of order {}",
                feature_factors.len(),
                t.order()
            )));
        }
        total += squared_error(m, t)?;
    }
    for (n, f) in feature_factors.iter().enumerate() {
        if f.rows() != shards[0].shape()[n + 1] {
            return Err(Error::DimensionMismatch(format!(
                "feature factor {} has {} rows, mode has size {}",
                n + 1,
                f.rows(),
                shards[0].shape()[n + 1]
            )));
        }
        total += orthogonality_penalty(f, lambda);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_model(shape: &[usize], rank: usize, v: f64) -> CpModel {
        CpModel::new(shape.iter().map(|&d| FactorMatrix::filled(d, rank, v)).collect()).unwrap()
    }

    #[test]
    fn zero_model_against_single_cell() {
        let t = SparseTensor::new(vec![2, 2, 2], vec![(vec![1, 0, 1], 2.0)]).unwrap();
        let m = ones_model(&[2, 2, 2], 1, 0.0);
        let r = rmse(&m, &t).unwrap();
        assert!((r - (4.0f64 / 8.0).sqrt()).abs() < 1e-15);
        assert!((rmse_with(&m, &t, RmseScope::Nonzeros).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_model_has_zero_rmse() {
        let m = ones_model(&[2, 3, 2], 1, 1.0);
        let entries = (0..2)
            .flat_map(|i| (0..3).flat_map(move |j| (0..2).map(move |k| (vec![i, j, k], 1.0))))
            .collect();
        let t = SparseTensor::new(vec![2, 3, 2], entries).unwrap();
        assert!(rmse(&m, &t).unwrap() < 1e-7);
    }

    #[test]
    fn rmse_rejects_shape_mismatch() {
        let t = SparseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(rmse(&ones_model(&[2, 2, 3], 1, 0.0), &t).is_err());
    }

    #[test]
    fn objective_zero_cases() {
        let t = SparseTensor::zeros(vec![2, 2, 2]).unwrap();
        let zero = ones_model(&[2, 2, 2], 2, 0.0);
        let feats = vec![FactorMatrix::zeros(2, 2), FactorMatrix::zeros(2, 2)];
        assert_eq!(objective(std::slice::from_ref(&zero), std::slice::from_ref(&t), &feats, 0.0).unwrap(), 0.0);

        // orthonormal feature columns make the penalty vanish
        let eye = vec![FactorMatrix::identity(2), FactorMatrix::identity(2)];
        let fit = CpModel::new(vec![FactorMatrix::zeros(2, 2), eye[0].clone(), eye[1].clone()]).unwrap();
        assert!(objective(&[fit], &[t], &eye, 2.0).unwrap().abs() < 1e-15);
    }
}
