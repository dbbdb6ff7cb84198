//! Comparison models: a central fit on pooled data, and independent local
//! fits whose feature factors are matched column-by-column and averaged once.

use serde::{Deserialize, Serialize};

use crate::admm::update_patient_factor;
use crate::error::{Error, Result};
use crate::federation::{
    encode_frame, run_federated, timing_model, FeatureMode, FederatedRun, FederationConfig, Message, TimingReport,
    TraceRow,
};
use crate::tensor::{CpModel, FactorMatrix, SparseTensor};

/// Central model: the federated algorithm with a single co-located hospital.
///
/// Nothing crosses a network, so the reported communication time is zero.
pub fn run_central(tensor: &SparseTensor, cfg: &FederationConfig) -> Result<FederatedRun> {
    let single = FederationConfig {
        hospitals: 1,
        ..cfg.clone()
    };
    let mut run = run_federated(std::slice::from_ref(tensor), &single)?;
    let compute: Vec<Vec<f64>> = run.timing.iterations.iter().map(|i| vec![i.computation_seconds]).collect();
    run.timing = timing_model(&compute, &vec![(0, 0); compute.len()], 0.0, cfg.link_rate)?;
    Ok(run)
}

/// A perfect matching of rows to columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Row `i` is matched to column `permutation[i]`.
    pub permutation: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// potentials, O(n³)). Ties go to the lowest column index.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if cost.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument("cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            permutation: Vec::new(),
            cost: 0.0,
        });
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[row_of[j] - 1] = j - 1;
    }
    let total = permutation.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(Assignment {
        permutation,
        cost: total,
    })
}

/// `cos(pivot(:,p), other(:,r))` for every column pair; zero-norm columns score 0.
pub fn cosine_similarity(pivot: &FactorMatrix, other: &FactorMatrix) -> Result<Vec<Vec<f64>>> {
    if pivot.shape() != other.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            pivot.shape(),
            other.shape()
        )));
    }
    let dots = pivot.transpose_mul(other)?;
    let pn: Vec<f64> = (0..pivot.rank()).map(|r| pivot.column(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let on: Vec<f64> = (0..other.rank()).map(|r| other.column(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    Ok((0..pivot.rank())
        .map(|p| {
            (0..other.rank())
                .map(|r| {
                    let d = pn[p] * on[r];
                    if d > 0.0 {
                        dots.get(p, r) / d
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// Matches the columns of `other` to those of `pivot` by cosine similarity.
/// `permutation[p]` is the column of `other` paired with pivot column `p`;
/// `cost` is the total similarity.
pub fn match_columns(pivot: &FactorMatrix, other: &FactorMatrix) -> Result<Assignment> {
    let sim = cosine_similarity(pivot, other)?;
    let neg: Vec<Vec<f64>> = sim.iter().map(|row| row.iter().map(|s| -s).collect()).collect();
    let a = hungarian(&neg)?;
    Ok(Assignment {
        cost: -a.cost,
        permutation: a.permutation,
    })
}

#[derive(Debug, Clone)]
pub struct LocalRun {
    /// Matched and averaged feature factors.
    pub global_factors: Vec<FactorMatrix>,
    /// Each hospital's patient factor refit against the averaged feature factors.
    pub models: Vec<CpModel>,
    /// Each hospital's own central run.
    pub traces: Vec<Vec<TraceRow>>,
    /// `assignments[k][n - 1]` matches hospital `k` to the pivot on mode `n`.
    pub assignments: Vec<Vec<Assignment>>,
    pub timing: TimingReport,
}

/// Local model: every hospital fits its own shard, the coordinator matches
/// each feature mode to the pivot hospital 0 and averages uniformly, once.
///
/// With K = 1 this is the central run unchanged.
pub fn run_local(shards: &[SparseTensor], cfg: &FederationConfig) -> Result<LocalRun> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards".into()));
    }
    let runs = shards
        .iter()
        .map(|s| run_central(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let traces: Vec<Vec<TraceRow>> = runs.iter().map(|r| r.trace.clone()).collect();
    let k = shards.len();

    if k == 1 {
        let run = runs.into_iter().next().expect("one run");
        return Ok(LocalRun {
            global_factors: run.models[0].factors()[1..].to_vec(),
            models: run.models,
            traces,
            assignments: vec![Vec::new()],
            timing: run.timing,
        });
    }

    let order = shards[0].order();
    let locals: Vec<&[FactorMatrix]> = runs.iter().map(|r| &r.models[0].factors()[1..]).collect();
    let mut assignments = vec![Vec::with_capacity(order - 1); k];
    let mut global_factors = Vec::with_capacity(order - 1);
    for n in 0..order - 1 {
        let pivot = &locals[0][n];
        let mut sum = FactorMatrix::zeros(pivot.rows(), pivot.rank());
        for (h, factors) in locals.iter().enumerate() {
            let a = match_columns(pivot, &factors[n])?;
            sum.axpy(1.0 / k as f64, &factors[n].permute_columns(&a.permutation)?)?;
            assignments[h].push(a);
        }
        global_factors.push(sum);
    }

    let mut models = Vec::with_capacity(k);
    for shard in shards {
        let patient = update_patient_factor(shard, &global_factors, cfg.admm.ridge)?;
        let mut factors = vec![patient];
        factors.extend(global_factors.iter().cloned());
        models.push(CpModel::new(factors)?.with_mode_names(shard.mode_names().to_vec())?);
    }

    // hospitals fit in parallel; then one upload of local factors and one download of the average
    let compute: f64 = runs.iter().map(|r| r.timing.computation_seconds).fold(0.0, f64::max);
    let mut up = 0u64;
    let mut down = 0u64;
    for (n, a) in global_factors.iter().enumerate() {
        let mode = FeatureMode::new(n + 1)?;
        for factors in &locals {
            up += encode_frame(&Message::LocalFeatureFactor {
                round: 0,
                mode,
                factor: factors[n].clone(),
            })?
            .len() as u64;
        }
        down += k as u64
            * encode_frame(&Message::GlobalFeatureFactor {
                round: 0,
                mode,
                factor: a.clone(),
            })?
            .len() as u64;
    }
    let timing = timing_model(&[vec![compute]], &[(up, down)], 0.0, cfg.link_rate)?;
    Ok(LocalRun {
        global_factors,
        models,
        traces,
        assignments,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_favoring_cost() {
        let a = hungarian(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn anti_diagonal_and_equal_costs() {
        let a = hungarian(&[vec![5.0, 1.0], vec![1.0, 5.0]]).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        let a = hungarian(&vec![vec![2.5; 4]; 4]).unwrap();
        assert_eq!(a.cost, 10.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hungarian(&[vec![1.0, 2.0]]).is_err());
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
        assert_eq!(hungarian(&[]).unwrap().permutation, Vec::<usize>::new());
    }

    #[test]
    fn zero_column_scores_zero() {
        let p = FactorMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let o = FactorMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = cosine_similarity(&p, &o).unwrap();
        assert_eq!(s[1], vec![0.0, 0.0]);
        assert!((s[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matching_undoes_a_permutation() {
        let p = FactorMatrix::from_rows(&[vec![1.0, 0.0, 0.2], vec![0.0, 1.0, 0.1], vec![0.3, 0.0, 1.0]]).unwrap();
        let o = p.permute_columns(&[2, 0, 1]).unwrap().scale(3.0);
        let a = match_columns(&p, &o).unwrap();
        assert!(o.permute_columns(&a.permutation).unwrap().scale(1.0 / 3.0).max_abs_diff(&p) < 1e-15);
    }
}
