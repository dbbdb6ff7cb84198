//! Horizontal (patient-mode) partitioning into hospital shards.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// Which patients each hospital holds.
///
/// Hospital 0 is the large one: it gets `max(⌊s·P⌋, ⌈P/K⌉)` patients and the
/// rest are spread as evenly as possible, earlier hospitals taking the extra.
/// Any hospital left empty then takes one patient from the largest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub k: usize,
    pub skew: f64,
    pub seed: u64,
    /// `assignments[k]` lists original patient indices, ascending.
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn new(num_patients: usize, k: usize, skew: f64, seed: u64) -> Result<Self> {
        let sizes = shard_sizes(num_patients, k, skew)?;
        let mut order: Vec<usize> = (0..num_patients).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = Vec::with_capacity(k);
        let mut start = 0;
        for size in sizes {
            let mut ids = order[start..start + size].to_vec();
            ids.sort_unstable();
            assignments.push(ids);
            start += size;
        }
        Ok(Self {
            k,
            skew,
            seed,
            assignments,
        })
    }

    /// Even split; equivalent to a skew of `1/K`.
    pub fn even(num_patients: usize, k: usize, seed: u64) -> Result<Self> {
        Self::new(num_patients, k, 0.0, seed)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn num_patients(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }
}

pub fn shard_sizes(num_patients: usize, k: usize, skew: f64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if num_patients < k {
        return Err(Error::InvalidArgument(format!(
            "{num_patients} patients cannot occupy {k} hospitals"
        )));
    }
    if !(0.0..1.0).contains(&skew) {
        return Err(Error::InvalidArgument(format!("skew {skew} outside [0, 1)")));
    }
    if k == 1 {
        return Ok(vec![num_patients]);
    }
    let even_share = num_patients.div_ceil(k);
    let first = ((skew * num_patients as f64).floor() as usize).max(even_share);
    let rest = num_patients - first;
    let mut sizes = vec![first];
    let (base, extra) = (rest / (k - 1), rest % (k - 1));
    sizes.extend((0..k - 1).map(|i| base + usize::from(i < extra)));

    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("k >= 1");
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    Ok(sizes)
}

/// Splits `t` along mode 0. Patient indices are re-based per shard in plan order.
pub fn partition_patients(t: &SparseTensor, plan: &PartitionPlan) -> Result<Vec<SparseTensor>> {
    let p = t.shape()[0];
    if plan.num_patients() != p {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} patients, tensor has {p}",
            plan.num_patients()
        )));
    }
    let mut owner = vec![(usize::MAX, 0usize); p];
    for (k, ids) in plan.assignments.iter().enumerate() {
        for (local, &g) in ids.iter().enumerate() {
            if g >= p || owner[g].0 != usize::MAX {
                return Err(Error::InvalidArgument(format!("patient {g} missing or assigned twice")));
            }
            owner[g] = (k, local);
        }
    }
    let order = t.order();
    let mut coords = vec![Vec::new(); plan.k];
    let mut values = vec![Vec::new(); plan.k];
    for (idx, v) in t.entries() {
        let (k, local) = owner[idx[0]];
        coords[k].push(local);
        coords[k].extend_from_slice(&idx[1..order]);
        values[k].push(v);
    }
    coords
        .into_iter()
        .zip(values)
        .zip(&plan.assignments)
        .map(|((c, v), ids)| {
            let mut shape = t.shape().to_vec();
            shape[0] = ids.len();
            SparseTensor::from_parts(shape, c, v)?.with_mode_names(t.mode_names().to_vec())
        })
        .collect()
}

/// Inverse of [`partition_patients`]: maps every shard entry back to its original patient index.
pub fn concatenate(shards: &[SparseTensor], plan: &PartitionPlan) -> Result<SparseTensor> {
    if shards.len() != plan.k {
        return Err(Error::DimensionMismatch(format!("{} shards for K = {}", shards.len(), plan.k)));
    }
    let first = &shards[0];
    let order = first.order();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for (shard, ids) in shards.iter().zip(&plan.assignments) {
        if shard.shape()[0] != ids.len() || shard.shape()[1..] != first.shape()[1..] {
            return Err(Error::DimensionMismatch("shard does not match the plan".into()));
        }
        for (idx, v) in shard.entries() {
            coords.push(ids[idx[0]]);
            coords.extend_from_slice(&idx[1..order]);
            values.push(v);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[0] = plan.num_patients();
    SparseTensor::from_parts(shape, coords, values)?.with_mode_names(first.mode_names().to_vec())
}
