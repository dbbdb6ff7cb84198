//! Seeded low-rank count tensors with a known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CpModel, FactorMatrix, SparseTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub shape: Vec<usize>,
    pub rank: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Counts are clamped to `[0, cap]`.
    pub cap: u32,
    /// Probability that a ground-truth factor entry is nonzero.
    pub factor_density: f64,
    /// The ground truth is scaled so its largest cell equals this value.
    pub peak: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: vec![50, 40, 30],
            rank: 5,
            noise_sd: 0.1,
            seed: 0,
            cap: 3,
            factor_density: 0.5,
            peak: 3.0,
        }
    }
}

/// Noise draws are clipped to ±3 standard deviations.
const NOISE_CLIP: f64 = 3.0;

pub fn synthesize_tensor(cfg: &SynthConfig) -> Result<(SparseTensor, CpModel)> {
    if cfg.shape.len() < 2 || cfg.shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("bad synthetic shape {:?}", cfg.shape)));
    }
    if cfg.rank == 0 || !(cfg.factor_density > 0.0 && cfg.factor_density <= 1.0) {
        return Err(Error::InvalidArgument("rank must be positive and density in (0, 1]".into()));
    }
    if !(cfg.noise_sd >= 0.0) || !(cfg.peak > 0.0) {
        return Err(Error::InvalidArgument("noise_sd must be >= 0 and peak > 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut factors: Vec<FactorMatrix> = cfg
        .shape
        .iter()
        .map(|&d| {
            let mut f = FactorMatrix::zeros(d, cfg.rank);
            for r in 0..cfg.rank {
                // keep at least one entry per column so every component is live
                let anchor = rng.random_range(0..d);
                for i in 0..d {
                    if i == anchor || rng.random::<f64>() < cfg.factor_density {
                        f.set(i, r, rng.random::<f64>());
                    }
                }
            }
            f
        })
        .collect();

    let dense = CpModel::new(factors.clone())?.to_dense();
    let max = dense.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        factors[0] = factors[0].scale(cfg.peak / max);
    }
    let truth = CpModel::new(factors)?;
    let dense = truth.to_dense();

    let noise = if cfg.noise_sd > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let cap = f64::from(cfg.cap);
    let order = cfg.shape.len();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut idx = vec![0usize; order];
    for &x in &dense {
        let eps = noise.map_or(0.0, |n| {
            let z: f64 = n.sample(&mut rng);
            z.clamp(-NOISE_CLIP * cfg.noise_sd, NOISE_CLIP * cfg.noise_sd)
        });
        let v = (x + eps).round().clamp(0.0, cap);
        if v > 0.0 {
            coords.extend_from_slice(&idx);
            values.push(v);
        }
        for n in (0..order).rev() {
            idx[n] += 1;
            if idx[n] < cfg.shape[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    let tensor = SparseTensor::from_parts(cfg.shape.clone(), coords, values)?;
    Ok((tensor, truth))
}
