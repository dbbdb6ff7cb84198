//! Closed-form consensus-ADMM updates for federated CP factorization.
//!
//! Mode 0 is the patient mode and is never shared. Every other mode is a
//! feature mode: hospital `k` keeps a local copy `A_k` of each feature factor
//! plus a multiplier `H_k`, and the server keeps the consensus factor `A`, the
//! auxiliary copy `B` used by the orthogonality penalty, and its multiplier `Y`.
//!
//! All functions here are pure. Linear systems are solved, never inverted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, condition_estimate, solve_left, solve_right};
use crate::tensor::kernels::{gram_hadamard, mttkrp_refs};
use crate::tensor::{FactorMatrix, SparseTensor};

/// Hyperparameters of one factorization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rank: usize,
    /// Weight of the orthogonality penalty.
    pub lambda: f64,
    /// Consensus penalty between local and global feature factors.
    pub omega: f64,
    /// Penalty tying the global factor to its auxiliary copy.
    pub mu: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Relative ridge (times `trace/R`) applied to a singular patient-mode Gram matrix.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            lambda: 1e-2,
            omega: 1.0,
            mu: 1.0,
            max_iter: 100,
            tol: 1e-6,
            ridge: 1e-9,
            seed: 0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.rank == 0 {
            return bad("rank must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad("omega must be finite and > 0");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and > 0");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be >= 0");
        }
        Ok(())
    }
}

/// Everything hospital `k` holds. Nothing in here but the feature factors
/// and multipliers ever leaves the hospital.
#[derive(Debug, Clone)]
pub struct HospitalState {
    pub shard: SparseTensor,
    pub patient_factor: FactorMatrix,
    /// `feature_factors[n - 1]` is the local copy for tensor mode `n`.
    pub feature_factors: Vec<FactorMatrix>,
    pub multipliers: Vec<FactorMatrix>,
}

impl HospitalState {
    /// Local copies start at the broadcast global factors, multipliers at zero.
    pub fn new(shard: SparseTensor, initial_global: &[FactorMatrix]) -> Result<Self> {
        if initial_global.len() + 1 != shard.order() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature factors for a shard of order {}",
                initial_global.len(),
                shard.order()
            )));
        }
        let rank = initial_global[0].rank();
        for (n, f) in initial_global.iter().enumerate() {
            if f.rows() != shard.shape()[n + 1] || f.rank() != rank {
                return Err(Error::DimensionMismatch(format!(
                    "initial factor for mode {} is {}x{}, expected {}x{rank}",
                    n + 1,
                    f.rows(),
                    f.rank(),
                    shard.shape()[n + 1]
                )));
            }
        }
        Ok(Self {
            patient_factor: FactorMatrix::zeros(shard.shape()[0], rank),
            feature_factors: initial_global.to_vec(),
            multipliers: initial_global
                .iter()
                .map(|f| FactorMatrix::zeros(f.rows(), rank))
                .collect(),
            shard,
        })
    }

    /// All N factors in tensor-mode order.
    pub fn factor_refs(&self) -> Vec<&FactorMatrix> {
        std::iter::once(&self.patient_factor)
            .chain(self.feature_factors.iter())
            .collect()
    }
}

/// The coordinator's state. Holds no tensor data.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_factors: Vec<FactorMatrix>,
    pub b_factors: Vec<FactorMatrix>,
    pub y_multipliers: Vec<FactorMatrix>,
}

impl ServerState {
    /// `B` starts equal to `A`, `Y` at zero.
    pub fn new(initial_global: Vec<FactorMatrix>) -> Self {
        Self {
            b_factors: initial_global.clone(),
            y_multipliers: initial_global
                .iter()
                .map(|f| FactorMatrix::zeros(f.rows(), f.rank()))
                .collect(),
            global_factors: initial_global,
        }
    }
}

/// Seeded initial feature factors, one per feature mode: i.i.d. uniform
/// [0,1) entries with every column scaled to unit norm.
pub fn initial_feature_factors(feature_sizes: &[usize], rank: usize, seed: u64) -> Vec<FactorMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    feature_sizes
        .iter()
        .map(|&d| {
            let mut f = FactorMatrix::random_uniform(d, rank, &mut rng);
            for r in 0..rank {
                let norm = f.column(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for i in 0..d {
                        f.set(i, r, f.get(i, r) / norm);
                    }
                }
            }
            f
        })
        .collect()
}

fn singular(mode: usize, g: &FactorMatrix) -> Error {
    Error::Singular {
        mode,
        condition: condition_estimate(g),
    }
}

/// Patient-mode least squares: `A_k1 = (O_(1)k Π)(ΠᵀΠ)⁻¹`.
///
/// A singular Gram matrix gets `ridge·trace/R` added to its diagonal.
pub fn update_patient_factor(
    shard: &SparseTensor,
    feature_factors: &[FactorMatrix],
    ridge: f64,
) -> Result<FactorMatrix> {
    if feature_factors.len() + 1 != shard.order() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature factors for a shard of order {}",
            feature_factors.len(),
            shard.order()
        )));
    }
    // slot 0 is skipped by both kernels
    let refs: Vec<&FactorMatrix> = std::iter::once(&feature_factors[0])
        .chain(feature_factors.iter())
        .collect();
    let m = mttkrp_refs(shard, &refs, 0)?;
    let gram = gram_hadamard(&refs, 0)?;
    if let Some(x) = cholesky_right(&gram, &m) {
        return Ok(x);
    }
    let mut ridged = gram.clone();
    ridged.add_diagonal(ridge * gram.trace() / gram.rows() as f64);
    if let Some(x) = cholesky_right(&ridged, &m) {
        return Ok(x);
    }
    match solve_right(&ridged, &m) {
        Ok(x) if ridge > 0.0 && ridged.trace() > gram.trace() => Ok(x),
        _ => Err(singular(0, &gram)),
    }
}

fn cholesky_right(g: &FactorMatrix, rhs: &FactorMatrix) -> Option<FactorMatrix> {
    let gm = nalgebra::DMatrix::from_row_slice(g.rows(), g.rank(), g.as_slice());
    let chol = gm.cholesky()?;
    let b = nalgebra::DMatrix::from_row_slice(rhs.rank(), rhs.rows(), rhs.transpose().as_slice());
    let x = chol.solve(&b);
    let mut out = FactorMatrix::zeros(rhs.rows(), rhs.rank());
    for i in 0..rhs.rows() {
        for r in 0..rhs.rank() {
            out.set(i, r, x[(r, i)]);
        }
    }
    out.is_finite().then_some(out)
}

/// Local feature update for tensor mode `mode ≥ 1`:
/// `A_k = (O_(n)k Π_k + ωA + H_k)(Π_kᵀΠ_k + ωI)⁻¹`.
///
/// `Π_k` is built from the hospital's current factors, patient factor included.
pub fn update_local_feature_factor(
    shard: &SparseTensor,
    own_state: &HospitalState,
    global_factor: &FactorMatrix,
    mode: usize,
    cfg: &AdmmConfig,
) -> Result<FactorMatrix> {
    let order = shard.order();
    if mode == 0 || mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    if own_state.feature_factors.len() + 1 != order || own_state.multipliers.len() + 1 != order {
        return Err(Error::DimensionMismatch("hospital state does not match shard order".into()));
    }
    let h = &own_state.multipliers[mode - 1];
    global_factor.check_same_shape(h)?;
    if global_factor.rows() != shard.shape()[mode] {
        return Err(Error::DimensionMismatch(format!(
            "global factor has {} rows, mode {mode} has size {}",
            global_factor.rows(),
            shard.shape()[mode]
        )));
    }
    let refs = own_state.factor_refs();
    let mut rhs = mttkrp_refs(shard, &refs, mode)?;
    rhs.axpy(cfg.omega, global_factor)?;
    rhs.axpy(1.0, h)?;
    let mut gram = gram_hadamard(&refs, mode)?;
    gram.add_diagonal(cfg.omega);
    solve_right(&gram, &rhs).map_err(|_| singular(mode, &gram))
}

/// Server update of the consensus factor:
/// `A = ((μ+Kω)I + λBBᵀ)⁻¹ (λB + μB + Y + ωΣA_k − ΣH_k)`.
///
/// The `I_n × I_n` system is reduced to an R×R one with the Woodbury identity.
pub fn update_global_feature_factor(
    locals: &[FactorMatrix],
    h_multipliers: &[FactorMatrix],
    b: &FactorMatrix,
    y: &FactorMatrix,
    cfg: &AdmmConfig,
    k: usize,
) -> Result<FactorMatrix> {
    if locals.len() != k || h_multipliers.len() != k || k == 0 {
        return Err(Error::DimensionMismatch(format!(
            "K = {k} with {} local factors and {} multipliers",
            locals.len(),
            h_multipliers.len()
        )));
    }
    b.check_same_shape(y)?;
    let c = cfg.mu + k as f64 * cfg.omega;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("mu + K*omega = {c} must be positive")));
    }

    let mut rhs = b.scale(cfg.lambda + cfg.mu);
    rhs.axpy(1.0, y)?;
    for (a_k, h_k) in locals.iter().zip(h_multipliers) {
        rhs.axpy(cfg.omega, a_k)?;
        rhs.axpy(-1.0, h_k)?;
    }
    if cfg.lambda == 0.0 {
        return Ok(rhs.scale(1.0 / c));
    }

    // (cI + λBBᵀ)⁻¹ = (1/c)[I − λB(cI_R + λBᵀB)⁻¹Bᵀ]
    let mut small = b.gram().scale(cfg.lambda);
    small.add_diagonal(c);
    let bt_rhs = b.transpose_mul(&rhs)?;
    let w = solve_left(&small, &bt_rhs).map_err(|e: linalg::SolveFailure| Error::Singular {
        mode: 0,
        condition: e.condition,
    })?;
    let mut out = rhs;
    out.axpy(-cfg.lambda, &b.matmul(&w)?)?;
    Ok(out.scale(1.0 / c))
}

/// `B = A + Y/μ`.
pub fn update_b(a: &FactorMatrix, y: &FactorMatrix, mu: f64) -> Result<FactorMatrix> {
    if mu == 0.0 {
        return Err(Error::InvalidArgument("mu must be nonzero".into()));
    }
    let mut out = a.clone();
    out.axpy(1.0 / mu, y)?;
    Ok(out)
}

/// `Y + μ(B − A)`.
pub fn update_y(y: &FactorMatrix, b: &FactorMatrix, a: &FactorMatrix, mu: f64) -> Result<FactorMatrix> {
    let mut out = y.clone();
    out.axpy(mu, &b.sub(a)?)?;
    Ok(out)
}

/// `H + ω(A − A_k)`.
pub fn update_h(
    h: &FactorMatrix,
    global_a: &FactorMatrix,
    local_a: &FactorMatrix,
    omega: f64,
) -> Result<FactorMatrix> {
    let mut out = h.clone();
    out.axpy(omega, &global_a.sub(local_a)?)?;
    Ok(out)
}

/// `sqrt(Σ_k ‖A_k − A‖²_F)` for one feature mode.
pub fn primal_residual(locals: &[FactorMatrix], global_a: &FactorMatrix) -> Result<f64> {
    let mut total = 0.0;
    for a_k in locals {
        total += a_k.sub(global_a)?.frobenius_norm_sq();
    }
    Ok(total.sqrt())
}

/// Primal residual scaled by `sqrt(K)·‖A‖_F`.
pub fn normalized_residual(locals: &[FactorMatrix], global_a: &FactorMatrix) -> Result<f64> {
    let k = locals.len() as f64;
    Ok(primal_residual(locals, global_a)? / (k.sqrt() * global_a.frobenius_norm() + 1e-12))
}

/// Stopping rule: normalized residual and relative objective change both below `tol`.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    tol: f64,
    previous: Option<f64>,
}

impl ConvergenceMonitor {
    pub fn new(tol: f64) -> Self {
        Self { tol, previous: None }
    }

    /// Records one iteration; returns whether the run has converged.
    pub fn observe(&mut self, objective: f64, residual: f64) -> bool {
        let prev = self.previous.replace(objective);
        match prev {
            None => false,
            Some(p) => {
                let rel = relative_change(p, objective);
                residual < self.tol && rel < self.tol
            }
        }
    }
}

/// `|cur − prev| / |cur|`, zero when both vanish.
pub fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / cur.abs().max(f64::MIN_POSITIVE)
    }
}
