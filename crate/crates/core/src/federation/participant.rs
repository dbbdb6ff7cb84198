//! Hospital side of the training and alignment protocols.

use rand::Rng;

use super::message::{AlignStatus, FeatureMode, Message};
use super::timing::{ComputeClock, Stopwatch};
use super::transport::Link;
use crate::admm::{update_h, update_local_feature_factor, update_patient_factor, AdmmConfig, HospitalState};
use crate::align::{classify_elements, region_counts, AlignParty, AlignmentResult, build_global_order};
use crate::error::{Error, Result};
use crate::tensor::{squared_error, CpModel, FactorMatrix, SparseTensor};

#[derive(Debug, Clone)]
pub struct ParticipantOutcome {
    pub hospital: u16,
    pub state: HospitalState,
    pub rounds: usize,
}

impl ParticipantOutcome {
    pub fn model(&self) -> Result<CpModel> {
        let factors = self.state.factor_refs().into_iter().cloned().collect();
        CpModel::new(factors)?.with_mode_names(self.state.shard.mode_names().to_vec())
    }
}

/// Sends an abort notice on every link if `result` failed locally.
pub(crate) fn abort_on_error<T>(links: &mut [&mut dyn Link], result: Result<T>) -> Result<T> {
    if let Err(e) = &result {
        if !matches!(e, Error::Aborted(_) | Error::Transport(_)) {
            for l in links.iter_mut() {
                let _ = l.send(&Message::Abort { reason: e.to_string() });
            }
        }
    }
    result
}

pub(crate) fn unexpected(expected: &str, got: Message) -> Error {
    match got {
        Message::Abort { reason } => Error::Aborted(reason),
        other => Error::Protocol(format!("expected {expected}, got {}", other.describe())),
    }
}

/// Rough operation count of one closed-form factor update for `mode`.
pub(crate) fn update_ops(shape: &[usize], nnz: usize, rank: usize, mode: usize) -> f64 {
    let r = rank as f64;
    let grams: f64 = shape
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode)
        .map(|(_, &d)| d as f64 * r * r)
        .sum();
    nnz as f64 * r * shape.len() as f64 + grams + r * r * r + shape[mode] as f64 * r * r
}

fn recv_global(link: &mut dyn Link, round: u32, mode: FeatureMode, rows: usize, rank: usize) -> Result<FactorMatrix> {
    match link.recv()? {
        Message::GlobalFeatureFactor {
            round: r,
            mode: m,
            factor,
        } if r == round && m == mode => {
            if factor.shape() != (rows, rank) {
                return Err(Error::Protocol(format!(
                    "global factor for mode {mode} is {}x{}, expected {rows}x{rank}",
                    factor.rows(),
                    factor.rank()
                )));
            }
            Ok(factor)
        }
        other => Err(unexpected(&format!("GlobalFeatureFactor(round {round}, mode {mode})"), other)),
    }
}

/// Runs the training protocol for one hospital on an already greeted link.
///
/// Round 0 is the coordinator's broadcast of the initial global factors;
/// rounds 1.. are iterations.
pub fn run_participant(
    link: &mut dyn Link,
    hospital: u16,
    shard: SparseTensor,
    cfg: &AdmmConfig,
    clock: ComputeClock,
) -> Result<ParticipantOutcome> {
    let result = training_loop(link, hospital, shard, cfg, clock);
    abort_on_error(&mut [link], result)
}

fn training_loop(
    link: &mut dyn Link,
    hospital: u16,
    shard: SparseTensor,
    cfg: &AdmmConfig,
    clock: ComputeClock,
) -> Result<ParticipantOutcome> {
    cfg.validate()?;
    let rank = cfg.rank;
    let shape = shard.shape().to_vec();
    let nnz = shard.nnz();
    let modes: Vec<FeatureMode> = (1..shard.order()).map(FeatureMode::new).collect::<Result<_>>()?;

    let mut globals = modes
        .iter()
        .map(|&m| recv_global(link, 0, m, shape[m.get()], rank))
        .collect::<Result<Vec<_>>>()?;
    let mut state = HospitalState::new(shard, &globals)?;
    let cells = state.shard.cell_count();
    let mut watch = Stopwatch::new(clock);

    for round in 1..=cfg.max_iter as u32 {
        state.patient_factor = watch.measure(update_ops(&shape, nnz, rank, 0), || {
            update_patient_factor(&state.shard, &globals, cfg.ridge)
        })?;

        for &mode in &modes {
            let n = mode.get();
            let local = watch.measure(update_ops(&shape, nnz, rank, n), || {
                update_local_feature_factor(&state.shard, &state, &globals[n - 1], n, cfg)
            })?;
            link.send(&Message::LocalFeatureFactor {
                round,
                mode,
                factor: local.clone(),
            })?;
            state.feature_factors[n - 1] = local;

            globals[n - 1] = recv_global(link, round, mode, shape[n], rank)?;
            let h = watch.measure((shape[n] * rank) as f64 * 2.0, || {
                update_h(&state.multipliers[n - 1], &globals[n - 1], &state.feature_factors[n - 1], cfg.omega)
            })?;
            link.send(&Message::MultiplierH {
                round,
                mode,
                multiplier: h.clone(),
            })?;
            state.multipliers[n - 1] = h;
        }

        let model = CpModel::new(state.factor_refs().into_iter().cloned().collect())?;
        link.send(&Message::RoundComplete {
            round,
            loss: squared_error(&model, &state.shard)?,
            cells,
            compute_seconds: watch.take(),
        })?;
        match link.recv()? {
            Message::Converged { round: r, stop } if r == round => {
                if stop {
                    return Ok(ParticipantOutcome {
                        hospital,
                        state,
                        rounds: round as usize,
                    });
                }
            }
            other => return Err(unexpected(&format!("Converged(round {round})"), other)),
        }
    }
    Err(Error::Protocol(format!(
        "coordinator did not stop the run after {} rounds",
        cfg.max_iter
    )))
}

/// What one hospital learns from aligning all its feature modes.
#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub hospital: u16,
    /// One result per feature mode, in mode order.
    pub results: Vec<AlignmentResult>,
    /// Compute time per feature mode.
    pub compute_seconds: Vec<f64>,
}

/// Runs the alignment protocol for one hospital. `vocabularies[n - 1]` holds
/// the element codes of feature mode `n`.
///
/// With a single hospital nothing is exchanged: the global order is the sorted vocabulary.
pub fn run_alignment_participant<R: Rng + ?Sized>(
    link: &mut dyn Link,
    hospital: u16,
    hospitals: usize,
    vocabularies: &[Vec<u64>],
    modulus: u64,
    clock: ComputeClock,
    rng: &mut R,
) -> Result<AlignmentOutcome> {
    let result = alignment_loop(link, hospital, hospitals, vocabularies, modulus, clock, rng);
    abort_on_error(&mut [link], result)
}

fn alignment_loop<R: Rng + ?Sized>(
    link: &mut dyn Link,
    hospital: u16,
    hospitals: usize,
    vocabularies: &[Vec<u64>],
    modulus: u64,
    clock: ComputeClock,
    rng: &mut R,
) -> Result<AlignmentOutcome> {
    let mut results = Vec::with_capacity(vocabularies.len());
    let mut compute_seconds = Vec::with_capacity(vocabularies.len());
    let mut watch = Stopwatch::new(clock);
    for (i, vocab) in vocabularies.iter().enumerate() {
        let mode = FeatureMode::new(i + 1)?;
        let mut party = AlignParty::new(hospital as usize, hospitals, mode.get(), vocab.clone(), modulus)?;
        let d = vocab.len() as f64 + 1.0;
        if hospitals == 1 {
            let classes = classify_elements(0, vocab, &[]);
            let sizes = region_counts(0, 1, &classes);
            results.push(watch.measure(d * d.log2().max(1.0), || {
                build_global_order(mode.get(), 1, &sizes, &classes)
            })?);
            compute_seconds.push(watch.take());
            continue;
        }
        let mut attempt = 0u32;
        let result = loop {
            let poly = watch.measure(d * d, || party.encode(rng))?;
            link.send(&Message::AlignPoly { attempt, mode, poly })?;
            let sums = match link.recv()? {
                Message::AlignPairwiseSums {
                    attempt: a,
                    mode: m,
                    sums,
                } if a == attempt && m == mode => sums,
                other => return Err(unexpected("AlignPairwiseSums", other)),
            };
            let mut others: Vec<usize> = sums.iter().map(|(j, _)| *j as usize).collect();
            others.sort_unstable();
            let expected: Vec<usize> = (0..hospitals).filter(|&j| j != hospital as usize).collect();
            if others != expected {
                return Err(Error::Protocol(format!("pairwise sums cover hospitals {others:?}")));
            }
            let sums: Vec<(usize, _)> = sums.into_iter().map(|(j, p)| (j as usize, p)).collect();
            let sizes = watch.measure(d * d * (hospitals - 1) as f64, || party.classify(&sums));
            link.send(&Message::AlignRegionSizes { attempt, mode, sizes })?;
            match link.recv()? {
                Message::AlignGlobalSizes {
                    attempt: a,
                    mode: m,
                    status,
                    sizes,
                } if a == attempt && m == mode => match status {
                    AlignStatus::Ok => break watch.measure(d, || party.finish(&sizes))?,
                    AlignStatus::Retry => attempt += 1,
                },
                other => return Err(unexpected("AlignGlobalSizes", other)),
            }
        };
        results.push(result);
        compute_seconds.push(watch.take());
    }
    Ok(AlignmentOutcome {
        hospital,
        results,
        compute_seconds,
    })
}
