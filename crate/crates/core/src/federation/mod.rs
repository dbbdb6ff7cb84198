//! Coordinator/participant protocol over in-process or TCP links.
//!
//! Every party runs the same state machine whichever transport carries its
//! frames. Participants own one shard each; the coordinator sees feature
//! factors, multipliers and per-round scalar summaries only.

mod coordinator;
pub mod message;
mod participant;
mod timing;
pub mod transport;

use std::net::TcpListener;

use serde::{Deserialize, Serialize};

pub use coordinator::{run_alignment_coordinator, run_coordinator, AlignmentSummary, CoordinatorOutcome, TraceRow};
pub use message::{decode_frame, encode_frame, FeatureMode, Message, MsgType};
pub use participant::{run_alignment_participant, run_participant, AlignmentOutcome, ParticipantOutcome};
pub use timing::{timing_model, ComputeClock, IterationTiming, TimingReport, DEFAULT_LINK_RATE, OPS_PER_SECOND};
pub use transport::{FrameLog, Link, LinkStats, LoggedFrame, Party};

use transport::{accept_participants, channel_pair, connect, hello_as_coordinator, hello_as_participant};

use crate::admm::AdmmConfig;
use crate::align::{AlignmentResult, DEFAULT_MODULUS, MAX_HOSPITALS};
use crate::data::reindex_feature_mode;
use crate::error::{Error, Result};
use crate::tensor::{rmse_partitioned, CpModel, FactorMatrix, RmseScope, SparseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    /// Number of hospitals, K.
    pub hospitals: usize,
    pub transport: TransportKind,
    /// Modeled link speed in bytes per second.
    pub link_rate: f64,
    pub admm: AdmmConfig,
    /// Coordinator listen address for the TCP transport.
    pub listen: String,
    pub compute_clock: ComputeClock,
    pub max_align_retries: u32,
    /// Keep a copy of every frame for auditing.
    pub record_frames: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            hospitals: 1,
            transport: TransportKind::InProcess,
            link_rate: DEFAULT_LINK_RATE,
            admm: AdmmConfig::default(),
            listen: "127.0.0.1:0".into(),
            compute_clock: ComputeClock::Ops,
            max_align_retries: 3,
            record_frames: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hospitals == 0 || self.hospitals > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("K = {} out of range", self.hospitals)));
        }
        if !(self.link_rate > 0.0 && self.link_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("link rate {} must be positive", self.link_rate)));
        }
        self.admm.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FederatedRun {
    /// Per-hospital models: own patient factor plus local feature copies.
    pub models: Vec<CpModel>,
    pub global_factors: Vec<FactorMatrix>,
    pub timing: TimingReport,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// Every frame sent, when `record_frames` is set.
    pub frames: Vec<LoggedFrame>,
}

impl FederatedRun {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn final_rmse(&self) -> f64 {
        self.trace.last().map_or(0.0, |t| t.rmse)
    }

    /// Pooled RMSE of the per-hospital models against their shards.
    pub fn rmse(&self, shards: &[SparseTensor], scope: RmseScope) -> Result<f64> {
        rmse_partitioned(&self.models, shards, scope)
    }
}

fn check_shards(shards: &[SparseTensor], k: usize) -> Result<Vec<usize>> {
    if shards.len() != k {
        return Err(Error::InvalidArgument(format!("{} shards for K = {k}", shards.len())));
    }
    let first = &shards[0];
    if first.order() < 2 {
        return Err(Error::InvalidTensor("need a patient mode and at least one feature mode".into()));
    }
    for (i, s) in shards.iter().enumerate() {
        if s.order() != first.order() || s.shape()[1..] != first.shape()[1..] {
            return Err(Error::DimensionMismatch(format!(
                "shard {i} has feature shape {:?}, shard 0 has {:?}; align vocabularies first",
                &s.shape()[1..],
                &first.shape()[1..]
            )));
        }
    }
    Ok(first.shape()[1..].to_vec())
}

/// Fits one CP model across `shards`, one hospital per shard.
///
/// Participants run on their own threads; the coordinator runs on the
/// calling thread. The result is bitwise reproducible for a fixed seed and
/// K, whichever transport is used.
pub fn run_federated(shards: &[SparseTensor], cfg: &FederationConfig) -> Result<FederatedRun> {
    cfg.validate()?;
    let feature_sizes = check_shards(shards, cfg.hospitals)?;
    let log = cfg.record_frames.then(FrameLog::new);
    let admm = &cfg.admm;

    let (outcome, participants) = std::thread::scope(|s| -> Result<_> {
        let mut coordinator_links: Vec<Box<dyn Link>> = Vec::with_capacity(shards.len());
        let mut handles = Vec::with_capacity(shards.len());
        match cfg.transport {
            TransportKind::InProcess => {
                for (k, shard) in shards.iter().enumerate() {
                    let (c, mut h) = channel_pair(k as u16, log.clone());
                    coordinator_links.push(Box::new(c));
                    handles.push(s.spawn(move || {
                        hello_as_participant(&mut h, k as u16)?;
                        run_participant(&mut h, k as u16, shard.clone(), admm, cfg.compute_clock)
                    }));
                }
                for (k, l) in coordinator_links.iter_mut().enumerate() {
                    hello_as_coordinator(l.as_mut(), k as u16)?;
                }
            }
            TransportKind::Tcp => {
                let listener = TcpListener::bind(&cfg.listen)
                    .map_err(|e| Error::Transport(format!("bind {}: {e}", cfg.listen)))?;
                let addr = listener.local_addr()?;
                for (k, shard) in shards.iter().enumerate() {
                    let log = log.clone();
                    handles.push(s.spawn(move || {
                        let mut link = connect(addr, k as u16, log)?;
                        run_participant(&mut link, k as u16, shard.clone(), admm, cfg.compute_clock)
                    }));
                }
                for l in accept_participants(&listener, shards.len(), log.clone())? {
                    coordinator_links.push(Box::new(l));
                }
            }
        }
        let mut refs: Vec<&mut dyn Link> = coordinator_links.iter_mut().map(|b| -> &mut dyn Link { b.as_mut() }).collect();
        let outcome = run_coordinator(&mut refs, &feature_sizes, admm);
        drop(refs);
        drop(coordinator_links);
        let participants: Vec<Result<ParticipantOutcome>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("participant thread panicked".into()))))
            .collect();
        Ok((outcome, participants))
    })?;

    let outcome = outcome?;
    let mut models = Vec::with_capacity(participants.len());
    for p in participants {
        models.push(p?.model()?);
    }
    let timing = timing_model(&outcome.compute, &outcome.bytes, 0.0, cfg.link_rate)?;
    Ok(FederatedRun {
        models,
        global_factors: outcome.global_factors,
        timing,
        trace: outcome.trace,
        converged: outcome.converged,
        frames: log.map(|l| l.frames()).unwrap_or_default(),
    })
}

#[derive(Debug, Clone)]
pub struct AlignmentRun {
    /// `results[k][n - 1]`: hospital `k`'s view of feature mode `n`.
    pub results: Vec<Vec<AlignmentResult>>,
    pub summary: AlignmentSummary,
    /// Slowest hospital's compute per mode, summed, plus all bytes over the link.
    pub alignment_seconds: f64,
    pub frames: Vec<LoggedFrame>,
}

impl AlignmentRun {
    pub fn global_sizes(&self) -> Vec<usize> {
        self.results
            .first()
            .map(|r| r.iter().map(|m| m.global_size).collect())
            .unwrap_or_default()
    }
}

/// Aligns the feature vocabularies of all hospitals. `vocabularies[k][n - 1]`
/// lists the element codes hospital `k` holds for feature mode `n`.
pub fn run_alignment(vocabularies: &[Vec<Vec<u64>>], cfg: &FederationConfig) -> Result<AlignmentRun> {
    cfg.validate()?;
    let k = cfg.hospitals;
    if vocabularies.len() != k {
        return Err(Error::InvalidArgument(format!("{} vocabularies for K = {k}", vocabularies.len())));
    }
    if k > MAX_HOSPITALS {
        return Err(Error::InvalidArgument(format!(
            "secure alignment supports at most {MAX_HOSPITALS} hospitals, got {k}"
        )));
    }
    let modes = vocabularies[0].len();
    if vocabularies.iter().any(|v| v.len() != modes) {
        return Err(Error::InvalidArgument("hospitals disagree on the number of feature modes".into()));
    }
    let log = cfg.record_frames.then(FrameLog::new);

    let (summary, outcomes) = std::thread::scope(|s| -> Result<_> {
        let mut coordinator_links: Vec<Box<dyn Link>> = Vec::with_capacity(k);
        let mut handles = Vec::with_capacity(k);
        let participant = |link: &mut dyn Link, id: usize| {
            run_alignment_participant(
                link,
                id as u16,
                k,
                &vocabularies[id],
                DEFAULT_MODULUS,
                cfg.compute_clock,
                &mut rand::rng(),
            )
        };
        match cfg.transport {
            TransportKind::InProcess => {
                for id in 0..k {
                    let (c, mut h) = channel_pair(id as u16, log.clone());
                    coordinator_links.push(Box::new(c));
                    handles.push(s.spawn(move || {
                        hello_as_participant(&mut h, id as u16)?;
                        participant(&mut h, id)
                    }));
                }
                for (id, l) in coordinator_links.iter_mut().enumerate() {
                    hello_as_coordinator(l.as_mut(), id as u16)?;
                }
            }
            TransportKind::Tcp => {
                let listener = TcpListener::bind(&cfg.listen)
                    .map_err(|e| Error::Transport(format!("bind {}: {e}", cfg.listen)))?;
                let addr = listener.local_addr()?;
                for id in 0..k {
                    let log = log.clone();
                    handles.push(s.spawn(move || {
                        let mut link = connect(addr, id as u16, log)?;
                        participant(&mut link, id)
                    }));
                }
                for l in accept_participants(&listener, k, log.clone())? {
                    coordinator_links.push(Box::new(l));
                }
            }
        }
        let mut refs: Vec<&mut dyn Link> = coordinator_links.iter_mut().map(|b| -> &mut dyn Link { b.as_mut() }).collect();
        let summary = run_alignment_coordinator(&mut refs, modes, cfg.max_align_retries);
        drop(refs);
        drop(coordinator_links);
        let outcomes: Vec<Result<AlignmentOutcome>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("participant thread panicked".into()))))
            .collect();
        Ok((summary, outcomes))
    })?;

    let summary = summary?;
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let slowest: f64 = (0..modes)
        .map(|n| outcomes.iter().map(|o| o.compute_seconds[n]).fold(0.0, f64::max))
        .sum();
    let alignment_seconds = slowest + (summary.bytes.0 + summary.bytes.1) as f64 / cfg.link_rate;
    Ok(AlignmentRun {
        results: outcomes.into_iter().map(|o| o.results).collect(),
        summary,
        alignment_seconds,
        frames: log.map(|l| l.frames()).unwrap_or_default(),
    })
}

/// Aligns shard vocabularies and rewrites every feature mode to global indices.
///
/// `vocabularies[k][n - 1][i]` is the element code of local index `i` of
/// mode `n` in shard `k`.
pub fn align_shards(
    shards: &[SparseTensor],
    vocabularies: &[Vec<Vec<u64>>],
    cfg: &FederationConfig,
) -> Result<(Vec<SparseTensor>, AlignmentRun)> {
    let run = run_alignment(vocabularies, cfg)?;
    let mut out = Vec::with_capacity(shards.len());
    for (k, shard) in shards.iter().enumerate() {
        let mut s = shard.clone();
        for (i, result) in run.results[k].iter().enumerate() {
            let map = result.local_to_global(&vocabularies[k][i])?;
            s = reindex_feature_mode(&s, i + 1, &map, result.global_size)?;
        }
        out.push(s);
    }
    Ok((out, run))
}
