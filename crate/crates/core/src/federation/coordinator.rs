//! Coordinator side of the training and alignment protocols. Holds no tensor data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::{AlignStatus, FeatureMode, Message};
use super::participant::{abort_on_error, unexpected};
use super::transport::Link;
use crate::admm::{
    initial_feature_factors, normalized_residual, relative_change, update_b, update_global_feature_factor,
    update_y, AdmmConfig, ConvergenceMonitor, ServerState,
};
use crate::align::{all_pairwise_sums, merge_region_sizes, RegionLabel, SetPolynomial};
use crate::error::{Error, Result};
use crate::tensor::{orthogonality_penalty, FactorMatrix};

/// One iteration of the run as seen by the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// `None` on the first iteration.
    pub relative_change: Option<f64>,
    /// Largest normalized primal residual over the feature modes.
    pub residual: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct CoordinatorOutcome {
    pub global_factors: Vec<FactorMatrix>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// `compute[t][k]`: seconds hospital `k` reported for iteration `t`.
    pub compute: Vec<Vec<f64>>,
    /// `(up, down)` bytes per iteration; the handshake and initial broadcast count toward the first.
    pub bytes: Vec<(u64, u64)>,
}

fn link_bytes(links: &[&mut dyn Link]) -> (u64, u64) {
    links.iter().fold((0, 0), |(up, down), l| {
        let s = l.stats();
        (up + s.bytes_received, down + s.bytes_sent)
    })
}

/// Runs the training protocol over greeted links, `links[k]` leading to hospital `k`.
pub fn run_coordinator(
    links: &mut [&mut dyn Link],
    feature_sizes: &[usize],
    cfg: &AdmmConfig,
) -> Result<CoordinatorOutcome> {
    let result = training_loop(links, feature_sizes, cfg);
    abort_on_error(links, result)
}

fn recv_matrix(link: &mut dyn Link, want_h: bool, round: u32, mode: FeatureMode, shape: (usize, usize)) -> Result<FactorMatrix> {
    let got = link.recv()?;
    let (r, m, f) = match got {
        Message::LocalFeatureFactor { round, mode, factor } if !want_h => (round, mode, factor),
        Message::MultiplierH {
            round,
            mode,
            multiplier,
        } if want_h => (round, mode, multiplier),
        other => {
            let what = if want_h { "MultiplierH" } else { "LocalFeatureFactor" };
            return Err(unexpected(what, other));
        }
    };
    if r != round || m != mode || f.shape() != shape {
        return Err(Error::Protocol(format!(
            "{:?} sent round {r} mode {m} {}x{}, expected round {round} mode {mode} {}x{}",
            link.peer(),
            f.rows(),
            f.rank(),
            shape.0,
            shape.1
        )));
    }
    Ok(f)
}

fn training_loop(links: &mut [&mut dyn Link], feature_sizes: &[usize], cfg: &AdmmConfig) -> Result<CoordinatorOutcome> {
    cfg.validate()?;
    let k = links.len();
    if k == 0 || feature_sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least one hospital and one feature mode".into()));
    }
    let rank = cfg.rank;
    let modes: Vec<FeatureMode> = (1..=feature_sizes.len()).map(FeatureMode::new).collect::<Result<_>>()?;

    let mut server = ServerState::new(initial_feature_factors(feature_sizes, rank, cfg.seed));
    for (&mode, a) in modes.iter().zip(&server.global_factors) {
        for l in links.iter_mut() {
            l.send(&Message::GlobalFeatureFactor {
                round: 0,
                mode,
                factor: a.clone(),
            })?;
        }
    }

    let mut cached_h: Vec<Vec<FactorMatrix>> = feature_sizes
        .iter()
        .map(|&d| vec![FactorMatrix::zeros(d, rank); k])
        .collect();
    let mut monitor = ConvergenceMonitor::new(cfg.tol);
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut compute = Vec::new();
    let mut bytes = Vec::new();
    let mut seen = (0u64, 0u64);
    let mut converged = false;

    for round in 1..=cfg.max_iter as u32 {
        let mut residual: f64 = 0.0;
        for (i, &mode) in modes.iter().enumerate() {
            let shape = (feature_sizes[i], rank);
            // hospital-id order keeps aggregation deterministic
            let locals = links
                .iter_mut()
                .map(|l| recv_matrix(&mut **l, false, round, mode, shape))
                .collect::<Result<Vec<_>>>()?;
            let a = update_global_feature_factor(
                &locals,
                &cached_h[i],
                &server.b_factors[i],
                &server.y_multipliers[i],
                cfg,
                k,
            )?;
            let b = update_b(&a, &server.y_multipliers[i], cfg.mu)?;
            server.y_multipliers[i] = update_y(&server.y_multipliers[i], &b, &a, cfg.mu)?;
            server.b_factors[i] = b;
            for l in links.iter_mut() {
                l.send(&Message::GlobalFeatureFactor {
                    round,
                    mode,
                    factor: a.clone(),
                })?;
            }
            cached_h[i] = links
                .iter_mut()
                .map(|l| recv_matrix(&mut **l, true, round, mode, shape))
                .collect::<Result<Vec<_>>>()?;
            residual = residual.max(normalized_residual(&locals, &a)?);
            server.global_factors[i] = a;
        }

        let mut loss = 0.0;
        let mut cells = 0.0;
        let mut times = Vec::with_capacity(k);
        for l in links.iter_mut() {
            match l.recv()? {
                Message::RoundComplete {
                    round: r,
                    loss: lk,
                    cells: ck,
                    compute_seconds,
                } if r == round => {
                    loss += lk;
                    cells += ck;
                    times.push(compute_seconds);
                }
                other => return Err(unexpected("RoundComplete", other)),
            }
        }
        let objective = loss
            + server
                .global_factors
                .iter()
                .map(|a| orthogonality_penalty(a, cfg.lambda))
                .sum::<f64>();
        let relative = trace.last().map(|prev| relative_change(prev.objective, objective));
        converged = monitor.observe(objective, residual);
        trace.push(TraceRow {
            iteration: round as usize,
            objective,
            relative_change: relative,
            residual,
            rmse: if cells > 0.0 { (loss / cells).sqrt() } else { 0.0 },
        });
        let stop = converged || round as usize == cfg.max_iter;
        for l in links.iter_mut() {
            l.send(&Message::Converged { round, stop })?;
        }
        compute.push(times);
        let now = link_bytes(links);
        bytes.push((now.0 - seen.0, now.1 - seen.1));
        seen = now;
        if stop {
            break;
        }
    }
    Ok(CoordinatorOutcome {
        global_factors: server.global_factors,
        trace,
        converged,
        compute,
        bytes,
    })
}

/// Coordinator's record of one alignment session.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSummary {
    /// Published region sizes per feature mode.
    pub region_sizes: Vec<BTreeMap<RegionLabel, u32>>,
    /// Attempts used per feature mode, at least 1.
    pub attempts: Vec<u32>,
    pub bytes: (u64, u64),
}

/// Runs the alignment protocol over greeted links. With a single hospital nothing is exchanged.
pub fn run_alignment_coordinator(
    links: &mut [&mut dyn Link],
    num_feature_modes: usize,
    max_retries: u32,
) -> Result<AlignmentSummary> {
    let result = alignment_loop(links, num_feature_modes, max_retries);
    abort_on_error(links, result)
}

fn alignment_loop(links: &mut [&mut dyn Link], num_feature_modes: usize, max_retries: u32) -> Result<AlignmentSummary> {
    let k = links.len();
    let mut region_sizes = Vec::with_capacity(num_feature_modes);
    let mut attempts = Vec::with_capacity(num_feature_modes);
    if k <= 1 {
        return Ok(AlignmentSummary {
            region_sizes,
            attempts: vec![1; num_feature_modes],
            bytes: link_bytes(links),
        });
    }
    for n in 1..=num_feature_modes {
        let mode = FeatureMode::new(n)?;
        let mut attempt = 0u32;
        let sizes = loop {
            let polys = links
                .iter_mut()
                .map(|l| match l.recv()? {
                    Message::AlignPoly { attempt: a, mode: m, poly } if a == attempt && m == mode => Ok(poly),
                    other => Err(unexpected("AlignPoly", other)),
                })
                .collect::<Result<Vec<SetPolynomial>>>()?;
            let sums = all_pairwise_sums(&polys)?;
            for (l, sums) in links.iter_mut().zip(sums) {
                let sums = sums.into_iter().map(|(j, p)| (j as u16, p)).collect();
                l.send(&Message::AlignPairwiseSums { attempt, mode, sums })?;
            }
            let reports = links
                .iter_mut()
                .enumerate()
                .map(|(id, l)| match l.recv()? {
                    Message::AlignRegionSizes { attempt: a, mode: m, sizes } if a == attempt && m == mode => {
                        Ok((id, sizes))
                    }
                    other => Err(unexpected("AlignRegionSizes", other)),
                })
                .collect::<Result<Vec<_>>>()?;
            match merge_region_sizes(n, k, &reports) {
                Ok(sizes) => {
                    for l in links.iter_mut() {
                        l.send(&Message::AlignGlobalSizes {
                            attempt,
                            mode,
                            status: AlignStatus::Ok,
                            sizes: sizes.clone(),
                        })?;
                    }
                    break sizes;
                }
                Err(e) if attempt >= max_retries => return Err(e),
                Err(e) => {
                    log::warn!("alignment of mode {n} failed on attempt {attempt}: {e}; retrying");
                    for l in links.iter_mut() {
                        l.send(&Message::AlignGlobalSizes {
                            attempt,
                            mode,
                            status: AlignStatus::Retry,
                            sizes: BTreeMap::new(),
                        })?;
                    }
                    attempt += 1;
                }
            }
        };
        region_sizes.push(sizes);
        attempts.push(attempt + 1);
    }
    Ok(AlignmentSummary {
        region_sizes,
        attempts,
        bytes: link_bytes(links),
    })
}
