//! Modeled run time: slowest hospital per iteration plus bytes over a fixed-rate link.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LINK_RATE: f64 = 15_000_000.0;

/// Nominal machine speed used by [`ComputeClock::Ops`].
pub const OPS_PER_SECOND: f64 = 1e9;

/// How participants measure their compute time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeClock {
    /// Monotonic wall clock.
    Wall,
    /// Estimated floating-point operations divided by [`OPS_PER_SECOND`]; reproducible.
    #[default]
    Ops,
}

/// Accumulates compute time under either clock.
#[derive(Debug)]
pub(crate) struct Stopwatch {
    clock: ComputeClock,
    seconds: f64,
}

impl Stopwatch {
    pub fn new(clock: ComputeClock) -> Self {
        Self {
            clock,
            seconds: 0.0,
        }
    }

    /// Times `f`, charging `ops` estimated operations under the ops clock.
    pub fn measure<T>(&mut self, ops: f64, f: impl FnOnce() -> T) -> T {
        match self.clock {
            ComputeClock::Wall => {
                let start = Instant::now();
                let out = f();
                self.seconds += start.elapsed().as_secs_f64();
                out
            }
            ComputeClock::Ops => {
                self.seconds += ops / OPS_PER_SECOND;
                f()
            }
        }
    }

    /// Returns the accumulated time and resets to zero.
    pub fn take(&mut self) -> f64 {
        std::mem::take(&mut self.seconds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTiming {
    /// Largest compute time of any hospital in this iteration.
    pub computation_seconds: f64,
    pub communication_seconds: f64,
    /// Hospital → coordinator.
    pub bytes_up: u64,
    /// Coordinator → hospital.
    pub bytes_down: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub link_rate: f64,
    pub iterations: Vec<IterationTiming>,
    pub computation_seconds: f64,
    pub communication_seconds: f64,
    pub alignment_seconds: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl TimingReport {
    pub fn empty(link_rate: f64) -> Self {
        Self {
            link_rate,
            iterations: Vec::new(),
            computation_seconds: 0.0,
            communication_seconds: 0.0,
            alignment_seconds: 0.0,
            bytes_up: 0,
            bytes_down: 0,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    pub fn total_seconds(&self) -> f64 {
        self.computation_seconds + self.communication_seconds + self.alignment_seconds
    }
}

/// Builds a report from per-iteration, per-hospital compute times and
/// per-iteration `(up, down)` byte counts.
pub fn timing_model(
    compute: &[Vec<f64>],
    bytes: &[(u64, u64)],
    alignment_seconds: f64,
    link_rate: f64,
) -> Result<TimingReport> {
    if !(link_rate > 0.0 && link_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("link rate {link_rate} must be positive")));
    }
    if compute.len() != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} compute rows for {} byte rows",
            compute.len(),
            bytes.len()
        )));
    }
    if compute.iter().flatten().any(|&c| !(c >= 0.0 && c.is_finite())) || !(alignment_seconds >= 0.0) {
        return Err(Error::InvalidArgument("times must be finite and nonnegative".into()));
    }
    let iterations: Vec<IterationTiming> = compute
        .iter()
        .zip(bytes)
        .map(|(per_hospital, &(up, down))| IterationTiming {
            computation_seconds: per_hospital.iter().copied().fold(0.0, f64::max),
            communication_seconds: (up + down) as f64 / link_rate,
            bytes_up: up,
            bytes_down: down,
        })
        .collect();
    let bytes_up = iterations.iter().map(|i| i.bytes_up).sum();
    let bytes_down = iterations.iter().map(|i| i.bytes_down).sum();
    Ok(TimingReport {
        link_rate,
        computation_seconds: iterations.iter().map(|i| i.computation_seconds).sum(),
        communication_seconds: (bytes_up + bytes_down) as f64 / link_rate,
        alignment_seconds,
        bytes_up,
        bytes_down,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_megabytes_take_two_seconds() {
        let r = timing_model(&[vec![0.0]], &[(30_000_000, 0)], 0.0, DEFAULT_LINK_RATE).unwrap();
        assert_eq!(r.communication_seconds, 2.0);
    }

    #[test]
    fn computation_sums_the_slowest_hospital() {
        let r = timing_model(&vec![vec![1.0]; 3], &[(0, 0); 3], 0.0, DEFAULT_LINK_RATE).unwrap();
        assert_eq!(r.computation_seconds, 3.0);
        let r = timing_model(&vec![vec![1.0, 2.0]; 2], &[(0, 0); 2], 0.0, DEFAULT_LINK_RATE).unwrap();
        assert_eq!(r.computation_seconds, 4.0);
    }

    #[test]
    fn total_is_sum_of_parts() {
        let r = timing_model(&[vec![0.5, 0.25]], &[(1500, 1500)], 0.125, 3000.0).unwrap();
        assert_eq!(r.total_seconds(), 0.5 + 1.0 + 0.125);
        assert!(timing_model(&[], &[], 0.0, 0.0).is_err());
    }

    #[test]
    fn ops_clock_is_deterministic() {
        let mut w = Stopwatch::new(ComputeClock::Ops);
        assert_eq!(w.measure(2e9, || 7), 7);
        assert_eq!(w.take(), 2.0);
        assert_eq!(w.take(), 0.0);
    }
}
