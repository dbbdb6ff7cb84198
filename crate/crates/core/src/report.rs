//! Experiment sweeps and their CSV/JSON reports.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_central, run_local};
use crate::data::{partition_patients, synthesize_tensor, PartitionPlan, SynthConfig};
use crate::error::{Error, Result};
use crate::federation::{run_federated, FederationConfig, TimingReport, TraceRow};
use crate::tensor::{rmse_partitioned, RmseScope, SparseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Federated,
    Central,
    Local,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Federated => "federated",
            Method::Central => "central",
            Method::Local => "local",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "federated" => Ok(Method::Federated),
            "central" => Ok(Method::Central),
            "local" => Ok(Method::Local),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// One run of one method on one data instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub method: Method,
    pub k: usize,
    pub skew: f64,
    pub seed: u64,
    pub repeat: usize,
    pub rmse: f64,
    pub rmse_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub timing: TimingReport,
}

/// Cross product of methods × K × skew, each repeated once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub scenario: String,
    pub methods: Vec<Method>,
    pub hospitals: Vec<usize>,
    pub skews: Vec<f64>,
    /// One repeat per seed; the seed drives data generation, partitioning and initialization.
    pub seeds: Vec<u64>,
    /// Data generator, used when no fixed tensor is supplied.
    pub synth: SynthConfig,
    /// Template for every run; `hospitals` and the ADMM seed are overwritten per cell.
    pub federation: FederationConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            scenario: "synthetic".into(),
            methods: vec![Method::Federated, Method::Central, Method::Local],
            hospitals: vec![3],
            skews: vec![0.0],
            seeds: (0..10).collect(),
            synth: SynthConfig::default(),
            federation: FederationConfig::default(),
        }
    }
}

/// Runs one method on one instance.
pub fn run_cell(
    tensor: &SparseTensor,
    method: Method,
    k: usize,
    skew: f64,
    seed: u64,
    template: &FederationConfig,
) -> Result<(f64, Vec<TraceRow>, bool, TimingReport)> {
    let mut cfg = template.clone();
    cfg.admm.seed = seed;
    cfg.hospitals = k;
    match method {
        Method::Central => {
            let run = run_central(tensor, &cfg)?;
            Ok((run.final_rmse(), run.trace, run.converged, run.timing))
        }
        Method::Federated | Method::Local => {
            let plan = PartitionPlan::new(tensor.shape()[0], k, skew, seed)?;
            let shards = partition_patients(tensor, &plan)?;
            if method == Method::Federated {
                let run = run_federated(&shards, &cfg)?;
                Ok((run.final_rmse(), run.trace, run.converged, run.timing))
            } else {
                let run = run_local(&shards, &cfg)?;
                let rmse = rmse_partitioned(&run.models, &shards, RmseScope::AllCells)?;
                // the trace of the slowest hospital stands in for the one-shot method
                let trace = run.traces.into_iter().max_by_key(|t| t.len()).unwrap_or_default();
                Ok((rmse, trace, true, run.timing))
            }
        }
    }
}

/// Runs every cell of `spec`. With `tensor` given, every repeat uses that
/// tensor and the seed only varies the partition and initialization.
pub fn sweep(spec: &SweepSpec, tensor: Option<&SparseTensor>) -> Result<Vec<ExperimentResult>> {
    if spec.methods.is_empty() || spec.hospitals.is_empty() || spec.skews.is_empty() || spec.seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep has an empty axis".into()));
    }
    let mut out = Vec::new();
    for (repeat, &seed) in spec.seeds.iter().enumerate() {
        let generated;
        let data = match tensor {
            Some(t) => t,
            None => {
                generated = synthesize_tensor(&SynthConfig {
                    seed,
                    ..spec.synth.clone()
                })?
                .0;
                &generated
            }
        };
        for &method in &spec.methods {
            for &k in &spec.hospitals {
                for &skew in &spec.skews {
                    let (rmse, trace, converged, timing) = run_cell(data, method, k, skew, seed, &spec.federation)?;
                    out.push(ExperimentResult {
                        scenario: spec.scenario.clone(),
                        method,
                        k,
                        skew,
                        seed,
                        repeat,
                        rmse,
                        rmse_trace: trace.iter().map(|t| t.rmse).collect(),
                        iterations: trace.len(),
                        converged,
                        timing,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// One aggregated line of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub method: Method,
    #[serde(rename = "K")]
    pub k: usize,
    pub skew: f64,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub comp_s: f64,
    pub comm_s: f64,
    pub align_s: f64,
    pub total_s: f64,
}

/// Column order of the CSV report.
pub const REPORT_COLUMNS: [&str; 10] = [
    "scenario", "method", "K", "skew", "rmse_mean", "rmse_sd", "comp_s", "comm_s", "align_s", "total_s",
];

// shifted by the first value, so equal inputs give that value exactly
fn mean(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else { return f64::NAN };
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Groups results by (scenario, method, K, skew) in first-appearance order
/// and averages over repeats.
pub fn aggregate(results: &[ExperimentResult]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, Method, usize, u64)> = Vec::new();
    for r in results {
        let key = (r.scenario.clone(), r.method, r.k, r.skew.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scenario, method, k, skew_bits)| {
            let group: Vec<&ExperimentResult> = results
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method && r.k == k && r.skew.to_bits() == skew_bits)
                .collect();
            let col = |f: &dyn Fn(&ExperimentResult) -> f64| mean(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let rmses: Vec<f64> = group.iter().map(|r| r.rmse).collect();
            let comp_s = col(&|r| r.timing.computation_seconds);
            let comm_s = col(&|r| r.timing.communication_seconds);
            let align_s = col(&|r| r.timing.alignment_seconds);
            ReportRow {
                scenario,
                method,
                k,
                skew: f64::from_bits(skew_bits),
                rmse_mean: mean(&rmses),
                rmse_sd: std_dev(&rmses),
                comp_s,
                comm_s,
                align_s,
                total_s: comp_s + comm_s + align_s,
            }
        })
        .collect()
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("unexpected report header {headers:?}"),
        });
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Writes the aggregated report as CSV and JSON.
pub fn emit_report(results: &[ExperimentResult], csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let rows = aggregate(results);
    write_report_csv(&rows, std::fs::File::create(csv_path)?)?;
    let mut json = serde_json::to_string_pretty(&rows)?;
    json.push('\n');
    std::fs::write(json_path, json)?;
    Ok(rows)
}

/// Per-iteration trace as CSV: `iteration,objective,relative_change,residual,rmse`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in trace {
        w.serialize(row)?;
    }
    if trace.is_empty() {
        w.write_record(["iteration", "objective", "relative_change", "residual", "rmse"])?;
    }
    w.flush()?;
    Ok(())
}
