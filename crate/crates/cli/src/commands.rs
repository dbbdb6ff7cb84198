use std::fs::File;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use fedtensor::align::element_code;
use fedtensor::baselines::{run_central, run_local};
use fedtensor::data::{
    build_cooccurrence_tensor, partition_patients, read_events_file, synthesize_tensor, PartitionPlan,
};
use fedtensor::federation::transport::{accept_participants, connect};
use fedtensor::federation::{
    align_shards, run_coordinator, run_federated, run_participant, timing_model, Link, TimingReport, TraceRow,
};
use fedtensor::report::{emit_report, run_cell, sweep, write_trace_csv, Method};
use fedtensor::tensor::{read_tensor_file, rmse_partitioned, write_tensor_file, RmseScope};
use fedtensor::SparseTensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<fedtensor::Error> for Failure {
    fn from(e: fedtensor::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    /// `--seed` as given on the command line.
    pub seed_flag: Option<u64>,
}

impl Ctx {
    fn path(&self, name: &str) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| Failure::Runtime(format!("{}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }
}

/// String vocabularies of a tensor file, kept beside it as `<stem>.vocab.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub patients: Vec<String>,
    /// One list per feature mode, in index order.
    pub features: Vec<Vec<String>>,
}

fn vocab_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("vocab.json")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_vocab(tensor: &Path) -> Result<Option<Vocabulary>, Failure> {
    let p = vocab_path(tensor);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(&p)?)?))
}

fn load_tensor(path: &Path) -> Result<SparseTensor, Failure> {
    read_tensor_file(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// The full tensor named on the command line or in the config, else a synthetic one.
fn source_tensor(ctx: &Ctx, flag: Option<&Path>) -> Result<(SparseTensor, Option<Vocabulary>), Failure> {
    match flag.or(ctx.cfg.data.tensor.as_deref()) {
        Some(p) => Ok((load_tensor(p)?, read_vocab(p)?)),
        None => Ok((synthesize_tensor(&ctx.cfg.synth)?.0, None)),
    }
}

pub fn build_tensor(ctx: &Ctx, events: &Path) -> CmdResult {
    let records = read_events_file(events).map_err(|e| Failure::Runtime(format!("{}: {e}", events.display())))?;
    let built = build_cooccurrence_tensor(&records, &ctx.cfg.cooccurrence)?;
    if let Some(w) = &built.warning {
        log::warn!("{w}");
    }
    let path = ctx.path("tensor.tns")?;
    write_tensor_file(&built.tensor, &path)?;
    write_json(
        &Vocabulary {
            patients: built.patients,
            features: vec![built.codes_a, built.codes_b],
        },
        &vocab_path(&path),
    )?;
    println!("{}: shape {:?}, {} nonzeros", path.display(), built.tensor.shape(), built.tensor.nnz());
    Ok(())
}

pub fn synth(ctx: &Ctx) -> CmdResult {
    let (t, truth) = synthesize_tensor(&ctx.cfg.synth)?;
    let path = ctx.path("tensor.tns")?;
    write_tensor_file(&t, &path)?;
    write_json(&truth, &ctx.path("truth.json")?)?;
    println!("{}: shape {:?}, {} nonzeros", path.display(), t.shape(), t.nnz());
    Ok(())
}

pub fn partition(ctx: &Ctx, tensor: Option<&Path>, hospitals: usize, skew: f64) -> CmdResult {
    let (t, vocab) = source_tensor(ctx, tensor)?;
    let plan = PartitionPlan::new(t.shape()[0], hospitals, skew, ctx.cfg.seed())?;
    let shards = partition_patients(&t, &plan)?;
    for (k, shard) in shards.iter().enumerate() {
        let path = ctx.path(&format!("shard_{k}.tns"))?;
        write_tensor_file(shard, &path)?;
        if let Some(v) = &vocab {
            let sub = Vocabulary {
                patients: plan.assignments[k].iter().map(|&i| v.patients[i].clone()).collect(),
                features: v.features.clone(),
            };
            write_json(&sub, &vocab_path(&path))?;
        }
        println!("{}: {} patients, {} nonzeros", path.display(), shard.shape()[0], shard.nnz());
    }
    write_json(&plan, &ctx.path("plan.json")?)
}

/// Element codes of every feature mode of a shard. Without a vocabulary
/// file the local index itself is the code.
fn element_codes(shard: &SparseTensor, vocab: Option<&Vocabulary>) -> Result<Vec<Vec<u64>>, Failure> {
    let sizes = &shard.shape()[1..];
    match vocab {
        Some(v) => {
            if v.features.len() != sizes.len() || v.features.iter().zip(sizes).any(|(f, &d)| f.len() != d) {
                return Err(Failure::Runtime("vocabulary file does not match the tensor shape".into()));
            }
            Ok(v.features.iter().map(|codes| codes.iter().map(|c| element_code(c)).collect()).collect())
        }
        None => Ok(sizes.iter().map(|&d| (0..d).map(|i| element_code(&i.to_string())).collect()).collect()),
    }
}

#[derive(Debug, Serialize)]
struct AlignmentReport {
    global_sizes: Vec<usize>,
    /// Per feature mode: membership pattern (hospital 0 first) to region size.
    regions: Vec<Vec<(String, u32)>>,
    attempts: Vec<u32>,
    alignment_seconds: f64,
}

fn load_and_align(ctx: &Ctx, paths: &[PathBuf], align: bool) -> Result<(Vec<SparseTensor>, f64), Failure> {
    let shards = paths.iter().map(|p| load_tensor(p)).collect::<Result<Vec<_>, _>>()?;
    if !align {
        return Ok((shards, 0.0));
    }
    let k = shards.len();
    let vocabularies = shards
        .iter()
        .zip(paths)
        .map(|(s, p)| element_codes(s, read_vocab(p)?.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = ctx.cfg.federation.clone();
    cfg.hospitals = k;
    let (aligned, run) = align_shards(&shards, &vocabularies, &cfg)?;
    let report = AlignmentReport {
        global_sizes: run.global_sizes(),
        regions: run
            .summary
            .region_sizes
            .iter()
            .map(|m| {
                let mut regions: Vec<(String, u32)> = m.iter().map(|(label, &n)| (label.pattern(k), n)).collect();
                regions.sort_by(|a, b| b.0.cmp(&a.0));
                regions
            })
            .collect(),
        attempts: run.summary.attempts.clone(),
        alignment_seconds: run.alignment_seconds,
    };
    for (n, regions) in report.regions.iter().enumerate() {
        let parts: Vec<String> = regions.iter().map(|(p, s)| format!("{p}:{s}")).collect();
        println!(
            "mode {}: global size {}, regions {}",
            n + 1,
            report.global_sizes.get(n).copied().unwrap_or(0),
            parts.join(" ")
        );
    }
    write_json(&report, &ctx.path("alignment.json")?)?;
    Ok((aligned, run.alignment_seconds))
}

pub fn align(ctx: &Ctx, shards: &[PathBuf]) -> CmdResult {
    if shards.len() > fedtensor::align::MAX_HOSPITALS {
        return Err(Failure::Usage(format!(
            "alignment supports at most {} hospitals",
            fedtensor::align::MAX_HOSPITALS
        )));
    }
    let (aligned, _) = load_and_align(ctx, shards, true)?;
    for (k, s) in aligned.iter().enumerate() {
        write_tensor_file(s, ctx.path(&format!("aligned_{k}.tns"))?)?;
    }
    Ok(())
}

/// What `run` writes to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub hospitals: usize,
    /// Zero when pre-partitioned shards were given.
    pub skew: f64,
    pub seed: u64,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub total_s: f64,
    pub timing: TimingReport,
}

type Fit = (f64, Vec<TraceRow>, bool, TimingReport);

fn fit_shards(method: Method, shards: &[SparseTensor], ctx: &Ctx) -> Result<Fit, Failure> {
    let mut cfg = ctx.cfg.federation.clone();
    cfg.hospitals = shards.len();
    Ok(match method {
        Method::Federated => {
            let run = run_federated(shards, &cfg)?;
            (run.final_rmse(), run.trace, run.converged, run.timing)
        }
        Method::Central => {
            let run = run_central(&SparseTensor::concat_mode0(shards)?, &cfg)?;
            (run.final_rmse(), run.trace, run.converged, run.timing)
        }
        Method::Local => {
            let run = run_local(shards, &cfg)?;
            let rmse = rmse_partitioned(&run.models, shards, RmseScope::AllCells)?;
            let trace = run.traces.into_iter().max_by_key(Vec::len).unwrap_or_default();
            (rmse, trace, true, run.timing)
        }
    })
}

pub struct RunArgs<'a> {
    pub method: Method,
    pub tensor: Option<&'a Path>,
    pub shards: &'a [PathBuf],
    pub hospitals: Option<usize>,
    pub skew: Option<f64>,
}

pub fn run(ctx: &Ctx, args: RunArgs<'_>) -> CmdResult {
    let shard_paths = if args.shards.is_empty() { &ctx.cfg.data.shards[..] } else { args.shards };
    let seed = ctx.cfg.seed();
    let skew = args.skew.unwrap_or(ctx.cfg.partition.skew);
    let (k, skew, (rmse, trace, converged, timing)) = if !shard_paths.is_empty() && args.tensor.is_none() {
        if ctx.cfg.data.align && shard_paths.len() > fedtensor::align::MAX_HOSPITALS {
            return Err(Failure::Usage(format!(
                "alignment supports at most {} hospitals",
                fedtensor::align::MAX_HOSPITALS
            )));
        }
        let (shards, align_s) = load_and_align(ctx, shard_paths, ctx.cfg.data.align)?;
        let mut fit = fit_shards(args.method, &shards, ctx)?;
        fit.3.alignment_seconds = align_s;
        (shards.len(), 0.0, fit)
    } else {
        let k = args.hospitals.unwrap_or(ctx.cfg.federation.hospitals);
        let (t, _) = source_tensor(ctx, args.tensor)?;
        (k, skew, run_cell(&t, args.method, k, skew, seed, &ctx.cfg.federation)?)
    };
    write_trace_csv(&trace, File::create(ctx.path("trace.csv")?)?)?;
    let summary = RunSummary {
        method: args.method,
        hospitals: if args.method == Method::Central { 1 } else { k },
        skew,
        seed,
        rmse,
        iterations: trace.len(),
        converged,
        total_s: timing.total_seconds(),
        timing,
    };
    write_json(&summary, &ctx.path("run.json")?)?;
    println!(
        "{}: K={} rmse {:.6} after {} iterations{}, modeled time {:.4}s",
        summary.method,
        summary.hospitals,
        summary.rmse,
        summary.iterations,
        if converged { "" } else { " (not converged)" },
        summary.total_s
    );
    Ok(())
}

pub fn sweep_cmd(ctx: &Ctx, tensor: Option<&Path>) -> CmdResult {
    let mut spec = ctx.cfg.sweep_spec();
    if let Some(s) = ctx.seed_flag {
        spec.seeds = (s..s + spec.seeds.len() as u64).collect();
    }
    let fixed = match tensor.or(ctx.cfg.data.tensor.as_deref()) {
        Some(p) => Some(load_tensor(p)?),
        None => None,
    };
    let results = sweep(&spec, fixed.as_ref())?;
    let rows = emit_report(&results, ctx.path("report.csv")?, ctx.path("report.json")?)?;
    let mut stdout = std::io::stdout().lock();
    for r in rows {
        writeln!(
            stdout,
            "{:<10} K={:<2} skew={:<5} rmse {:.6} ± {:.2e}  total {:.4}s",
            r.method, r.k, r.skew, r.rmse_mean, r.rmse_sd, r.total_s
        )?;
    }
    Ok(())
}

pub fn serve_coordinator(ctx: &Ctx, listen: &str, hospitals: usize, feature_sizes: &[usize]) -> CmdResult {
    if feature_sizes.is_empty() {
        return Err(Failure::Usage("--feature-sizes is required for the coordinator".into()));
    }
    let listener = TcpListener::bind(listen).map_err(|e| Failure::Runtime(format!("bind {listen}: {e}")))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let mut links = accept_participants(&listener, hospitals, None)?;
    let mut refs: Vec<&mut dyn Link> = links.iter_mut().map(|l| l as &mut dyn Link).collect();
    let outcome = run_coordinator(&mut refs, feature_sizes, &ctx.cfg.federation.admm)?;
    let timing = timing_model(&outcome.compute, &outcome.bytes, 0.0, ctx.cfg.federation.link_rate)?;
    write_trace_csv(&outcome.trace, File::create(ctx.path("trace.csv")?)?)?;
    let summary = RunSummary {
        method: Method::Federated,
        hospitals,
        skew: 0.0,
        seed: ctx.cfg.seed(),
        rmse: outcome.trace.last().map_or(0.0, |t| t.rmse),
        iterations: outcome.trace.len(),
        converged: outcome.converged,
        total_s: timing.total_seconds(),
        timing,
    };
    write_json(&summary, &ctx.path("run.json")?)?;
    println!("coordinator: rmse {:.6} after {} iterations", summary.rmse, summary.iterations);
    Ok(())
}

pub fn serve_participant(ctx: &Ctx, addr: &str, hospital: u16, shard: &Path) -> CmdResult {
    let t = load_tensor(shard)?;
    let mut link = connect(addr, hospital, None)?;
    let outcome = run_participant(&mut link, hospital, t, &ctx.cfg.federation.admm, ctx.cfg.federation.compute_clock)?;
    write_json(&outcome.model()?, &ctx.path(&format!("model_{hospital}.json"))?)?;
    println!("hospital {hospital}: {} rounds", outcome.rounds);
    Ok(())
}
