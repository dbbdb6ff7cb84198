//! TOML run configuration. Every section is optional; unknown keys are errors.

use std::path::{Path, PathBuf};

use fedtensor::align::MAX_HOSPITALS;
use fedtensor::data::{CooccurrenceSpec, SynthConfig};
use fedtensor::federation::FederationConfig;
use fedtensor::report::{Method, SweepSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, partitioning and initialization; `--seed` wins.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub cooccurrence: CooccurrenceSpec,
    pub partition: PartitionConfig,
    pub federation: FederationConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Where the tensor comes from. With neither `tensor` nor `shards` the
/// `[synth]` generator is used. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub tensor: Option<PathBuf>,
    /// One pre-partitioned tensor per hospital.
    pub shards: Vec<PathBuf>,
    /// Align shard vocabularies before training.
    pub align: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Share of patients at hospital 0; 0 splits evenly.
    pub skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scenario: String,
    pub methods: Vec<Method>,
    pub hospitals: Vec<usize>,
    pub skews: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self {
            scenario: s.scenario,
            methods: s.methods,
            hospitals: s.hospitals,
            skews: s.skews,
            seeds: s.seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` wins, the working directory is the fallback.
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = cfg.data.tensor.as_mut() {
            resolve(t);
        }
        cfg.data.shards.iter_mut().for_each(resolve);
        if let Some(d) = cfg.output.dir.as_mut() {
            resolve(d);
        }
        Ok(cfg)
    }

    /// Propagates the seed into every seeded component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.synth.seed = s;
            self.federation.admm.seed = s;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.federation.admm.seed)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.federation.validate().map_err(|e| e.to_string())?;
        if !(0.0..1.0).contains(&self.partition.skew) {
            return Err(format!("partition.skew {} outside [0, 1)", self.partition.skew));
        }
        if self.data.tensor.is_some() && !self.data.shards.is_empty() {
            return Err("data.tensor and data.shards are mutually exclusive".into());
        }
        if self.data.align {
            let k = if self.data.shards.is_empty() {
                self.federation.hospitals
            } else {
                self.data.shards.len()
            };
            if k > MAX_HOSPITALS {
                return Err(format!("alignment supports at most {MAX_HOSPITALS} hospitals, K = {k}"));
            }
        }
        if self.sweep.methods.is_empty()
            || self.sweep.hospitals.is_empty()
            || self.sweep.skews.is_empty()
            || self.sweep.seeds.is_empty()
        {
            return Err("every sweep axis needs at least one value".into());
        }
        if self.sweep.hospitals.contains(&0) {
            return Err("sweep.hospitals must be positive".into());
        }
        Ok(())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            scenario: self.sweep.scenario.clone(),
            methods: self.sweep.methods.clone(),
            hospitals: self.sweep.hospitals.clone(),
            skews: self.sweep.skews.clone(),
            seeds: self.sweep.seeds.clone(),
            synth: self.synth.clone(),
            federation: self.federation.clone(),
        }
    }
}
