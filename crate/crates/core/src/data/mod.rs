//! Data ingestion, synthetic generation and patient partitioning.

mod events;
mod partition;
mod synth;

pub use events::{
    build_cooccurrence_tensor, parse_timestamp, read_events, read_events_file, CooccurrenceSpec,
    CooccurrenceTensor, EventKind, EventRecord,
};
pub use partition::{concatenate, partition_patients, shard_sizes, PartitionPlan};
pub use synth::{synthesize_tensor, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// Rewrites the indices of one feature mode through `local_to_global` and
/// widens that mode to `global_size`.
pub fn reindex_feature_mode(
    shard: &SparseTensor,
    mode: usize,
    local_to_global: &[usize],
    global_size: usize,
) -> Result<SparseTensor> {
    if mode == 0 || mode >= shard.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shard.order(),
        });
    }
    if local_to_global.len() != shard.shape()[mode] {
        return Err(Error::DimensionMismatch(format!(
            "{} index mappings for a mode of size {}",
            local_to_global.len(),
            shard.shape()[mode]
        )));
    }
    let order = shard.order();
    let mut coords = shard.coords().to_vec();
    for idx in coords.chunks_exact_mut(order) {
        idx[mode] = local_to_global[idx[mode]];
    }
    let mut shape = shard.shape().to_vec();
    shape[mode] = global_size;
    SparseTensor::from_parts(shape, coords, shard.values().to_vec())?
        .with_mode_names(shard.mode_names().to_vec())
}
