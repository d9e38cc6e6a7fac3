use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apportion, TabularDataset};
use crate::{Error, Result};

/// Assignment of (possibly duplicated) training rows to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub agents: usize,
    /// Total rows after upsampling; always `agents * shard_size`.
    pub total: usize,
    /// Per-agent row indices into the training set.
    pub shards: Vec<Vec<usize>>,
    /// Source rows of every duplicate, in creation order.
    pub duplicated: Vec<usize>,
    /// Duplicates created per `(group, label)` cell.
    pub duplicates_per_cell: BTreeMap<String, usize>,
}

impl ShardPlan {
    pub fn shard_size(&self) -> usize {
        self.total / self.agents
    }
}

/// Upsamples `train` to `target` rows (rounded up to a multiple of `agents`)
/// and deals the result into equal shards.
///
/// Extra rows go to the `(group, label)` cells furthest below the largest
/// cell, proportionally to that deficit; once every cell is level, further
/// rows are spread evenly. Within a cell, duplicates cycle through a shuffled
/// order of its rows. The final assignment is a shuffle of all rows, so shards
/// keep an uneven attribute mix.
pub fn shard_with_duplication<R: Rng + ?Sized>(
    train: &TabularDataset,
    agents: usize,
    target: usize,
    rng: &mut R,
) -> Result<ShardPlan> {
    if agents == 0 {
        return Err(Error::InvalidConfig("need at least one agent".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyBatch("cannot shard an empty training set".into()));
    }
    if target < train.len() {
        return Err(Error::InvalidConfig(format!(
            "target size {target} is below the training set size {}",
            train.len()
        )));
    }
    let total = target.div_ceil(agents) * agents;
    let extra = total - train.len();

    let cells = train.cells();
    let sizes: Vec<usize> = cells.values().map(Vec::len).collect();
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let deficits: Vec<f64> = sizes.iter().map(|&s| (largest - s) as f64).collect();
    let total_deficit: usize = sizes.iter().map(|&s| largest - s).sum();
    let quota: Vec<usize> = if extra <= total_deficit {
        apportion(extra, &deficits)
    } else {
        let even = apportion(extra - total_deficit, &vec![1.0; sizes.len()]);
        sizes.iter().zip(even).map(|(&s, e)| largest - s + e).collect()
    };

    let mut duplicated = Vec::with_capacity(extra);
    let mut duplicates_per_cell = BTreeMap::new();
    for ((cell, rows), q) in cells.iter().zip(quota) {
        let mut order = rows.clone();
        order.shuffle(rng);
        duplicated.extend(order.iter().cycle().take(q).copied());
        duplicates_per_cell.insert(format!("a={},y={}", cell.0, cell.1), q);
    }

    let mut all: Vec<usize> = (0..train.len()).chain(duplicated.iter().copied()).collect();
    all.shuffle(rng);
    let size = total / agents;
    let shards = all.chunks(size).map(<[usize]>::to_vec).collect();
    Ok(ShardPlan {
        agents,
        total,
        shards,
        duplicated,
        duplicates_per_cell,
    })
}
