//! Sharded group-by-sum over bounded, clamped records.
//!
//! Input is cut into fixed-size chunks; each chunk builds one partial
//! accumulator per shard, routing every grouping key by hash. Shards then fold
//! their partials in chunk order. A key's sum is therefore always formed from
//! the same per-chunk partials combined in the same order, whatever the shard
//! or thread count, and the merged tables come out bit-identical.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{AggregateTable, ProbabilityTriple, Record};

/// Records per map task. Fixed so partial sums never depend on parallelism.
pub const CHUNK_SIZE: usize = 16_384;

/// Relative gap kept below `min(p_x, p_y)` when a noisy joint is repaired.
pub const CONTAINMENT_MARGIN: f64 = 1e-12;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.compensation += other.compensation;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
        let mut s = NeumaierSum::default();
        for v in values {
            s.add(v);
        }
        s.value()
    }
}

/// Partial sums at the three aggregation levels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShardAccumulator {
    pub partial_joint: HashMap<(String, String), NeumaierSum>,
    pub partial_feature: HashMap<String, NeumaierSum>,
    pub partial_partition: HashMap<String, NeumaierSum>,
    pub row_count: u64,
}

impl ShardAccumulator {
    pub fn push(&mut self, record: &Record) {
        self.add_joint(record);
        self.add_feature(record);
        self.add_partition(record);
        self.row_count += 1;
    }

    fn add_joint(&mut self, r: &Record) {
        let key = (r.feature.clone(), r.partition.clone());
        self.partial_joint.entry(key).or_default().add(r.observation);
    }

    fn add_feature(&mut self, r: &Record) {
        match self.partial_feature.get_mut(r.feature.as_str()) {
            Some(s) => s.add(r.observation),
            None => {
                let mut s = NeumaierSum::default();
                s.add(r.observation);
                self.partial_feature.insert(r.feature.clone(), s);
            }
        }
    }

    fn add_partition(&mut self, r: &Record) {
        match self.partial_partition.get_mut(r.partition.as_str()) {
            Some(s) => s.add(r.observation),
            None => {
                let mut s = NeumaierSum::default();
                s.add(r.observation);
                self.partial_partition.insert(r.partition.clone(), s);
            }
        }
    }

    /// Monoid combine: `self` first, then `other`.
    pub fn merge(mut self, other: ShardAccumulator) -> ShardAccumulator {
        merge_map(&mut self.partial_joint, other.partial_joint);
        merge_map(&mut self.partial_feature, other.partial_feature);
        merge_map(&mut self.partial_partition, other.partial_partition);
        self.row_count += other.row_count;
        self
    }

    pub fn into_sorted(self) -> ExactSums {
        ExactSums {
            joint: finish(self.partial_joint),
            feature: finish(self.partial_feature),
            partition: finish(self.partial_partition),
            rows: self.row_count,
        }
    }
}

fn finish<K: Ord>(m: HashMap<K, NeumaierSum>) -> BTreeMap<K, f64> {
    m.into_iter().map(|(k, s)| (k, s.value())).collect()
}

fn merge_map<K: Eq + Hash>(into: &mut HashMap<K, NeumaierSum>, from: HashMap<K, NeumaierSum>) {
    for (k, s) in from {
        match into.get_mut(&k) {
            Some(acc) => acc.merge(&s),
            None => {
                into.insert(k, s);
            }
        }
    }
}

/// Exact sums in key order, ready for release.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactSums {
    pub joint: BTreeMap<(String, String), f64>,
    pub feature: BTreeMap<String, f64>,
    pub partition: BTreeMap<String, f64>,
    pub rows: u64,
}

fn shard_of<K: Hash + ?Sized>(key: &K, shards: usize) -> usize {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    (h.finish() % shards as u64) as usize
}

fn shard_of_pair(feature: &str, partition: &str, shards: usize) -> usize {
    let mut h = DefaultHasher::new();
    feature.hash(&mut h);
    partition.hash(&mut h);
    (h.finish() % shards as u64) as usize
}

/// Groups records by `(feature, partition)`, feature and partition, using
/// `shards` hash partitions, and merges everything into one accumulator.
pub fn accumulate(records: &[Record], shards: usize) -> ShardAccumulator {
    let shards = shards.max(1);
    let per_chunk: Vec<Vec<ShardAccumulator>> = exec::map_chunks(records, CHUNK_SIZE, |chunk| {
        let mut parts = vec![ShardAccumulator::default(); shards];
        for r in chunk {
            parts[shard_of_pair(&r.feature, &r.partition, shards)].add_joint(r);
            parts[shard_of(r.feature.as_str(), shards)].add_feature(r);
            parts[shard_of(r.partition.as_str(), shards)].add_partition(r);
        }
        parts[0].row_count = chunk.len() as u64;
        parts
    });

    // [chunk][shard] -> [shard][chunk]
    let mut by_shard: Vec<Vec<ShardAccumulator>> = (0..shards).map(|_| Vec::new()).collect();
    for parts in per_chunk {
        for (s, part) in parts.into_iter().enumerate() {
            by_shard[s].push(part);
        }
    }

    let reduced: Vec<ShardAccumulator> = exec::map_owned(by_shard, |parts| {
        parts
            .into_iter()
            .fold(ShardAccumulator::default(), ShardAccumulator::merge)
    });
    // Shards own disjoint keys, so this last merge never adds two floats.
    reduced
        .into_iter()
        .fold(ShardAccumulator::default(), ShardAccumulator::merge)
}

/// Normalizes released sums into probability triples.
///
/// Every family is divided by the same released total. Pairs whose feature or
/// partition marginal did not survive are dropped. Noise can push a joint
/// above one of its marginals; such a joint is pulled just under the smaller
/// marginal.
pub fn build_probability_tables(
    released: &AggregateTable,
) -> Result<BTreeMap<(String, String), ProbabilityTriple>> {
    let total = released.total;
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::EmptyTable);
    }
    let mut out = BTreeMap::new();
    for ((f, p), &joint) in &released.joint {
        if joint <= 0.0 {
            continue;
        }
        let (Some(&fm), Some(&pm)) = (
            released.feature_marginals.get(f),
            released.partition_marginals.get(p),
        ) else {
            continue;
        };
        let p_x = (fm / total).min(1.0);
        let p_y = (pm / total).min(1.0);
        let mut p_xy = (joint / total).min(1.0);
        let cap = p_x.min(p_y);
        if p_xy > cap {
            p_xy = cap * (1.0 - CONTAINMENT_MARGIN);
        }
        out.insert((f.clone(), p.clone()), ProbabilityTriple::new(p_x, p_y, p_xy));
    }
    Ok(out)
}
