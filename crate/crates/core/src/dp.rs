//! Differential-privacy mechanisms: per-user contribution bounding, clamping,
//! Laplace noise, noisy-threshold censoring and sequential-composition
//! accounting.
//!
//! Noise is keyed by `(seed, query label, cell key)` rather than drawn from a
//! single stream, so a released cell is the same no matter how many shards or
//! threads produced the exact sums or in which order cells are visited.

use std::collections::BTreeMap;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{ExactSums, NeumaierSum};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{AggregateTable, PrivacyConfig, Record};

/// Name of the pooled category that absorbs censored dimensions.
pub const OTHER_KEY: &str = "__other__";

/// Derives independent, reproducible random streams from a single seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for one `(label, key)` cell. Components are length-prefixed
    /// so distinct tuples never hash the same byte string.
    pub fn stream(&self, label: &str, key: &[u8]) -> ChaCha12Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update((key.len() as u64).to_le_bytes());
        h.update(key);
        ChaCha12Rng::from_seed(h.finalize().into())
    }

    pub fn cell_stream<K: CellKey>(&self, label: &str, key: &K) -> ChaCha12Rng {
        let mut buf = Vec::with_capacity(32);
        key.encode(&mut buf);
        self.stream(label, &buf)
    }
}

/// A key of a released table.
pub trait CellKey: Ord + Clone + Send + Sync {
    /// Unambiguous byte encoding, used to key the noise stream.
    fn encode(&self, out: &mut Vec<u8>);
    /// The pooled key a censored cell is folded into.
    fn other_bucket(&self) -> Self;
}

fn encode_str(s: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl CellKey for String {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_str(self, out);
    }

    fn other_bucket(&self) -> Self {
        OTHER_KEY.to_string()
    }
}

/// Joint cells pool per partition: `(feature, partition)` → `(__other__, partition)`.
impl CellKey for (String, String) {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_str(&self.0, out);
        encode_str(&self.1, out);
    }

    fn other_bucket(&self) -> Self {
        (OTHER_KEY.to_string(), self.1.clone())
    }
}

pub fn clamp(observation: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    observation.max(lo).min(hi)
}

/// One draw from Laplace(0, `scale`) by inverting the CDF at an open-interval
/// uniform. For a fixed uniform the magnitude is linear in `scale`.
pub fn laplace_noise<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "laplace scale must be positive, got {scale}"
        )));
    }
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    Ok(-scale * u.signum() * (1.0 - 2.0 * u.abs()).ln())
}

/// Noisy-count threshold: a cell whose exact sum is at most `sensitivity`
/// (a single user) clears it with probability at most `delta`.
pub fn censor_threshold(epsilon_q: f64, delta: f64, sensitivity: f64) -> f64 {
    sensitivity + (sensitivity / epsilon_q) * (1.0 / (2.0 * delta)).ln()
}

/// Keeps at most `k` records per user id, chosen by seeded reservoir sampling.
///
/// Records are put into canonical `(id, feature, partition, observation)`
/// order before sampling, so the survivors depend only on the multiset of
/// input records and the seed. Output is in that canonical order.
pub fn bound_contributions(mut records: Vec<Record>, k: usize, seed: u64) -> Vec<Record> {
    assert!(k >= 1, "contribution limit must be at least 1");
    exec::sort_by(&mut records, |a, b| {
        a.id.cmp(&b.id)
            .then_with(|| a.feature.cmp(&b.feature))
            .then_with(|| a.partition.cmp(&b.partition))
            .then_with(|| a.observation.total_cmp(&b.observation))
    });

    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].id != records[start].id {
            groups.push(start..i);
            start = i;
        }
    }

    let noise = NoiseSource::new(seed);
    let kept: Vec<Vec<usize>> = exec::map(&groups, |range| {
        let n = range.len();
        if n <= k {
            return range.clone().collect();
        }
        let mut rng = noise.stream("reservoir", records[range.start].id.as_bytes());
        let mut reservoir: Vec<usize> = (0..k).collect();
        for i in k..n {
            let j = rng.random_range(0..=i);
            if j < k {
                reservoir[j] = i;
            }
        }
        reservoir.sort_unstable();
        reservoir.into_iter().map(|i| range.start + i).collect()
    });

    let mut keep = vec![false; records.len()];
    for i in kept.into_iter().flatten() {
        keep[i] = true;
    }
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorMode {
    Drop,
    OtherBucket,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CensoringPolicy {
    threshold: f64,
    mode: CensorMode,
}

impl CensoringPolicy {
    pub fn new(threshold: f64, mode: CensorMode) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "censoring threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self { threshold, mode })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn mode(&self) -> CensorMode {
        self.mode
    }
}

/// Tracks epsilon charges under sequential composition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetAccountant {
    total_epsilon: f64,
    spent: Vec<(String, f64)>,
}

impl BudgetAccountant {
    /// Relative slack when comparing spend to the total, so that splits like
    /// 0.1 + 0.2 + 0.7 still fit a budget of 1.
    const SLACK: f64 = 1e-12;

    pub fn new(total_epsilon: f64) -> Result<Self> {
        if !(total_epsilon.is_finite() && total_epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "total epsilon must be positive, got {total_epsilon}"
            )));
        }
        Ok(Self {
            total_epsilon,
            spent: Vec::new(),
        })
    }

    pub fn total(&self) -> f64 {
        self.total_epsilon
    }

    pub fn spent(&self) -> f64 {
        self.spent.iter().map(|(_, e)| e).sum()
    }

    pub fn remaining(&self) -> f64 {
        (self.total_epsilon - self.spent()).max(0.0)
    }

    pub fn charges(&self) -> &[(String, f64)] {
        &self.spent
    }

    fn fits(&self, extra: f64) -> bool {
        self.spent() + extra <= self.total_epsilon * (1.0 + Self::SLACK)
    }

    /// Checks that a whole plan of charges fits before any of it runs.
    pub fn check_plan<'a>(&self, plan: impl IntoIterator<Item = (&'a str, f64)>) -> Result<()> {
        let mut running = 0.0;
        for (label, eps) in plan {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "charge {label:?} must be positive, got {eps}"
                )));
            }
            running += eps;
            if !self.fits(running) {
                return Err(Error::BudgetExceeded {
                    label: label.to_string(),
                    requested: eps,
                    remaining: self.remaining() - (running - eps),
                });
            }
        }
        Ok(())
    }

    pub fn charge(&mut self, label: &str, epsilon_q: f64) -> Result<()> {
        if !(epsilon_q.is_finite() && epsilon_q > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "charge {label:?} must be positive, got {epsilon_q}"
            )));
        }
        if !self.fits(epsilon_q) {
            return Err(Error::BudgetExceeded {
                label: label.to_string(),
                requested: epsilon_q,
                remaining: self.remaining(),
            });
        }
        self.spent.push((label.to_string(), epsilon_q));
        Ok(())
    }
}

/// Parameters of one noisy sum query.
#[derive(Clone, Debug)]
pub struct SumQuery<'a> {
    pub label: &'a str,
    pub sensitivity: f64,
    pub epsilon: f64,
    pub policy: CensoringPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReleasedSums<K: Ord> {
    pub values: BTreeMap<K, f64>,
    /// Cells that fell below the threshold (before any pooling).
    pub censored: usize,
}

/// Adds independent Laplace(Δ/ε) noise to every sum and censors cells whose
/// noisy value lands below the threshold. The query's epsilon is charged
/// before anything is released.
pub fn release_sums<K: CellKey>(
    exact: &BTreeMap<K, f64>,
    query: &SumQuery<'_>,
    accountant: &mut BudgetAccountant,
    noise: &NoiseSource,
) -> Result<ReleasedSums<K>> {
    if !(query.sensitivity.is_finite() && query.sensitivity > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensitivity must be positive, got {}",
            query.sensitivity
        )));
    }
    accountant.charge(query.label, query.epsilon)?;
    let scale = query.sensitivity / query.epsilon;
    let tau = query.policy.threshold();

    let cells: Vec<(&K, f64)> = exact.iter().map(|(k, v)| (k, *v)).collect();
    let noisy: Vec<f64> = exec::map(&cells, |(key, value)| {
        let mut rng = noise.cell_stream(query.label, *key);
        value + laplace_noise(scale, &mut rng).expect("scale checked above")
    });

    let mut values = BTreeMap::new();
    let mut pooled: BTreeMap<K, NeumaierSum> = BTreeMap::new();
    let mut censored = 0;
    for ((key, _), v) in cells.into_iter().zip(noisy) {
        if v >= tau {
            values.insert(key.clone(), v);
        } else {
            censored += 1;
            if query.policy.mode() == CensorMode::OtherBucket {
                pooled.entry(key.other_bucket()).or_default().add(v);
            }
        }
    }
    // Pooling is post-processing; only strictly positive pools are kept.
    for (key, sum) in pooled {
        let v = sum.value();
        if v > 0.0 {
            *values.entry(key).or_insert(0.0) += v;
        }
    }
    Ok(ReleasedSums { values, censored })
}

/// The DP-disabled path: exact sums pass through, non-positive ones are dropped.
pub fn passthrough_sums<K: CellKey>(exact: &BTreeMap<K, f64>) -> ReleasedSums<K> {
    let values: BTreeMap<K, f64> = exact
        .iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    let censored = exact.len() - values.len();
    ReleasedSums { values, censored }
}

/// What one released query cost and removed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryReport {
    pub label: String,
    pub epsilon: f64,
    pub threshold: Option<f64>,
    pub cells_in: usize,
    pub released: usize,
    pub censored: usize,
}

/// Releases the joint table and both marginals as three separately charged
/// queries, then derives the grand total from the released partition sums.
pub fn release_table(
    exact: &ExactSums,
    config: &PrivacyConfig,
    accountant: Option<&mut BudgetAccountant>,
    label_prefix: &str,
) -> Result<(AggregateTable, Vec<QueryReport>)> {
    let labels = [
        format!("{label_prefix}joint"),
        format!("{label_prefix}feature_marginal"),
        format!("{label_prefix}partition_marginal"),
    ];

    if !config.dp_enabled() {
        let joint = passthrough_sums(&exact.joint);
        let feature = passthrough_sums(&exact.feature);
        let partition = passthrough_sums(&exact.partition);
        let reports = vec![
            report(&labels[0], 0.0, None, exact.joint.len(), &joint),
            report(&labels[1], 0.0, None, exact.feature.len(), &feature),
            report(&labels[2], 0.0, None, exact.partition.len(), &partition),
        ];
        let table = assemble(joint.values, feature.values, partition.values, 0.0);
        return Ok((table, reports));
    }

    let accountant = accountant.ok_or_else(|| {
        Error::InvalidConfig("a budget accountant is required when DP is enabled".into())
    })?;
    let split = config.budget_split();
    let eps = [
        config.epsilon() * split.joint(),
        config.epsilon() * split.feature(),
        config.epsilon() * split.partition(),
    ];
    accountant.check_plan(labels.iter().map(String::as_str).zip(eps))?;

    let delta = config.sensitivity();
    let mode = if config.other_bucket() {
        CensorMode::OtherBucket
    } else {
        CensorMode::Drop
    };
    let noise = NoiseSource::new(config.seed());
    let query = |i: usize| -> Result<SumQuery<'_>> {
        let tau = config
            .threshold_override()
            .unwrap_or_else(|| censor_threshold(eps[i], config.delta(), delta));
        Ok(SumQuery {
            label: &labels[i],
            sensitivity: delta,
            epsilon: eps[i],
            policy: CensoringPolicy::new(tau, mode)?,
        })
    };

    let (q0, q1, q2) = (query(0)?, query(1)?, query(2)?);
    let joint = release_sums(&exact.joint, &q0, accountant, &noise)?;
    let feature = release_sums(&exact.feature, &q1, accountant, &noise)?;
    let partition = release_sums(&exact.partition, &q2, accountant, &noise)?;
    let reports = vec![
        report(q0.label, q0.epsilon, Some(q0.policy.threshold()), exact.joint.len(), &joint),
        report(q1.label, q1.epsilon, Some(q1.policy.threshold()), exact.feature.len(), &feature),
        report(q2.label, q2.epsilon, Some(q2.policy.threshold()), exact.partition.len(), &partition),
    ];
    let table = assemble(joint.values, feature.values, partition.values, eps.iter().sum());
    Ok((table, reports))
}

fn report<K: Ord>(
    label: &str,
    epsilon: f64,
    threshold: Option<f64>,
    cells_in: usize,
    released: &ReleasedSums<K>,
) -> QueryReport {
    QueryReport {
        label: label.to_string(),
        epsilon,
        threshold,
        cells_in,
        released: released.values.len(),
        censored: released.censored,
    }
}

fn assemble(
    joint: BTreeMap<(String, String), f64>,
    feature_marginals: BTreeMap<String, f64>,
    partition_marginals: BTreeMap<String, f64>,
    epsilon_spent: f64,
) -> AggregateTable {
    let total = AggregateTable::derive_total(&partition_marginals);
    AggregateTable {
        joint,
        feature_marginals,
        partition_marginals,
        total,
        epsilon_spent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(tau: f64) -> CensoringPolicy {
        CensoringPolicy::new(tau, CensorMode::Drop).unwrap()
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp(200.0, 0.0, 1.0), 1.0);
        assert_eq!(clamp(0.5, 0.0, 1.0), 0.5);
        assert_eq!(clamp(-7.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = NoiseSource::new(1).stream("t", b"");
        assert!(laplace_noise(0.0, &mut rng).is_err());
        assert!(laplace_noise(-1.0, &mut rng).is_err());
        assert!(laplace_noise(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn laplace_is_deterministic_per_stream() {
        let s = NoiseSource::new(42);
        let a = laplace_noise(1.0, &mut s.stream("q", b"k")).unwrap();
        let b = laplace_noise(1.0, &mut s.stream("q", b"k")).unwrap();
        let c = laplace_noise(1.0, &mut s.stream("q", b"other")).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, c);
    }

    #[test]
    fn laplace_magnitude_is_monotone_in_scale() {
        let s = NoiseSource::new(9);
        for i in 0..200u32 {
            let key = i.to_le_bytes();
            let small = laplace_noise(0.5, &mut s.stream("q", &key)).unwrap();
            let large = laplace_noise(2.0, &mut s.stream("q", &key)).unwrap();
            assert!(small.abs() <= large.abs());
            assert_eq!(small.signum(), large.signum());
        }
    }

    #[test]
    fn threshold_examples() {
        let delta = (-19.0f64).exp() / 2.0;
        assert!((censor_threshold(1.0, delta, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(censor_threshold(1.0, 0.5, 1.0), 1.0);
        assert!((censor_threshold(1e12, 1e-6, 1.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn accountant_exact_fit_and_overflow() {
        let mut a = BudgetAccountant::new(1.0).unwrap();
        a.charge("j", 0.5).unwrap();
        a.charge("f", 0.25).unwrap();
        a.charge("p", 0.25).unwrap();
        assert_eq!(a.spent(), 1.0);

        let mut b = BudgetAccountant::new(1.0).unwrap();
        b.charge("first", 0.5).unwrap();
        match b.charge("second", 0.6) {
            Err(Error::BudgetExceeded { label, .. }) => assert_eq!(label, "second"),
            other => panic!("expected overflow, got {other:?}"),
        }
        assert_eq!(b.spent(), 0.5);
    }

    #[test]
    fn accountant_composes_folds() {
        let mut a = BudgetAccountant::new(1.0).unwrap();
        a.check_plan([("fold1", 0.5), ("fold2", 0.5)]).unwrap();
        assert!(a.check_plan([("fold1", 0.5), ("fold2", 0.6)]).is_err());
        a.charge("fold1", 0.5).unwrap();
        a.charge("fold2", 0.5).unwrap();
        assert_eq!(a.spent(), 1.0);
        assert!(a.charge("fold3", 1e-3).is_err());
    }

    #[test]
    fn bounding_keeps_users_under_limit() {
        let recs = vec![Record::new("u", "f", "p", 1.0)];
        assert_eq!(bound_contributions(recs.clone(), 1, 0), recs);
    }

    #[test]
    fn bounding_forces_cardinality() {
        let recs = vec![Record::new("u", "f", "p", 1.0); 5];
        assert_eq!(bound_contributions(recs, 2, 7).len(), 2);
    }

    #[test]
    fn bounding_is_seed_deterministic_and_order_free() {
        let recs: Vec<Record> = (0..1000)
            .map(|i| Record::new("u", format!("f{i}"), "p", 1.0))
            .collect();
        let a = bound_contributions(recs.clone(), 10, 99);
        let mut reversed = recs.clone();
        reversed.reverse();
        let b = bound_contributions(reversed, 10, 99);
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        assert_ne!(a, bound_contributions(recs, 10, 100));
    }

    #[test]
    fn passthrough_is_identity_on_positive() {
        let exact: BTreeMap<String, f64> =
            [("a".to_string(), 1.0), ("b".to_string(), 2.5)].into_iter().collect();
        let r = passthrough_sums(&exact);
        assert_eq!(r.values, exact);
        assert_eq!(r.censored, 0);
    }

    #[test]
    fn release_charges_before_release() {
        let exact: BTreeMap<String, f64> = [("a".to_string(), 1000.0)].into_iter().collect();
        let mut acct = BudgetAccountant::new(0.5).unwrap();
        let q = SumQuery {
            label: "q",
            sensitivity: 1.0,
            epsilon: 1.0,
            policy: policy(1.0),
        };
        assert!(matches!(
            release_sums(&exact, &q, &mut acct, &NoiseSource::new(0)),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(acct.charges().is_empty());
    }

    #[test]
    fn release_of_empty_input_is_empty() {
        let exact: BTreeMap<String, f64> = BTreeMap::new();
        let mut acct = BudgetAccountant::new(1.0).unwrap();
        let q = SumQuery {
            label: "q",
            sensitivity: 1.0,
            epsilon: 1.0,
            policy: policy(1.0),
        };
        let r = release_sums(&exact, &q, &mut acct, &NoiseSource::new(0)).unwrap();
        assert!(r.values.is_empty());
    }

    #[test]
    fn zero_sum_cell_is_censored_at_tau_twenty() {
        // P(Laplace(1) >= 20) = e^-20 / 2
        let exact: BTreeMap<String, f64> = [("rare".to_string(), 0.0)].into_iter().collect();
        let mut survived = 0;
        for seed in 0..2000 {
            let mut acct = BudgetAccountant::new(1.0).unwrap();
            let q = SumQuery {
                label: "q",
                sensitivity: 1.0,
                epsilon: 1.0,
                policy: policy(20.0),
            };
            let r = release_sums(&exact, &q, &mut acct, &NoiseSource::new(seed)).unwrap();
            survived += r.values.len();
        }
        assert_eq!(survived, 0);
    }

    #[test]
    fn other_bucket_pools_censored_cells_per_partition() {
        let exact: BTreeMap<(String, String), f64> = [
            (("big".to_string(), "p".to_string()), 1e6),
            (("r1".to_string(), "p".to_string()), 1e5),
            (("r2".to_string(), "p".to_string()), 1e5),
        ]
        .into_iter()
        .collect();
        let mut acct = BudgetAccountant::new(10.0).unwrap();
        let q = SumQuery {
            label: "joint",
            sensitivity: 1.0,
            epsilon: 1.0,
            policy: CensoringPolicy::new(5e5, CensorMode::OtherBucket).unwrap(),
        };
        let r = release_sums(&exact, &q, &mut acct, &NoiseSource::new(3)).unwrap();
        assert_eq!(r.censored, 2);
        let other = r.values[&(OTHER_KEY.to_string(), "p".to_string())];
        assert!((other - 2e5).abs() < 100.0);
        assert_eq!(r.values.len(), 2);
    }

    #[test]
    fn release_is_independent_of_cell_set() {
        // a cell's noise must not depend on which other cells are present
        let mut exact: BTreeMap<String, f64> = [("a".to_string(), 100.0)].into_iter().collect();
        let q = SumQuery {
            label: "q",
            sensitivity: 1.0,
            epsilon: 1.0,
            policy: policy(1.0),
        };
        let mut acct = BudgetAccountant::new(2.0).unwrap();
        let alone = release_sums(&exact, &q, &mut acct, &NoiseSource::new(5)).unwrap();
        exact.insert("b".to_string(), 100.0);
        let with_b = release_sums(&exact, &q, &mut acct, &NoiseSource::new(5)).unwrap();
        assert_eq!(alone.values["a"].to_bits(), with_b.values["a"].to_bits());
    }
}
