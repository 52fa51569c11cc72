//! Domain types shared by the aggregation, release and ranking stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input row: a user's observation of a feature under a partition label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub feature: String,
    pub partition: String,
    pub observation: f64,
}

impl Record {
    pub fn new(
        id: impl Into<String>,
        feature: impl Into<String>,
        partition: impl Into<String>,
        observation: f64,
    ) -> Self {
        Self {
            id: id.into(),
            feature: feature.into(),
            partition: partition.into(),
            observation,
        }
    }

    /// The same record with feature and partition exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            feature: self.partition.clone(),
            partition: self.feature.clone(),
            observation: self.observation,
        }
    }
}

/// Why an input row was refused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Parse,
    Negative,
    NonFinite,
    EmptyKey,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rejection::Parse => "parse",
            Rejection::Negative => "negative",
            Rejection::NonFinite => "non_finite",
            Rejection::EmptyKey => "empty_key",
        };
        f.write_str(s)
    }
}

/// Turns four raw string fields into a [`Record`].
///
/// Keys are kept byte-for-byte; only the observation is parsed. The user id
/// may be empty (it is opaque), feature and partition may not.
pub fn validate_record(
    id: &str,
    feature: &str,
    partition: &str,
    observation: &str,
) -> std::result::Result<Record, Rejection> {
    if feature.is_empty() || partition.is_empty() {
        return Err(Rejection::EmptyKey);
    }
    let value: f64 = observation.trim().parse().map_err(|_| Rejection::Parse)?;
    if !value.is_finite() {
        return Err(Rejection::NonFinite);
    }
    if value < 0.0 {
        return Err(Rejection::Negative);
    }
    Ok(Record::new(id, feature, partition, value))
}

/// Running tally of rejected rows, by reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RejectionCounts(pub BTreeMap<Rejection, u64>);

impl RejectionCounts {
    pub fn add(&mut self, reason: Rejection) {
        *self.0.entry(reason).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

/// Share of the privacy budget given to each of the three released queries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    joint: f64,
    feature: f64,
    partition: f64,
}

impl BudgetSplit {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(joint: f64, feature: f64, partition: f64) -> Result<Self> {
        let weights = [joint, feature, partition];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "budget split weights must be finite and nonnegative, got {joint},{feature},{partition}"
            )));
        }
        let sum = joint + feature + partition;
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "budget split must sum to 1, got {sum}"
            )));
        }
        Ok(Self {
            joint,
            feature,
            partition,
        })
    }

    pub fn joint(&self) -> f64 {
        self.joint
    }

    pub fn feature(&self) -> f64 {
        self.feature
    }

    pub fn partition(&self) -> f64 {
        self.partition
    }
}

impl Default for BudgetSplit {
    fn default() -> Self {
        Self {
            joint: 0.5,
            feature: 0.25,
            partition: 0.25,
        }
    }
}

/// Privacy parameters for one pipeline run. Built through
/// [`PrivacyConfigBuilder`], which enforces the invariants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrivacyConfig {
    epsilon: f64,
    delta: f64,
    clamp_lo: f64,
    clamp_hi: f64,
    contribution_limit: usize,
    budget_split: BudgetSplit,
    seed: u64,
    other_bucket: bool,
    dp_enabled: bool,
    threshold: Option<f64>,
}

impl PrivacyConfig {
    pub fn builder() -> PrivacyConfigBuilder {
        PrivacyConfigBuilder::default()
    }

    /// A configuration that releases exact sums.
    pub fn disabled() -> Self {
        PrivacyConfigBuilder::default()
            .dp_enabled(false)
            .build()
            .expect("default config is valid")
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn clamp_bounds(&self) -> (f64, f64) {
        (self.clamp_lo, self.clamp_hi)
    }

    pub fn contribution_limit(&self) -> usize {
        self.contribution_limit
    }

    pub fn budget_split(&self) -> BudgetSplit {
        self.budget_split
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn other_bucket(&self) -> bool {
        self.other_bucket
    }

    pub fn dp_enabled(&self) -> bool {
        self.dp_enabled
    }

    /// Fixed censoring threshold overriding the derived one, if any.
    pub fn threshold_override(&self) -> Option<f64> {
        self.threshold
    }

    /// L1 sensitivity of every released sum: one user moves a sum by at most
    /// the clamp width times the number of records they may keep.
    pub fn sensitivity(&self) -> f64 {
        (self.clamp_hi - self.clamp_lo) * self.contribution_limit as f64
    }

    /// Copy of this config with a different total budget.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        PrivacyConfigBuilder::from(self.clone()).epsilon(epsilon).build()
    }

    /// Copy of this config with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrivacyConfigBuilder {
    inner: PrivacyConfig,
}

impl Default for PrivacyConfigBuilder {
    fn default() -> Self {
        Self {
            inner: PrivacyConfig {
                epsilon: 1.0,
                delta: 1e-6,
                clamp_lo: 0.0,
                clamp_hi: 1.0,
                contribution_limit: 1,
                budget_split: BudgetSplit::default(),
                seed: 0,
                other_bucket: false,
                dp_enabled: true,
                threshold: None,
            },
        }
    }
}

impl From<PrivacyConfig> for PrivacyConfigBuilder {
    fn from(inner: PrivacyConfig) -> Self {
        Self { inner }
    }
}

impl PrivacyConfigBuilder {
    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.inner.epsilon = epsilon;
        self
    }

    pub fn delta(mut self, delta: f64) -> Self {
        self.inner.delta = delta;
        self
    }

    pub fn clamp(mut self, lo: f64, hi: f64) -> Self {
        self.inner.clamp_lo = lo;
        self.inner.clamp_hi = hi;
        self
    }

    pub fn contribution_limit(mut self, k: usize) -> Self {
        self.inner.contribution_limit = k;
        self
    }

    pub fn budget_split(mut self, split: BudgetSplit) -> Self {
        self.inner.budget_split = split;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.inner.seed = seed;
        self
    }

    pub fn other_bucket(mut self, on: bool) -> Self {
        self.inner.other_bucket = on;
        self
    }

    pub fn dp_enabled(mut self, on: bool) -> Self {
        self.inner.dp_enabled = on;
        self
    }

    pub fn threshold(mut self, tau: Option<f64>) -> Self {
        self.inner.threshold = tau;
        self
    }

    pub fn build(self) -> Result<PrivacyConfig> {
        let c = self.inner;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(c.clamp_lo.is_finite() && c.clamp_hi.is_finite() && c.clamp_lo < c.clamp_hi) {
            return bad(format!(
                "clamp bounds must satisfy lo < hi, got {},{}",
                c.clamp_lo, c.clamp_hi
            ));
        }
        if c.contribution_limit == 0 {
            return bad("contribution limit must be at least 1".into());
        }
        // Re-run the split check so deserialized or hand-built splits are covered too.
        let s = c.budget_split;
        BudgetSplit::new(s.joint, s.feature, s.partition)?;
        if c.dp_enabled {
            if !(c.epsilon.is_finite() && c.epsilon > 0.0) {
                return bad(format!("epsilon must be positive, got {}", c.epsilon));
            }
            if !(c.delta > 0.0 && c.delta < 1.0) {
                return bad(format!("delta must lie in (0,1), got {}", c.delta));
            }
            if s.joint <= 0.0 || s.feature <= 0.0 || s.partition <= 0.0 {
                return bad("every budget split weight must be positive when DP is on".into());
            }
            if let Some(tau) = c.threshold {
                if !(tau.is_finite() && tau > 0.0) {
                    return bad(format!("threshold must be positive, got {tau}"));
                }
            }
        }
        Ok(c)
    }
}

/// Released (possibly noisy) sums at the three aggregation levels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub joint: BTreeMap<(String, String), f64>,
    pub feature_marginals: BTreeMap<String, f64>,
    pub partition_marginals: BTreeMap<String, f64>,
    pub total: f64,
    pub epsilon_spent: f64,
}

impl AggregateTable {
    /// The grand total used for normalization: a post-processed sum of the
    /// released partition marginals, in key order.
    pub fn derive_total(partition_marginals: &BTreeMap<String, f64>) -> f64 {
        crate::aggregate::NeumaierSum::sum(partition_marginals.values().copied())
    }

    /// Exchanges the roles of features and partitions without touching any
    /// released value, so no further budget is spent.
    pub fn transposed(&self) -> Self {
        Self {
            joint: self
                .joint
                .iter()
                .map(|((f, p), v)| ((p.clone(), f.clone()), *v))
                .collect(),
            feature_marginals: self.partition_marginals.clone(),
            partition_marginals: self.feature_marginals.clone(),
            total: self.total,
            epsilon_spent: self.epsilon_spent,
        }
    }
}

/// Marginal and joint probabilities for one (feature, partition) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTriple {
    pub p_x: f64,
    pub p_y: f64,
    pub p_xy: f64,
}

impl ProbabilityTriple {
    pub fn new(p_x: f64, p_y: f64, p_xy: f64) -> Self {
        Self { p_x, p_y, p_xy }
    }
}

/// Whether a feature marks its partition by showing up or by staying away.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Presence,
    Absence,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Presence => "Presence",
            Direction::Absence => "Absence",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Presence" => Ok(Direction::Presence),
            "Absence" => Ok(Direction::Absence),
            other => Err(Error::InvalidArgument(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub partition: String,
    pub feature: String,
    /// Mutual information in nats.
    pub mi: f64,
    pub direction: Direction,
    /// 1-based position in the global descending-MI order.
    pub rank: usize,
}
