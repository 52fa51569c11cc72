//! One-vs-all binary mutual information, ranking, role reversal and the
//! n-fold cascade.
//!
//! Each `(feature, partition)` triple is read as a 2×2 contingency table:
//! feature present/absent against this partition/every other partition. MI is
//! reported in nats.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::dp::{BudgetAccountant, QueryReport};
use crate::error::{Error, Result};
use crate::exec;
use crate::fmt::round_sig12;
use crate::model::{AggregateTable, Direction, PrivacyConfig, ProbabilityTriple, RankedResult, Record};
use crate::pipeline::{self, PipelineOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MiParams {
    /// Probability floor for a single MI arm.
    pub tol: f64,
    /// Log a warning when both the feature and partition domains exceed this.
    pub cardinality_warning: usize,
}

impl MiParams {
    pub fn new(tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol < 1e-6) {
            return Err(Error::InvalidConfig(format!("tol must lie in (0, 1e-6), got {tol}")));
        }
        Ok(Self {
            tol,
            ..Self::default()
        })
    }
}

impl Default for MiParams {
    fn default() -> Self {
        Self {
            tol: 1e-16,
            cardinality_warning: 1_000_000,
        }
    }
}

/// One arm of the binary decomposition: `p_xy · ln(p_xy / max(p_x·p_y, tol))`,
/// or zero once `p_xy` drops below `tol`.
pub fn calc_single_mi(p_x: f64, p_y: f64, p_xy: f64, tol: f64) -> f64 {
    if p_xy < tol {
        return 0.0;
    }
    let phi = (p_x * p_y).max(tol);
    p_xy * (p_xy / phi).ln()
}

/// Binary MI of feature presence against partition membership.
pub fn calc_mi(p_x: f64, p_y: f64, p_xy: f64, tol: f64) -> f64 {
    let p_not_x = 1.0 - p_x;
    let p_not_y = 1.0 - p_y;
    // Noise can leave a complement slightly negative; such an arm is empty.
    let p_x_not_y = (p_x - p_xy).max(0.0);
    let p_y_not_x = (p_y - p_xy).max(0.0);
    let p_neither = (1.0 - p_x - p_y + p_xy).max(0.0);
    calc_single_mi(p_x, p_y, p_xy, tol)
        + calc_single_mi(p_x, p_not_y, p_x_not_y, tol)
        + calc_single_mi(p_not_x, p_y, p_y_not_x, tol)
        + calc_single_mi(p_not_x, p_not_y, p_neither, tol)
}

/// Presence when the feature is relatively more common inside the partition
/// than outside it. Equality resolves to Absence.
pub fn direction(p_x: f64, p_y: f64, p_xy: f64) -> Result<Direction> {
    if p_y.is_nan() || p_y >= 1.0 {
        return Err(Error::DegeneratePartition(format!("p_y = {p_y}")));
    }
    let inside = p_xy / p_y;
    let outside = (p_x - p_xy) / (1.0 - p_y);
    Ok(if inside > outside {
        Direction::Presence
    } else {
        Direction::Absence
    })
}

/// Orders every pair by MI, descending, breaking ties by partition then
/// feature. MI values that agree to the 12 significant digits written to
/// output files count as tied, so mirrored pairs (equal MI up to rounding)
/// always come out in partition order.
pub fn rank(
    tables: &BTreeMap<(String, String), ProbabilityTriple>,
    params: &MiParams,
) -> Result<Vec<RankedResult>> {
    warn_on_cardinality(tables, params);
    let cells: Vec<(&(String, String), &ProbabilityTriple)> = tables.iter().collect();
    let scored: Vec<Result<(f64, RankedResult)>> = exec::map(&cells, |((feature, partition), t)| {
        let dir = direction(t.p_x, t.p_y, t.p_xy).map_err(|_| Error::DegeneratePartition(partition.clone()))?;
        let mi = calc_mi(t.p_x, t.p_y, t.p_xy, params.tol);
        Ok((
            round_sig12(mi),
            RankedResult {
                partition: partition.clone(),
                feature: feature.clone(),
                mi,
                direction: dir,
                rank: 0,
            },
        ))
    });
    let mut keyed = scored.into_iter().collect::<Result<Vec<_>>>()?;
    exec::sort_by(&mut keyed, |(ka, a), (kb, b)| {
        kb.total_cmp(ka)
            .then_with(|| a.partition.cmp(&b.partition))
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut r))| {
            r.rank = i + 1;
            r
        })
        .collect())
}

fn warn_on_cardinality(tables: &BTreeMap<(String, String), ProbabilityTriple>, params: &MiParams) {
    let features: HashSet<&str> = tables.keys().map(|(f, _)| f.as_str()).collect();
    let partitions: HashSet<&str> = tables.keys().map(|(_, p)| p.as_str()).collect();
    if features.len() > params.cardinality_warning && partitions.len() > params.cardinality_warning {
        log::warn!(
            "{} features against {} partitions: both sides are high-dimensional, rankings may be unreliable",
            features.len(),
            partitions.len()
        );
    }
}

/// Ranks a released table with features and partitions exchanged: which
/// partitions does each feature distinguish. Reuses the released values, so
/// no extra budget is spent.
pub fn flip(table: &AggregateTable, params: &MiParams) -> Result<Vec<RankedResult>> {
    let probs = crate::aggregate::build_probability_tables(&table.transposed())?;
    rank(&probs, params)
}

pub const COHORT_LABEL: &str = "cohort";
pub const REST_LABEL: &str = "rest";

/// Where a fold gets its seed keys.
#[derive(Clone, Debug, PartialEq)]
pub enum SeedSelection {
    Explicit(Vec<String>),
    /// The features selected by the previous fold.
    TopKFromPrevious,
}

#[derive(Clone, Debug)]
pub struct FoldSpec {
    pub seeds: SeedSelection,
    pub records: Vec<Record>,
    pub epsilon: f64,
    /// How many Presence features this fold hands to the next one.
    pub top_k: usize,
    /// Only records whose partition column equals this kind can place an
    /// entity in the cohort. `None` matches every record.
    pub link_kind: Option<String>,
    /// Only records of this kind are ranked. `None` ranks every record.
    pub target_kind: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub seeds: Vec<String>,
    pub cohort_size: usize,
    pub ranking: Vec<RankedResult>,
    /// Top features that mark the cohort by presence, in rank order.
    pub selected: Vec<String>,
    pub reports: Vec<QueryReport>,
}

/// Relabels a fold's records as cohort versus rest.
///
/// An entity joins the cohort when it has a positive observation on any seed
/// key (among `link_kind` records). Records on the seed keys themselves are
/// left out of the ranking input since they define the labels.
pub fn label_cohort(
    records: &[Record],
    seeds: &BTreeSet<String>,
    link_kind: Option<&str>,
    target_kind: Option<&str>,
) -> (Vec<Record>, usize) {
    let kind_ok = |r: &Record, kind: Option<&str>| kind.is_none_or(|k| r.partition == k);
    let cohort: HashSet<&str> = records
        .iter()
        .filter(|r| kind_ok(r, link_kind) && r.observation > 0.0 && seeds.contains(&r.feature))
        .map(|r| r.id.as_str())
        .collect();
    let labelled = records
        .iter()
        .filter(|r| kind_ok(r, target_kind) && !seeds.contains(&r.feature))
        .map(|r| {
            let label = if cohort.contains(r.id.as_str()) {
                COHORT_LABEL
            } else {
                REST_LABEL
            };
            Record::new(r.id.clone(), r.feature.clone(), label, r.observation)
        })
        .collect();
    (labelled, cohort.len())
}

/// Features that mark the cohort by presence, best first.
pub fn select_cohort_features(ranking: &[RankedResult], top_k: usize) -> Vec<String> {
    ranking
        .iter()
        .filter(|r| r.partition == COHORT_LABEL && r.direction == Direction::Presence)
        .take(top_k)
        .map(|r| r.feature.clone())
        .collect()
}

/// Runs a cascade of binary rankings, each fold seeded by the previous one's
/// top features. Every fold is charged to `accountant`; the whole plan is
/// checked against the remaining budget before the first fold runs.
pub fn nfold(
    folds: &[FoldSpec],
    base: &PrivacyConfig,
    params: &MiParams,
    accountant: &mut BudgetAccountant,
    options: &PipelineOptions,
) -> Result<Vec<FoldResult>> {
    if let Some(first) = folds.first() {
        if first.seeds == SeedSelection::TopKFromPrevious {
            return Err(Error::InvalidArgument(
                "the first fold needs explicit seeds".into(),
            ));
        }
    }
    if base.dp_enabled() {
        let labels: Vec<String> = (1..=folds.len()).map(|i| format!("fold{i}")).collect();
        accountant.check_plan(labels.iter().map(String::as_str).zip(folds.iter().map(|f| f.epsilon)))?;
    }

    let mut results: Vec<FoldResult> = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let seeds: BTreeSet<String> = match &fold.seeds {
            SeedSelection::Explicit(keys) => keys.iter().cloned().collect(),
            SeedSelection::TopKFromPrevious => results
                .last()
                .map(|r| r.selected.iter().cloned().collect())
                .unwrap_or_default(),
        };
        let (labelled, cohort_size) = label_cohort(
            &fold.records,
            &seeds,
            fold.link_kind.as_deref(),
            fold.target_kind.as_deref(),
        );
        let config = if base.dp_enabled() {
            base.with_epsilon(fold.epsilon)?
        } else {
            base.clone()
        };
        let prefix = format!("fold{}/", i + 1);
        let released = pipeline::release_records(labelled, &config, Some(accountant), &prefix, options)?;
        let ranking = pipeline::rank_table(&released.table, params)?;
        let selected = select_cohort_features(&ranking, fold.top_k);
        results.push(FoldResult {
            seeds: seeds.into_iter().collect(),
            cohort_size,
            ranking,
            selected,
            reports: released.reports,
        });
    }
    Ok(results)
}
