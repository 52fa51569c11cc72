//! End-to-end stages: bound and clamp, aggregate, release, normalize, rank.

use serde::Serialize;

use crate::aggregate::{accumulate, build_probability_tables};
use crate::dp::{bound_contributions, clamp, release_table, BudgetAccountant, QueryReport};
use crate::error::Result;
use crate::mi::{rank, MiParams};
use crate::model::{AggregateTable, PrivacyConfig, RankedResult, Record};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PipelineOptions {
    /// Hash partitions used by the group-by. Never changes the output.
    pub shards: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { shards: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Released {
    pub table: AggregateTable,
    pub reports: Vec<QueryReport>,
    pub rows_in: u64,
    /// Rows left after contribution bounding.
    pub rows_bounded: u64,
}

/// Applies contribution bounding and clamping. With DP off, records are
/// returned unchanged so the baseline sees the raw data.
pub fn prepare_records(records: Vec<Record>, config: &PrivacyConfig) -> Vec<Record> {
    if !config.dp_enabled() {
        return records;
    }
    let (lo, hi) = config.clamp_bounds();
    let mut bounded = bound_contributions(records, config.contribution_limit(), config.seed());
    for r in &mut bounded {
        r.observation = clamp(r.observation, lo, hi);
    }
    bounded
}

pub fn release_records(
    records: Vec<Record>,
    config: &PrivacyConfig,
    accountant: Option<&mut BudgetAccountant>,
    label_prefix: &str,
    options: &PipelineOptions,
) -> Result<Released> {
    let rows_in = records.len() as u64;
    let prepared = prepare_records(records, config);
    let rows_bounded = prepared.len() as u64;
    let exact = accumulate(&prepared, options.shards).into_sorted();
    drop(prepared);
    let (table, reports) = release_table(&exact, config, accountant, label_prefix)?;
    Ok(Released {
        table,
        reports,
        rows_in,
        rows_bounded,
    })
}

pub fn rank_table(table: &AggregateTable, params: &MiParams) -> Result<Vec<RankedResult>> {
    rank(&build_probability_tables(table)?, params)
}

/// Full pipeline from raw records to a ranking. A fresh accountant holding
/// exactly the configured epsilon is used when DP is on.
pub fn rank_records(
    records: Vec<Record>,
    config: &PrivacyConfig,
    params: &MiParams,
    options: &PipelineOptions,
) -> Result<Vec<RankedResult>> {
    let mut accountant = if config.dp_enabled() {
        Some(BudgetAccountant::new(config.epsilon())?)
    } else {
        None
    };
    let released = release_records(records, config, accountant.as_mut(), "", options)?;
    rank_table(&released.table, params)
}
