//! Batched multi-partition ranking against the naive loop of one-vs-all
//! binary runs.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mi::MiParams;
use crate::model::{PrivacyConfig, RankedResult, Record};
use crate::pipeline::{rank_records, PipelineOptions};

/// One binary run per partition: relabel everything as `p` versus not-`p`,
/// run the whole pipeline, keep the rows for `p`. DP is off.
pub fn binary_baseline(
    records: &[Record],
    params: &MiParams,
    options: &PipelineOptions,
) -> Result<Vec<RankedResult>> {
    let partitions: BTreeSet<&str> = records.iter().map(|r| r.partition.as_str()).collect();
    let config = PrivacyConfig::disabled();
    let mut out = Vec::new();
    for p in partitions {
        let rest = format!("¬{p}");
        let relabelled: Vec<Record> = records
            .iter()
            .map(|r| {
                let label = if r.partition == p { p } else { rest.as_str() };
                Record::new(r.id.clone(), r.feature.clone(), label, r.observation)
            })
            .collect();
        let ranking = rank_records(relabelled, &config, params, options)?;
        out.extend(ranking.into_iter().filter(|r| r.partition == p));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuntimeReport {
    pub rows: usize,
    pub partitions: usize,
    pub batched_seconds: f64,
    pub binary_seconds: f64,
    /// `binary_seconds / batched_seconds`.
    pub ratio: f64,
    /// Largest MI difference between the two paths over shared pairs.
    pub max_abs_mi_diff: f64,
}

/// Times one batched ranking against the per-partition binary loop over the
/// same records.
pub fn runtime_compare(
    records: &[Record],
    params: &MiParams,
    options: &PipelineOptions,
) -> Result<RuntimeReport> {
    let partitions = records
        .iter()
        .map(|r| r.partition.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    if partitions < 2 {
        return Err(Error::InvalidArgument(format!(
            "runtime comparison needs at least two partitions, found {partitions}"
        )));
    }

    let start = Instant::now();
    let batched = rank_records(records.to_vec(), &PrivacyConfig::disabled(), params, options)?;
    let batched_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let binary = binary_baseline(records, params, options)?;
    let binary_seconds = start.elapsed().as_secs_f64();

    Ok(RuntimeReport {
        rows: records.len(),
        partitions,
        batched_seconds,
        binary_seconds,
        ratio: binary_seconds / batched_seconds.max(f64::MIN_POSITIVE),
        max_abs_mi_diff: max_mi_diff(&batched, &binary)?,
    })
}

/// Largest MI gap between two rankings that must contain the same pairs.
pub fn max_mi_diff(a: &[RankedResult], b: &[RankedResult]) -> Result<f64> {
    let index: std::collections::HashMap<(&str, &str), f64> = b
        .iter()
        .map(|r| ((r.feature.as_str(), r.partition.as_str()), r.mi))
        .collect();
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "rankings cover different pair sets ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    a.iter().try_fold(0.0f64, |acc, r| {
        let other = index
            .get(&(r.feature.as_str(), r.partition.as_str()))
            .ok_or_else(|| Error::InvalidArgument(format!("pair ({}, {}) missing", r.feature, r.partition)))?;
        Ok(acc.max((r.mi - other).abs()))
    })
}
