//! Rank-stability evaluation: how far do pairs move in the ranking when the
//! released table is noisy, across a sweep of privacy budgets.

mod runtime;
pub mod synth;

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::fmt::sig12;
use crate::mi::MiParams;
use crate::model::{PrivacyConfig, RankedResult, Record};
use crate::pipeline::{rank_records, PipelineOptions};

pub use runtime::{binary_baseline, max_mi_diff, runtime_compare, RuntimeReport};

/// The percentiles reported for every comparison.
pub const PERCENTILES: [u8; 5] = [10, 25, 50, 75, 90];

/// Default number of baseline pairs compared.
pub const DEFAULT_TOP_K: usize = 10_000;

/// Privacy budgets swept by default.
pub const DEFAULT_EPSILONS: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Nearest-rank percentile of an already sorted sample.
pub fn nearest_rank<T: Copy>(sorted: &[T], pct: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (pct * n as f64 / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Median absolute error, i.e. the nearest-rank 50th percentile.
pub fn medae(errors: &[u64]) -> Option<u64> {
    let mut sorted = errors.to_vec();
    sorted.sort_unstable();
    nearest_rank(&sorted, 50.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankComparison {
    /// Baseline pairs considered (at most `top_k`).
    pub pairs_compared: usize,
    /// `|rank_baseline - rank_private|` per surviving pair, in baseline rank order.
    pub abs_rank_errors: Vec<u64>,
    /// Baseline pairs missing from the private ranking.
    pub dropped: usize,
    pub percentiles: BTreeMap<u8, f64>,
}

impl RankComparison {
    pub fn medae(&self) -> f64 {
        self.percentiles[&50]
    }
}

type PairKey<'a> = (&'a str, &'a str);

fn rank_index(ranking: &[RankedResult]) -> HashMap<PairKey<'_>, usize> {
    ranking
        .iter()
        .map(|r| ((r.feature.as_str(), r.partition.as_str()), r.rank))
        .collect()
}

fn top_by_rank(ranking: &[RankedResult], top_k: usize) -> Vec<&RankedResult> {
    let mut sorted: Vec<&RankedResult> = ranking.iter().collect();
    sorted.sort_by_key(|r| r.rank);
    sorted.truncate(top_k);
    sorted
}

/// Rank error of each of the baseline's top `top_k` pairs, `None` when the
/// pair was censored out of the private ranking.
fn per_pair_errors(baseline: &[RankedResult], private: &[RankedResult], top_k: usize) -> Vec<Option<u64>> {
    let index = rank_index(private);
    top_by_rank(baseline, top_k)
        .into_iter()
        .map(|b| {
            index
                .get(&(b.feature.as_str(), b.partition.as_str()))
                .map(|&p| b.rank.abs_diff(p) as u64)
        })
        .collect()
}

/// Compares a private ranking against the DP-free baseline over the
/// baseline's top `top_k` pairs.
pub fn compare_rankings(
    baseline: &[RankedResult],
    private: &[RankedResult],
    top_k: usize,
) -> Result<RankComparison> {
    let per_pair = per_pair_errors(baseline, private, top_k);
    let pairs_compared = per_pair.len();
    let errors: Vec<u64> = per_pair.iter().flatten().copied().collect();
    if errors.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let mut sorted = errors.clone();
    sorted.sort_unstable();
    let percentiles = PERCENTILES
        .iter()
        .map(|&p| (p, nearest_rank(&sorted, p as f64).expect("non-empty") as f64))
        .collect();
    Ok(RankComparison {
        pairs_compared,
        dropped: pairs_compared - errors.len(),
        abs_rank_errors: errors,
        percentiles,
    })
}

/// MedAE within each of `buckets` equal slices of the baseline's top `top_k`,
/// head first. A bucket whose pairs were all censored has no value.
pub fn stability_buckets(
    baseline: &[RankedResult],
    private: &[RankedResult],
    top_k: usize,
    buckets: usize,
) -> Vec<Option<u64>> {
    let per_pair = per_pair_errors(baseline, private, top_k);
    let n = per_pair.len();
    (0..buckets)
        .map(|b| {
            let (lo, hi) = (b * n / buckets, (b + 1) * n / buckets);
            let errs: Vec<u64> = per_pair[lo..hi].iter().flatten().copied().collect();
            medae(&errs)
        })
        .collect()
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSettings {
    /// `f64::INFINITY` stands for "DP disabled".
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub top_k: usize,
    /// Slices of the top-k used for the stability table.
    pub buckets: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            trials: 5,
            top_k: DEFAULT_TOP_K,
            buckets: 10,
        }
    }
}

/// One (epsilon, trial) cell of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub epsilon: f64,
    pub trial: usize,
    pub seed: u64,
    pub comparison: RankComparison,
    pub buckets: Vec<Option<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Trial means of each entry of [`PERCENTILES`].
    pub mean_percentiles: [f64; 5],
    pub mean_dropped: f64,
}

impl SweepRow {
    pub fn mean_medae(&self) -> f64 {
        self.mean_percentiles[2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialOutcome>,
}

impl SweepResult {
    pub fn outcomes_at(&self, epsilon: f64) -> impl Iterator<Item = &TrialOutcome> {
        self.trials.iter().filter(move |t| t.epsilon == epsilon)
    }

    /// Trial-averaged MedAE per stability bucket at `epsilon`; buckets with
    /// no surviving pair in any trial are `None`.
    pub fn stability(&self, epsilon: f64) -> Vec<Option<f64>> {
        let outcomes: Vec<&TrialOutcome> = self.outcomes_at(epsilon).collect();
        let n = outcomes.first().map_or(0, |o| o.buckets.len());
        (0..n)
            .map(|b| {
                let vals: Vec<f64> = outcomes.iter().filter_map(|o| o.buckets[b]).map(|v| v as f64).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Spearman correlation between epsilon and mean MedAE across rows with
    /// a finite epsilon and a defined MedAE.
    pub fn trend(&self) -> f64 {
        let rows: Vec<&SweepRow> = self
            .rows
            .iter()
            .filter(|r| r.epsilon.is_finite() && !r.mean_medae().is_nan())
            .collect();
        let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        let err: Vec<f64> = rows.iter().map(|r| r.mean_medae()).collect();
        spearman(&eps, &err)
    }
}

/// Runs the private pipeline at every epsilon for `trials` seeds
/// (`base.seed() + trial`) and compares each run against the DP-free
/// baseline.
pub fn epsilon_sweep(
    records: &[Record],
    base: &PrivacyConfig,
    params: &MiParams,
    settings: &SweepSettings,
    options: &PipelineOptions,
) -> Result<SweepResult> {
    if settings.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    if let Some(bad) = settings.epsilons.iter().find(|e| e.is_nan() || **e <= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilons must be positive, got {bad}")));
    }
    let baseline = rank_records(records.to_vec(), &PrivacyConfig::disabled(), params, options)?;

    let cells: Vec<(f64, usize)> = settings
        .epsilons
        .iter()
        .flat_map(|&e| (0..settings.trials).map(move |t| (e, t)))
        .collect();
    let outcomes: Vec<Result<TrialOutcome>> = exec::map(&cells, |&(epsilon, trial)| {
        let seed = base.seed().wrapping_add(trial as u64);
        let config = if epsilon.is_finite() {
            base.with_epsilon(epsilon)?.with_seed(seed)
        } else {
            PrivacyConfig::disabled()
        };
        let private = match rank_records(records.to_vec(), &config, params, options) {
            Err(Error::EmptyTable) => Vec::new(),
            other => other?,
        };
        let comparison = match compare_rankings(&baseline, &private, settings.top_k) {
            Err(Error::EmptyIntersection) => censored_comparison(&baseline, settings.top_k),
            other => other?,
        };
        Ok(TrialOutcome {
            epsilon,
            trial,
            seed,
            comparison,
            buckets: stability_buckets(&baseline, &private, settings.top_k, settings.buckets),
        })
    });
    let trials = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let rows = settings
        .epsilons
        .iter()
        .map(|&epsilon| {
            let these: Vec<&TrialOutcome> = trials.iter().filter(|t| t.epsilon == epsilon).collect();
            let n = these.len() as f64;
            let mut mean_percentiles = [0.0; 5];
            for (slot, p) in mean_percentiles.iter_mut().zip(PERCENTILES) {
                *slot = finite_mean(these.iter().map(|t| t.comparison.percentiles[&p]));
            }
            SweepRow {
                epsilon,
                mean_percentiles,
                mean_dropped: these.iter().map(|t| t.comparison.dropped as f64).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(SweepResult { rows, trials })
}

/// Every compared pair was censored: nothing to measure.
fn censored_comparison(baseline: &[RankedResult], top_k: usize) -> RankComparison {
    let pairs_compared = baseline.len().min(top_k);
    RankComparison {
        pairs_compared,
        abs_rank_errors: Vec::new(),
        dropped: pairs_compared,
        percentiles: PERCENTILES.iter().map(|&p| (p, f64::NAN)).collect(),
    }
}

/// Mean over the non-NaN values, NaN if there are none.
fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let kept: Vec<f64> = values.filter(|v| !v.is_nan()).collect();
    if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

fn na_or_sig12(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        sig12(v)
    }
}

/// `sweep.tsv`: epsilon, p10, p25, p50, p75, p90, dropped.
pub fn write_sweep_tsv<W: Write + ?Sized>(out: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "epsilon\tp10\tp25\tp50\tp75\tp90\tdropped")?;
    for r in rows {
        let cols: Vec<String> = r.mean_percentiles.iter().map(|v| na_or_sig12(*v)).collect();
        writeln!(out, "{}\t{}\t{}", sig12(r.epsilon), cols.join("\t"), sig12(r.mean_dropped))?;
    }
    Ok(())
}

/// `stability.tsv`: rank_bucket (1 = head), medae (`NA` when fully censored).
pub fn write_stability_tsv<W: Write + ?Sized>(out: &mut W, buckets: &[Option<f64>]) -> io::Result<()> {
    writeln!(out, "rank_bucket\tmedae")?;
    for (i, b) in buckets.iter().enumerate() {
        let v = b.map_or_else(|| "NA".to_string(), sig12);
        writeln!(out, "{}\t{v}", i + 1)?;
    }
    Ok(())
}

/// `runtime.tsv`: rows, partitions, batched_s, binary_s, ratio.
pub fn write_runtime_tsv<W: Write + ?Sized>(out: &mut W, reports: &[RuntimeReport]) -> io::Result<()> {
    writeln!(out, "rows\tpartitions\tbatched_s\tbinary_s\tratio")?;
    for r in reports {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.rows,
            r.partitions,
            sig12(r.batched_seconds),
            sig12(r.binary_seconds),
            sig12(r.ratio)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Direction;

    fn ranking(pairs: &[(&str, usize)]) -> Vec<RankedResult> {
        pairs
            .iter()
            .map(|(f, rank)| RankedResult {
                partition: "p".into(),
                feature: f.to_string(),
                mi: 1.0 / *rank as f64,
                direction: Direction::Presence,
                rank: *rank,
            })
            .collect()
    }

    #[test]
    fn identical_rankings_have_zero_error() {
        let r = ranking(&[("a", 1), ("b", 2), ("c", 3)]);
        let c = compare_rankings(&r, &r, 10).unwrap();
        assert!(c.percentiles.values().all(|v| *v == 0.0));
        assert_eq!(c.dropped, 0);
    }

    #[test]
    fn hand_enumerated_errors() {
        let base = ranking(&[("a", 1), ("b", 2), ("c", 3)]);
        let private = ranking(&[("a", 3), ("b", 1), ("c", 2)]);
        let c = compare_rankings(&base, &private, 10).unwrap();
        assert_eq!(c.abs_rank_errors, vec![2, 1, 1]);
        assert_eq!(c.medae(), 1.0);
    }

    #[test]
    fn censored_pairs_are_counted_not_scored() {
        let base = ranking(&[("a", 1), ("b", 2), ("c", 3)]);
        let private = ranking(&[("a", 1), ("c", 2)]);
        let c = compare_rankings(&base, &private, 10).unwrap();
        assert_eq!(c.dropped, 1);
        assert_eq!(c.abs_rank_errors, vec![0, 1]);
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let base = ranking(&[("a", 1)]);
        let private = ranking(&[("z", 1)]);
        assert_eq!(compare_rankings(&base, &private, 10), Err(Error::EmptyIntersection));
    }

    #[test]
    fn top_k_restricts_baseline() {
        let base = ranking(&[("a", 1), ("b", 2), ("c", 3)]);
        let private = ranking(&[("c", 1), ("b", 2), ("a", 3)]);
        let c = compare_rankings(&base, &private, 2).unwrap();
        assert_eq!(c.pairs_compared, 2);
        assert_eq!(c.abs_rank_errors, vec![2, 0]);
    }

    #[test]
    fn nearest_rank_small_cases() {
        assert_eq!(nearest_rank::<u64>(&[], 50.0), None);
        assert_eq!(nearest_rank(&[7u64], 10.0), Some(7));
        assert_eq!(nearest_rank(&[1u64, 2, 3, 4], 50.0), Some(2));
        assert_eq!(nearest_rank(&[1u64, 2, 3, 4], 75.0), Some(3));
        assert_eq!(nearest_rank(&[1u64, 2, 3, 4], 90.0), Some(4));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn stability_buckets_split_in_rank_order() {
        let base = ranking(&[("a", 1), ("b", 2), ("c", 3), ("d", 4)]);
        let private = ranking(&[("a", 1), ("b", 2), ("d", 3)]);
        let b = stability_buckets(&base, &private, 4, 2);
        assert_eq!(b, vec![Some(0), Some(1)]);
        let b = stability_buckets(&base, &private, 4, 4);
        assert_eq!(b, vec![Some(0), Some(0), None, Some(1)]);
    }

    #[test]
    fn sweep_tsv_layout() {
        let rows = vec![SweepRow {
            epsilon: 0.5,
            mean_percentiles: [0.0, 1.0, 2.0, 3.5, 4.0],
            mean_dropped: 1.0,
        }];
        let mut buf = Vec::new();
        write_sweep_tsv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epsilon\tp10\tp25\tp50\tp75\tp90\tdropped\n0.5\t0\t1\t2\t3.5\t4\t1\n"
        );
    }
}
