use std::io::Write;
use std::path::{Path, PathBuf};

use dpmi::dp::{BudgetAccountant, QueryReport};
use dpmi::eval::synth::{synth_generate, SynthParams};
use dpmi::eval::{self, SweepSettings};
use dpmi::mi::{self, FoldSpec, MiParams, SeedSelection};
use dpmi::model::{AggregateTable, BudgetSplit, PrivacyConfig, Record};
use dpmi::pipeline::{self, PipelineOptions, Released};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::args::{AggregateArgs, EvalArgs, FoldArgs, InputArgs, InputFormat, OutputFormat, PrivacyArgs, RankArgs, RunArgs};
use crate::error::CliError;
use crate::input::{read_inputs, ColumnMap, Ingested};
use crate::output::{create, manifest_path, read_table, write_manifest, write_ranking, write_table};

fn parse_floats<const N: usize>(flag: &str, s: &str) -> Result<[f64; N], CliError> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("{flag} expects {N} comma-separated numbers, got {s:?}")))?;
    vals.try_into()
        .map_err(|_| CliError::Usage(format!("{flag} expects {N} comma-separated numbers, got {s:?}")))
}

pub fn privacy_config(args: &PrivacyArgs) -> Result<PrivacyConfig, CliError> {
    let [lo, hi] = parse_floats::<2>("--clamp", &args.clamp)?;
    let [j, f, p] = parse_floats::<3>("--budget-split", &args.budget_split)?;
    let dp = !args.no_dp;
    if dp && args.seed.is_none() {
        return Err(CliError::Usage("--seed is required when DP is enabled".into()));
    }
    Ok(PrivacyConfig::builder()
        .epsilon(args.epsilon)
        .delta(args.delta)
        .clamp(lo, hi)
        .contribution_limit(args.contribution_limit)
        .budget_split(BudgetSplit::new(j, f, p)?)
        .seed(args.seed.unwrap_or(0))
        .other_bucket(args.other_bucket)
        .threshold(args.threshold)
        .dp_enabled(dp)
        .build()?)
}

fn mi_params(run: &RunArgs) -> Result<MiParams, CliError> {
    Ok(MiParams::new(run.tol)?)
}

fn options(run: &RunArgs) -> PipelineOptions {
    PipelineOptions {
        shards: run.shards.max(1),
    }
}

fn ingest(input: &InputArgs) -> Result<Ingested, CliError> {
    let columns = ColumnMap::parse(&input.columns)?;
    read_inputs(&input.input, input.format, &columns)
}

fn require_output(run: &RunArgs) -> Result<&Path, CliError> {
    run.output
        .as_deref()
        .ok_or_else(|| CliError::Usage("--output is required for this command".into()))
}

fn input_line(ingested: &Ingested) -> Value {
    json!({
        "event": "input",
        "rows_read": ingested.rows_read,
        "rows_rejected": ingested.rejected.total(),
        "rejections": ingested.rejected,
    })
}

fn release_lines(released: &Released) -> Vec<Value> {
    let mut lines = vec![json!({
        "event": "bounding",
        "rows_in": released.rows_in,
        "rows_kept": released.rows_bounded,
    })];
    lines.extend(released.reports.iter().map(query_line));
    lines
}

fn query_line(q: &QueryReport) -> Value {
    json!({
        "event": "query",
        "label": q.label,
        "epsilon": q.epsilon,
        "threshold": q.threshold,
        "cells_in": q.cells_in,
        "released": q.released,
        "censored": q.censored,
    })
}

fn budget_line(total: Option<f64>, accountant: Option<&BudgetAccountant>) -> Value {
    json!({
        "event": "budget",
        "total": total,
        "spent": accountant.map_or(0.0, BudgetAccountant::spent),
        "charges": accountant.map(|a| a.charges().to_vec()).unwrap_or_default(),
    })
}

/// Ingest, bound, aggregate and release. Returns the table and manifest lines.
fn release_from_input(
    input: &InputArgs,
    config: &PrivacyConfig,
    run: &RunArgs,
) -> Result<(AggregateTable, Vec<Value>), CliError> {
    let ingested = ingest(input)?;
    let mut accountant = if config.dp_enabled() {
        Some(BudgetAccountant::new(config.epsilon())?)
    } else {
        None
    };
    let mut manifest = vec![input_line(&ingested)];
    let released = pipeline::release_records(ingested.records, config, accountant.as_mut(), "", &options(run))?;
    manifest.extend(release_lines(&released));
    manifest.push(budget_line(config.dp_enabled().then(|| config.epsilon()), accountant.as_ref()));
    if released.table.joint.is_empty() || released.table.total.is_nan() || released.table.total <= 0.0 {
        return Err(dpmi::Error::EmptyTable.into());
    }
    Ok((released.table, manifest))
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<(), CliError> {
    let output = require_output(&args.run)?;
    let config = privacy_config(&args.privacy)?;
    let (table, manifest) = release_from_input(&args.input, &config, &args.run)?;
    let out = create(output)?;
    write_table(out, &table, args.run.output_format).map_err(|e| CliError::io(output, e))?;
    write_manifest(&manifest_path(output), &manifest)
}

pub fn cmd_rank(args: &RankArgs, force_swap: bool) -> Result<(), CliError> {
    let params = mi_params(&args.run)?;
    let (table, manifest) = match &args.table {
        Some(path) => (read_table(path)?, None),
        None => {
            let config = privacy_config(&args.privacy)?;
            let (t, m) = release_from_input(&args.input, &config, &args.run)?;
            (t, Some(m))
        }
    };
    let mut ranking = if args.swap || force_swap {
        mi::flip(&table, &params)?
    } else {
        pipeline::rank_table(&table, &params)?
    };
    if let Some(k) = args.top_k {
        ranking.truncate(k);
    }
    match &args.run.output {
        Some(path) => {
            write_ranking(create(path)?, &ranking, args.run.output_format).map_err(|e| CliError::io(path, e))?;
            if let Some(m) = manifest {
                write_manifest(&manifest_path(path), &m)?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            write_ranking(stdout.lock(), &ranking, args.run.output_format)
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedField {
    Keys(Vec<String>),
    Keyword(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FoldLine {
    input: PathBuf,
    #[serde(default)]
    format: Option<String>,
    seeds: SeedField,
    epsilon: Option<f64>,
    top_k: usize,
    #[serde(default)]
    link_kind: Option<String>,
    #[serde(default)]
    target_kind: Option<String>,
}

fn read_fold_specs(path: &Path, args: &FoldArgs, dp: bool) -> Result<(Vec<FoldSpec>, Vec<Value>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let columns = ColumnMap::parse(&args.input.columns)?;
    let mut folds = Vec::new();
    let mut manifest = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let spec: FoldLine = serde_json::from_str(line).map_err(|e| CliError::parse(path, e))?;
        let seeds = match spec.seeds {
            SeedField::Keys(keys) => SeedSelection::Explicit(keys),
            SeedField::Keyword(k) if k == "previous" => SeedSelection::TopKFromPrevious,
            SeedField::Keyword(k) => {
                return Err(CliError::parse(path, format!("seeds must be a list or \"previous\", got {k:?}")))
            }
        };
        let format = match spec.format.as_deref() {
            None => args.input.format,
            Some("delimited") => InputFormat::Delimited,
            Some("json-lines") => InputFormat::JsonLines,
            Some(other) => return Err(CliError::parse(path, format!("unknown format {other:?}"))),
        };
        let epsilon = match (spec.epsilon, dp) {
            (Some(e), _) => e,
            (None, false) => 0.0,
            (None, true) => return Err(CliError::parse(path, format!("fold {} needs an epsilon", i + 1))),
        };
        let input = base_dir.join(&spec.input);
        let ingested = read_inputs(&[input], format, &columns)?;
        let mut line = input_line(&ingested);
        line["fold"] = json!(i + 1);
        manifest.push(line);
        folds.push(FoldSpec {
            seeds,
            records: ingested.records,
            epsilon,
            top_k: spec.top_k,
            link_kind: spec.link_kind,
            target_kind: spec.target_kind,
        });
    }
    Ok((folds, manifest))
}

fn ext(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Tsv => "tsv",
        OutputFormat::JsonLines => "jsonl",
    }
}

pub fn cmd_fold(args: &FoldArgs) -> Result<(), CliError> {
    let out_dir = require_output(&args.run)?;
    let config = privacy_config(&args.privacy)?;
    let params = mi_params(&args.run)?;
    let (folds, mut manifest) = read_fold_specs(&args.folds, args, config.dp_enabled())?;
    // The accountant holds the whole budget; with DP off it is never charged.
    let mut accountant = BudgetAccountant::new(if config.dp_enabled() { config.epsilon() } else { 1.0 })?;
    let results = mi::nfold(&folds, &config, &params, &mut accountant, &options(&args.run))?;

    for (i, fold) in results.iter().enumerate() {
        let path = out_dir.join(format!("fold{}.{}", i + 1, ext(args.run.output_format)));
        let rows = match args.top_k {
            Some(k) => &fold.ranking[..k.min(fold.ranking.len())],
            None => &fold.ranking[..],
        };
        write_ranking(create(&path)?, rows, args.run.output_format).map_err(|e| CliError::io(&path, e))?;
        manifest.push(json!({
            "event": "fold",
            "fold": i + 1,
            "seeds": fold.seeds,
            "cohort_size": fold.cohort_size,
            "selected": fold.selected,
        }));
        manifest.extend(fold.reports.iter().map(query_line));
    }
    let dp = config.dp_enabled();
    manifest.push(budget_line(dp.then(|| config.epsilon()), dp.then_some(&accountant)));
    write_manifest(&out_dir.join("manifest.jsonl"), &manifest)
}

fn parse_synth(items: &[String], seed: u64) -> Result<SynthParams, CliError> {
    let mut p = SynthParams::new(10_000, 500, 10, 0.5, seed);
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--synth expects key=value, got {item:?}")))?;
        let bad = || CliError::Usage(format!("--synth: bad value for {k}: {v:?}"));
        match k {
            "users" => p.users = v.parse().map_err(|_| bad())?,
            "features" => p.features = v.parse().map_err(|_| bad())?,
            "partitions" => p.partitions = v.parse().map_err(|_| bad())?,
            "strength" => p.association_strength = v.parse().map_err(|_| bad())?,
            "zipf" => p.zipf_exponent = v.parse().map_err(|_| bad())?,
            _ => return Err(CliError::Usage(format!("--synth: unknown key {k:?}"))),
        }
    }
    Ok(p)
}

fn parse_epsilons(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| match v.trim() {
            "off" => Ok(f64::INFINITY),
            t => t
                .parse::<f64>()
                .ok()
                .filter(|e| *e > 0.0 && e.is_finite())
                .ok_or_else(|| CliError::Usage(format!("--epsilons: bad value {t:?}"))),
        })
        .collect()
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let out_dir = require_output(&args.run)?;
    if args.privacy.no_dp {
        return Err(CliError::Usage("eval compares private runs against a baseline; drop --no-dp".into()));
    }
    let config = privacy_config(&args.privacy)?;
    let params = mi_params(&args.run)?;
    let opts = options(&args.run);
    let synth = if args.synth.is_empty() {
        None
    } else {
        Some(parse_synth(&args.synth, config.seed())?)
    };
    let records: Vec<Record> = match &synth {
        Some(p) => synth_generate(p)?,
        None => ingest(&args.input)?.records,
    };

    let settings = SweepSettings {
        epsilons: parse_epsilons(&args.epsilons)?,
        trials: args.trials,
        top_k: args.top_k,
        buckets: args.buckets.max(1),
    };
    let sweep = eval::epsilon_sweep(&records, &config, &params, &settings, &opts)?;
    write_file(&out_dir.join("sweep.tsv"), |w| eval::write_sweep_tsv(w, &sweep.rows))?;

    let stability_eps = settings
        .epsilons
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .min_by(|a, b| (a - args.stability_epsilon).abs().total_cmp(&(b - args.stability_epsilon).abs()));
    if let Some(e) = stability_eps {
        write_file(&out_dir.join("stability.tsv"), |w| eval::write_stability_tsv(w, &sweep.stability(e)))?;
    }

    if args.runtime {
        let data = match &synth {
            Some(p) => {
                let mut p = p.clone();
                p.partitions = args.partitions.unwrap_or(p.partitions);
                p.users = args.runtime_rows.unwrap_or(p.users);
                synth_generate(&p)?
            }
            None => records,
        };
        let report = eval::runtime_compare(&data, &params, &opts)?;
        log::info!(
            "runtime: batched {:.3}s, binary {:.3}s, ratio {:.2}, max MI diff {:e}",
            report.batched_seconds,
            report.binary_seconds,
            report.ratio,
            report.max_abs_mi_diff
        );
        write_file(&out_dir.join("runtime.tsv"), |w| eval::write_runtime_tsv(w, &[report]))?;
    }
    Ok(())
}
