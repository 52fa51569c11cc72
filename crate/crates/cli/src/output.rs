//! Writers for released tables, rankings and manifests.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dpmi::fmt::sig12;
use dpmi::model::{AggregateTable, RankedResult};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::OutputFormat;
use crate::error::CliError;

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// `<output>.manifest.jsonl` next to an output file.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.jsonl");
    PathBuf::from(s)
}

pub fn write_manifest(path: &Path, lines: &[Value]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for line in lines {
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    level: String,
    feature: String,
    partition: String,
    value: f64,
}

fn table_rows(table: &AggregateTable) -> Vec<TableRow> {
    let row = |level: &str, f: &str, p: &str, value: f64| TableRow {
        level: level.into(),
        feature: f.into(),
        partition: p.into(),
        value,
    };
    let mut rows: Vec<TableRow> = table.joint.iter().map(|((f, p), v)| row("joint", f, p, *v)).collect();
    rows.extend(table.feature_marginals.iter().map(|(f, v)| row("feature", f, "", *v)));
    rows.extend(table.partition_marginals.iter().map(|(p, v)| row("partition", "", p, *v)));
    rows.push(row("total", "", "", table.total));
    rows.push(row("epsilon_spent", "", "", table.epsilon_spent));
    rows
}

pub fn write_table<W: Write>(out: W, table: &AggregateTable, format: OutputFormat) -> io::Result<()> {
    match format {
        OutputFormat::Tsv => {
            let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
            w.write_record(["level", "feature", "partition", "value"])?;
            for r in table_rows(table) {
                w.write_record([r.level.as_str(), &r.feature, &r.partition, &sig12(r.value)])?;
            }
            w.flush()
        }
        OutputFormat::JsonLines => {
            let mut out = out;
            for r in table_rows(table) {
                writeln!(out, "{}", serde_json::to_string(&r).map_err(io::Error::other)?)?;
            }
            out.flush()
        }
    }
}

/// Reads a table written by [`write_table`] in either format.
pub fn read_table(path: &Path) -> Result<AggregateTable, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let first = reader.fill_buf().map_err(|e| CliError::io(path, e))?.first().copied();
    let rows: Vec<TableRow> = if first == Some(b'{') {
        reader
            .lines()
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| CliError::io(path, e))?;
                serde_json::from_str(&l).map_err(|e| CliError::parse(path, e))
            })
            .collect::<Result<_, _>>()?
    } else {
        csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_reader(reader)
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::parse(path, e))?
    };
    let mut table = AggregateTable::default();
    let mut total = None;
    for r in rows {
        match r.level.as_str() {
            "joint" => {
                table.joint.insert((r.feature, r.partition), r.value);
            }
            "feature" => {
                table.feature_marginals.insert(r.feature, r.value);
            }
            "partition" => {
                table.partition_marginals.insert(r.partition, r.value);
            }
            "total" => total = Some(r.value),
            "epsilon_spent" => table.epsilon_spent = r.value,
            other => return Err(CliError::parse(path, format!("unknown level {other:?}"))),
        }
    }
    table.total = total.unwrap_or_else(|| AggregateTable::derive_total(&table.partition_marginals));
    Ok(table)
}

pub fn write_ranking<W: Write>(out: W, ranking: &[RankedResult], format: OutputFormat) -> io::Result<()> {
    match format {
        OutputFormat::Tsv => {
            let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
            w.write_record(["partition", "feature", "mi", "direction", "rank"])?;
            for r in ranking {
                w.write_record([
                    r.partition.as_str(),
                    &r.feature,
                    &sig12(r.mi),
                    &r.direction.to_string(),
                    &r.rank.to_string(),
                ])?;
            }
            w.flush()
        }
        OutputFormat::JsonLines => {
            let mut out = out;
            for r in ranking {
                writeln!(out, "{}", serde_json::to_string(r).map_err(io::Error::other)?)?;
            }
            out.flush()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AggregateTable {
        let mut t = AggregateTable::default();
        t.joint.insert(("f\t1".into(), "p".into()), 2.0);
        t.feature_marginals.insert("f\t1".into(), 2.5);
        t.partition_marginals.insert("p".into(), 4.0);
        t.total = 4.0;
        t.epsilon_spent = 1.0;
        t
    }

    #[test]
    fn table_round_trips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("t.tsv", OutputFormat::Tsv), ("t.jsonl", OutputFormat::JsonLines)] {
            let path = dir.path().join(name);
            write_table(File::create(&path).unwrap(), &sample(), format).unwrap();
            assert_eq!(read_table(&path).unwrap(), sample());
        }
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/t.tsv")), PathBuf::from("out/t.tsv.manifest.jsonl"));
    }
}
