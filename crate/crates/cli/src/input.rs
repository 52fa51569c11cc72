//! Reading records from delimited text or JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use dpmi::model::{validate_record, Record, Rejection, RejectionCounts};

use crate::args::InputFormat;
use crate::error::CliError;

/// Names of the four input columns, in role order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMap {
    pub id: String,
    pub feature: String,
    pub partition: String,
    pub observation: String,
}

impl ColumnMap {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = spec.split(',').collect();
        let [id, feature, partition, observation] = parts[..] else {
            return Err(CliError::Usage(format!(
                "--columns expects id,feature,partition,observation names, got {spec:?}"
            )));
        };
        Ok(Self {
            id: id.into(),
            feature: feature.into(),
            partition: partition.into(),
            observation: observation.into(),
        })
    }

    fn names(&self) -> [&str; 4] {
        [&self.id, &self.feature, &self.partition, &self.observation]
    }
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub records: Vec<Record>,
    pub rows_read: u64,
    pub rejected: RejectionCounts,
}

impl Ingested {
    fn push(&mut self, row: Result<Record, Rejection>) {
        self.rows_read += 1;
        match row {
            Ok(r) => self.records.push(r),
            Err(why) => self.rejected.add(why),
        }
    }
}

pub fn read_inputs(paths: &[impl AsRef<Path>], format: InputFormat, columns: &ColumnMap) -> Result<Ingested, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("no --input given".into()));
    }
    let mut out = Ingested::default();
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        match format {
            InputFormat::Delimited => read_delimited(BufReader::new(file), path, columns, &mut out)?,
            InputFormat::JsonLines => read_json_lines(BufReader::new(file), path, columns, &mut out)?,
        }
    }
    log::info!(
        "read {} rows, kept {}, rejected {}",
        out.rows_read,
        out.records.len(),
        out.rejected.total()
    );
    Ok(out)
}

fn read_delimited<R: BufRead>(mut reader: R, path: &Path, columns: &ColumnMap, out: &mut Ingested) -> Result<(), CliError> {
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| CliError::io(path, e))?;
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let chained = std::io::Cursor::new(header.into_bytes()).chain(reader);
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(chained);

    let headers = csv.headers().map_err(|e| CliError::parse(path, e))?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(columns.names()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))?;
    }

    let mut row = csv::StringRecord::new();
    loop {
        match csv.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                let field = |i: usize| row.get(idx[i]);
                let parsed = match (field(0), field(1), field(2), field(3)) {
                    (Some(id), Some(f), Some(p), Some(o)) => validate_record(id, f, p, o),
                    _ => Err(Rejection::Parse),
                };
                out.push(parsed);
            }
            Err(e) if e.is_io_error() => return Err(CliError::parse(path, e)),
            Err(_) => out.push(Err(Rejection::Parse)),
        }
    }
    Ok(())
}

fn json_field(obj: &serde_json::Map<String, serde_json::Value>, name: &str) -> Option<String> {
    match obj.get(name)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_json_lines<R: BufRead>(reader: R, path: &Path, columns: &ColumnMap, out: &mut Ingested) -> Result<(), CliError> {
    let mut checked = false;
    for line in reader.lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(&line) else {
            out.push(Err(Rejection::Parse));
            continue;
        };
        if !checked {
            if let Some(missing) = columns.names().into_iter().find(|n| !obj.contains_key(*n)) {
                return Err(CliError::MissingColumn(missing.to_string()));
            }
            checked = true;
        }
        let fields: Vec<Option<String>> = columns.names().iter().map(|n| json_field(&obj, n)).collect();
        let parsed = match &fields[..] {
            [Some(id), Some(f), Some(p), Some(o)] => validate_record(id, f, p, o),
            _ => Err(Rejection::Parse),
        };
        out.push(parsed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> ColumnMap {
        ColumnMap::parse("id,feature,partition,observation").unwrap()
    }

    #[test]
    fn detects_tab_and_comma() {
        for text in [
            "id\tfeature\tpartition\tobservation\nu1\tf1\tp1\t200.0\n",
            "id,feature,partition,observation\nu1,f1,p1,200.0\n",
        ] {
            let mut out = Ingested::default();
            read_delimited(text.as_bytes(), Path::new("x"), &cols(), &mut out).unwrap();
            assert_eq!(out.records, vec![Record::new("u1", "f1", "p1", 200.0)]);
        }
    }

    #[test]
    fn remapped_and_reordered_columns() {
        let text = "obs,user,label,item\n3,u,p,f\n";
        let map = ColumnMap::parse("user,item,label,obs").unwrap();
        let mut out = Ingested::default();
        read_delimited(text.as_bytes(), Path::new("x"), &map, &mut out).unwrap();
        assert_eq!(out.records, vec![Record::new("u", "f", "p", 3.0)]);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "id,feature,observation\nu,f,1\n";
        let mut out = Ingested::default();
        let err = read_delimited(text.as_bytes(), Path::new("x"), &cols(), &mut out).unwrap_err();
        assert!(matches!(err, CliError::MissingColumn(c) if c == "partition"));
    }

    #[test]
    fn bad_rows_are_counted() {
        let text = "id,feature,partition,observation\nu,f,p,-3\nu,f,p,abc\nu,f\nu,f,p,1\n";
        let mut out = Ingested::default();
        read_delimited(text.as_bytes(), Path::new("x"), &cols(), &mut out).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rows_read, 4);
        assert_eq!(out.rejected.0[&Rejection::Negative], 1);
        assert_eq!(out.rejected.0[&Rejection::Parse], 2);
    }

    #[test]
    fn json_lines_accept_numbers() {
        let text = "{\"id\":7,\"feature\":\"f\",\"partition\":\"p\",\"observation\":2.5}\n\n{\"id\":\"u\"}\n";
        let mut out = Ingested::default();
        read_json_lines(text.as_bytes(), Path::new("x"), &cols(), &mut out).unwrap();
        assert_eq!(out.records, vec![Record::new("7", "f", "p", 2.5)]);
        assert_eq!(out.rejected.total(), 1);
    }
}
