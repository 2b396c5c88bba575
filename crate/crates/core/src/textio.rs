//! Plain-text numeric tables shared by the plan, trace, plot and dump files.
//!
//! Layout: a `# <schema>` line, optional further `#` comment lines, a CSV
//! header row, then numeric rows. Floats are written in Rust's shortest
//! round-trip form so re-parsing reproduces the in-memory values exactly.

use std::io::{BufRead, BufReader, Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected schema `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },
    #[error("expected columns {expected:?}, found {found:?}")]
    Columns { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

pub(crate) fn write_table<W: Write>(
    mut out: W,
    schema: &str,
    comments: &[String],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<(), TableError> {
    writeln!(out, "# {schema}")?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) struct Table {
    pub comments: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub(crate) fn read_table<R: Read>(input: R, schema: &str, header: &[&str]) -> Result<Table, TableError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let found = first.trim().trim_start_matches('#').trim().to_string();
    if found != schema {
        return Err(TableError::Schema {
            expected: schema.to_string(),
            found,
        });
    }
    let mut comments = Vec::new();
    let mut rest = String::new();
    for line in reader.lines() {
        let line = line?;
        if rest.is_empty() && line.starts_with('#') {
            comments.push(line.trim_start_matches('#').trim().to_string());
        } else {
            rest.push_str(&line);
            rest.push('\n');
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a != b) {
        return Err(TableError::Columns {
            expected: header.iter().map(|s| s.to_string()).collect(),
            found,
        });
    }
    let mut rows = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(TableError::Row {
                row: idx,
                msg: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| TableError::Row {
                    row: idx,
                    msg: format!("`{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table {
        comments,
        rows,
    })
}
