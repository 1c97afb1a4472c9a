use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_file, DataError};

/// Corpus-level scores for one method, stored as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub corpus: String,
    pub dialogues: usize,
    pub pk: f64,
    pub wd: f64,
}

fn sorted(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let mut v: Vec<&ReportRow> = rows.iter().collect();
    v.sort_by(|a, b| {
        a.corpus
            .cmp(&b.corpus)
            .then(a.pk.total_cmp(&b.pk))
            .then(a.method.cmp(&b.method))
    });
    v
}

/// Fixed-width table with Pk and WD as percentages, best first per corpus.
pub fn format_table(rows: &[ReportRow]) -> Result<String, DataError> {
    if rows.is_empty() {
        return Err(DataError::EmptyResults);
    }
    let rows = sorted(rows);
    let mw = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(0)
        .max("method".len());
    let cw = rows
        .iter()
        .map(|r| r.corpus.len())
        .max()
        .unwrap_or(0)
        .max("corpus".len());
    let mut out = String::new();
    writeln!(
        out,
        "{:<mw$}  {:<cw$}  {:>9}  {:>7}  {:>7}",
        "method", "corpus", "dialogues", "Pk ↓", "WD ↓"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<mw$}  {:<cw$}  {:>9}  {:>7.2}  {:>7.2}",
            r.method,
            r.corpus,
            r.dialogues,
            r.pk * 100.0,
            r.wd * 100.0
        )
        .unwrap();
    }
    out.push_str("(Pk and WD in %, lower is better)\n");
    Ok(out)
}

/// Writes the table to `path` and one JSON record per row to
/// `path` + `.jsonl`. Returns the record file path.
pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<PathBuf, DataError> {
    let table = format_table(rows)?;
    let records: String = sorted(rows)
        .into_iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect();
    write_file(path, table.as_bytes())?;
    let mut rec_path = path.as_os_str().to_owned();
    rec_path.push(".jsonl");
    let rec_path = PathBuf::from(rec_path);
    write_file(&rec_path, records.as_bytes())?;
    Ok(rec_path)
}
