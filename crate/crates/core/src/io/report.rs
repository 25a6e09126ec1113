//! Report files: a JSON summary, an optional CSV table, and SVG figures.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            _ => Err(format!("unknown format `{s}` (expected json, csv or svg)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Svg => "svg",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    /// File stem, without extension.
    pub name: String,
    pub svg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub summary: Map<String, Value>,
    pub table: Option<Table>,
    pub figures: Vec<Figure>,
}

impl Report {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            summary: Map::new(),
            table: None,
            figures: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }
}

/// Rounds to 6 significant digits; non-finite values become null.
pub fn round_sig(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let r: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r })
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn normalize(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => round_sig(n.as_f64().expect("f64 number")),
        Value::Array(a) => Value::Array(a.iter().map(normalize).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), normalize(v))).collect()),
        other => other.clone(),
    }
}

/// Summary plus table rows as objects, keys sorted, floats rounded.
pub fn render_json(report: &Report) -> String {
    let mut root = report.summary.clone();
    root.insert("report".into(), Value::String(report.name.clone()));
    if let Some(t) = &report.table {
        let rows = t
            .rows
            .iter()
            .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().cloned()).collect()))
            .collect();
        root.insert("rows".into(), Value::Array(rows));
    }
    let mut s = serde_json::to_string_pretty(&normalize(&Value::Object(root))).expect("report serializes");
    s.push('\n');
    s
}

fn cell(v: &Value) -> String {
    match normalize(v) {
        Value::Null => String::new(),
        Value::String(s) => s,
        other => other.to_string(),
    }
}

pub fn render_csv(table: &Table) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns).expect("in-memory write");
    for r in &table.rows {
        w.write_record(r.iter().map(cell)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn write(path: PathBuf, bytes: &str) -> Result<PathBuf, IoError> {
    std::fs::write(&path, bytes).map_err(|e| IoError::file(&path, e))?;
    Ok(path)
}

/// Writes `<name>.json`, `<name>.csv`, or one `<figure>.svg` per figure into
/// `dir`, creating it if needed. Returns the files written.
pub fn write_report(report: &Report, format: Format, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    match format {
        Format::Json => Ok(vec![write(
            dir.join(format!("{}.json", report.name)),
            &render_json(report),
        )?]),
        Format::Csv => {
            let table = report.table.as_ref().ok_or_else(|| IoError::UnsupportedFormat {
                format: "csv",
                report: report.name.clone(),
            })?;
            Ok(vec![write(
                dir.join(format!("{}.csv", report.name)),
                &render_csv(table),
            )?])
        }
        Format::Svg => report
            .figures
            .iter()
            .map(|f| write(dir.join(format!("{}.svg", f.name)), &f.svg))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding_to_six_digits() {
        assert_eq!(round_sig(0.123456789), json!(0.123457));
        assert_eq!(round_sig(123456789.0), json!(123457000.0));
        assert_eq!(round_sig(-0.0), json!(0.0));
        assert_eq!(round_sig(f64::NAN), Value::Null);
    }

    #[test]
    fn json_is_sorted_and_rounded() {
        let mut r = Report::new("demo");
        r.set("zeta", 1.0 / 3.0);
        r.set("alpha", 2);
        let s = render_json(&r);
        let a = s.find("alpha").unwrap();
        let z = s.find("zeta").unwrap();
        assert!(a < z);
        assert!(s.contains("0.333333"));
        assert!(!s.contains("0.3333333"));
    }

    #[test]
    fn empty_report_is_valid_json() {
        let s = render_json(&Report::new("empty"));
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v, json!({"report": "empty"}));
    }

    #[test]
    fn csv_one_row_per_entry() {
        let mut t = Table::new(["k", "mr"]);
        for k in 1..=3 {
            t.push(vec![json!(k), json!(10.0 / k as f64)]);
        }
        let s = render_csv(&t);
        assert_eq!(s.lines().count(), 4);
        assert_eq!(s.lines().nth(3).unwrap(), "3,3.33333");
    }

    #[test]
    fn writes_files_and_rejects_missing_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Report::new("x");
        r.figures.push(Figure {
            name: "fig".into(),
            svg: "<svg/>".into(),
        });
        let files = write_report(&r, Format::Svg, dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("fig.svg")]);
        assert!(matches!(
            write_report(&r, Format::Csv, dir.path()),
            Err(IoError::UnsupportedFormat { .. })
        ));
        let blocked = dir.path().join("fig.svg").join("nested");
        assert!(matches!(
            write_report(&r, Format::Json, &blocked),
            Err(IoError::File { .. })
        ));
    }
}
