//! Result tables and their CSV / JSON serialization.
//!
//! Output is a pure function of the table, so identical inputs give
//! byte-identical files. Wall-clock timings are never written.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::config::OutputFormat;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            Cell::Text(_) => None,
        }
    }

    fn to_csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => f.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            // non-finite values have no JSON number form
            Cell::Float(f) => serde_json::Number::from_f64(*f).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }

    fn from_json(v: &Value) -> Result<Self, String> {
        match v {
            Value::Null => Ok(Cell::Float(f64::NAN)),
            Value::Number(n) => {
                if let Some(i) = n.as_i64().filter(|_| !n.is_f64()) {
                    Ok(Cell::Int(i))
                } else {
                    n.as_f64().map(Cell::Float).ok_or_else(|| format!("bad number {n}"))
                }
            }
            Value::String(s) => Ok(Cell::Text(s.clone())),
            other => Err(format!("unexpected cell {other}")),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    /// Where the comparison targets come from.
    pub target_source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub metadata: Metadata,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(metadata: Metadata, columns: &[&str]) -> Self {
        Self { metadata, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric value at `(row, column)`.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(name)?)?.as_f64()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (c, cell) in self.columns.iter().zip(row) {
                    obj.insert(c.clone(), cell.to_json());
                }
                Value::Object(obj)
            })
            .collect();
        let envelope = serde_json::json!({
            "metadata": self.metadata,
            "columns": self.columns,
            "rows": rows,
        });
        let mut out = serde_json::to_string_pretty(&envelope).expect("table serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let metadata: Metadata = serde_json::from_value(v["metadata"].clone()).map_err(|e| e.to_string())?;
        let columns: Vec<String> = serde_json::from_value(v["columns"].clone()).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for row in v["rows"].as_array().ok_or("rows must be an array")? {
            let obj = row.as_object().ok_or("row must be an object")?;
            let cells = columns
                .iter()
                .map(|c| Cell::from_json(obj.get(c).ok_or_else(|| format!("row lacks {c}"))?))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(cells);
        }
        Ok(Self { metadata, columns, rows })
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

/// Writes `table` to `path`, or to stdout when `path` is `None`.
pub fn emit(table: &ResultTable, format: OutputFormat, path: Option<&Path>) -> std::io::Result<()> {
    let text = table.render(format);
    match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Metadata {
        Metadata {
            experiment: "convergence".into(),
            config_hash: "ab".into(),
            seed: 9,
            target_source: "test".into(),
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ResultTable::new(meta(), &["eps", "m_hat"]);
        assert_eq!(t.to_csv(), "eps,m_hat\n");
    }

    #[test]
    fn csv_quotes_and_decimal_point() {
        let mut t = ResultTable::new(meta(), &["name", "x", "n"]);
        t.push(vec!["a,\"b\"".into(), 0.25.into(), 3usize.into()]);
        assert_eq!(t.to_csv(), "name,x,n\n\"a,\"\"b\"\"\",0.25,3\n");
    }

    #[test]
    fn json_round_trip() {
        let mut t = ResultTable::new(meta(), &["eps", "n", "label"]);
        t.push(vec![0.1.into(), 10usize.into(), "x".into()]);
        t.push(vec![1.0.into(), 0usize.into(), "y".into()]);
        t.push(vec![(1.0f64 / 3.0).into(), 7usize.into(), "z".into()]);
        let back = ResultTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn non_finite_values_become_null() {
        let mut t = ResultTable::new(meta(), &["x"]);
        t.push(vec![f64::NAN.into()]);
        assert!(t.to_json().contains("\"x\": null"));
    }
}
