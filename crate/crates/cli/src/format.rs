use std::io::{self, Write};

use semaquery::csv_io::write_csv;
use semaquery::session::QueryResult;
use semaquery::types::{ColumnSchema, Value};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "NULL".into(),
        other => other.to_text(),
    }
}

pub fn write_result(out: &mut dyn Write, r: &QueryResult, format: Format) -> io::Result<()> {
    match format {
        Format::Table => write_table(out, r),
        Format::Csv => {
            let schema: Vec<ColumnSchema> = r.columns.iter().map(|(n, t)| ColumnSchema::new(n.clone(), *t)).collect();
            write_csv(&mut *out, &schema, &r.rows).map_err(|e| io::Error::other(e.to_string()))
        }
        Format::Json => {
            let columns: Vec<_> = r.columns.iter().map(|(n, t)| json!({"name": n, "type": t.keyword()})).collect();
            let rows: Vec<Vec<serde_json::Value>> =
                r.rows.iter().map(|row| row.iter().map(Value::to_json).collect()).collect();
            writeln!(out, "{}", json!({"columns": columns, "rows": rows}))
        }
    }
}

fn write_table(out: &mut dyn Write, r: &QueryResult) -> io::Result<()> {
    let cells: Vec<Vec<String>> = r.rows.iter().map(|row| row.iter().map(cell).collect()).collect();
    let mut widths: Vec<usize> = r.columns.iter().map(|(n, _)| n.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut dyn Write, parts: Vec<String>| -> io::Result<()> {
        let padded: Vec<String> = parts.iter().zip(&widths).map(|(p, w)| format!("{p:<w$}")).collect();
        writeln!(out, "{}", padded.join(" | ").trim_end())
    };
    line(out, r.columns.iter().map(|(n, _)| n.clone()).collect())?;
    writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"))?;
    for row in cells {
        line(out, row)?;
    }
    let n = r.rows.len();
    writeln!(out, "({n} row{})", if n == 1 { "" } else { "s" })
}
