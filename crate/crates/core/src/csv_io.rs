//! CSV import and export (RFC-4180, UTF-8).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::storage::{Table, TableKeys};
use crate::types::{ColumnSchema, DataType, Value};

#[derive(Debug, Clone)]
pub struct ImportOptions {
    pub header: bool,
    pub infer_types: bool,
    pub keys: TableKeys,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self { header: true, infer_types: true, keys: TableKeys::default() }
    }
}

pub fn import_csv(path: impl AsRef<Path>, table_name: &str, options: &ImportOptions) -> Result<Table> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, table_name, options)
}

pub fn read_csv(reader: impl Read, table_name: &str, options: &ImportOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);

    let mut records: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Ingestion(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec.iter().map(str::to_string).collect()));
    }

    let (names, body): (Vec<String>, &[(u64, Vec<String>)]) = if options.header {
        match records.split_first() {
            Some(((_, head), rest)) => (head.iter().map(|h| h.trim().to_string()).collect(), rest),
            None => return Err(Error::Ingestion("empty file: header expected".into())),
        }
    } else {
        let width = records.first().map_or(0, |(_, r)| r.len());
        ((1..=width).map(|i| format!("column{i}")).collect(), &records[..])
    };

    let width = names.len();
    for (line, rec) in body {
        if rec.len() != width {
            return Err(Error::Ingestion(format!("line {line}: expected {width} fields, found {}", rec.len())));
        }
    }

    let types: Vec<DataType> = (0..width)
        .map(|col| {
            if options.infer_types {
                infer_column_type(body.iter().map(|(_, r)| r[col].as_str()))
            } else {
                DataType::Varchar
            }
        })
        .collect();

    let schema: Vec<ColumnSchema> = names.iter().zip(&types).map(|(n, t)| ColumnSchema::new(n.clone(), *t)).collect();
    let rows = body.iter().map(|(_, rec)| {
        rec.iter()
            .zip(&types)
            .map(
                |(field, ty)| {
                    if field.is_empty() {
                        Value::Null
                    } else {
                        Value::parse_as(field, *ty).unwrap_or(Value::Null)
                    }
                },
            )
            .collect::<Vec<_>>()
    });
    let mut table = Table::from_rows(table_name, schema, rows.collect::<Vec<_>>());
    table.keys = options.keys.clone();
    Ok(table)
}

/// Integer, then Double, then Boolean, then Datetime; anything else is Varchar.
/// Empty fields are nulls and do not vote.
pub fn infer_column_type<'a>(fields: impl Iterator<Item = &'a str> + Clone) -> DataType {
    let non_empty = || fields.clone().filter(|f| !f.is_empty());
    if non_empty().next().is_none() {
        return DataType::Varchar;
    }
    for ty in [DataType::Integer, DataType::Double, DataType::Boolean, DataType::Datetime] {
        if non_empty().all(|f| Value::parse_as(f, ty).is_some()) {
            return ty;
        }
    }
    DataType::Varchar
}

pub fn write_csv(out: impl Write, schema: &[ColumnSchema], rows: &[Vec<Value>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Ingestion(e.to_string());
    w.write_record(schema.iter().map(|c| c.name.as_str())).map_err(to_err)?;
    for row in rows {
        w.write_record(row.iter().map(Value::to_text)).map_err(to_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(path: impl AsRef<Path>, table: &Table) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(file, &table.schema, &table.rows())
}
