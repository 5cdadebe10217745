//! Columnar chunks and in-memory tables.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{ColumnSchema, Value};

pub const DEFAULT_CHUNK_CAPACITY: usize = 2048;

/// A vectorized, column-ordered batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataChunk {
    pub columns: Vec<Vec<Value>>,
    row_count: usize,
}

impl DataChunk {
    pub fn new(columns: Vec<Vec<Value>>) -> Self {
        let row_count = columns.first().map_or(0, Vec::len);
        debug_assert!(columns.iter().all(|c| c.len() == row_count));
        Self { columns, row_count }
    }

    /// A chunk with rows but no columns (the input of `SELECT 1`).
    pub fn with_rows(row_count: usize) -> Self {
        Self { columns: Vec::new(), row_count }
    }

    pub fn empty(width: usize) -> Self {
        Self { columns: vec![Vec::new(); width], row_count: 0 }
    }

    pub fn from_rows(width: usize, rows: impl IntoIterator<Item = Vec<Value>>) -> Self {
        let mut columns = vec![Vec::new(); width];
        let mut count = 0;
        for row in rows {
            debug_assert_eq!(row.len(), width);
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
            count += 1;
        }
        Self { columns, row_count: count }
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c[i].clone()).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.row_count).map(move |i| self.row(i))
    }

    /// Keeps the rows whose mask entry is true, preserving order.
    pub fn select(&self, mask: &[bool]) -> DataChunk {
        let columns: Vec<Vec<Value>> = self
            .columns
            .iter()
            .map(|c| c.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v.clone()).collect())
            .collect();
        let row_count = mask.iter().filter(|&&m| m).count();
        DataChunk { columns, row_count }
    }

    pub fn push_column(&mut self, column: Vec<Value>) {
        debug_assert!(self.columns.is_empty() || column.len() == self.row_count);
        if self.columns.is_empty() {
            self.row_count = column.len();
        }
        self.columns.push(column);
    }
}

/// Re-slices a sequence of chunks so every chunk holds at most `capacity` rows.
pub fn rechunk(chunks: Vec<DataChunk>, width: usize, capacity: usize) -> Vec<DataChunk> {
    let capacity = capacity.max(1);
    let mut out = Vec::new();
    let mut current: Vec<Vec<Value>> = vec![Vec::new(); width];
    let mut current_rows = 0;
    for chunk in chunks {
        if width == 0 {
            let mut remaining = chunk.row_count();
            while remaining > 0 {
                let take = remaining.min(capacity - current_rows);
                current_rows += take;
                remaining -= take;
                if current_rows == capacity {
                    out.push(DataChunk::with_rows(current_rows));
                    current_rows = 0;
                }
            }
            continue;
        }
        for row in 0..chunk.row_count() {
            for (dst, src) in current.iter_mut().zip(&chunk.columns) {
                dst.push(src[row].clone());
            }
            current_rows += 1;
            if current_rows == capacity {
                out.push(DataChunk::new(std::mem::replace(&mut current, vec![Vec::new(); width])));
                current_rows = 0;
            }
        }
    }
    if current_rows > 0 {
        if width == 0 {
            out.push(DataChunk::with_rows(current_rows));
        } else {
            out.push(DataChunk::new(current));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

/// Key declarations consumed by the select-vs-join ordering rule.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TableKeys {
    pub primary_key: Option<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub schema: Vec<ColumnSchema>,
    pub chunks: Vec<DataChunk>,
    pub keys: TableKeys,
}

impl Table {
    pub fn new(name: impl Into<String>, schema: Vec<ColumnSchema>) -> Self {
        Self { name: name.into(), schema, chunks: Vec::new(), keys: TableKeys::default() }
    }

    pub fn from_rows(
        name: impl Into<String>,
        schema: Vec<ColumnSchema>,
        rows: impl IntoIterator<Item = Vec<Value>>,
    ) -> Self {
        let mut table = Table::new(name, schema);
        let chunk = DataChunk::from_rows(table.schema.len(), rows);
        table.append(chunk);
        table
    }

    pub fn append(&mut self, chunk: DataChunk) {
        if chunk.row_count() == 0 {
            return;
        }
        let width = self.schema.len();
        let mut all = std::mem::take(&mut self.chunks);
        all.push(chunk);
        self.chunks = rechunk(all, width, DEFAULT_CHUNK_CAPACITY);
    }

    pub fn row_count(&self) -> usize {
        self.chunks.iter().map(DataChunk::row_count).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Emits every row exactly once in chunks of at most `capacity` rows.
    pub fn scan(&self, capacity: usize) -> Vec<DataChunk> {
        rechunk(self.chunks.clone(), self.schema.len(), capacity)
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        self.chunks.iter().flat_map(|c| c.rows().collect::<Vec<_>>()).collect()
    }

    /// Mean rendered length in bytes of a column, used for cost annotations.
    pub fn avg_text_len(&self, column: usize) -> Option<f64> {
        let n = self.row_count();
        if n == 0 {
            return None;
        }
        let total: usize = self.chunks.iter().flat_map(|c| c.columns[column].iter()).map(|v| v.to_text().len()).sum();
        Some(total as f64 / n as f64)
    }
}

/// Registry of named tables. Lookups are case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct TableCatalog {
    tables: HashMap<String, Arc<Table>>,
}

impl TableCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, table: Table) {
        self.tables.insert(table.name.to_ascii_lowercase(), Arc::new(table));
    }

    pub fn get(&self, name: &str) -> Result<Arc<Table>> {
        self.tables
            .get(&name.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| Error::catalog(format!("table not found: {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tables.contains_key(&name.to_ascii_lowercase())
    }

    pub fn drop_table(&mut self, name: &str) -> Result<()> {
        self.tables
            .remove(&name.to_ascii_lowercase())
            .map(|_| ())
            .ok_or_else(|| Error::catalog(format!("table not found: {name}")))
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.tables.values().map(|t| t.name.clone()).collect();
        names.sort();
        names
    }

    /// Replaces a table in place (used by ALTER TABLE key declarations).
    pub fn update(&mut self, name: &str, f: impl FnOnce(&mut Table)) -> Result<()> {
        let key = name.to_ascii_lowercase();
        let table = self.tables.get_mut(&key).ok_or_else(|| Error::catalog(format!("table not found: {name}")))?;
        f(Arc::make_mut(table));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DataType;

    fn int_table(n: i64) -> Table {
        Table::from_rows("t", vec![ColumnSchema::new("a", DataType::Integer)], (0..n).map(|i| vec![Value::Integer(i)]))
    }

    #[test]
    fn scan_chunk_sizes() {
        let sizes: Vec<usize> = int_table(5000).scan(2048).iter().map(DataChunk::row_count).collect();
        assert_eq!(sizes, vec![2048, 2048, 904]);
        assert!(int_table(0).scan(2048).is_empty());
        let one = int_table(1).scan(2048);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].row_count(), 1);
    }

    #[test]
    fn scan_emits_each_row_once() {
        let t = int_table(100);
        for cap in [1, 7, 2048] {
            let rows: Vec<Value> = t.scan(cap).iter().flat_map(|c| c.columns[0].clone()).collect();
            assert_eq!(rows, (0..100).map(Value::Integer).collect::<Vec<_>>());
        }
    }

    #[test]
    fn unknown_table_is_catalog_error() {
        let cat = TableCatalog::new();
        assert!(matches!(cat.get("nope"), Err(Error::Catalog(_))));
    }

    #[test]
    fn select_mask() {
        let c = DataChunk::from_rows(1, (0..4).map(|i| vec![Value::Integer(i)]));
        let s = c.select(&[true, false, false, true]);
        assert_eq!(s.row_count(), 2);
        assert_eq!(s.columns[0], vec![Value::Integer(0), Value::Integer(3)]);
    }
}
