//! Scalar values and their type tags.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    Boolean,
    Integer,
    Double,
    Varchar,
    Datetime,
}

impl DataType {
    /// Parses a SQL type keyword. `BOOL` is accepted as an alias of `BOOLEAN`.
    pub fn from_keyword(word: &str) -> Option<DataType> {
        match word.to_ascii_uppercase().as_str() {
            "BOOLEAN" | "BOOL" => Some(DataType::Boolean),
            "INTEGER" | "INT" | "BIGINT" => Some(DataType::Integer),
            "DOUBLE" | "FLOAT" | "REAL" => Some(DataType::Double),
            "VARCHAR" | "TEXT" | "STRING" => Some(DataType::Varchar),
            "DATETIME" | "TIMESTAMP" => Some(DataType::Datetime),
            _ => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            DataType::Boolean => "BOOLEAN",
            DataType::Integer => "INTEGER",
            DataType::Double => "DOUBLE",
            DataType::Varchar => "VARCHAR",
            DataType::Datetime => "DATETIME",
        }
    }

    /// Name of the type as described to a language model.
    pub fn json_name(self) -> &'static str {
        match self {
            DataType::Boolean => "boolean",
            DataType::Integer => "integer",
            DataType::Double => "number",
            DataType::Varchar => "string",
            DataType::Datetime => "datetime (ISO-8601 string)",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, DataType::Integer | DataType::Double)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Whether a column was loaded from storage or produced by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Stored,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnSchema {
    pub name: String,
    pub data_type: DataType,
    pub origin: Origin,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        Self { name: name.into(), data_type, origin: Origin::Stored }
    }

    pub fn predicted(name: impl Into<String>, data_type: DataType) -> Self {
        Self { name: name.into(), data_type, origin: Origin::Predicted }
    }
}

/// A tagged scalar. Datetimes are microseconds since the Unix epoch, UTC.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Boolean(bool),
    Integer(i64),
    Double(f64),
    Varchar(String),
    Datetime(i64),
}

impl Value {
    pub fn data_type(&self) -> Option<DataType> {
        match self {
            Value::Null => None,
            Value::Boolean(_) => Some(DataType::Boolean),
            Value::Integer(_) => Some(DataType::Integer),
            Value::Double(_) => Some(DataType::Double),
            Value::Varchar(_) => Some(DataType::Varchar),
            Value::Datetime(_) => Some(DataType::Datetime),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Double(d) => Some(*d),
            _ => None,
        }
    }

    /// SQL comparison: `None` when either side is Null or the tags are incomparable.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Boolean(a), Value::Boolean(b)) => Some(a.cmp(b)),
            (Value::Integer(a), Value::Integer(b)) => Some(a.cmp(b)),
            (Value::Double(a), Value::Double(b)) => Some(a.total_cmp(b)),
            (Value::Integer(a), Value::Double(b)) => Some((*a as f64).total_cmp(b)),
            (Value::Double(a), Value::Integer(b)) => Some(a.total_cmp(&(*b as f64))),
            (Value::Varchar(a), Value::Varchar(b)) => Some(a.cmp(b)),
            (Value::Datetime(a), Value::Datetime(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    /// Ordering used by ORDER BY: a total order with Null after every value.
    pub fn sort_cmp(&self, other: &Value) -> Ordering {
        match (self.is_null(), other.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => self.sql_cmp(other).unwrap_or_else(|| self.tag_rank().cmp(&other.tag_rank())),
        }
    }

    fn tag_rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Boolean(_) => 1,
            Value::Integer(_) | Value::Double(_) => 2,
            Value::Varchar(_) => 3,
            Value::Datetime(_) => 4,
        }
    }

    /// Text used when a value is embedded in a prompt or written to CSV.
    pub fn to_text(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Varchar(s) => s.clone(),
            other => other.to_string(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Boolean(b) => serde_json::Value::Bool(*b),
            Value::Integer(i) => serde_json::Value::from(*i),
            Value::Double(d) => {
                serde_json::Number::from_f64(*d).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
            }
            Value::Varchar(s) => serde_json::Value::String(s.clone()),
            Value::Datetime(t) => serde_json::Value::String(format_datetime(*t)),
        }
    }

    /// Casts literal text into `ty`, used by CSV ingestion and typed literals.
    pub fn parse_as(text: &str, ty: DataType) -> Option<Value> {
        let t = text.trim();
        match ty {
            DataType::Varchar => Some(Value::Varchar(text.to_string())),
            DataType::Integer => t.parse::<i64>().ok().map(Value::Integer),
            DataType::Double => t.parse::<f64>().ok().map(Value::Double),
            DataType::Boolean => match t.to_ascii_lowercase().as_str() {
                "true" => Some(Value::Boolean(true)),
                "false" => Some(Value::Boolean(false)),
                _ => None,
            },
            DataType::Datetime => parse_datetime(t).map(Value::Datetime),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Boolean(a), Value::Boolean(b)) => a == b,
            (Value::Integer(a), Value::Integer(b)) => a == b,
            (Value::Double(a), Value::Double(b)) => canonical_bits(*a) == canonical_bits(*b),
            (Value::Varchar(a), Value::Varchar(b)) => a == b,
            (Value::Datetime(a), Value::Datetime(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tag_rank().hash(state);
        match self {
            Value::Null => {}
            Value::Boolean(b) => b.hash(state),
            Value::Integer(i) => i.hash(state),
            Value::Double(d) => canonical_bits(*d).hash(state),
            Value::Varchar(s) => s.hash(state),
            Value::Datetime(t) => t.hash(state),
        }
    }
}

fn canonical_bits(d: f64) -> u64 {
    if d == 0.0 {
        0
    } else if d.is_nan() {
        f64::NAN.to_bits()
    } else {
        d.to_bits()
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Double(d) => {
                if d.is_finite() && d.fract() == 0.0 && d.abs() < 1e15 {
                    write!(f, "{d:.1}")
                } else {
                    write!(f, "{d}")
                }
            }
            Value::Varchar(s) => f.write_str(s),
            Value::Datetime(t) => f.write_str(&format_datetime(*t)),
        }
    }
}

/// Accepts RFC-3339 and the common ISO-8601 shapes (`YYYY-MM-DD`, `YYYY-MM-DD HH:MM:SS`,
/// `YYYY-MM-DDTHH:MM:SS[.f]`); zone-less values are read as UTC.
pub fn parse_datetime(text: &str) -> Option<i64> {
    let t = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.with_timezone(&Utc).timestamp_micros());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(t, fmt) {
            return Some(Utc.from_utc_datetime(&naive).timestamp_micros());
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        let naive = date.and_hms_opt(0, 0, 0)?;
        return Some(Utc.from_utc_datetime(&naive).timestamp_micros());
    }
    None
}

/// Like [`parse_datetime`], additionally accepting RFC-2822 dates as models sometimes emit them.
pub fn parse_datetime_lenient(text: &str) -> Option<i64> {
    parse_datetime(text)
        .or_else(|| DateTime::parse_from_rfc2822(text.trim()).ok().map(|dt| dt.with_timezone(&Utc).timestamp_micros()))
}

pub fn format_datetime(micros: i64) -> String {
    match DateTime::<Utc>::from_timestamp_micros(micros) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        None => micros.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datetime_round_trip() {
        let t = parse_datetime("2021-03-04T00:00:00Z").unwrap();
        assert_eq!(format_datetime(t), "2021-03-04T00:00:00Z");
        assert_eq!(parse_datetime("2021-03-04"), Some(t));
        assert_eq!(parse_datetime("2021-03-04 00:00:00"), Some(t));
        assert_eq!(parse_datetime("2021-03-04T02:00:00+02:00"), Some(t));
        assert!(parse_datetime("March 4th").is_none());
        assert_eq!(parse_datetime_lenient("Thu, 04 Mar 2021 00:00:00 +0000"), Some(t));
    }

    #[test]
    fn nulls_sort_last_and_compare_unknown() {
        assert_eq!(Value::Null.sql_cmp(&Value::Integer(1)), None);
        assert_eq!(Value::Null.sort_cmp(&Value::Integer(1)), Ordering::Greater);
        assert_eq!(Value::Integer(2).sql_cmp(&Value::Double(2.5)), Some(Ordering::Less));
        assert_eq!(Value::Varchar("a".into()).sql_cmp(&Value::Integer(1)), None);
    }

    #[test]
    fn double_display_keeps_fraction_marker() {
        assert_eq!(Value::Double(6.0).to_string(), "6.0");
        assert_eq!(Value::Double(2.25).to_string(), "2.25");
    }

    #[test]
    fn bool_alias() {
        assert_eq!(DataType::from_keyword("bool"), Some(DataType::Boolean));
        assert_eq!(DataType::from_keyword("Varchar"), Some(DataType::Varchar));
        assert_eq!(DataType::from_keyword("BLOB"), None);
    }
}
