//! Extracting typed records from raw model text.

use serde_json::{Map, Value as Json};

use crate::error::OutputError;
use crate::types::{parse_datetime_lenient, DataType, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub values: Vec<Value>,
    /// Set when a field was missing or could not be coerced to its type.
    pub flagged: bool,
}

/// Removes code fences, `<pre>` wrappers and chatter around the JSON payload.
pub fn strip_wrapping(raw: &str) -> &str {
    let mut s = raw.trim();
    if let Some(start) = s.find("```") {
        let after = &s[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let body = &after[body_start..];
        s = match body.find("```") {
            Some(end) => &body[..end],
            None => body,
        };
    }
    if let Some(start) = s.find("<pre>") {
        let body = &s[start + 5..];
        s = match body.find("</pre>") {
            Some(end) => &body[..end],
            None => body,
        };
    }
    let open = s.find(['[', '{']);
    let close = s.rfind([']', '}']);
    match (open, close) {
        (Some(o), Some(c)) if c > o => &s[o..=c],
        _ => s.trim(),
    }
}

fn extract_items(raw: &str) -> Result<Vec<Json>, OutputError> {
    let body = strip_wrapping(raw);
    let parsed: Json = serde_json::from_str(body).map_err(|e| {
        let mut snippet: String = raw.chars().take(80).collect();
        if raw.chars().count() > 80 {
            snippet.push_str("...");
        }
        OutputError::Malformed(format!("{e} in {snippet:?}"))
    })?;
    match parsed {
        Json::Array(items) => Ok(items),
        Json::Object(obj) => {
            // Wrapper objects such as {"rows": [...]} (required by some structured-output APIs).
            let arrays: Vec<&Json> = obj.values().filter(|v| v.is_array()).collect();
            if arrays.len() == 1 && obj.len() == 1 {
                Ok(arrays[0].as_array().cloned().unwrap_or_default())
            } else {
                Ok(vec![Json::Object(obj)])
            }
        }
        other => Ok(vec![other]),
    }
}

fn row_id_of(obj: &Map<String, Json>) -> Option<usize> {
    match obj.get("row_id")? {
        Json::Number(n) => n.as_u64().map(|v| v as usize),
        Json::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn field<'a>(obj: &'a Map<String, Json>, name: &str) -> Option<&'a Json> {
    obj.get(name).or_else(|| obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
}

/// Coerces one JSON value to `ty`; `None` means it could not be read as that type.
pub fn coerce(v: &Json, ty: DataType) -> Option<Value> {
    if v.is_null() {
        return Some(Value::Null);
    }
    match ty {
        DataType::Varchar => Some(Value::Varchar(match v {
            Json::String(s) => s.clone(),
            other => other.to_string(),
        })),
        DataType::Integer => match v {
            Json::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
            Json::String(s) => {
                let t = s.trim();
                let digits = t.strip_prefix(['-', '+']).unwrap_or(t);
                if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                    t.parse().ok()
                } else {
                    None
                }
            }
            _ => None,
        }
        .map(Value::Integer),
        DataType::Double => match v {
            Json::Number(n) => n.as_f64(),
            Json::String(s) => s.trim().parse::<f64>().ok().filter(|f| f.is_finite()),
            _ => None,
        }
        .map(Value::Double),
        DataType::Datetime => match v {
            Json::String(s) => parse_datetime_lenient(s).map(Value::Datetime),
            _ => None,
        },
        DataType::Boolean => match v {
            Json::Bool(b) => Some(Value::Boolean(*b)),
            Json::String(s) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" => Some(Value::Boolean(true)),
                "false" | "no" => Some(Value::Boolean(false)),
                _ => None,
            },
            _ => None,
        },
    }
}

fn to_row(item: &Json, outputs: &[(String, DataType)]) -> ParsedRow {
    let mut flagged = false;
    let values = match item {
        Json::Object(obj) => outputs
            .iter()
            .map(|(name, ty)| match field(obj, name).map(|v| coerce(v, *ty)) {
                Some(Some(v)) => v,
                _ => {
                    flagged = true;
                    Value::Null
                }
            })
            .collect(),
        // A bare value is accepted when exactly one field is expected.
        scalar if outputs.len() == 1 => match coerce(scalar, outputs[0].1) {
            Some(v) => vec![v],
            None => {
                flagged = true;
                vec![Value::Null]
            }
        },
        _ => {
            flagged = true;
            vec![Value::Null; outputs.len()]
        }
    };
    ParsedRow { values, flagged }
}

/// Parses model output into `expected_rows` typed records, matched by `row_id`
/// when every object carries a distinct in-range id and by position otherwise.
/// With `expected_rows = None` (table generation) every returned object is a row.
pub fn parse_structured_output(
    raw: &str,
    outputs: &[(String, DataType)],
    expected_rows: Option<usize>,
) -> Result<Vec<ParsedRow>, OutputError> {
    let items = extract_items(raw)?;
    let Some(n) = expected_rows else {
        return Ok(items.iter().map(|i| to_row(i, outputs)).collect());
    };
    let ids: Vec<Option<usize>> = items.iter().map(|i| i.as_object().and_then(row_id_of)).collect();
    let mut seen = vec![false; n];
    let keyed = !items.is_empty()
        && ids.iter().all(|id| match id {
            Some(i) if *i < n && !seen[*i] => {
                seen[*i] = true;
                true
            }
            _ => false,
        });
    if keyed {
        if items.len() != n {
            return Err(OutputError::RowCountMismatch { expected: n, actual: items.len() });
        }
        let mut rows = vec![None; n];
        for (item, id) in items.iter().zip(ids) {
            rows[id.expect("checked above")] = Some(to_row(item, outputs));
        }
        return Ok(rows.into_iter().map(|r| r.expect("every id present")).collect());
    }
    if items.len() != n {
        return Err(OutputError::RowCountMismatch { expected: n, actual: items.len() });
    }
    Ok(items.iter().map(|i| to_row(i, outputs)).collect())
}
