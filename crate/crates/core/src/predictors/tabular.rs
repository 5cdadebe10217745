//! Stand-in for a trained tabular model: a deterministic hash of the first feature.

use serde_json::Value as Json;

use super::{PredictOutput, PredictRequest, PredictResponse, Predictor};
use crate::catalog::ModelEntry;
use crate::error::{BackendError, Error, Result};
use crate::types::{DataType, Value};
use crate::util::fnv1a;

pub const CLASSES: u64 = 7;

#[derive(Debug)]
pub struct TabularStub {
    name: String,
    features: usize,
}

impl TabularStub {
    pub fn new(entry: &ModelEntry) -> Result<Self> {
        let features = entry
            .input_set
            .as_ref()
            .map(Vec::len)
            .ok_or_else(|| Error::Config(format!("tabular model {} has no FEATURES", entry.name)))?;
        Ok(TabularStub { name: entry.name.clone(), features })
    }
}

/// Class assigned to a feature value.
pub fn class_of(first_feature: &str) -> i64 {
    (fnv1a(first_feature.as_bytes()) % CLASSES) as i64
}

fn text(v: &Json) -> Option<String> {
    match v {
        Json::Null => None,
        Json::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

impl Predictor for TabularStub {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict_chunk(&self, req: &PredictRequest<'_>) -> std::result::Result<PredictResponse, BackendError> {
        let mut out = Vec::with_capacity(req.rows.len());
        for row in req.rows {
            if row.len() != self.features {
                return Err(BackendError::permanent(format!(
                    "model {} expects {} features, got {}",
                    self.name,
                    self.features,
                    row.len()
                )));
            }
            let class = row.first().and_then(text).map(|t| class_of(&t));
            let mut values: Vec<Value> = req
                .outputs
                .iter()
                .enumerate()
                .map(|(i, (_, ty))| match (i, class) {
                    (0, Some(c)) => match ty {
                        DataType::Integer => Value::Integer(c),
                        DataType::Double => Value::Double(c as f64),
                        _ => Value::Varchar(c.to_string()),
                    },
                    _ => Value::Null,
                })
                .collect();
            values.truncate(req.outputs.len());
            out.push(values);
        }
        Ok(PredictResponse { output: PredictOutput::Records(out), usage: None, transport_retries: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_is_fnv_mod_seven() {
        // FNV-1a("a") = 0xaf63dc4c8601ec8c
        assert_eq!(class_of("a"), (0xaf63_dc4c_8601_ec8c_u64 % 7) as i64);
        assert!((0..7).contains(&class_of("Wireless Mouse")));
    }
}
