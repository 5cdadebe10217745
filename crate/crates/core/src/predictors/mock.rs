//! Deterministic rule-driven backend for tests and benchmarks.
//!
//! Fixture files hold one JSON object per line. An optional first line
//! `{"format":"semaquery-mock","version":1}` identifies the file. Every other
//! line is a rule; the first rule that matches a row answers it, and a rule
//! with `"default": true` is required. Rule fields:
//!
//! - `model`, `template`: model name and a substring of the prompt template.
//! - `when`: exact input values; `when_contains`: substrings of input values.
//! - `output`: an object of output values, or `"echo"`. Values may be the
//!   operators `{"$input": k}`, `{"$len": k}`, `{"$hash_mod": n}` (optionally
//!   with `"eq": m` for a boolean), `{"$eq": [a, b]}` and `{"$contains": [k, s]}`.
//! - `behavior`: `fail`, `fail_once`, `garbage`, `garbage_once` or `permanent`;
//!   `fail_times`: fail the first N calls that include a matching row.
//! - `latency_ms` (fractional values allowed), `fence` (wrap replies in a code fence).
//! - `rows` or `generate` (a row count): the reply to table generation.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Map, Value as Json};

use super::{PredictRequest, PredictResponse, Predictor};
use crate::error::{BackendError, Error, Result};
use crate::predict::RenderKind;
use crate::types::DataType;
use crate::util::fnv1a;

pub const FIXTURE_FORMAT: &str = "semaquery-mock";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub default: bool,
    pub model: Option<String>,
    pub template: Option<String>,
    pub when: Option<Map<String, Json>>,
    pub when_contains: Option<Map<String, Json>>,
    pub output: Option<Json>,
    pub behavior: Option<String>,
    pub fail_times: Option<u64>,
    pub latency_ms: Option<f64>,
    #[serde(default)]
    pub fence: bool,
    pub rows: Option<Vec<Json>>,
    pub generate: Option<usize>,
}

/// Text of an input value as the rules see it.
pub fn input_text(v: &Json) -> String {
    match v {
        Json::String(s) => s.clone(),
        Json::Null => String::new(),
        other => other.to_string(),
    }
}

/// `fnv1a` over the inputs' texts joined by `|`, modulo `n`.
pub fn hash_mod(inputs: &[String], n: u64) -> u64 {
    fnv1a(inputs.join("|").as_bytes()) % n.max(1)
}

impl MockRule {
    fn matches(&self, req: &PredictRequest<'_>, row: Option<&[Json]>) -> bool {
        if self.model.as_ref().is_some_and(|m| !m.eq_ignore_ascii_case(&req.model.name)) {
            return false;
        }
        if self.template.as_ref().is_some_and(|t| !req.template.raw.contains(t.as_str())) {
            return false;
        }
        let lookup = |k: &str| -> Option<&Json> {
            let i = req.input_keys.iter().position(|key| key.eq_ignore_ascii_case(k))?;
            row?.get(i)
        };
        if let Some(when) = &self.when {
            if !when.iter().all(|(k, v)| lookup(k) == Some(v)) {
                return false;
            }
        }
        if let Some(when) = &self.when_contains {
            if !when.iter().all(|(k, v)| lookup(k).is_some_and(|x| input_text(x).contains(&input_text(v)))) {
                return false;
            }
        }
        true
    }

    fn is_default(&self) -> bool {
        self.default
    }
}

#[derive(Debug)]
pub struct MockPredictor {
    rules: Vec<MockRule>,
    hits: Vec<AtomicU64>,
    invocations: AtomicU64,
}

impl MockPredictor {
    pub fn new(rules: Vec<MockRule>) -> Result<Self> {
        if !rules.iter().any(MockRule::is_default) {
            return Err(Error::Config("mock fixture has no default rule".into()));
        }
        let hits = rules.iter().map(|_| AtomicU64::new(0)).collect();
        Ok(MockPredictor { rules, hits, invocations: AtomicU64::new(0) })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let v: Json =
                serde_json::from_str(line).map_err(|e| Error::Config(format!("mock fixture line {}: {e}", n + 1)))?;
            if let Some(format) = v.get("format") {
                if format != FIXTURE_FORMAT || v.get("version") != Some(&json!(1)) {
                    return Err(Error::Config(format!("mock fixture line {}: unsupported header", n + 1)));
                }
                continue;
            }
            let rule: MockRule =
                serde_json::from_value(v).map_err(|e| Error::Config(format!("mock fixture line {}: {e}", n + 1)))?;
            rules.push(rule);
        }
        MockPredictor::new(rules)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read mock fixture {}: {e}", path.display())))?;
        MockPredictor::parse(&text)
    }

    /// Backend invocations so far, retries included.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    fn rule_for(&self, req: &PredictRequest<'_>, row: Option<&[Json]>) -> usize {
        self.rules
            .iter()
            .position(|r| !r.default && r.matches(req, row))
            .or_else(|| self.rules.iter().position(|r| r.default && r.matches(req, row)))
            .or_else(|| self.rules.iter().position(MockRule::is_default))
            .expect("default rule checked at load")
    }

    fn eval(&self, spec: &Json, ty: DataType, req: &PredictRequest<'_>, row: &[Json]) -> Json {
        let input = |k: &Json| -> Json {
            let k = input_text(k);
            req.input_keys
                .iter()
                .position(|key| key.eq_ignore_ascii_case(&k))
                .and_then(|i| row.get(i).cloned())
                .unwrap_or(Json::Null)
        };
        let Json::Object(obj) = spec else { return spec.clone() };
        if let Some(k) = obj.get("$input") {
            return input(k);
        }
        if let Some(k) = obj.get("$len") {
            return json!(input_text(&input(k)).chars().count());
        }
        if let Some(n) = obj.get("$hash_mod") {
            let texts: Vec<String> = row.iter().map(input_text).collect();
            let h = hash_mod(&texts, n.as_u64().unwrap_or(1));
            return match obj.get("eq").and_then(Json::as_u64) {
                Some(m) => json!(h == m),
                None if ty == DataType::Boolean => json!(h == 0),
                None => json!(h),
            };
        }
        if let Some(Json::Array(pair)) = obj.get("$eq") {
            if let [a, b] = pair.as_slice() {
                return json!(input(a) == input(b));
            }
        }
        if let Some(Json::Array(pair)) = obj.get("$contains") {
            if let [k, s] = pair.as_slice() {
                return json!(input_text(&input(k)).to_lowercase().contains(&input_text(s).to_lowercase()));
            }
        }
        spec.clone()
    }

    fn answer_row(&self, rule: &MockRule, req: &PredictRequest<'_>, row: &[Json]) -> Map<String, Json> {
        let mut obj = Map::new();
        for (i, (name, ty)) in req.outputs.iter().enumerate() {
            let v = match &rule.output {
                Some(Json::String(s)) if s == "echo" => req
                    .input_keys
                    .iter()
                    .position(|k| k.eq_ignore_ascii_case(name))
                    .and_then(|j| row.get(j))
                    .or_else(|| row.get(i))
                    .or_else(|| row.first())
                    .cloned()
                    .unwrap_or(Json::Null),
                Some(Json::Object(o)) => match o.get(name) {
                    Some(spec) => self.eval(spec, *ty, req, row),
                    None => Json::Null,
                },
                Some(other) if req.outputs.len() == 1 => other.clone(),
                _ => Json::Null,
            };
            obj.insert(name.clone(), v);
        }
        obj
    }

    fn generated_rows(&self, rule: &MockRule, req: &PredictRequest<'_>) -> Vec<Json> {
        if let Some(rows) = &rule.rows {
            return rows.clone();
        }
        (0..rule.generate.unwrap_or(0))
            .map(|i| {
                let mut obj = Map::new();
                for (name, ty) in req.outputs {
                    let v = match ty {
                        DataType::Integer => json!(i),
                        DataType::Double => json!(i as f64),
                        DataType::Boolean => json!(i % 2 == 0),
                        DataType::Datetime => json!(format!("2021-01-{:02}T00:00:00Z", i % 28 + 1)),
                        DataType::Varchar => json!(format!("{name} {i}")),
                    };
                    obj.insert(name.clone(), v);
                }
                Json::Object(obj)
            })
            .collect()
    }

    /// Applies scripted behavior; `Some` short-circuits the call.
    fn scripted(&self, idx: usize, hit: u64) -> Option<std::result::Result<String, BackendError>> {
        let rule = &self.rules[idx];
        if let Some(n) = rule.fail_times {
            if hit < n {
                return Some(Err(BackendError::retryable(format!("mock: scripted failure {} of {n}", hit + 1))));
            }
        }
        match rule.behavior.as_deref() {
            Some("fail") => Some(Err(BackendError::retryable("mock: scripted failure"))),
            Some("permanent") => Some(Err(BackendError::permanent("mock: scripted permanent failure"))),
            Some("fail_once") if hit == 0 => Some(Err(BackendError::retryable("mock: scripted failure (once)"))),
            Some("garbage") => Some(Ok("Sure! Here you go: not json".into())),
            Some("garbage_once") if hit == 0 => Some(Ok("I think the answer is probably yes.".into())),
            _ => None,
        }
    }
}

impl Predictor for MockPredictor {
    fn name(&self) -> &str {
        "mock"
    }

    fn predict_chunk(&self, req: &PredictRequest<'_>) -> std::result::Result<PredictResponse, BackendError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let generation = matches!(req.kind, RenderKind::Generation { .. });
        let rule_ids: Vec<usize> = if generation {
            vec![self.rule_for(req, None)]
        } else {
            req.rows.iter().map(|r| self.rule_for(req, Some(r))).collect()
        };
        let mut distinct = rule_ids.clone();
        distinct.sort_unstable();
        distinct.dedup();

        let latency = distinct.iter().filter_map(|&i| self.rules[i].latency_ms).fold(0.0, f64::max);
        if latency > 0.0 {
            thread::sleep(Duration::from_secs_f64(latency / 1000.0));
        }
        // Every rule involved in the call advances its sequence counter, so
        // scripted sequences depend only on how many calls touched the rule.
        let mut scripted = None;
        for &i in &distinct {
            let hit = self.hits[i].fetch_add(1, Ordering::SeqCst);
            if scripted.is_none() {
                scripted = self.scripted(i, hit);
            }
        }
        let fence = distinct.iter().any(|&i| self.rules[i].fence);
        let text = match scripted {
            Some(Err(e)) => return Err(e),
            Some(Ok(garbage)) => garbage,
            None if generation => Json::Array(self.generated_rows(&self.rules[rule_ids[0]], req)).to_string(),
            None => {
                let items: Vec<Json> = req
                    .rows
                    .iter()
                    .zip(&rule_ids)
                    .enumerate()
                    .map(|(i, (row, &r))| {
                        let mut obj = Map::new();
                        obj.insert("row_id".into(), json!(i));
                        obj.extend(self.answer_row(&self.rules[r], req, row));
                        Json::Object(obj)
                    })
                    .collect();
                Json::Array(items).to_string()
            }
        };
        Ok(PredictResponse::text(if fence { format!("```json\n{text}\n```") } else { text }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ModelEntry;
    use crate::predict::{render_prompt, PredictConfig};
    use crate::sql::{ModelKind, PromptTemplate};

    fn entry() -> ModelEntry {
        ModelEntry {
            name: "o4mini".into(),
            path: "o4-mini".into(),
            kind: ModelKind::Llm,
            on_prompt: true,
            base_api: None,
            secret: None,
            relation: None,
            input_set: None,
            output_set: None,
            options: Vec::new(),
        }
    }

    fn call(m: &MockPredictor, rows: &[Vec<Json>]) -> std::result::Result<String, BackendError> {
        let e = entry();
        let t = PromptTemplate::parse("what is the {language VARCHAR} of the movie {{title}}").unwrap();
        let outputs = vec![("language".to_string(), DataType::Varchar)];
        let keys = vec!["title".to_string()];
        let p = render_prompt(&t, &outputs, &keys, rows, RenderKind::Rows, false);
        let c = PredictConfig::default();
        let req = PredictRequest {
            model: &e,
            prompt: &p,
            template: &t,
            input_keys: &keys,
            rows,
            outputs: &outputs,
            kind: RenderKind::Rows,
            strict: false,
            config: &c,
        };
        m.predict_chunk(&req).map(|r| match r.output {
            super::super::PredictOutput::Text(t) => t,
            _ => unreachable!(),
        })
    }

    #[test]
    fn exact_rule() {
        let m = MockPredictor::parse(
            r#"{"format":"semaquery-mock","version":1}
{"when":{"title":"Titanic"},"output":{"language":"English"}}
{"default":true,"output":"echo"}"#,
        )
        .unwrap();
        let out = call(&m, &[vec![json!("Titanic")], vec![json!("Amélie")]]).unwrap();
        assert_eq!(out, r#"[{"language":"English","row_id":0},{"language":"Amélie","row_id":1}]"#);
    }

    #[test]
    fn fail_once_then_succeed() {
        let m = MockPredictor::parse(r#"{"default":true,"behavior":"fail_once","output":{"language":"x"}}"#).unwrap();
        assert!(call(&m, &[vec![json!("a")]]).is_err());
        assert!(call(&m, &[vec![json!("a")]]).is_ok());
        assert_eq!(m.invocations(), 2);
    }

    #[test]
    fn default_rule_required() {
        assert!(MockPredictor::parse(r#"{"output":"echo"}"#).is_err());
        assert!(MockPredictor::parse(r#"{"default":true,"bogus":1}"#).is_err());
    }
}
