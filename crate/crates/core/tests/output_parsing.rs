//! Structured-output coercion table and the malformed-reply path.

use std::sync::Arc;

use semaquery::error::OutputError;
use semaquery::predict::parse_structured_output;
use semaquery::predictors::{MockFactory, MockPredictor};
use semaquery::session::Session;
use semaquery::types::{DataType, Value};

use serde_json::Value as Json;

/// Checks one line of `data/coercion.jsonl`: expected values are compared in
/// their JSON form, so datetimes read as RFC 3339 strings.
fn check_case(case: &Json) -> Result<(), String> {
    let name = case["name"].as_str().unwrap_or("?");
    let outputs: Vec<(String, DataType)> = case["outputs"]
        .as_array()
        .ok_or("outputs")?
        .iter()
        .map(|o| (o[0].as_str().unwrap().to_string(), DataType::from_keyword(o[1].as_str().unwrap()).unwrap()))
        .collect();
    let rows = case["rows"].as_u64().ok_or("rows")? as usize;
    let got = parse_structured_output(case["raw"].as_str().ok_or("raw")?, &outputs, Some(rows));
    let expect = &case["expect"];
    match got {
        Ok(parsed) => {
            let values: Vec<Vec<Json>> = parsed.iter().map(|r| r.values.iter().map(Value::to_json).collect()).collect();
            let flags: Vec<bool> = parsed.iter().map(|r| r.flagged).collect();
            let want_values: Vec<Vec<Json>> =
                serde_json::from_value(expect["rows"].clone()).map_err(|e| e.to_string())?;
            let want_flags: Vec<bool> = serde_json::from_value(expect["flagged"].clone()).map_err(|e| e.to_string())?;
            if values == want_values && flags == want_flags {
                Ok(())
            } else {
                Err(format!("{name}: got {values:?} {flags:?}"))
            }
        }
        Err(OutputError::Malformed(_)) if expect == "malformed" => Ok(()),
        Err(OutputError::RowCountMismatch { expected, actual })
            if expect["count"] == serde_json::json!([expected, actual]) =>
        {
            Ok(())
        }
        Err(e) => Err(format!("{name}: unexpected {e:?}")),
    }
}

#[test]
fn coercion_table() {
    let text = include_str!("data/coercion.jsonl");
    let cases: Vec<Json> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 30);
    let failures: Vec<String> = cases.iter().filter_map(|c| check_case(c).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

fn session(fixture: &str) -> Session {
    let mock = MockPredictor::parse(fixture).unwrap();
    let mut s = Session::new(Arc::new(MockFactory { mock: Arc::new(mock) }));
    s.run(
        "CREATE LLM MODEL m PATH 'mock';
         CREATE TABLE t (id INTEGER, title VARCHAR);
         INSERT INTO t VALUES (1, 'a'), (2, 'b'), (3, 'c'), (4, 'd');
         SET batch_size = 4; SET max_retries = 2; SET retry_backoff_ms = 0; SET error_policy = 'null';",
    )
    .unwrap();
    s
}

const QUERY: &str = "SELECT id, LLM m (PROMPT 'the {language VARCHAR} of {{title}}') FROM t ORDER BY id";

#[test]
fn malformed_once_is_fixed_by_one_reprompt() {
    let mut sess = session(r#"{"default":true,"behavior":"garbage_once","output":{"language":"English"}}"#);
    let r = sess.query(QUERY).unwrap();
    assert!(r.rows.iter().all(|row| row[1] == Value::Varchar("English".into())));
    let c = &r.stats.counts;
    // The first reply is chatter; the stricter re-prompt parses. No fallback.
    assert_eq!((c.calls, c.reprompts, c.retries, c.fallback_batches), (2, 1, 0, 0));
}

#[test]
fn malformed_twice_falls_back_to_single_rows() {
    let mut sess = session(r#"{"default":true,"behavior":"garbage","output":{"language":"English"}}"#);
    let r = sess.query(QUERY).unwrap();
    assert!(r.rows.iter().all(|row| row[1] == Value::Null));
    let c = &r.stats.counts;
    // Batch: call + re-prompt, then fallback. Each of the 4 single rows makes
    // 1 + max_retries attempts, and every attempt is re-prompted once.
    let per_row_attempts = 1 + 2;
    assert_eq!(c.fallback_batches, 1);
    assert_eq!(c.reprompts, 1 + 4 * per_row_attempts);
    assert_eq!(c.retries, 4 * 2);
    assert_eq!(c.calls, 2 + 4 * (1 + per_row_attempts));
    assert_eq!(c.failed_rows, 4);
}
