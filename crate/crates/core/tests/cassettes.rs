//! Remote backend against recorded HTTP exchanges; nothing here touches the network.

use std::path::PathBuf;
use std::sync::Arc;

use semaquery::predictors::{CassetteTransport, RemoteFactory};
use semaquery::session::Session;
use semaquery::types::Value;
use serde_json::Value as Json;

const SECRET: &str = "sk-golden-secret";
const QUERY: &str =
    "SELECT title, LLM o4mini (PROMPT 'what is the {language VARCHAR} of the movie {{title}}') FROM Movie";

fn cassette(name: &str) -> Arc<CassetteTransport> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/cassettes").join(name);
    Arc::new(CassetteTransport::from_path(path).unwrap())
}

fn inline(text: &str) -> Arc<CassetteTransport> {
    Arc::new(CassetteTransport::parse(text).unwrap())
}

fn session(t: &Arc<CassetteTransport>) -> Session {
    let mut s = Session::new(Arc::new(RemoteFactory { transport: t.clone() }));
    s.run(&format!(
        "CREATE SECRET o4mini AS '{SECRET}';
         CREATE LLM MODEL o4mini PATH 'o4-mini' ON PROMPT API 'https://api.openai.com/v1/';
         CREATE TABLE Movie (title VARCHAR);
         INSERT INTO Movie VALUES ('Titanic'), ('Heat');
         SET retry_backoff_ms = 0;"
    ))
    .unwrap();
    s
}

#[test]
fn language_request_matches_golden() {
    let t = cassette("movie_language.json");
    let mut s = session(&t);
    let r = s.query(QUERY).unwrap();
    assert_eq!(
        r.rows,
        vec![
            vec![Value::Varchar("Titanic".into()), Value::Varchar("English".into())],
            vec![Value::Varchar("Heat".into()), Value::Varchar("English".into())],
        ]
    );
    assert_eq!(t.remaining(), 0);

    let reqs = t.requests();
    assert_eq!(reqs.len(), 1);
    let req = &reqs[0];
    assert_eq!(req.url, "https://api.openai.com/v1/chat/completions");
    assert!(req.headers.contains(&("x-has-bearer".into(), "true".into())));

    // Structure checked independently of the frozen recording.
    let body: Json = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], "o4-mini");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    let user = body["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains(r#"[{"row_id":0,"title":"Titanic"},{"row_id":1,"title":"Heat"}]"#), "{user}");
    let rf = &body["response_format"];
    assert_eq!(rf["type"], "json_schema");
    let item = &rf["json_schema"]["schema"]["properties"]["rows"]["items"];
    assert_eq!(item["required"], serde_json::json!(["row_id", "language"]));
    assert_eq!(item["properties"]["row_id"]["type"], "integer");
    assert!(!req.body.contains(SECRET));

    // Reported usage wins over the character estimate.
    assert_eq!(r.stats.counts.input_tokens, 131);
    assert_eq!(r.stats.counts.output_tokens, 24);
}

#[test]
fn changed_request_does_not_match_recording() {
    let t = cassette("movie_language.json");
    let mut s = session(&t);
    s.run("INSERT INTO Movie VALUES ('Up'); SET error_policy = 'fail'").unwrap();
    let e = s.query(QUERY).unwrap_err().to_string();
    assert!(e.contains("3 of 3 rows failed"), "{e}");
    let sent: Json = serde_json::from_str(&t.requests()[0].body).unwrap();
    assert!(sent["messages"][1]["content"].as_str().unwrap().contains("Up"));
}

#[test]
fn rate_limited_request_is_retried() {
    let t = cassette("rate_limited_then_ok.json");
    let mut s = session(&t);
    let r = s.query(QUERY).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(t.requests().len(), 2);
    assert_eq!(t.requests()[0].body, t.requests()[1].body);
    let c = &r.stats.counts;
    // The 429 is absorbed inside the transport: one logical call, no operator retry.
    assert_eq!((c.calls, c.retries), (1, 0));
    assert_eq!(r.stats.predicts[0].stats.transport_retries, 1);
}

#[test]
fn rate_limit_exhaustion_reports_without_secret() {
    let t = inline(
        r#"{"interactions":[
            {"response":{"status":429,"body":"slow down sk-golden-secret"}},
            {"response":{"status":429,"body":"slow down"}},
            {"response":{"status":429,"body":"slow down"}}]}"#,
    );
    let mut s = session(&t);
    s.run("SET max_retries = 0; SET batch_size = 2; SET error_policy = 'fail'").unwrap();
    let e = s.query(QUERY).unwrap_err().to_string();
    assert!(e.contains("429"), "{e}");
    assert!(!e.contains(SECRET), "{e}");
}

#[test]
fn model_options_reach_the_request_body() {
    let ok = r#"{"status":200,"body":{"choices":[{"message":{"content":"[{\"row_id\":0,\"language\":\"en\"},{\"row_id\":1,\"language\":\"en\"}]"}}]}}"#;
    let t = inline(&format!(r#"{{"interactions":[{{"response":{ok}}}]}}"#));
    let mut s = session(&t);
    s.run(
        "CREATE SECRET o4_sequential AS 'sk-other';
         CREATE LLM MODEL o4_sequential PATH 'o4' ON PROMPT API 'https://api.openai.com'
         OPTIONS { 'n_threads': 1,'batch_size': 16, 'temperature': 0.5,};",
    )
    .unwrap();
    s.query("SELECT LLM o4_sequential (PROMPT 'the {language VARCHAR} of {{title}}') FROM Movie").unwrap();
    let req = &t.requests()[0];
    assert_eq!(req.url, "https://api.openai.com/v1/chat/completions");
    let body: Json = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], "o4");
    assert_eq!(body["temperature"], 0.5);
    // Engine settings are not sent to the vendor.
    assert!(body.get("n_threads").is_none() && body.get("batch_size").is_none());
}

#[test]
fn missing_secret_fails_before_any_request() {
    let t = inline(r#"{"interactions":[]}"#);
    let mut s = Session::new(Arc::new(RemoteFactory { transport: t.clone() }));
    s.run(
        "CREATE LLM MODEL nokey_model PATH 'o4-mini' ON PROMPT API 'https://api.openai.com/v1/';
         CREATE TABLE Movie (title VARCHAR); INSERT INTO Movie VALUES ('Heat');",
    )
    .unwrap();
    let e = s.query("SELECT LLM nokey_model (PROMPT 'the {l VARCHAR} of {{title}}') FROM Movie").unwrap_err();
    assert!(e.to_string().contains("SEMAQUERY_SECRET_NOKEY_MODEL"), "{e}");
    assert!(t.requests().is_empty());
}
