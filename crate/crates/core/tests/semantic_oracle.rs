//! Lowered semantic operators, executed against the mock, agree with a direct
//! evaluation of their definitions over the same fixtures.

use std::sync::Arc;

use proptest::prelude::*;
use semaquery::predictors::{MockFactory, MockPredictor};
use semaquery::session::{QueryResult, Session};
use semaquery::types::Value;

const FIXTURES: &str = r#"{"format":"semaquery-mock","version":1}
{"template":"length","output":{"n":{"$len":"t"}}}
{"template":"mentions","output":{"keep":{"$contains":["t","x"]}}}
{"template":"same thing","output":{"answer":{"$eq":["r.t","s.u"]}}}
{"default":true,"output":"echo"}
"#;

fn sql_str(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn session(r: &[(i64, String)], s: &[(i64, String)], generated: &[String], settings: &str) -> Session {
    let gen_rows: Vec<String> = generated.iter().map(|n| serde_json::json!({ "name": n }).to_string()).collect();
    let fixtures = format!("{FIXTURES}{{\"template\":\"list the\",\"rows\":[{}]}}\n", gen_rows.join(","));
    let mock = MockPredictor::parse(&fixtures).unwrap();
    let mut sess = Session::new(Arc::new(MockFactory { mock: Arc::new(mock) }));
    sess.run(
        "CREATE LLM MODEL m PATH 'mock'; CREATE TABLE R (a INTEGER, t VARCHAR); CREATE TABLE S (b INTEGER, u VARCHAR);",
    )
    .unwrap();
    for (table, rows) in [("R", r), ("S", s)] {
        if !rows.is_empty() {
            let values: Vec<String> = rows.iter().map(|(k, v)| format!("({k}, {})", sql_str(v))).collect();
            sess.run(&format!("INSERT INTO {table} VALUES {}", values.join(", "))).unwrap();
        }
    }
    if !settings.is_empty() {
        sess.run(settings).unwrap();
    }
    sess
}

fn sorted(mut rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    rows.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
    rows
}

fn int(i: i64) -> Value {
    Value::Integer(i)
}

fn text(s: &str) -> Value {
    Value::Varchar(s.into())
}

const PROJECT: &str = "SELECT a, t, n FROM LLM m (PROMPT 'the length {n INTEGER} of {{t}}', R)";
const SELECT: &str = "SELECT a FROM R WHERE LLM m (PROMPT 'whether {{t}} mentions x {keep BOOLEAN}')";
const JOIN: &str = "SELECT r.a, s.b FROM R AS r JOIN S AS s ON LLM m (PROMPT 'are {{r.t}} and {{s.u}} the same thing')";
const GENERATE: &str = "SELECT * FROM LLM m (PROMPT 'list the {name VARCHAR} of all things') AS g";

fn run_all(sess: &mut Session) -> Vec<QueryResult> {
    [PROJECT, SELECT, JOIN, GENERATE].iter().map(|q| sess.query(q).unwrap()).collect()
}

fn table() -> impl Strategy<Value = Vec<(i64, String)>> {
    prop::collection::vec((0i64..10, "[abx]{0,3}"), 0..=30)
}

fn settings() -> impl Strategy<Value = String> {
    (prop::sample::select(vec![1usize, 3, 16]), prop::sample::select(vec![1usize, 4]), any::<bool>())
        .prop_map(|(b, n, d)| format!("SET batch_size = {b}; SET n_threads = {n}; SET use_dedup = {d};"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lowered_operators_match_definitions(
        r in table(),
        s in table(),
        generated in prop::collection::vec("[a-z]{1,5}", 0..8),
        settings in settings(),
    ) {
        let mut sess = session(&r, &s, &generated, &settings);
        let got = run_all(&mut sess);
        prop_assert!(r.is_empty() || got[0].stats.counts.calls > 0);

        // Table inference: every row of R, extended by its prediction.
        let want: Vec<Vec<Value>> =
            r.iter().map(|(a, t)| vec![int(*a), text(t), int(t.chars().count() as i64)]).collect();
        prop_assert_eq!(sorted(got[0].rows.clone()), sorted(want));

        // Semantic select: rows of R whose predicate holds.
        let want: Vec<Vec<Value>> = r.iter().filter(|(_, t)| t.contains('x')).map(|(a, _)| vec![int(*a)]).collect();
        prop_assert_eq!(sorted(got[1].rows.clone()), sorted(want));

        // Semantic join: pairs of the cross product whose predicate holds.
        let want: Vec<Vec<Value>> = r
            .iter()
            .flat_map(|(a, t)| s.iter().filter(move |(_, u)| u == t).map(move |(b, _)| vec![int(*a), int(*b)]))
            .collect();
        prop_assert_eq!(sorted(got[2].rows.clone()), sorted(want));

        // Semantic relation: exactly the generated rows.
        let want: Vec<Vec<Value>> = generated.iter().map(|n| vec![text(n)]).collect();
        prop_assert_eq!(sorted(got[3].rows.clone()), sorted(want));
    }

    #[test]
    fn dedup_and_threads_do_not_change_results(r in table(), s in table()) {
        let baseline = run_all(&mut session(&r, &s, &[], "SET use_dedup = false; SET n_threads = 1;"));
        for threads in [1, 4, 16] {
            let with = run_all(&mut session(&r, &s, &[], &format!("SET use_dedup = true; SET n_threads = {threads};")));
            for (a, b) in baseline.iter().zip(&with) {
                prop_assert_eq!(&a.rows, &b.rows);
            }
        }
        // Call counts depend on dedup but never on the thread count.
        let counts = |threads: usize| -> Vec<u64> {
            run_all(&mut session(&r, &s, &[], &format!("SET n_threads = {threads};")))
                .iter()
                .flat_map(|q| [q.stats.counts.calls, q.stats.counts.cache_hits, q.stats.counts.input_tokens])
                .collect()
        };
        let one = counts(1);
        prop_assert_eq!(&one, &counts(4));
        prop_assert_eq!(&one, &counts(16));
    }
}
