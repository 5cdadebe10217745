//! Every published example statement parses, reprints to a fixpoint, binds and explains.

use std::sync::Arc;
use std::time::Instant;

use semaquery::predictors::{MockFactory, MockPredictor};
use semaquery::session::{Session, StatementResult};
use semaquery::sql::{parse_statement, parse_statements, Statement};

const CORPUS: &str = include_str!("data/corpus.sql");
const SCHEMA: &str = include_str!("data/corpus_schema.sql");

fn session() -> Session {
    let mock = MockPredictor::parse(r#"{"default":true,"output":"echo"}"#).unwrap();
    let mut s = Session::new(Arc::new(MockFactory { mock: Arc::new(mock) }));
    s.run(SCHEMA).unwrap();
    s
}

fn explain(s: &mut Session, mode: &str, query: &str) -> String {
    let stmt = parse_statement(&format!("{mode} {query}")).unwrap();
    match s.execute(&stmt).unwrap_or_else(|e| panic!("{e}\n{query}")).result {
        StatementResult::Explain(p) => p,
        _ => panic!("{mode} returned rows"),
    }
}

#[test]
fn corpus_parses_binds_and_explains() {
    let started = Instant::now();
    let statements = parse_statements(CORPUS).unwrap();
    assert_eq!(statements.len(), 14);
    for stmt in &statements {
        let printed = stmt.to_string();
        let again = parse_statement(&printed).unwrap_or_else(|e| panic!("reparse failed: {e}\n{printed}"));
        assert_eq!(*stmt, again, "{printed}");
        assert_eq!(printed, again.to_string());
    }

    let mut s = session();
    let (models, queries): (Vec<&Statement>, Vec<&Statement>) =
        statements.iter().partition(|st| matches!(st, Statement::CreateModel(_)));
    for stmt in models {
        s.execute(stmt).unwrap_or_else(|e| panic!("{e}\n{stmt}"));
    }
    assert_eq!(s.models.len(), 4);
    for stmt in queries {
        let query = match stmt {
            Statement::Select(q) => q.to_string(),
            Statement::CreateTableAs { query, .. } => query.to_string(),
            other => panic!("unexpected statement {other}"),
        };
        for mode in ["EXPLAIN", "EXPLAIN OPTIMIZED"] {
            let plan = explain(&mut s, mode, &query);
            assert!(plan.contains("Predict") || plan.contains("llm_agg"), "{mode} {query}\n{plan}");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn corpus_lowers_to_expected_operators() {
    let mut s = session();
    s.run("CREATE LLM MODEL o4mini PATH 'o4-mini' ON PROMPT API 'https://api.openai.com/v1/'").unwrap();

    // A join on a yes/no prompt is a cross product under a predicted Boolean filter.
    let plan = explain(
        &mut s,
        "EXPLAIN",
        "SELECT m.title, mr.maturity_label FROM Movie AS m JOIN MaturityRating AS mr \
         ON LLM o4mini (PROMPT 'is maturity rating {{mr.description}} depicted in the {{m.plot}}')",
    );
    assert!(plan.contains("CrossJoin"), "{plan}");
    assert!(plan.contains("Predict scalar"), "{plan}");
    assert!(plan.contains("outputs=[answer BOOLEAN]"), "{plan}");

    // Table generation is a leaf.
    let plan = explain(
        &mut s,
        "EXPLAIN",
        "SELECT * FROM LLM o4mini (PROMPT 'list the {name VARCHAR} of all states in the US') AS states",
    );
    assert!(plan.contains("Predict table_generation"), "{plan}");
    assert!(!plan.contains("Get "), "{plan}");

    // A filter on a predicted column stays above the table inference that produces it.
    let plan = explain(
        &mut s,
        "EXPLAIN OPTIMIZED",
        "SELECT state, avg(sale) AS total_sales \
         FROM LLM o4mini(PROMPT 'find{state VARCHAR},{country VARCHAR} from {{billing_address}}',Order) \
         WHERE country = \"USA\" GROUP BY state",
    );
    let filter = plan.find("Filter").expect(&plan);
    let predict = plan.find("Predict table_inference").expect(&plan);
    assert!(filter < predict, "{plan}");
}

#[test]
fn unterminated_director_literal_is_a_located_syntax_error() {
    let text = "SELECT c.name, LLM AGG o4mini (PROMPT 'Summarize the cinematography {style VARCHAR} by the {{m.plot}}s')\nFROM Cast AS c NATURAL JOIN Movie AS m\nWHERE c.role = 'Director GROUP BY c.name;";
    let e = parse_statement(text).unwrap_err().to_string();
    assert!(e.contains("line 3"), "{e}");
}
