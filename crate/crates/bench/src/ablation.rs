//! Runs one semantic workload with optimizations switched off one at a time.
//! Every variant must return the same rows; only cost may change.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use semaquery::error::Error;
use semaquery::predictors::{MockFactory, MockPredictor};
use semaquery::session::Session;
use semaquery::types::Value;

/// Reviews of products; review texts repeat every `distinct` rows and one
/// product category in four is selected.
#[derive(Debug, Clone, Copy)]
pub struct Workload {
    pub reviews: usize,
    pub distinct: usize,
    pub products: usize,
    /// Injected mock latency per call, in milliseconds.
    pub latency_ms: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload { reviews: 400, distinct: 200, products: 20, latency_ms: 2.0 }
    }
}

pub const QUERY: &str = "SELECT r.id, r.review FROM Review AS r JOIN Product AS p ON r.product_id = p.id \
     WHERE LLM m (PROMPT 'is the {{r.review}} positive {positive BOOLEAN}') AND p.category = 'c0'";

/// `(name, SET statements)`; the first entry is the reference.
pub const VARIANTS: [(&str, &str); 6] = [
    ("all", ""),
    ("no_dedup", "SET use_dedup = false;"),
    ("no_batching", "SET use_batching = false;"),
    ("no_parallelism", "SET n_threads = 1;"),
    ("no_pull_up", "SET optimizer_rules = '-pull_up_predict,-order_select_vs_join';"),
    ("none", "SET use_dedup = false; SET use_batching = false; SET n_threads = 1; SET optimizer_rules = 'none';"),
];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub calls: u64,
    pub cache_hits: u64,
    pub input_tokens: u64,
    pub rows: usize,
    pub elapsed: Duration,
}

#[derive(Debug)]
pub enum AblationError {
    Engine(Error),
    /// A variant returned different rows than the reference.
    Mismatch(&'static str),
}

impl fmt::Display for AblationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationError::Engine(e) => write!(f, "{e}"),
            AblationError::Mismatch(v) => write!(f, "variant '{v}' changed the query result"),
        }
    }
}

impl std::error::Error for AblationError {}

impl From<Error> for AblationError {
    fn from(e: Error) -> Self {
        AblationError::Engine(e)
    }
}

pub fn workload_session(w: &Workload) -> Result<Session, Error> {
    let fixtures = format!(
        "{{\"template\":\"positive\",\"output\":{{\"positive\":{{\"$hash_mod\":2,\"eq\":0}}}},\"latency_ms\":{}}}\n\
         {{\"default\":true,\"output\":\"echo\"}}\n",
        w.latency_ms
    );
    let mock = MockPredictor::parse(&fixtures)?;
    let mut s = Session::new(Arc::new(MockFactory { mock: Arc::new(mock) }));
    s.run(
        "CREATE LLM MODEL m PATH 'mock';
         CREATE TABLE Product (id INTEGER, category VARCHAR);
         CREATE TABLE Review (id INTEGER, product_id INTEGER, review VARCHAR);
         ALTER TABLE Product ADD PRIMARY KEY (id);
         ALTER TABLE Review ADD FOREIGN KEY (product_id) REFERENCES Product (id);",
    )?;
    let products: Vec<String> = (0..w.products).map(|i| format!("({i}, 'c{}')", i % 4)).collect();
    if !products.is_empty() {
        s.run(&format!("INSERT INTO Product VALUES {}", products.join(", ")))?;
    }
    let reviews: Vec<String> = (0..w.reviews)
        .map(|i| format!("({i}, {}, 'review text {}')", i % w.products.max(1), i % w.distinct.max(1)))
        .collect();
    if !reviews.is_empty() {
        s.run(&format!("INSERT INTO Review VALUES {}", reviews.join(", ")))?;
    }
    Ok(s)
}

fn sorted(mut rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    rows.sort_by_cached_key(|r| format!("{r:?}"));
    rows
}

pub fn run_opt_ablation(w: &Workload) -> Result<Vec<AblationRow>, AblationError> {
    let mut out = Vec::new();
    let mut reference = None;
    for (variant, settings) in VARIANTS {
        let mut s = workload_session(w)?;
        if !settings.is_empty() {
            s.run(settings)?;
        }
        let started = Instant::now();
        let r = s.query(QUERY)?;
        let elapsed = started.elapsed();
        let rows = sorted(r.rows);
        match &reference {
            None => reference = Some(rows.clone()),
            Some(want) if *want != rows => return Err(AblationError::Mismatch(variant)),
            Some(_) => {}
        }
        let c = r.stats.counts;
        out.push(AblationRow {
            variant,
            calls: c.calls,
            cache_hits: c.cache_hits,
            input_tokens: c.input_tokens,
            rows: rows.len(),
            elapsed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_optimization_saves_calls_without_changing_rows() {
        let w = Workload { latency_ms: 0.0, ..Workload::default() };
        let rows = run_opt_ablation(&w).unwrap();
        let calls = |v: &str| rows.iter().find(|r| r.variant == v).unwrap().calls;
        let all = calls("all");
        assert!(rows[0].rows > 0);
        for v in ["no_dedup", "no_batching", "no_pull_up", "none"] {
            assert!(calls(v) > all, "{v}: {} vs {all}", calls(v));
        }
        // Threads change wall time, not the work done.
        assert_eq!(calls("no_parallelism"), all);
        // Nothing at all: one call per review.
        assert_eq!(calls("none"), w.reviews as u64);
    }
}
