//! A database session: catalogs, settings, and statement execution.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::debug;

use crate::catalog::ModelCatalog;
use crate::csv_io::{import_csv, ImportOptions};
use crate::error::{Error, Result};
use crate::exec::{collect_rows, execute, ExecContext, PredictRecord};
use crate::optimizer::{Optimizer, OptimizerRules, RewriteTrace};
use crate::plan::{bind_query, explain, explain_annotated, LogicalPlan};
use crate::predict::{CallCounts, PredictConfig, PREDICT_KEYS};
use crate::predictors::BackendFactory;
use crate::sql::{
    parse_statements, CreateModelStmt, ExplainMode, KeyDecl, ModelKind, OptionValue, Options, Query, SelectItem,
    Statement,
};
use crate::storage::{ForeignKey, Table, TableCatalog, DEFAULT_CHUNK_CAPACITY};
use crate::types::{ColumnSchema, DataType, Value};

/// Settings that belong to the session rather than to predict operators.
pub const SESSION_KEYS: &[&str] = &["optimizer_rules", "chunk_capacity", "merge_selectivity_threshold"];

#[derive(Debug, Clone, Default)]
pub struct QueryStats {
    pub counts: CallCounts,
    pub predicts: Vec<PredictRecord>,
    pub elapsed: Duration,
    pub trace: RewriteTrace,
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub columns: Vec<(String, DataType)>,
    pub rows: Vec<Vec<Value>>,
    pub stats: QueryStats,
}

#[derive(Debug, Clone)]
pub enum StatementResult {
    Rows(QueryResult),
    Explain(String),
    /// Completion tag of a statement without a result set, e.g. `INSERT 3`.
    Done(String),
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub result: StatementResult,
    pub notices: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn done(tag: impl Into<String>) -> Self {
        Outcome { result: StatementResult::Done(tag.into()), notices: Vec::new(), warnings: Vec::new() }
    }
}

pub struct Session {
    pub tables: TableCatalog,
    pub models: ModelCatalog,
    /// Predict settings from `SET`, the lowest-precedence option layer.
    settings: Options,
    rules: OptimizerRules,
    chunk_capacity: usize,
    factory: Arc<dyn BackendFactory>,
    last_stats: Option<QueryStats>,
}

impl Session {
    pub fn new(factory: Arc<dyn BackendFactory>) -> Self {
        Session {
            tables: TableCatalog::new(),
            models: ModelCatalog::in_memory(),
            settings: Vec::new(),
            rules: OptimizerRules::default(),
            chunk_capacity: DEFAULT_CHUNK_CAPACITY,
            factory,
            last_stats: None,
        }
    }

    /// A session whose model catalog and secrets persist under `dir`.
    pub fn open(dir: impl AsRef<Path>, factory: Arc<dyn BackendFactory>) -> Result<Self> {
        let mut s = Session::new(factory);
        s.models = ModelCatalog::open_dir(dir)?;
        Ok(s)
    }

    pub fn set_backend(&mut self, factory: Arc<dyn BackendFactory>) {
        self.factory = factory;
    }

    pub fn rules(&self) -> &OptimizerRules {
        &self.rules
    }

    pub fn settings(&self) -> &Options {
        &self.settings
    }

    /// Statistics of the most recent query, including EXPLAIN ANALYZE.
    pub fn last_stats(&self) -> Option<&QueryStats> {
        self.last_stats.as_ref()
    }

    /// Runs every statement in `sql`, stopping at the first error.
    pub fn run(&mut self, sql: &str) -> Result<Vec<Outcome>> {
        parse_statements(sql)?.iter().map(|s| self.execute(s)).collect()
    }

    /// Runs a single SELECT and returns its rows.
    pub fn query(&mut self, sql: &str) -> Result<QueryResult> {
        let mut outcomes = self.run(sql)?;
        match outcomes.pop().map(|o| o.result) {
            Some(StatementResult::Rows(r)) => Ok(r),
            _ => Err(Error::exec("statement did not return rows")),
        }
    }

    pub fn set(&mut self, name: &str, value: OptionValue) -> Result<()> {
        let key = name.to_ascii_lowercase();
        match key.as_str() {
            "optimizer_rules" => {
                let text = match &value {
                    OptionValue::Str(s) => s.clone(),
                    other => other.to_string(),
                };
                let threshold = self.rules.merge_selectivity_threshold;
                self.rules = OptimizerRules::parse(&text)?;
                self.rules.merge_selectivity_threshold = threshold;
            }
            "chunk_capacity" => match value.as_i64() {
                Some(n) if n >= 1 => self.chunk_capacity = n as usize,
                _ => return Err(Error::Config(format!("chunk_capacity expects a positive integer, got {value}"))),
            },
            "merge_selectivity_threshold" => match value.as_f64() {
                Some(x) if (0.0..=1.0).contains(&x) => self.rules.merge_selectivity_threshold = x,
                _ => {
                    return Err(Error::Config(format!(
                        "merge_selectivity_threshold expects a number in [0, 1], got {value}"
                    )))
                }
            },
            k if PREDICT_KEYS.contains(&k) => {
                // Validate before storing so a bad value fails at SET time.
                PredictConfig::resolve(&[&vec![(key.clone(), value.clone())]])?;
                self.settings.retain(|(k, _)| *k != key);
                self.settings.push((key, value));
            }
            _ => {
                let mut known: Vec<&str> = PREDICT_KEYS.to_vec();
                known.extend(SESSION_KEYS);
                return Err(Error::Config(format!("unknown setting '{name}' (known: {})", known.join(", "))));
            }
        }
        Ok(())
    }

    pub fn import_csv(&mut self, path: impl AsRef<Path>, name: &str, options: &ImportOptions) -> Result<usize> {
        if self.tables.contains(name) {
            return Err(Error::catalog(format!("table already exists: {name}")));
        }
        let table = import_csv(path, name, options)?;
        let n = table.row_count();
        self.tables.register(table);
        Ok(n)
    }

    pub fn execute(&mut self, stmt: &Statement) -> Result<Outcome> {
        debug!("executing {stmt}");
        match stmt {
            Statement::Select(q) => {
                let (plan, notices) = self.bind(q)?;
                let (result, warnings) = self.run_plan(plan)?;
                Ok(Outcome { result: StatementResult::Rows(result), notices, warnings })
            }
            Statement::Explain { mode, query } => self.explain(*mode, query),
            Statement::CreateModel(s) => self.create_model(s),
            Statement::DropModel { name } => {
                self.models.drop_model(name)?;
                Ok(Outcome::done("DROP MODEL"))
            }
            Statement::CreateTable { name, columns } => {
                if self.tables.contains(&name.value) {
                    return Err(Error::catalog(format!("table already exists: {}", name.value)));
                }
                check_unique(columns.iter().map(|(c, _)| c.value.as_str()))?;
                let schema = columns.iter().map(|(c, t)| ColumnSchema::new(c.value.clone(), *t)).collect();
                self.tables.register(Table::new(name.value.clone(), schema));
                Ok(Outcome::done("CREATE TABLE"))
            }
            Statement::CreateTableAs { name, query } => {
                if self.tables.contains(&name.value) {
                    return Err(Error::catalog(format!("table already exists: {}", name.value)));
                }
                let (plan, notices) = self.bind(query)?;
                let (result, warnings) = self.run_plan(plan)?;
                check_unique(result.columns.iter().map(|(c, _)| c.as_str()))?;
                let schema = result.columns.iter().map(|(c, t)| ColumnSchema::new(c.clone(), *t)).collect();
                let n = result.rows.len();
                self.tables.register(Table::from_rows(name.value.clone(), schema, result.rows));
                Ok(Outcome { result: StatementResult::Done(format!("SELECT {n}")), notices, warnings })
            }
            Statement::Insert { table, rows } => self.insert(&table.value, rows),
            Statement::CreateSecret { name, value } => {
                self.models.secrets.insert(name, value)?;
                Ok(Outcome::done("CREATE SECRET"))
            }
            Statement::DropTable { name } => {
                self.tables.drop_table(&name.value)?;
                Ok(Outcome::done("DROP TABLE"))
            }
            Statement::Set { name, value } => {
                self.set(name, value.clone())?;
                Ok(Outcome::done("SET"))
            }
            Statement::AlterTableAddKey { table, key } => {
                self.add_key(&table.value, key)?;
                Ok(Outcome::done("ALTER TABLE"))
            }
        }
    }

    fn bind(&self, q: &Query) -> Result<(LogicalPlan, Vec<String>)> {
        let bound = bind_query(q, &self.tables, &self.models)?;
        Ok((bound.plan, bound.notices))
    }

    pub fn optimize(&self, plan: LogicalPlan) -> (LogicalPlan, RewriteTrace) {
        Optimizer::new(&self.tables, self.rules.clone()).optimize(plan)
    }

    /// Optimizes and executes a bound plan. Hidden columns are dropped from the result.
    pub fn run_plan(&mut self, plan: LogicalPlan) -> Result<(QueryResult, Vec<String>)> {
        let (plan, trace) = self.optimize(plan);
        let started = Instant::now();
        let (chunks, predicts, warnings) = self.execute_plan(&plan);
        let elapsed = started.elapsed();
        let mut counts = CallCounts::default();
        for p in &predicts {
            counts.add(&p.stats.counts);
        }
        let stats = QueryStats { counts, predicts, elapsed, trace };
        self.last_stats = Some(stats.clone());
        let chunks = chunks?;
        let schema = plan.schema();
        let keep: Vec<usize> = (0..schema.len()).filter(|&i| !schema[i].hidden).collect();
        let columns = keep.iter().map(|&i| (schema[i].name.clone(), schema[i].data_type)).collect();
        let rows = collect_rows(&chunks).into_iter().map(|r| keep.iter().map(|&i| r[i].clone()).collect()).collect();
        Ok((QueryResult { columns, rows, stats }, warnings))
    }

    fn execute_plan(
        &self,
        plan: &LogicalPlan,
    ) -> (Result<Vec<crate::storage::DataChunk>>, Vec<PredictRecord>, Vec<String>) {
        let factory = self.factory.clone();
        let secrets = &self.models.secrets;
        let resolver = move |entry: &crate::catalog::ModelEntry| factory.create(entry, secrets);
        let mut ctx = ExecContext::new(&self.tables, &resolver);
        ctx.capacity = self.chunk_capacity;
        ctx.session_options = self.settings.clone();
        let result = execute(plan, &mut ctx);
        (result, ctx.predict_records(), ctx.warnings().to_vec())
    }

    fn explain(&mut self, mode: ExplainMode, query: &Query) -> Result<Outcome> {
        let (plan, notices) = self.bind(query)?;
        let text = match mode {
            ExplainMode::Logical => explain(&plan),
            ExplainMode::Optimized => {
                let (optimized, trace) = self.optimize(plan);
                let mut text = explain(&optimized);
                for s in &trace.steps {
                    text.push_str(&format!("-- applied {}\n", s.rule));
                }
                for d in &trace.declines {
                    text.push_str(&format!("-- declined {}: {}\n", d.rule, d.reason));
                }
                text
            }
            ExplainMode::Analyze => {
                let (optimized, _) = self.optimize(plan.clone());
                let (result, warnings) = self.run_plan(plan)?;
                let records = &result.stats.predicts;
                let mut text = explain_annotated(&optimized, &mut |i, _| {
                    records.iter().find(|r| r.index == i).map(analyze_lines).unwrap_or_default()
                });
                let c = &result.stats.counts;
                text.push_str(&format!(
                    "-- rows={} calls={} retries={} cache_hits={} input_tokens={} output_tokens={}\n",
                    result.rows.len(),
                    c.calls,
                    c.retries,
                    c.cache_hits,
                    c.input_tokens,
                    c.output_tokens
                ));
                return Ok(Outcome { result: StatementResult::Explain(text), notices, warnings });
            }
        };
        Ok(Outcome { result: StatementResult::Explain(text), notices, warnings: Vec::new() })
    }

    fn create_model(&mut self, s: &CreateModelStmt) -> Result<Outcome> {
        let mut warnings = Vec::new();
        // Local model files may be registered before they exist.
        let local =
            s.kind == ModelKind::Tabular || (s.api.is_none() && (s.path.contains('/') || s.path.contains('\\')));
        if local && !Path::new(&s.path).exists() {
            warnings.push(format!("model file {} does not exist yet", s.path));
        }
        PredictConfig::resolve(&[&s.options])?;
        self.models.create_model(s, &self.tables)?;
        Ok(Outcome { result: StatementResult::Done("CREATE MODEL".into()), notices: Vec::new(), warnings })
    }

    fn insert(&mut self, table: &str, rows: &[Vec<crate::sql::Expr>]) -> Result<Outcome> {
        let t = self.tables.get(table)?;
        let width = t.schema.len();
        let mut values = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::bind(format!(
                    "INSERT row {} has {} values, {table} has {width} columns",
                    r + 1,
                    row.len()
                )));
            }
            let q = Query {
                projection: row.iter().map(|e| SelectItem::Expr { expr: e.clone(), alias: None }).collect(),
                ..Default::default()
            };
            let (plan, _) = self.bind(&q)?;
            if plan.predict_count() > 0 {
                return Err(Error::bind("INSERT values cannot call models"));
            }
            let (result, _) = self.run_plan(plan)?;
            let got = result.rows.into_iter().next().unwrap_or_default();
            let mut out = Vec::with_capacity(width);
            for (v, col) in got.into_iter().zip(&t.schema) {
                out.push(cast_for_insert(v, col.data_type).ok_or_else(|| {
                    Error::bind(format!("value for column {} must be {}", col.name, col.data_type.keyword()))
                })?);
            }
            values.push(out);
        }
        let n = values.len();
        self.tables.update(table, |t| {
            let chunk = crate::storage::DataChunk::from_rows(width, values);
            t.append(chunk);
        })?;
        self.last_stats = None;
        Ok(Outcome::done(format!("INSERT {n}")))
    }

    fn add_key(&mut self, table: &str, key: &KeyDecl) -> Result<()> {
        let t = self.tables.get(table)?;
        let has = |t: &Table, c: &str| t.column_index(c).is_some();
        match key {
            KeyDecl::Primary(c) => {
                if !has(&t, c) {
                    return Err(Error::catalog(format!("{table} has no column {c}")));
                }
                let c = c.clone();
                self.tables.update(table, |t| t.keys.primary_key = Some(c))
            }
            KeyDecl::Foreign { column, ref_table, ref_column } => {
                if !has(&t, column) {
                    return Err(Error::catalog(format!("{table} has no column {column}")));
                }
                let r = self.tables.get(ref_table)?;
                if !has(&r, ref_column) {
                    return Err(Error::catalog(format!("{ref_table} has no column {ref_column}")));
                }
                let fk =
                    ForeignKey { column: column.clone(), ref_table: r.name.clone(), ref_column: ref_column.clone() };
                self.tables.update(table, |t| {
                    if !t.keys.foreign_keys.contains(&fk) {
                        t.keys.foreign_keys.push(fk);
                    }
                })
            }
        }
    }
}

fn analyze_lines(r: &PredictRecord) -> Vec<String> {
    let c = &r.stats.counts;
    vec![
        format!(
            "calls={} retries={} reprompts={} fallback_batches={} cache_hits={}",
            c.calls, c.retries, c.reprompts, c.fallback_batches, c.cache_hits
        ),
        format!(
            "rows_in={} rows_predicted={} failed_rows={} input_tokens={} output_tokens={}",
            c.rows_in, c.rows_predicted, c.failed_rows, c.input_tokens, c.output_tokens
        ),
        format!("batch_size={} n_threads={}", r.config.effective_batch(), r.config.n_threads),
    ]
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen: Vec<String> = Vec::new();
    for n in names {
        let k = n.to_ascii_lowercase();
        if seen.contains(&k) {
            return Err(Error::bind(format!("duplicate column name: {n}")));
        }
        seen.push(k);
    }
    Ok(())
}

fn cast_for_insert(v: Value, ty: DataType) -> Option<Value> {
    match (v, ty) {
        (Value::Null, _) => Some(Value::Null),
        (Value::Integer(i), DataType::Double) => Some(Value::Double(i as f64)),
        (Value::Varchar(s), t) if t != DataType::Varchar => Value::parse_as(&s, t),
        (v, t) if v.data_type() == Some(t) => Some(v),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{MockFactory, MockPredictor};

    fn session(fixture: &str) -> Session {
        let mock = Arc::new(MockPredictor::parse(fixture).unwrap());
        Session::new(Arc::new(MockFactory { mock }))
    }

    const ECHO: &str = r#"{"format":"semaquery-mock","version":1}
{"default":true,"output":"echo"}"#;

    #[test]
    fn ddl_insert_and_select() {
        let mut s = session(ECHO);
        s.run("CREATE TABLE t (a INTEGER, b VARCHAR, c DOUBLE); INSERT INTO t VALUES (1, 'x', 2), (2, 'y', NULL);")
            .unwrap();
        let r = s.query("SELECT a, c FROM t WHERE a > 1").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Integer(2), Value::Null]]);
        let r = s.query("SELECT c FROM t ORDER BY a").unwrap();
        assert_eq!(r.rows[0], vec![Value::Double(2.0)]);
        assert_eq!(r.columns, vec![("c".to_string(), DataType::Double)]);
        assert!(s.run("INSERT INTO t VALUES (1)").is_err());
        assert!(s.run("INSERT INTO t VALUES ('q', 'x', 1)").is_err());
    }

    #[test]
    fn settings_are_validated() {
        let mut s = session(ECHO);
        assert!(s.run("SET batch_size = 8").is_ok());
        assert!(s.run("SET batch_size = 0").is_err());
        assert!(s.run("SET no_such_thing = 1").is_err());
        s.run("SET optimizer_rules = 'pull_up_predict'").unwrap();
        assert_eq!(s.rules().to_string(), "pull_up_predict");
        assert!(s.run("SET optimizer_rules = 'nope'").is_err());
    }

    #[test]
    fn semantic_query_counts_calls() {
        let mut s = session(ECHO);
        s.run("CREATE TABLE t (a VARCHAR); INSERT INTO t VALUES ('x'), ('y'), ('x');").unwrap();
        s.run("CREATE LLM MODEL m PATH 'mock'; SET batch_size = 2").unwrap();
        let r = s.query("SELECT LLM m (PROMPT 'copy {{a}} {b VARCHAR}') AS b FROM t").unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.columns[0].0, "b");
        // Two distinct inputs fit one batch.
        assert_eq!(r.stats.counts.calls, 1);
        assert_eq!(r.stats.counts.cache_hits, 1);
    }

    #[test]
    fn explain_analyze_reports_calls() {
        let mut s = session(ECHO);
        s.run("CREATE TABLE t (a VARCHAR); INSERT INTO t VALUES ('x'), ('y');").unwrap();
        s.run("CREATE LLM MODEL m PATH 'mock'").unwrap();
        let out = s.run("EXPLAIN ANALYZE SELECT LLM m (PROMPT 'copy {{a}} {b VARCHAR}') FROM t").unwrap();
        let StatementResult::Explain(text) = &out[0].result else { panic!() };
        assert!(text.contains("| calls=1"), "{text}");
        assert!(text.contains("-- rows=2 calls=1"), "{text}");
    }

    #[test]
    fn secrets_stay_out_of_output() {
        let mut s = session(ECHO);
        let out = s.run("CREATE SECRET key AS 'sk-very-secret'").unwrap();
        let StatementResult::Done(tag) = &out[0].result else { panic!() };
        assert!(!tag.contains("sk-very-secret"));
        s.run("CREATE LLM MODEL r PATH 'o4-mini' ON PROMPT API 'https://api.example.com/v1/' SECRET key").unwrap();
        let stmt = crate::sql::parse_statement("CREATE SECRET key AS 'sk-very-secret'").unwrap();
        assert!(!stmt.to_string().contains("sk-very-secret"));
    }

    #[test]
    fn alter_table_keys() {
        let mut s = session(ECHO);
        s.run("CREATE TABLE p (id INTEGER); CREATE TABLE c (id INTEGER, pid INTEGER);").unwrap();
        s.run("ALTER TABLE p ADD PRIMARY KEY (id); ALTER TABLE c ADD FOREIGN KEY (pid) REFERENCES p (id)").unwrap();
        let c = s.tables.get("c").unwrap();
        assert_eq!(c.keys.foreign_keys.len(), 1);
        assert!(s.run("ALTER TABLE c ADD FOREIGN KEY (nope) REFERENCES p (id)").is_err());
    }
}
