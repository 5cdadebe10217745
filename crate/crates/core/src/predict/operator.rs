//! The predict operator: dedup, batching, dispatch, retries and fallback.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value as Json;

use super::cache::{CacheKey, DedupCache};
use super::config::{ErrorPolicy, PredictConfig};
use super::output::{parse_structured_output, ParsedRow};
use super::render::{render_prompt, RenderKind, RenderedPrompt};
use super::stats::{CallStats, CallStatsSnapshot};
use crate::catalog::ModelEntry;
use crate::error::{BackendError, BackendErrorKind, Error, OutputError, Result};
use crate::plan::PredictInfo;
use crate::predictors::{PredictOutput, PredictRequest, PredictResponse, Predictor};
use crate::sql::PromptTemplate;
use crate::types::{DataType, Value};
use crate::util::estimate_tokens;

/// What a predict operator sends to its model, independent of plan shape.
#[derive(Debug, Clone)]
pub struct PredictTask {
    pub model: Arc<ModelEntry>,
    pub template: PromptTemplate,
    pub input_keys: Vec<String>,
    pub outputs: Vec<(String, DataType)>,
}

impl PredictTask {
    pub fn from_info(info: &PredictInfo) -> Self {
        PredictTask {
            model: info.model.clone(),
            template: info.prompt.clone(),
            input_keys: info.inputs.iter().map(|i| i.key.clone()).collect(),
            outputs: info.outputs(),
        }
    }
}

/// Spaces calls evenly at `rpm / 60` per second, with a burst of one.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(rpm: f64) -> Self {
        RateLimiter { interval: Duration::from_secs_f64(60.0 / rpm), next: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

enum AttemptError {
    Backend(BackendError),
    Output(OutputError),
}

impl AttemptError {
    fn message(&self) -> String {
        match self {
            AttemptError::Backend(e) => e.to_string(),
            AttemptError::Output(e) => e.to_string(),
        }
    }
}

enum UnitError {
    /// Stops the query regardless of error policy.
    Fatal(Error),
    /// The rows of this unit could not be predicted.
    Failed(String),
}

pub struct PredictOperator {
    task: PredictTask,
    config: PredictConfig,
    backend: Arc<dyn Predictor>,
    cache: Arc<DedupCache>,
    stats: Arc<CallStats>,
    limiter: Option<RateLimiter>,
    warnings: Mutex<Vec<String>>,
}

impl PredictOperator {
    pub fn new(task: PredictTask, config: PredictConfig, backend: Arc<dyn Predictor>) -> Self {
        let limiter = config.rate_limit_rpm.map(RateLimiter::per_minute);
        PredictOperator {
            task,
            config,
            backend,
            cache: Arc::new(DedupCache::new()),
            stats: Arc::new(CallStats::new()),
            limiter,
            warnings: Mutex::new(Vec::new()),
        }
    }

    /// Shares a cache with other operators of the same query.
    pub fn with_cache(mut self, cache: Arc<DedupCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn config(&self) -> &PredictConfig {
        &self.config
    }

    pub fn stats(&self) -> CallStatsSnapshot {
        self.stats.snapshot()
    }

    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut *self.warnings.lock().expect("warnings lock"))
    }

    fn warn(&self, msg: String) {
        log::warn!("{msg}");
        self.warnings.lock().expect("warnings lock").push(msg);
    }

    fn null_row(&self) -> Vec<Value> {
        vec![Value::Null; self.task.outputs.len()]
    }

    /// One output tuple per input tuple, in input order.
    pub fn predict_rows(&self, rows: &[Vec<Value>]) -> Result<Vec<Vec<Value>>> {
        self.stats.add_rows_in(rows.len() as u64);
        let mut results: Vec<Option<Vec<Value>>> = vec![None; rows.len()];
        let mut uniques: Vec<&Vec<Value>> = Vec::new();
        let mut assign: Vec<(usize, usize)> = Vec::new();
        let mut seen: HashMap<&Vec<Value>, usize> = HashMap::new();
        let dedup = self.config.use_dedup;
        let hash = self.task.template.template_hash();
        for (i, r) in rows.iter().enumerate() {
            if !r.is_empty() && r.iter().all(Value::is_null) {
                results[i] = Some(self.null_row());
                continue;
            }
            if dedup {
                let key = CacheKey { model: self.task.model.name.clone(), template_hash: hash, inputs: r.clone() };
                if let Some(v) = self.cache.get(&key) {
                    self.stats.add_cache_hits(1);
                    results[i] = Some(v);
                    continue;
                }
                if let Some(&u) = seen.get(r) {
                    self.stats.add_cache_hits(1);
                    assign.push((i, u));
                    continue;
                }
                seen.insert(r, uniques.len());
            }
            assign.push((i, uniques.len()));
            uniques.push(r);
        }

        let outcomes = self.dispatch(&uniques)?;
        if dedup {
            for (r, out) in uniques.iter().zip(&outcomes) {
                if let Some(v) = out {
                    let key =
                        CacheKey { model: self.task.model.name.clone(), template_hash: hash, inputs: (*r).clone() };
                    self.cache.insert(key, v.clone());
                }
            }
        }
        for (i, u) in assign {
            results[i] = Some(outcomes[u].clone().unwrap_or_else(|| self.null_row()));
        }
        Ok(results.into_iter().map(|r| r.expect("every row assigned")).collect())
    }

    fn dispatch(&self, uniques: &[&Vec<Value>]) -> Result<Vec<Option<Vec<Value>>>> {
        let json_rows: Vec<Vec<Json>> = uniques.iter().map(|r| r.iter().map(Value::to_json).collect()).collect();
        let batches = self.form_batches(&json_rows);
        let mut outcomes: Vec<Option<Vec<Value>>> = vec![None; uniques.len()];
        let mut flagged = 0u64;

        let phase1 = self.run_pool(batches.len(), |b| {
            let range = batches[b].clone();
            let single = range.len() == 1;
            self.run_unit(&json_rows[range.clone()], RenderKind::Rows, Some(range.len()), single)
        });
        let mut singles: Vec<usize> = Vec::new();
        let mut failures: Vec<String> = Vec::new();
        for (range, res) in batches.iter().zip(phase1) {
            match res {
                Ok(parsed) => {
                    for (i, p) in range.clone().zip(parsed) {
                        flagged += p.flagged as u64;
                        outcomes[i] = Some(p.values);
                    }
                }
                Err(UnitError::Fatal(e)) => return Err(e),
                Err(UnitError::Failed(msg)) if range.len() == 1 => failures.push(msg),
                Err(UnitError::Failed(_)) => {
                    self.stats.add_fallback_batches(1);
                    singles.extend(range.clone());
                }
            }
        }

        let phase2 = self.run_pool(singles.len(), |k| {
            let i = singles[k];
            self.run_unit(&json_rows[i..i + 1], RenderKind::Rows, Some(1), true)
        });
        for (&i, res) in singles.iter().zip(phase2) {
            match res {
                Ok(mut parsed) => {
                    let p = parsed.remove(0);
                    flagged += p.flagged as u64;
                    outcomes[i] = Some(p.values);
                }
                Err(UnitError::Fatal(e)) => return Err(e),
                Err(UnitError::Failed(msg)) => failures.push(msg),
            }
        }

        let predicted = outcomes.iter().filter(|o| o.is_some()).count() as u64;
        self.stats.add_rows_predicted(predicted);
        self.note_flagged(flagged);
        self.note_failures(failures.len(), uniques.len(), failures.last())?;
        Ok(outcomes)
    }

    fn note_flagged(&self, flagged: u64) {
        if flagged > 0 {
            self.stats.add_flagged_rows(flagged);
            self.warn(format!(
                "model {}: {flagged} predicted rows had missing or mistyped fields, set to NULL",
                self.task.model.name
            ));
        }
    }

    fn note_failures(&self, failed: usize, total: usize, last: Option<&String>) -> Result<()> {
        if failed == 0 {
            return Ok(());
        }
        self.stats.add_failed_rows(failed as u64);
        let last = last.map(String::as_str).unwrap_or("unknown error");
        let msg = format!(
            "model {}: {failed} of {total} rows failed after retries (last error: {last})",
            self.task.model.name
        );
        match self.config.error_policy {
            ErrorPolicy::Fail => Err(Error::Execution(msg)),
            ErrorPolicy::Null => {
                self.warn(format!("{msg}; their outputs are NULL"));
                Ok(())
            }
        }
    }

    fn form_batches(&self, rows: &[Vec<Json>]) -> Vec<Range<usize>> {
        let b = self.config.effective_batch().max(1);
        let Some(limit) = self.config.max_prompt_chars else {
            return (0..rows.len()).step_by(b).map(|s| s..(s + b).min(rows.len())).collect();
        };
        let mut out = Vec::new();
        let mut start = 0;
        while start < rows.len() {
            let mut end = start + 1;
            if self.render(&rows[start..end], RenderKind::Rows, false).char_len() > limit {
                self.warn(format!(
                    "model {}: a single row exceeds max_prompt_chars ({limit}); sent alone",
                    self.task.model.name
                ));
            }
            while end < rows.len()
                && end - start < b
                && self.render(&rows[start..end + 1], RenderKind::Rows, false).char_len() <= limit
            {
                end += 1;
            }
            out.push(start..end);
            start = end;
        }
        out
    }

    fn render(&self, rows: &[Vec<Json>], kind: RenderKind, strict: bool) -> RenderedPrompt {
        render_prompt(&self.task.template, &self.task.outputs, &self.task.input_keys, rows, kind, strict)
    }

    /// Runs `n` work items on up to `n_threads` workers; results keep item order.
    fn run_pool<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
        let threads = self.config.n_threads.min(n);
        if threads <= 1 {
            return (0..n).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = f(i);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("slot filled")).collect()
    }

    fn run_unit(
        &self,
        rows: &[Vec<Json>],
        kind: RenderKind,
        expected: Option<usize>,
        allow_retry: bool,
    ) -> std::result::Result<Vec<ParsedRow>, UnitError> {
        let mut attempt: u32 = 0;
        loop {
            let err = match self.attempt(rows, kind, expected, attempt > 0) {
                Ok(parsed) => return Ok(parsed),
                Err(e) => e,
            };
            match &err {
                AttemptError::Backend(b) if b.kind == BackendErrorKind::Config => {
                    return Err(UnitError::Fatal(Error::Backend(b.clone())))
                }
                AttemptError::Backend(b) if b.kind == BackendErrorKind::Permanent => {
                    return Err(UnitError::Failed(err.message()))
                }
                _ => {}
            }
            if !allow_retry || attempt >= self.config.max_retries {
                return Err(UnitError::Failed(err.message()));
            }
            let backoff = self.config.retry_backoff_ms.saturating_mul(1 << attempt.min(16));
            if backoff > 0 {
                thread::sleep(Duration::from_millis(backoff));
            }
            attempt += 1;
        }
    }

    /// One attempt, with a single stricter re-prompt if the reply does not parse.
    fn attempt(
        &self,
        rows: &[Vec<Json>],
        kind: RenderKind,
        expected: Option<usize>,
        is_retry: bool,
    ) -> std::result::Result<Vec<ParsedRow>, AttemptError> {
        let resp = self.invoke(rows, kind, false, is_retry).map_err(AttemptError::Backend)?;
        match self.parse(resp, expected) {
            Err(OutputError::Malformed(_)) => {
                self.stats.add_reprompts(1);
                let resp = self.invoke(rows, kind, true, false).map_err(AttemptError::Backend)?;
                self.parse(resp, expected).map_err(AttemptError::Output)
            }
            other => other.map_err(AttemptError::Output),
        }
    }

    fn invoke(
        &self,
        rows: &[Vec<Json>],
        kind: RenderKind,
        strict: bool,
        is_retry: bool,
    ) -> std::result::Result<PredictResponse, BackendError> {
        let prompt = self.render(rows, kind, strict);
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        if is_retry {
            self.stats.add_retries(1);
        } else {
            self.stats.add_calls(1);
        }
        let req = PredictRequest {
            model: &self.task.model,
            prompt: &prompt,
            template: &self.task.template,
            input_keys: &self.task.input_keys,
            rows,
            outputs: &self.task.outputs,
            kind,
            strict,
            config: &self.config,
        };
        let start = Instant::now();
        let resp = match kind {
            RenderKind::Generation { .. } => self.backend.scan_chunk(&req),
            _ => self.backend.predict_chunk(&req),
        };
        self.stats.record_call_time(start.elapsed());
        let resp = resp?;
        self.stats.add_transport_retries(resp.transport_retries as u64);
        let (input, output) = match (&resp.usage, &resp.output) {
            (Some(u), _) => (u.input_tokens, u.output_tokens),
            (None, PredictOutput::Text(t)) => (prompt.input_tokens(), estimate_tokens(t)),
            (None, PredictOutput::Records(_)) => (0, 0),
        };
        self.stats.add_input_tokens(input);
        self.stats.add_output_tokens(output);
        Ok(resp)
    }

    fn parse(
        &self,
        resp: PredictResponse,
        expected: Option<usize>,
    ) -> std::result::Result<Vec<ParsedRow>, OutputError> {
        match resp.output {
            PredictOutput::Text(t) => parse_structured_output(&t, &self.task.outputs, expected),
            PredictOutput::Records(recs) => {
                if let Some(n) = expected {
                    if recs.len() != n {
                        return Err(OutputError::RowCountMismatch { expected: n, actual: recs.len() });
                    }
                }
                let width = self.task.outputs.len();
                Ok(recs
                    .into_iter()
                    .map(|values| {
                        let flagged = values.len() != width;
                        let mut values = values;
                        values.resize(width, Value::Null);
                        ParsedRow { values, flagged }
                    })
                    .collect())
            }
        }
    }

    /// Table generation: one call, truncated to `max_generated_rows`.
    pub fn generate(&self) -> Result<Vec<Vec<Value>>> {
        let max = self.config.max_generated_rows;
        match self.run_unit(&[], RenderKind::Generation { max_rows: max }, None, true) {
            Ok(mut rows) => {
                if rows.len() > max {
                    self.warn(format!(
                        "model {}: generated {} rows, truncated to max_generated_rows = {max}",
                        self.task.model.name,
                        rows.len()
                    ));
                    rows.truncate(max);
                }
                self.stats.add_rows_predicted(rows.len() as u64);
                self.note_flagged(rows.iter().filter(|r| r.flagged).count() as u64);
                Ok(rows.into_iter().map(|r| r.values).collect())
            }
            Err(UnitError::Fatal(e)) => Err(e),
            // There are no rows to fill with NULLs, so the error policy does not apply.
            Err(UnitError::Failed(msg)) => {
                Err(Error::Execution(format!("model {}: generation failed after retries: {msg}", self.task.model.name)))
            }
        }
    }

    /// Semantic aggregation: one call per group. Each group is given as its
    /// rows of input values; each input key receives the group's non-null
    /// values as a JSON array.
    pub fn aggregate(&self, groups: &[Vec<Vec<Value>>]) -> Result<Vec<Vec<Value>>> {
        self.stats.add_rows_in(groups.iter().map(|g| g.len() as u64).sum());
        let payloads: Vec<Vec<Json>> = groups
            .iter()
            .map(|g| {
                (0..self.task.input_keys.len())
                    .map(|k| Json::Array(g.iter().filter(|r| !r[k].is_null()).map(|r| r[k].to_json()).collect()))
                    .collect()
            })
            .collect();
        let results =
            self.run_pool(groups.len(), |i| self.run_unit(&payloads[i..i + 1], RenderKind::Group, Some(1), true));
        let mut out = Vec::with_capacity(groups.len());
        let mut failures = Vec::new();
        let mut flagged = 0;
        for res in results {
            match res {
                Ok(mut parsed) => {
                    let p = parsed.remove(0);
                    flagged += p.flagged as u64;
                    out.push(p.values);
                }
                Err(UnitError::Fatal(e)) => return Err(e),
                Err(UnitError::Failed(msg)) => {
                    failures.push(msg);
                    out.push(self.null_row());
                }
            }
        }
        self.stats.add_rows_predicted((groups.len() - failures.len()) as u64);
        self.note_flagged(flagged);
        self.note_failures(failures.len(), groups.len(), failures.last())?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::ModelKind;
    use std::sync::atomic::AtomicU64;

    /// Answers every row with the length of its first input; fails batches
    /// larger than `fail_above` and the first `fail_first` calls.
    struct LenBackend {
        fail_above: usize,
        fail_first: u64,
        calls: AtomicU64,
    }

    impl LenBackend {
        fn new() -> Self {
            LenBackend { fail_above: usize::MAX, fail_first: 0, calls: AtomicU64::new(0) }
        }
    }

    impl Predictor for LenBackend {
        fn name(&self) -> &str {
            "len"
        }

        fn predict_chunk(&self, req: &PredictRequest<'_>) -> std::result::Result<PredictResponse, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first || req.rows.len() > self.fail_above {
                return Err(BackendError::retryable("scripted failure"));
            }
            let items: Vec<Json> = req
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| serde_json::json!({"row_id": i, "n": r[0].as_str().map_or(0, |s| s.len())}))
                .collect();
            Ok(PredictResponse::text(Json::Array(items).to_string()))
        }
    }

    fn task() -> PredictTask {
        let model = ModelEntry {
            name: "m".into(),
            path: "p".into(),
            kind: ModelKind::Llm,
            on_prompt: true,
            base_api: None,
            secret: None,
            relation: None,
            input_set: None,
            output_set: None,
            options: Vec::new(),
        };
        PredictTask {
            model: Arc::new(model),
            template: PromptTemplate::parse("length of {{s}} is {n INTEGER}").unwrap(),
            input_keys: vec!["s".into()],
            outputs: vec![("n".into(), DataType::Integer)],
        }
    }

    fn cfg() -> PredictConfig {
        PredictConfig { retry_backoff_ms: 0, ..PredictConfig::default() }
    }

    fn rows(n: usize, distinct: usize) -> Vec<Vec<Value>> {
        (0..n).map(|i| vec![Value::Varchar("x".repeat(i % distinct + 1))]).collect()
    }

    #[test]
    fn dedup_collapses_repeated_inputs() {
        let op = PredictOperator::new(task(), cfg(), Arc::new(LenBackend::new()));
        let out = op.predict_rows(&rows(1000, 50)).unwrap();
        assert_eq!(out[51], vec![Value::Integer(2)]);
        assert_eq!(op.stats().counts.calls, 4);
        let off =
            PredictOperator::new(task(), PredictConfig { use_dedup: false, ..cfg() }, Arc::new(LenBackend::new()));
        let out2 = off.predict_rows(&rows(1000, 50)).unwrap();
        assert_eq!(out, out2);
        assert_eq!(off.stats().counts.calls, 63);
    }

    #[test]
    fn failed_batch_falls_back_to_single_rows() {
        let backend = LenBackend { fail_above: 1, ..LenBackend::new() };
        let op = PredictOperator::new(task(), cfg(), Arc::new(backend));
        let out = op.predict_rows(&rows(16, 16)).unwrap();
        assert_eq!(out[3], vec![Value::Integer(4)]);
        let c = op.stats().counts;
        assert_eq!((c.calls, c.fallback_batches, c.retries), (17, 1, 0));
    }

    #[test]
    fn single_rows_are_retried_then_nulled() {
        let backend = LenBackend { fail_first: 10, ..LenBackend::new() };
        let op = PredictOperator::new(task(), PredictConfig { n_threads: 1, ..cfg() }, Arc::new(backend));
        let out = op.predict_rows(&[vec![Value::Varchar("abc".into())]]).unwrap();
        assert_eq!(out, vec![vec![Value::Null]]);
        let c = op.stats().counts;
        assert_eq!((c.calls, c.retries, c.failed_rows), (1, 2, 1));
        assert_eq!(op.take_warnings().len(), 1);

        let strict = PredictConfig { error_policy: ErrorPolicy::Fail, ..cfg() };
        let op = PredictOperator::new(task(), strict, Arc::new(LenBackend { fail_first: 10, ..LenBackend::new() }));
        assert!(op.predict_rows(&[vec![Value::Varchar("abc".into())]]).is_err());
    }

    #[test]
    fn null_inputs_skip_the_model() {
        let op = PredictOperator::new(task(), cfg(), Arc::new(LenBackend::new()));
        let out = op.predict_rows(&[vec![Value::Null], vec![Value::Null]]).unwrap();
        assert_eq!(out, vec![vec![Value::Null], vec![Value::Null]]);
        assert_eq!(op.stats().counts.calls, 0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let input = rows(300, 300);
        let run = |t: usize| {
            let op = PredictOperator::new(
                task(),
                PredictConfig { n_threads: t, batch_size: 4, ..cfg() },
                Arc::new(LenBackend::new()),
            );
            (op.predict_rows(&input).unwrap(), op.stats().counts)
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(16));
    }

    #[test]
    fn prompt_limit_splits_batches() {
        let limit = render_prompt(&task().template, &task().outputs, &task().input_keys, &[], RenderKind::Rows, false)
            .char_len()
            + 60;
        let c = PredictConfig { max_prompt_chars: Some(limit), ..cfg() };
        let op = PredictOperator::new(task(), c, Arc::new(LenBackend::new()));
        op.predict_rows(&rows(16, 16)).unwrap();
        assert!(op.stats().counts.calls > 1);
    }

    #[test]
    fn limiter_spaces_calls() {
        let l = RateLimiter::per_minute(6000.0);
        let start = Instant::now();
        for _ in 0..4 {
            l.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(29));
    }

    #[test]
    fn groups_send_arrays() {
        let op = PredictOperator::new(task(), cfg(), Arc::new(LenBackend::new()));
        let out = op.aggregate(&[rows(3, 3), rows(1, 1)]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(op.stats().counts.calls, 2);
    }
}
