//! Vectorized execution of logical plans.
//!
//! Every operator consumes and produces column chunks laid out in the order
//! of its plan node's schema. Pipelines are materialized between operators,
//! which keeps predict operators free to batch across chunk boundaries.

mod aggregate;
pub mod eval;
mod join;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use crate::catalog::ModelEntry;
use crate::error::{Error, Result};
use crate::plan::{Field, LogicalPlan, PredictInfo, PredictMode};
use crate::predict::{CallStatsSnapshot, PredictConfig, PredictOperator, PredictTask};
use crate::predictors::Predictor;
use crate::sql::Options;
use crate::storage::{rechunk, DataChunk, TableCatalog, DEFAULT_CHUNK_CAPACITY};
use crate::types::Value;

pub use eval::{eval, eval_mask, layout_of, Layout};

pub type BackendResolver<'a> = dyn Fn(&ModelEntry) -> Result<Arc<dyn Predictor>> + 'a;

/// Statistics of one predict operator, keyed by its pre-order index in the plan.
#[derive(Debug, Clone)]
pub struct PredictRecord {
    pub index: usize,
    pub model: String,
    pub mode: PredictMode,
    pub config: PredictConfig,
    pub stats: CallStatsSnapshot,
}

pub struct ExecContext<'a> {
    pub tables: &'a TableCatalog,
    pub capacity: usize,
    /// Session settings, the lowest-precedence layer of every predict config.
    pub session_options: Options,
    resolve: &'a BackendResolver<'a>,
    backends: HashMap<String, Arc<dyn Predictor>>,
    predicts: Vec<PredictRecord>,
    warnings: Vec<String>,
    next_predict: usize,
}

impl<'a> ExecContext<'a> {
    pub fn new(tables: &'a TableCatalog, resolve: &'a BackendResolver<'a>) -> Self {
        ExecContext {
            tables,
            capacity: DEFAULT_CHUNK_CAPACITY,
            session_options: Vec::new(),
            resolve,
            backends: HashMap::new(),
            predicts: Vec::new(),
            warnings: Vec::new(),
            next_predict: 0,
        }
    }

    pub fn predict_records(&self) -> Vec<PredictRecord> {
        let mut v = self.predicts.clone();
        v.sort_by_key(|r| r.index);
        v
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn backend(&mut self, model: &ModelEntry) -> Result<Arc<dyn Predictor>> {
        let key = model.name.to_ascii_lowercase();
        if let Some(b) = self.backends.get(&key) {
            return Ok(b.clone());
        }
        let b = (self.resolve)(model)?;
        b.load()?;
        self.backends.insert(key, b.clone());
        Ok(b)
    }

    fn operator(&mut self, info: &PredictInfo) -> Result<PredictOperator> {
        let config = PredictConfig::resolve(&[&self.session_options, &info.model.options, &info.options])?;
        let backend = self.backend(&info.model)?;
        Ok(PredictOperator::new(PredictTask::from_info(info), config, backend))
    }

    fn finish(&mut self, index: usize, info: &PredictInfo, op: &PredictOperator) {
        self.warnings.extend(op.take_warnings());
        self.predicts.push(PredictRecord {
            index,
            model: info.model.name.clone(),
            mode: info.mode,
            config: op.config().clone(),
            stats: op.stats(),
        });
    }
}

/// Runs `plan`; the chunks' columns follow `plan.schema()`.
pub fn execute(plan: &LogicalPlan, ctx: &mut ExecContext<'_>) -> Result<Vec<DataChunk>> {
    match plan {
        LogicalPlan::Get { table, fields, .. } => {
            let t = ctx.tables.get(table)?;
            let idx: Vec<usize> = fields
                .iter()
                .map(|f| {
                    t.column_index(&f.name).ok_or_else(|| Error::exec(format!("{table} has no column {}", f.name)))
                })
                .collect::<Result<_>>()?;
            Ok(t.scan(ctx.capacity)
                .into_iter()
                .map(|c| DataChunk::new(idx.iter().map(|&i| c.columns[i].clone()).collect()))
                .collect())
        }
        LogicalPlan::OneRow => Ok(vec![DataChunk::with_rows(1)]),
        LogicalPlan::Filter { input, predicate } => {
            let layout = layout_for(input);
            let chunks = execute(input, ctx)?;
            chunks
                .into_iter()
                .map(|c| Ok(c.select(&eval_mask(predicate, &c, &layout)?)))
                .filter(|c| !matches!(c, Ok(c) if c.row_count() == 0))
                .collect()
        }
        LogicalPlan::Project { input, items } => {
            let layout = layout_for(input);
            let chunks = execute(input, ctx)?;
            chunks
                .into_iter()
                .map(|c| {
                    let cols = items.iter().map(|(e, _)| eval(e, &c, &layout)).collect::<Result<Vec<_>>>()?;
                    Ok(if cols.is_empty() { DataChunk::with_rows(c.row_count()) } else { DataChunk::new(cols) })
                })
                .collect()
        }
        LogicalPlan::Join { left, right, condition, .. } => {
            let l = execute(left, ctx)?;
            let r = execute(right, ctx)?;
            join::execute_join(left, right, condition.as_ref(), l, r, ctx.capacity)
        }
        LogicalPlan::Aggregate { input, groups, aggs } => {
            let first_index = ctx.next_predict;
            ctx.next_predict += aggs.iter().filter(|a| a.predict.is_some()).count();
            let layout = layout_for(input);
            let chunks = execute(input, ctx)?;
            aggregate::execute_aggregate(&layout, groups, aggs, chunks, first_index, ctx)
        }
        LogicalPlan::Sort { input, keys } => {
            let layout = layout_for(input);
            let width = input.schema().len();
            let chunks = execute(input, ctx)?;
            let mut rows: Vec<Vec<Value>> = Vec::new();
            let mut sort_keys: Vec<Vec<Value>> = Vec::new();
            for c in &chunks {
                let cols = keys.iter().map(|k| eval(&k.expr, c, &layout)).collect::<Result<Vec<_>>>()?;
                for i in 0..c.row_count() {
                    rows.push(c.row(i));
                    sort_keys.push(cols.iter().map(|col| col[i].clone()).collect());
                }
            }
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| {
                for (k, key) in keys.iter().enumerate() {
                    let (x, y) = (&sort_keys[a][k], &sort_keys[b][k]);
                    // NULLs sort last in both directions.
                    let o = match (x.is_null(), y.is_null()) {
                        (false, false) if key.descending => y.sort_cmp(x),
                        _ => x.sort_cmp(y),
                    };
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                Ordering::Equal
            });
            let sorted = order.into_iter().map(|i| std::mem::take(&mut rows[i]));
            Ok(to_chunks(width, sorted, ctx.capacity))
        }
        LogicalPlan::Limit { input, limit } => {
            let chunks = execute(input, ctx)?;
            let mut left = *limit as usize;
            let mut out = Vec::new();
            for c in chunks {
                if left == 0 {
                    break;
                }
                let n = c.row_count().min(left);
                left -= n;
                let mask: Vec<bool> = (0..c.row_count()).map(|i| i < n).collect();
                out.push(if n == c.row_count() { c } else { c.select(&mask) });
            }
            Ok(out)
        }
        LogicalPlan::Predict { input, info, outputs } => execute_predict(input.as_deref(), info, outputs, ctx),
    }
}

fn execute_predict(
    input: Option<&LogicalPlan>,
    info: &PredictInfo,
    outputs: &[Field],
    ctx: &mut ExecContext<'_>,
) -> Result<Vec<DataChunk>> {
    let index = ctx.next_predict;
    ctx.next_predict += 1;
    let Some(input) = input else {
        let op = ctx.operator(info)?;
        let rows = op.generate();
        ctx.finish(index, info, &op);
        return Ok(to_chunks(outputs.len(), rows?, ctx.capacity));
    };
    let layout = layout_for(input);
    let chunks = rechunk(execute(input, ctx)?, input.schema().len(), ctx.capacity);
    let op = ctx.operator(info)?;
    let mut out = Vec::with_capacity(chunks.len());
    let mut result = Ok(());
    for mut c in chunks {
        let cols: Vec<&Vec<Value>> = match info
            .inputs
            .iter()
            .map(|i| {
                layout
                    .get(&i.column)
                    .map(|&k| &c.columns[k])
                    .ok_or_else(|| Error::exec(format!("prompt input {} is not available", i.key)))
            })
            .collect::<Result<Vec<_>>>()
        {
            Ok(cols) => cols,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        let rows: Vec<Vec<Value>> =
            (0..c.row_count()).map(|r| cols.iter().map(|col| col[r].clone()).collect()).collect();
        let predicted = match op.predict_rows(&rows) {
            Ok(p) => p,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        let mut new_cols: Vec<Vec<Value>> = vec![Vec::with_capacity(rows.len()); outputs.len()];
        for row in predicted {
            for (col, v) in new_cols.iter_mut().zip(row) {
                col.push(v);
            }
        }
        for col in new_cols {
            c.push_column(col);
        }
        out.push(c);
    }
    ctx.finish(index, info, &op);
    result.map(|_| out)
}

pub(crate) fn layout_for(plan: &LogicalPlan) -> Layout {
    layout_of(plan.schema().iter().map(|f| f.id))
}

pub(crate) fn to_chunks(width: usize, rows: impl IntoIterator<Item = Vec<Value>>, capacity: usize) -> Vec<DataChunk> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for r in rows {
        current.push(r);
        if current.len() == capacity.max(1) {
            out.push(DataChunk::from_rows(width, std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        out.push(DataChunk::from_rows(width, current));
    }
    out
}

/// All rows of `chunks`, in order.
pub fn collect_rows(chunks: &[DataChunk]) -> Vec<Vec<Value>> {
    chunks.iter().flat_map(|c| c.rows()).collect()
}
