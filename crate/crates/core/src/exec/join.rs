use std::collections::HashMap;

use super::eval::{eval, eval_mask, layout_of};
use super::to_chunks;
use crate::error::Result;
use crate::plan::{conjoin, split_conjuncts, ColumnId, LogicalPlan, ScalarExpr};
use crate::sql::BinaryOp;
use crate::storage::DataChunk;
use crate::types::{DataType, Value};

struct EquiKey {
    left: ScalarExpr,
    right: ScalarExpr,
    /// Integer keys are widened when the other side is a double.
    widen: bool,
}

fn sides(expr: &ScalarExpr, left: &[ColumnId], right: &[ColumnId]) -> (bool, bool) {
    let cols = expr.columns();
    (
        !cols.is_empty() && cols.iter().all(|c| left.contains(c)),
        !cols.is_empty() && cols.iter().all(|c| right.contains(c)),
    )
}

fn split_condition(
    condition: Option<&ScalarExpr>,
    left: &[ColumnId],
    right: &[ColumnId],
) -> (Vec<EquiKey>, Option<ScalarExpr>) {
    let mut keys = Vec::new();
    let mut residual = Vec::new();
    for c in condition.cloned().map(split_conjuncts).unwrap_or_default() {
        if let ScalarExpr::Binary { op: BinaryOp::Eq, left: a, right: b } = &c {
            let (a_left, a_right) = sides(a, left, right);
            let (b_left, b_right) = sides(b, left, right);
            let pair = if a_left && b_right {
                Some((a.as_ref().clone(), b.as_ref().clone()))
            } else if a_right && b_left {
                Some((b.as_ref().clone(), a.as_ref().clone()))
            } else {
                None
            };
            if let Some((l, r)) = pair {
                let widen = l.data_type() != r.data_type()
                    && [l.data_type(), r.data_type()]
                        .iter()
                        .all(|t| matches!(t, Some(DataType::Integer | DataType::Double)));
                keys.push(EquiKey { left: l, right: r, widen });
                continue;
            }
        }
        residual.push(c);
    }
    (keys, conjoin(residual))
}

fn key_value(v: Value, widen: bool) -> Value {
    match v {
        Value::Integer(i) if widen => Value::Double(i as f64),
        other => other,
    }
}

fn concat(chunks: Vec<DataChunk>, width: usize) -> DataChunk {
    let rows: Vec<Vec<Value>> = chunks.iter().flat_map(|c| c.rows()).collect();
    DataChunk::from_rows(width, rows)
}

/// Inner join: a hash join on equality conjuncts with the rest as a residual
/// filter, or a nested loop when there are none. Output is left-major.
pub(super) fn execute_join(
    left: &LogicalPlan,
    right: &LogicalPlan,
    condition: Option<&ScalarExpr>,
    l: Vec<DataChunk>,
    r: Vec<DataChunk>,
    capacity: usize,
) -> Result<Vec<DataChunk>> {
    let lids: Vec<ColumnId> = left.schema().iter().map(|f| f.id).collect();
    let rids: Vec<ColumnId> = right.schema().iter().map(|f| f.id).collect();
    let width = lids.len() + rids.len();
    let l = concat(l, lids.len());
    let r = concat(r, rids.len());
    let (keys, residual) = split_condition(condition, &lids, &rids);

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if keys.is_empty() {
        for i in 0..l.row_count() {
            pairs.extend((0..r.row_count()).map(|j| (i, j)));
        }
    } else {
        let llay = layout_of(lids.iter().copied());
        let rlay = layout_of(rids.iter().copied());
        let lk: Vec<Vec<Value>> = keys.iter().map(|k| eval(&k.left, &l, &llay)).collect::<Result<_>>()?;
        let rk: Vec<Vec<Value>> = keys.iter().map(|k| eval(&k.right, &r, &rlay)).collect::<Result<_>>()?;
        let mut table: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
        let key_at = |cols: &[Vec<Value>], row: usize| -> Vec<Value> {
            keys.iter().zip(cols).map(|(ek, col)| key_value(col[row].clone(), ek.widen)).collect()
        };
        for j in 0..r.row_count() {
            let key = key_at(&rk, j);
            if key.iter().any(Value::is_null) {
                continue;
            }
            table.entry(key).or_default().push(j);
        }
        for i in 0..l.row_count() {
            let key = key_at(&lk, i);
            if let Some(js) = table.get(&key) {
                pairs.extend(js.iter().map(|&j| (i, j)));
            }
        }
    }

    let layout = layout_of(lids.iter().chain(&rids).copied());
    let mut out = Vec::new();
    for batch in pairs.chunks(capacity.max(1)) {
        let rows = batch.iter().map(|&(i, j)| {
            let mut row = l.row(i);
            row.extend(r.row(j));
            row
        });
        let mut chunk = DataChunk::from_rows(width, rows);
        if let Some(res) = &residual {
            chunk = chunk.select(&eval_mask(res, &chunk, &layout)?);
        }
        if chunk.row_count() > 0 {
            out.push(chunk);
        }
    }
    if out.len() > 1 {
        let rows: Vec<Vec<Value>> = out.iter().flat_map(|c| c.rows()).collect();
        return Ok(to_chunks(width, rows, capacity));
    }
    Ok(out)
}
