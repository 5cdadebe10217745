use std::cmp::Ordering;
use std::collections::HashMap;

use super::eval::{eval, Layout};
use super::{to_chunks, ExecContext};
use crate::error::{Error, Result};
use crate::plan::{AggCall, AggFunc, Field, ScalarExpr};
use crate::storage::DataChunk;
use crate::types::{DataType, Value};

fn fold(func: AggFunc, out_type: DataType, values: &[&Value], rows: usize) -> Result<Value> {
    let present: Vec<&Value> = values.iter().copied().filter(|v| !v.is_null()).collect();
    Ok(match func {
        AggFunc::CountStar => Value::Integer(rows as i64),
        AggFunc::Count => Value::Integer(present.len() as i64),
        _ if present.is_empty() => Value::Null,
        AggFunc::Sum if out_type == DataType::Integer => {
            let mut acc: i64 = 0;
            for v in &present {
                if let Value::Integer(i) = v {
                    acc = acc.checked_add(*i).ok_or_else(|| Error::exec("integer overflow in SUM"))?;
                }
            }
            Value::Integer(acc)
        }
        AggFunc::Sum => Value::Double(present.iter().filter_map(|v| v.as_f64()).sum()),
        AggFunc::Avg => Value::Double(present.iter().filter_map(|v| v.as_f64()).sum::<f64>() / present.len() as f64),
        AggFunc::Min | AggFunc::Max => {
            let want = if func == AggFunc::Min { Ordering::Less } else { Ordering::Greater };
            let mut best = present[0];
            for v in &present[1..] {
                if v.sql_cmp(best) == Some(want) {
                    best = v;
                }
            }
            best.clone()
        }
        AggFunc::Semantic => unreachable!("semantic aggregates are evaluated by the model"),
    })
}

/// Hash aggregation. Groups are emitted in order of first appearance; with
/// no GROUP BY the result is a single row, even for empty input.
pub(super) fn execute_aggregate(
    layout: &Layout,
    groups: &[(ScalarExpr, Field)],
    aggs: &[AggCall],
    chunks: Vec<DataChunk>,
    first_index: usize,
    ctx: &mut ExecContext<'_>,
) -> Result<Vec<DataChunk>> {
    let mut keys: Vec<Vec<Value>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
    // Per aggregate, one column of argument values (or prompt inputs) over all rows.
    let mut args: Vec<Vec<Vec<Value>>> = vec![Vec::new(); aggs.len()];
    let mut row = 0usize;
    for c in &chunks {
        let gcols = groups.iter().map(|(e, _)| eval(e, c, layout)).collect::<Result<Vec<_>>>()?;
        for (a, agg) in aggs.iter().enumerate() {
            let cols: Vec<Vec<Value>> = match (&agg.arg, &agg.predict) {
                (_, Some(info)) => info
                    .inputs
                    .iter()
                    .map(|i| {
                        layout
                            .get(&i.column)
                            .map(|&k| c.columns[k].clone())
                            .ok_or_else(|| Error::exec(format!("prompt input {} is not available", i.key)))
                    })
                    .collect::<Result<_>>()?,
                (Some(e), None) => vec![eval(e, c, layout)?],
                (None, None) => Vec::new(),
            };
            for r in 0..c.row_count() {
                args[a].push(cols.iter().map(|col| col[r].clone()).collect());
            }
        }
        for r in 0..c.row_count() {
            let key: Vec<Value> = gcols.iter().map(|g| g[r].clone()).collect();
            let g = *index.entry(key.clone()).or_insert_with(|| {
                keys.push(key);
                members.push(Vec::new());
                keys.len() - 1
            });
            members[g].push(row);
            row += 1;
        }
    }
    if groups.is_empty() && keys.is_empty() {
        keys.push(Vec::new());
        members.push(Vec::new());
    }

    let mut results: Vec<Vec<Value>> = vec![Vec::with_capacity(aggs.len()); keys.len()];
    let mut predict_slot = first_index;
    for (a, agg) in aggs.iter().enumerate() {
        match &agg.predict {
            Some(info) => {
                let op = ctx.operator(info)?;
                // Empty groups get NULL without a call.
                let nonempty: Vec<usize> = (0..keys.len()).filter(|&g| !members[g].is_empty()).collect();
                let payload: Vec<Vec<Vec<Value>>> =
                    nonempty.iter().map(|&g| members[g].iter().map(|&r| args[a][r].clone()).collect()).collect();
                let outcome = op.aggregate(&payload);
                ctx.finish(predict_slot, info, &op);
                predict_slot += 1;
                let values = outcome?;
                let mut per_group = vec![Value::Null; keys.len()];
                for (g, v) in nonempty.into_iter().zip(values) {
                    per_group[g] = v.into_iter().next().unwrap_or(Value::Null);
                }
                for (g, v) in per_group.into_iter().enumerate() {
                    results[g].push(v);
                }
            }
            None => {
                for (g, rows) in members.iter().enumerate() {
                    let vals: Vec<&Value> = match agg.arg {
                        Some(_) => rows.iter().map(|&r| &args[a][r][0]).collect(),
                        None => Vec::new(),
                    };
                    results[g].push(fold(agg.func, agg.field.data_type, &vals, rows.len())?);
                }
            }
        }
    }
    let width = groups.len() + aggs.len();
    let rows = keys.into_iter().zip(results).map(|(mut k, r)| {
        k.extend(r);
        k
    });
    Ok(to_chunks(width, rows, ctx.capacity))
}
