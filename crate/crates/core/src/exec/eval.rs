//! Column-at-a-time expression evaluation with SQL three-valued logic.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::plan::{ColumnId, ScalarExpr, ScalarFunc};
use crate::sql::{BinaryOp, UnaryOp};
use crate::storage::DataChunk;
use crate::types::Value;

/// Position of each visible column in a chunk.
pub type Layout = HashMap<ColumnId, usize>;

pub fn layout_of(ids: impl IntoIterator<Item = ColumnId>) -> Layout {
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

pub fn eval(expr: &ScalarExpr, chunk: &DataChunk, layout: &Layout) -> Result<Vec<Value>> {
    let n = chunk.row_count();
    match expr {
        ScalarExpr::Column { id, name, .. } => {
            let i = *layout.get(id).ok_or_else(|| Error::exec(format!("column {name} is not available here")))?;
            Ok(chunk.columns[i].clone())
        }
        ScalarExpr::Literal(v) => Ok(vec![v.clone(); n]),
        ScalarExpr::Unary { op, expr } => {
            let v = eval(expr, chunk, layout)?;
            v.into_iter().map(|x| unary(*op, x)).collect()
        }
        ScalarExpr::IsNull { expr, negated } => {
            let v = eval(expr, chunk, layout)?;
            Ok(v.into_iter().map(|x| Value::Boolean(x.is_null() != *negated)).collect())
        }
        ScalarExpr::Binary { op, left, right } => {
            let l = eval(left, chunk, layout)?;
            let r = eval(right, chunk, layout)?;
            l.into_iter().zip(r).map(|(a, b)| binary(*op, a, b)).collect()
        }
        ScalarExpr::Function { func, args } => {
            let cols: Vec<Vec<Value>> = args.iter().map(|a| eval(a, chunk, layout)).collect::<Result<_>>()?;
            (0..n)
                .map(|i| {
                    let row: Vec<&Value> = cols.iter().map(|c| &c[i]).collect();
                    function(*func, &row)
                })
                .collect()
        }
    }
}

/// Rows where `expr` is TRUE; FALSE and NULL both reject.
pub fn eval_mask(expr: &ScalarExpr, chunk: &DataChunk, layout: &Layout) -> Result<Vec<bool>> {
    Ok(eval(expr, chunk, layout)?.into_iter().map(|v| v.as_bool() == Some(true)).collect())
}

fn unary(op: UnaryOp, v: Value) -> Result<Value> {
    Ok(match (op, v) {
        (_, Value::Null) => Value::Null,
        (UnaryOp::Not, Value::Boolean(b)) => Value::Boolean(!b),
        (UnaryOp::Minus, Value::Integer(i)) => {
            Value::Integer(i.checked_neg().ok_or_else(|| Error::exec("integer overflow in negation"))?)
        }
        (UnaryOp::Minus, Value::Double(d)) => Value::Double(-d),
        (op, v) => return Err(Error::exec(format!("cannot apply {op:?} to {v}"))),
    })
}

fn truth(v: &Value) -> Option<bool> {
    v.as_bool()
}

pub fn binary(op: BinaryOp, a: Value, b: Value) -> Result<Value> {
    match op {
        BinaryOp::And => Ok(match (truth(&a), truth(&b)) {
            (Some(false), _) | (_, Some(false)) => Value::Boolean(false),
            (Some(true), Some(true)) => Value::Boolean(true),
            _ => Value::Null,
        }),
        BinaryOp::Or => Ok(match (truth(&a), truth(&b)) {
            (Some(true), _) | (_, Some(true)) => Value::Boolean(true),
            (Some(false), Some(false)) => Value::Boolean(false),
            _ => Value::Null,
        }),
        _ if a.is_null() || b.is_null() => Ok(Value::Null),
        op if op.is_comparison() => Ok(match a.sql_cmp(&b) {
            None => Value::Null,
            Some(o) => Value::Boolean(match op {
                BinaryOp::Eq => o == Ordering::Equal,
                BinaryOp::NotEq => o != Ordering::Equal,
                BinaryOp::Lt => o == Ordering::Less,
                BinaryOp::LtEq => o != Ordering::Greater,
                BinaryOp::Gt => o == Ordering::Greater,
                _ => o != Ordering::Less,
            }),
        }),
        BinaryOp::Concat => Ok(Value::Varchar(a.to_text() + &b.to_text())),
        _ => arithmetic(op, a, b),
    }
}

fn arithmetic(op: BinaryOp, a: Value, b: Value) -> Result<Value> {
    let overflow = || Error::exec(format!("integer overflow in {}", op.symbol()));
    if let (Value::Integer(x), Value::Integer(y)) = (&a, &b) {
        let (x, y) = (*x, *y);
        return Ok(match op {
            BinaryOp::Plus => Value::Integer(x.checked_add(y).ok_or_else(overflow)?),
            BinaryOp::Minus => Value::Integer(x.checked_sub(y).ok_or_else(overflow)?),
            BinaryOp::Multiply => Value::Integer(x.checked_mul(y).ok_or_else(overflow)?),
            BinaryOp::Divide if y == 0 => Value::Null,
            BinaryOp::Divide => Value::Double(x as f64 / y as f64),
            BinaryOp::Modulo if y == 0 => Value::Null,
            BinaryOp::Modulo => Value::Integer(x.checked_rem(y).ok_or_else(overflow)?),
            _ => unreachable!("non-arithmetic operator"),
        });
    }
    let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
        return Err(Error::exec(format!("cannot apply {} to {a} and {b}", op.symbol())));
    };
    Ok(match op {
        BinaryOp::Plus => Value::Double(x + y),
        BinaryOp::Minus => Value::Double(x - y),
        BinaryOp::Multiply => Value::Double(x * y),
        BinaryOp::Divide | BinaryOp::Modulo if y == 0.0 => Value::Null,
        BinaryOp::Divide => Value::Double(x / y),
        BinaryOp::Modulo => Value::Double(x % y),
        _ => unreachable!("non-arithmetic operator"),
    })
}

fn function(func: ScalarFunc, args: &[&Value]) -> Result<Value> {
    if func == ScalarFunc::Coalesce {
        return Ok(args.iter().find(|v| !v.is_null()).map_or(Value::Null, |v| (*v).clone()));
    }
    let Some(first) = args.first() else {
        return Err(Error::exec(format!("{} needs an argument", func.name())));
    };
    if first.is_null() {
        return Ok(Value::Null);
    }
    Ok(match (func, first) {
        (ScalarFunc::Lower, v) => Value::Varchar(v.to_text().to_lowercase()),
        (ScalarFunc::Upper, v) => Value::Varchar(v.to_text().to_uppercase()),
        (ScalarFunc::Length, v) => Value::Integer(v.to_text().chars().count() as i64),
        (ScalarFunc::Abs, Value::Integer(i)) => {
            Value::Integer(i.checked_abs().ok_or_else(|| Error::exec("integer overflow in abs"))?)
        }
        (ScalarFunc::Abs, Value::Double(d)) => Value::Double(d.abs()),
        (ScalarFunc::Round, v) => {
            let x = v.as_f64().ok_or_else(|| Error::exec(format!("round expects a number, got {v}")))?;
            let digits = match args.get(1) {
                Some(Value::Integer(d)) => *d as i32,
                Some(Value::Null) => return Ok(Value::Null),
                _ => 0,
            };
            let scale = 10f64.powi(digits);
            Value::Double((x * scale).round() / scale)
        }
        (f, v) => return Err(Error::exec(format!("{} cannot be applied to {v}", f.name()))),
    })
}
