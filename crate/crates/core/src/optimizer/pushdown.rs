//! Classical filter pushdown with a guard for predict operators.
//!
//! A conjunct moves below a predict only when the predict's input already
//! provides every column it reads, so filters on predicted columns stay above
//! and cheap filters shrink the model's input. Semantic selects themselves are
//! never pushed: their predicates read the outputs of the predict under them.

use crate::plan::{conjoin, split_conjuncts, JoinType, LogicalPlan, ScalarExpr};

pub(crate) fn guard_pushdown(plan: LogicalPlan) -> LogicalPlan {
    match plan {
        LogicalPlan::Filter { input, predicate } => {
            let mut node = *input;
            let mut stay = Vec::new();
            for c in split_conjuncts(predicate) {
                match push_into(node, c) {
                    Ok(n) => node = n,
                    Err((n, c)) => {
                        node = n;
                        stay.push(c);
                    }
                }
            }
            let node = map_children(node, guard_pushdown);
            match conjoin(stay) {
                Some(predicate) => LogicalPlan::Filter { input: Box::new(node), predicate },
                None => node,
            }
        }
        other => map_children(other, guard_pushdown),
    }
}

fn wrap(node: LogicalPlan, c: ScalarExpr) -> LogicalPlan {
    push_into(node, c).unwrap_or_else(|(node, c)| LogicalPlan::Filter { input: Box::new(node), predicate: c })
}

/// Pushes `c` strictly below the root of `node`, or hands both back.
#[allow(clippy::result_large_err)]
fn push_into(node: LogicalPlan, c: ScalarExpr) -> Result<LogicalPlan, (LogicalPlan, ScalarExpr)> {
    let cols = c.columns();
    match node {
        LogicalPlan::Join { left, right, kind, condition, hidden } => {
            if left.provides(&cols) {
                let left = Box::new(wrap(*left, c));
                Ok(LogicalPlan::Join { left, right, kind, condition, hidden })
            } else if right.provides(&cols) {
                let right = Box::new(wrap(*right, c));
                Ok(LogicalPlan::Join { left, right, kind, condition, hidden })
            } else {
                let ok = cols.iter().all(|id| left.provides(&[*id]) || right.provides(&[*id]));
                if !ok {
                    return Err((LogicalPlan::Join { left, right, kind, condition, hidden }, c));
                }
                let condition = Some(match condition {
                    Some(existing) => existing.and(c),
                    None => c,
                });
                Ok(LogicalPlan::Join { left, right, kind: JoinType::Inner, condition, hidden })
            }
        }
        LogicalPlan::Filter { input, predicate } if input.provides(&cols) => {
            Ok(LogicalPlan::Filter { input: Box::new(wrap(*input, c)), predicate })
        }
        LogicalPlan::Predict { input: Some(input), info, outputs } if input.provides(&cols) => {
            Ok(LogicalPlan::Predict { input: Some(Box::new(wrap(*input, c))), info, outputs })
        }
        LogicalPlan::Sort { input, keys } => Ok(LogicalPlan::Sort { input: Box::new(wrap(*input, c)), keys }),
        other => Err((other, c)),
    }
}

pub(crate) fn map_children(plan: LogicalPlan, mut f: impl FnMut(LogicalPlan) -> LogicalPlan) -> LogicalPlan {
    let mut g = |b: Box<LogicalPlan>| Box::new(f(*b));
    match plan {
        LogicalPlan::Get { .. } | LogicalPlan::OneRow => plan,
        LogicalPlan::Filter { input, predicate } => LogicalPlan::Filter { input: g(input), predicate },
        LogicalPlan::Project { input, items } => LogicalPlan::Project { input: g(input), items },
        LogicalPlan::Join { left, right, kind, condition, hidden } => {
            let left = g(left);
            LogicalPlan::Join { left, right: g(right), kind, condition, hidden }
        }
        LogicalPlan::Aggregate { input, groups, aggs } => LogicalPlan::Aggregate { input: g(input), groups, aggs },
        LogicalPlan::Sort { input, keys } => LogicalPlan::Sort { input: g(input), keys },
        LogicalPlan::Limit { input, limit } => LogicalPlan::Limit { input: g(input), limit },
        LogicalPlan::Predict { input, info, outputs } => LogicalPlan::Predict { input: input.map(g), info, outputs },
    }
}
