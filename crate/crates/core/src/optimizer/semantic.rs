//! Rules that move, merge and reorder semantic selects.
//!
//! A semantic select is a `Filter` directly over a scalar `Predict` whose
//! predicate reads that predict's outputs. The rules here treat the pair as
//! one unit.

use std::cmp::Ordering;

use super::pushdown::map_children;
use super::{hints, ids, is_scalar_predict, Optimizer, RewriteTrace, Rule};
use crate::plan::{split_conjuncts, BoundInput, ColumnId, Field, LogicalPlan, PredictInfo, PredictMode, ScalarExpr};
use crate::sql::{BinaryOp, InputRef, OutputSpec, PromptTemplate};

pub(crate) struct Unit {
    predicate: ScalarExpr,
    info: PredictInfo,
    outputs: Vec<Field>,
}

impl Unit {
    fn wrap(self, input: LogicalPlan) -> LogicalPlan {
        LogicalPlan::Filter {
            input: Box::new(LogicalPlan::Predict {
                input: Some(Box::new(input)),
                info: self.info,
                outputs: self.outputs,
            }),
            predicate: self.predicate,
        }
    }

    /// Columns the unit needs from its input.
    fn required(&self) -> Vec<ColumnId> {
        let out = ids(&self.outputs);
        let mut v = self.info.input_columns();
        for c in self.predicate.columns() {
            if !out.contains(&c) && !v.contains(&c) {
                v.push(c);
            }
        }
        v
    }
}

fn is_unit(plan: &LogicalPlan) -> bool {
    unit_info(plan).is_some()
}

pub(crate) fn unit_info(plan: &LogicalPlan) -> Option<&PredictInfo> {
    let LogicalPlan::Filter { input, predicate } = plan else { return None };
    let LogicalPlan::Predict { input: Some(x), info, outputs } = input.as_ref() else { return None };
    if info.mode != PredictMode::Scalar {
        return None;
    }
    let out = ids(outputs);
    let cols = predicate.columns();
    let reads_outputs = cols.iter().any(|c| out.contains(c));
    let closed = cols.iter().all(|c| out.contains(c) || x.provides(&[*c]));
    (reads_outputs && closed).then_some(info)
}

#[allow(clippy::result_large_err)]
fn split_unit(plan: LogicalPlan) -> Result<(Unit, LogicalPlan), LogicalPlan> {
    if !is_unit(&plan) {
        return Err(plan);
    }
    let LogicalPlan::Filter { input, predicate } = plan else { unreachable!() };
    let LogicalPlan::Predict { input: Some(x), info, outputs } = *input else { unreachable!() };
    Ok((Unit { predicate, info, outputs }, *x))
}

fn unit_input(plan: &LogicalPlan) -> &LogicalPlan {
    match plan {
        LogicalPlan::Filter { input, .. } => match input.as_ref() {
            LogicalPlan::Predict { input: Some(x), .. } => x,
            _ => unreachable!("not a semantic select"),
        },
        _ => unreachable!("not a semantic select"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectPlacement {
    BelowJoin,
    AboveJoin,
}

/// Decides whether a semantic select over `side` should run below or above
/// its join with `other`. It stays below only on the foreign-key side of a
/// key-declared join whose primary-key side is unfiltered; everywhere else
/// running it above the join lets dedup collapse repeated inputs. Both
/// `pull_up_predict` and `order_select_vs_join` use this, so they agree.
pub fn place_select(
    opt: &Optimizer<'_>,
    side: &LogicalPlan,
    other: &LogicalPlan,
    condition: Option<&ScalarExpr>,
) -> (SelectPlacement, String) {
    let mut fk_side = false;
    let mut pk_side = false;
    for c in condition.cloned().map(split_conjuncts).unwrap_or_default() {
        let ScalarExpr::Binary { op: BinaryOp::Eq, left, right } = &c else { continue };
        let (ScalarExpr::Column { id: a, .. }, ScalarExpr::Column { id: b, .. }) = (left.as_ref(), right.as_ref())
        else {
            continue;
        };
        let (mine, theirs) = if side.provides(&[*a]) && other.provides(&[*b]) {
            (*a, *b)
        } else if side.provides(&[*b]) && other.provides(&[*a]) {
            (*b, *a)
        } else {
            continue;
        };
        let (Some((t1, c1)), Some((t2, c2))) = (super::column_origin(side, mine), super::column_origin(other, theirs))
        else {
            continue;
        };
        fk_side |= references(opt, &t1, &c1, &t2, &c2);
        pk_side |= references(opt, &t2, &c2, &t1, &c1);
    }
    if fk_side && !pk_side {
        if has_filter(other) {
            (SelectPlacement::AboveJoin, "foreign-key side, primary-key side is filtered".into())
        } else {
            (SelectPlacement::BelowJoin, "foreign-key side of a join with an unfiltered primary-key side".into())
        }
    } else if pk_side {
        (SelectPlacement::AboveJoin, "primary-key side".into())
    } else {
        (SelectPlacement::AboveJoin, "no key metadata for this join".into())
    }
}

/// True if `table.column` is declared as a foreign key to `ref_table.ref_column`.
fn references(opt: &Optimizer<'_>, table: &str, column: &str, ref_table: &str, ref_column: &str) -> bool {
    opt.tables.get(table).is_ok_and(|t| {
        t.keys.foreign_keys.iter().any(|fk| {
            fk.column.eq_ignore_ascii_case(column)
                && fk.ref_table.eq_ignore_ascii_case(ref_table)
                && fk.ref_column.eq_ignore_ascii_case(ref_column)
        })
    })
}

fn has_filter(plan: &LogicalPlan) -> bool {
    matches!(plan, LogicalPlan::Filter { .. } | LogicalPlan::Limit { .. })
        || plan.children().into_iter().any(has_filter)
}

fn refs_any(e: &ScalarExpr, fields: &[Field]) -> bool {
    let out = ids(fields);
    e.columns().iter().any(|c| out.contains(c))
}

/// Hoists semantic selects sitting directly under either side of a join,
/// when [`place_select`] says so.
fn hoist_over_join(opt: &Optimizer<'_>, join: LogicalPlan, mut trace: Option<&mut RewriteTrace>) -> LogicalPlan {
    let LogicalPlan::Join { mut left, mut right, kind, condition, hidden } = join else { return join };
    let mut hoisted = Vec::new();
    for on_left in [true, false] {
        loop {
            let (side, other) = if on_left { (&left, &right) } else { (&right, &left) };
            if !is_unit(side) {
                break;
            }
            let (placement, why) = place_select(opt, unit_input(side), other, condition.as_ref());
            if placement == SelectPlacement::BelowJoin {
                if let (Some(t), Some(info)) = (trace.as_deref_mut(), unit_info(side)) {
                    t.decline(
                        Rule::PullUpPredict,
                        format!("select on model {} stays below the join: {why}", info.model.name),
                    );
                }
                break;
            }
            let slot = if on_left { &mut left } else { &mut right };
            let taken = std::mem::replace(slot.as_mut(), LogicalPlan::OneRow);
            let (u, x) = split_unit(taken).unwrap_or_else(|_| unreachable!());
            **slot = x;
            hoisted.push(u);
        }
    }
    let mut node = LogicalPlan::Join { left, right, kind, condition, hidden };
    for u in hoisted {
        node = u.wrap(node);
    }
    node
}

pub(crate) fn pull_up_predict(
    opt: &Optimizer<'_>,
    plan: LogicalPlan,
    nested: bool,
    trace: &mut RewriteTrace,
) -> LogicalPlan {
    match plan {
        p if is_unit(&p) => {
            let (u, x) = split_unit(p).unwrap_or_else(|_| unreachable!());
            u.wrap(pull_up_predict(opt, x, nested, trace))
        }
        LogicalPlan::Filter { input, predicate } => {
            let mut input = pull_up_predict(opt, *input, true, trace);
            let mut hoisted = Vec::new();
            while is_unit(&input) {
                let (u, x) = split_unit(input).unwrap_or_else(|_| unreachable!());
                if refs_any(&predicate, &u.outputs) {
                    input = u.wrap(x);
                    break;
                }
                hoisted.push(u);
                input = x;
            }
            let mut node = LogicalPlan::Filter { input: Box::new(input), predicate };
            for u in hoisted.into_iter().rev() {
                node = u.wrap(node);
            }
            node
        }
        LogicalPlan::Join { .. } => {
            let join = map_children(plan, |c| pull_up_predict(opt, c, true, trace));
            hoist_over_join(opt, join, Some(trace))
        }
        LogicalPlan::Project { .. } | LogicalPlan::Aggregate { .. } => {
            let node = map_children(plan, |c| pull_up_predict(opt, c, nested, trace));
            if nested {
                if let Some(info) = node.children().first().and_then(|c| unit_info(c)) {
                    trace.decline(
                        Rule::PullUpPredict,
                        format!("select on model {} cannot be hoisted past a projection", info.model.name),
                    );
                }
            }
            node
        }
        other => map_children(other, |c| pull_up_predict(opt, c, nested, trace)),
    }
}

pub(crate) fn order_select_vs_join(opt: &Optimizer<'_>, plan: LogicalPlan) -> LogicalPlan {
    let node = map_children(plan, |c| order_select_vs_join(opt, c));
    if matches!(node, LogicalPlan::Join { .. }) {
        return hoist_over_join(opt, node, None);
    }
    let is_over_join = is_unit(&node) && matches!(unit_input(&node), LogicalPlan::Join { .. });
    if !is_over_join {
        return node;
    }
    let (u, x) = split_unit(node).unwrap_or_else(|_| unreachable!());
    let LogicalPlan::Join { left, right, kind, condition, hidden } = x else { unreachable!() };
    let required = u.required();
    let on_left = left.provides(&required);
    if !on_left && !right.provides(&required) {
        return u.wrap(LogicalPlan::Join { left, right, kind, condition, hidden });
    }
    let (side, other) = if on_left { (&left, &right) } else { (&right, &left) };
    if place_select(opt, side, other, condition.as_ref()).0 == SelectPlacement::AboveJoin {
        return u.wrap(LogicalPlan::Join { left, right, kind, condition, hidden });
    }
    if on_left {
        LogicalPlan::Join { left: Box::new(u.wrap(*left)), right, kind, condition, hidden }
    } else {
        LogicalPlan::Join { left, right: Box::new(u.wrap(*right)), kind, condition, hidden }
    }
}

/// One predict in a merge run, with the select predicate directly above it if any.
struct Link {
    filter: Option<ScalarExpr>,
    info: PredictInfo,
    outputs: Vec<Field>,
}

#[allow(clippy::result_large_err)]
fn peel(plan: LogicalPlan) -> Result<(Link, LogicalPlan), LogicalPlan> {
    match plan {
        LogicalPlan::Filter { input, predicate } if is_scalar_predict(&input) => {
            let LogicalPlan::Predict { input: Some(x), info, outputs } = *input else { unreachable!() };
            Ok((Link { filter: Some(predicate), info, outputs }, *x))
        }
        LogicalPlan::Predict { input: Some(x), info, outputs } if info.mode == PredictMode::Scalar => {
            Ok((Link { filter: None, info, outputs }, *x))
        }
        other => Err(other),
    }
}

fn unpeel(link: Link, input: LogicalPlan) -> LogicalPlan {
    let p = LogicalPlan::Predict { input: Some(Box::new(input)), info: link.info, outputs: link.outputs };
    match link.filter {
        Some(predicate) => LogicalPlan::Filter { input: Box::new(p), predicate },
        None => p,
    }
}

fn sorted_inputs(info: &PredictInfo) -> Vec<ColumnId> {
    let mut v = info.input_columns();
    v.sort();
    v
}

fn mergeable(run: &[Link], next: &Link) -> bool {
    let first = &run[0].info;
    let same_model = first.model.name.eq_ignore_ascii_case(&next.info.model.name);
    let same_inputs = sorted_inputs(first) == sorted_inputs(&next.info);
    let names_free = run
        .iter()
        .flat_map(|l| l.info.prompt.outputs.iter())
        .all(|o| !next.info.prompt.outputs.iter().any(|n| n.name.eq_ignore_ascii_case(&o.name)));
    let options_agree =
        run.iter().all(|l| l.info.options.iter().all(|(k, v)| next.info.clause_option(k).is_none_or(|w| w == v)));
    same_model && same_inputs && names_free && options_agree
}

fn merge_run(run: Vec<Link>) -> (Vec<ScalarExpr>, PredictInfo, Vec<Field>) {
    // `run` is top-down; tasks are numbered in execution order, bottom first.
    let filters: Vec<ScalarExpr> = run.iter().filter_map(|l| l.filter.clone()).collect();
    let bottom_up: Vec<Link> = run.into_iter().rev().collect();
    let tasks: Vec<String> =
        bottom_up.iter().enumerate().map(|(i, l)| format!("Task {}: {}", i + 1, l.info.prompt.instruction())).collect();
    let mut prompt_inputs: Vec<InputRef> = Vec::new();
    let mut prompt_outputs: Vec<OutputSpec> = Vec::new();
    let mut inputs: Vec<BoundInput> = Vec::new();
    let mut options = Vec::new();
    let mut outputs = Vec::new();
    for l in &bottom_up {
        for i in &l.info.prompt.inputs {
            if !prompt_inputs.contains(i) {
                prompt_inputs.push(i.clone());
            }
        }
        for b in &l.info.inputs {
            if !inputs.iter().any(|x| x.key == b.key) {
                inputs.push(b.clone());
            }
        }
        for (k, v) in &l.info.options {
            if !options.iter().any(|(x, _): &(String, _)| x.eq_ignore_ascii_case(k)) {
                options.push((k.clone(), v.clone()));
            }
        }
        prompt_outputs.extend(l.info.prompt.outputs.iter().cloned());
        outputs.extend(l.outputs.iter().cloned());
    }
    let info = PredictInfo {
        model: bottom_up[0].info.model.clone(),
        prompt: PromptTemplate::from_parts(tasks.join("; "), prompt_inputs, prompt_outputs),
        inputs,
        mode: PredictMode::Scalar,
        source: None,
        options,
    };
    (filters, info, outputs)
}

pub(crate) fn merge_semantic_predicates(
    opt: &Optimizer<'_>,
    plan: LogicalPlan,
    trace: &mut RewriteTrace,
) -> LogicalPlan {
    let (first, mut rest) = match peel(plan) {
        Ok(p) => p,
        Err(other) => return map_children(other, |c| merge_semantic_predicates(opt, c, trace)),
    };
    let mut run = vec![first];
    loop {
        match peel(rest) {
            Ok((link, below)) if mergeable(&run, &link) => {
                run.push(link);
                rest = below;
            }
            Ok((link, below)) => {
                rest = unpeel(link, below);
                break;
            }
            Err(other) => {
                rest = other;
                break;
            }
        }
    }
    let rest = merge_semantic_predicates(opt, rest, trace);
    let threshold = opt.rules.merge_selectivity_threshold;
    let selective = run.iter().find(|l| l.filter.is_some() && hints(&l.info).0 < threshold);
    if run.len() < 2 || selective.is_some() {
        if let (true, Some(l)) = (run.len() >= 2, selective) {
            trace.decline(
                Rule::MergeSemanticPredicates,
                format!(
                    "select on model {} has selectivity {} below the merge threshold {threshold}",
                    l.info.model.name,
                    hints(&l.info).0
                ),
            );
        }
        return run.into_iter().rev().fold(rest, |acc, l| unpeel(l, acc));
    }
    let (filters, info, outputs) = merge_run(run);
    let mut node = LogicalPlan::Predict { input: Some(Box::new(rest)), info, outputs };
    for f in filters.into_iter().rev() {
        node = LogicalPlan::Filter { input: Box::new(node), predicate: f };
    }
    node
}

pub(crate) fn order_semantic_predicates(opt: &Optimizer<'_>, plan: LogicalPlan) -> LogicalPlan {
    let mut units = Vec::new();
    let mut cur = plan;
    while is_unit(&cur) {
        let (u, x) = split_unit(cur).unwrap_or_else(|_| unreachable!());
        units.push(u);
        cur = x;
    }
    let base = if units.is_empty() {
        return map_children(cur, |c| order_semantic_predicates(opt, c));
    } else {
        order_semantic_predicates(opt, cur)
    };
    // Execution order, bottom first.
    units.reverse();
    if units.len() >= 2 && units.iter().all(|u| base.provides(&u.required())) {
        let mut keyed: Vec<(f64, f64, f64, Unit)> = units
            .into_iter()
            .map(|u| {
                let a = opt.annotate(&u.info, &base);
                (a.avg_input_bytes, a.selectivity, a.quality, u)
            })
            .collect();
        keyed.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
                .then(b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal))
        });
        units = keyed.into_iter().map(|k| k.3).collect();
    }
    units.into_iter().fold(base, |acc, u| u.wrap(acc))
}
