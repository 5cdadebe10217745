//! Name resolution and logical plan construction.

use std::sync::Arc;

use super::{
    conjoin, AggCall, AggFunc, BoundInput, ColumnId, Field, JoinType, LogicalPlan, PredictInfo, PredictMode,
    ScalarExpr, ScalarFunc, SortKey,
};
use crate::catalog::{ModelCatalog, ModelEntry};
use crate::error::{Error, Result};
use crate::sql::{
    BinaryOp, Expr, Ident, InputRef, JoinKind, Literal, ModelKind, OutputSpec, PredictClause, PredictExprNode,
    PromptTemplate, Query, SelectItem, TableFactor, TableRef, UnaryOp,
};
use crate::storage::TableCatalog;
use crate::types::{parse_datetime, DataType, Origin, Value};

/// A bound query plus any notices raised while binding it.
#[derive(Debug, Clone)]
pub struct BoundQuery {
    pub plan: LogicalPlan,
    pub notices: Vec<String>,
}

pub fn bind_query(query: &Query, tables: &TableCatalog, models: &ModelCatalog) -> Result<BoundQuery> {
    let mut b = Binder::new(tables, models);
    let plan = b.bind_query(query)?;
    Ok(BoundQuery { plan, notices: b.notices })
}

struct PendingPredict {
    info: PredictInfo,
    field: Field,
}

/// Grouping context used when binding expressions above an aggregate.
struct GroupCtx {
    group_asts: Vec<Expr>,
    group_bound: Vec<ScalarExpr>,
    group_fields: Vec<Field>,
    agg_asts: Vec<Expr>,
    agg_fields: Vec<Field>,
    pre_scope: Vec<Field>,
}

pub struct Binder<'a> {
    tables: &'a TableCatalog,
    models: &'a ModelCatalog,
    next_id: u32,
    pub notices: Vec<String>,
}

fn name_eq(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

fn is_agg_expr(e: &Expr) -> bool {
    match e {
        Expr::Function { name, star, .. } => *star || AggFunc::from_name(name).is_some(),
        Expr::Predict(p) => p.agg,
        _ => false,
    }
}

/// Collects aggregate sub-expressions without descending into them.
fn collect_aggs(e: &Expr, out: &mut Vec<Expr>) {
    if is_agg_expr(e) {
        if !out.contains(e) {
            out.push(e.clone());
        }
        return;
    }
    match e {
        Expr::Binary { left, right, .. } => {
            collect_aggs(left, out);
            collect_aggs(right, out);
        }
        Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => collect_aggs(expr, out),
        Expr::Function { args, .. } => args.iter().for_each(|a| collect_aggs(a, out)),
        Expr::Predict(p) => p.args.iter().for_each(|a| collect_aggs(a, out)),
        Expr::Column { .. } | Expr::Literal(_) => {}
    }
}

fn split_ast_conjuncts(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Binary { op: BinaryOp::And, left, right } => {
            let mut v = split_ast_conjuncts(left);
            v.extend(split_ast_conjuncts(right));
            v
        }
        other => vec![other],
    }
}

fn type_name(t: Option<DataType>) -> &'static str {
    t.map_or("NULL", DataType::keyword)
}

fn comparable(a: Option<DataType>, b: Option<DataType>) -> bool {
    match (a, b) {
        (None, _) | (_, None) => true,
        (Some(x), Some(y)) => x == y || (x.is_numeric() && y.is_numeric()),
    }
}

/// Inserts `wrap` directly above the deepest join input that provides every
/// column in `required`.
fn place(plan: LogicalPlan, required: &[ColumnId], wrap: &mut dyn FnMut(LogicalPlan) -> LogicalPlan) -> LogicalPlan {
    if !required.is_empty() {
        if let LogicalPlan::Join { left, right, kind, condition, hidden } = plan {
            if left.provides(required) {
                let left = Box::new(place(*left, required, wrap));
                return LogicalPlan::Join { left, right, kind, condition, hidden };
            }
            if right.provides(required) {
                let right = Box::new(place(*right, required, wrap));
                return LogicalPlan::Join { left, right, kind, condition, hidden };
            }
            return wrap(LogicalPlan::Join { left, right, kind, condition, hidden });
        }
    }
    wrap(plan)
}

impl<'a> Binder<'a> {
    pub fn new(tables: &'a TableCatalog, models: &'a ModelCatalog) -> Self {
        Binder { tables, models, next_id: 0, notices: Vec::new() }
    }

    fn field(&mut self, name: &str, qualifier: Option<String>, data_type: DataType, origin: Origin) -> Field {
        self.next_id += 1;
        Field { id: ColumnId(self.next_id), name: name.to_string(), qualifier, data_type, origin, hidden: false }
    }

    fn model(&self, name: &str) -> Result<Arc<ModelEntry>> {
        self.models.lookup(name).map_err(|_| Error::bind(format!("model not found: {name}")))
    }

    pub fn bind_query(&mut self, q: &Query) -> Result<LogicalPlan> {
        let mut plan = LogicalPlan::OneRow;
        for (i, tr) in q.from.iter().enumerate() {
            let rel = self.bind_table_ref(tr)?;
            plan = if i == 0 {
                rel
            } else {
                LogicalPlan::Join {
                    left: Box::new(plan),
                    right: Box::new(rel),
                    kind: JoinType::Cross,
                    condition: None,
                    hidden: Vec::new(),
                }
            };
        }

        if let Some(sel) = &q.selection {
            let mut classical = Vec::new();
            for conj in split_ast_conjuncts(sel) {
                let scope = plan.schema();
                let mut pending = Vec::new();
                let e = self.bind_expr(conj, &scope, None, Some(&mut pending))?;
                self.expect_boolean(&e, "WHERE")?;
                if pending.is_empty() {
                    classical.push(e);
                } else {
                    plan = self.place_predicts(plan, pending);
                    plan = place_filter(plan, e);
                }
            }
            if let Some(pred) = conjoin(classical) {
                plan = LogicalPlan::Filter { input: Box::new(plan), predicate: pred };
            }
        }

        let mut agg_asts = Vec::new();
        for item in &q.projection {
            if let SelectItem::Expr { expr, .. } = item {
                collect_aggs(expr, &mut agg_asts);
            }
        }
        if let Some(h) = &q.having {
            collect_aggs(h, &mut agg_asts);
        }
        for o in &q.order_by {
            collect_aggs(&o.expr, &mut agg_asts);
        }
        let grouped = !q.group_by.is_empty() || !agg_asts.is_empty();
        let group_ctx = if grouped {
            let (p, ctx) = self.bind_aggregate(plan, &q.group_by, agg_asts)?;
            plan = p;
            Some(ctx)
        } else {
            if q.having.is_some() {
                return Err(Error::bind("HAVING requires GROUP BY or an aggregate"));
            }
            None
        };

        if let Some(h) = &q.having {
            let scope = plan.schema();
            let mut pending = Vec::new();
            let e = self.bind_expr(h, &scope, group_ctx.as_ref(), Some(&mut pending))?;
            self.expect_boolean(&e, "HAVING")?;
            plan = self.place_predicts(plan, pending);
            plan = LogicalPlan::Filter { input: Box::new(plan), predicate: e };
        }

        // Projection.
        let scope = plan.schema();
        let mut items: Vec<(ScalarExpr, Field)> = Vec::new();
        let mut item_asts: Vec<Option<&Expr>> = Vec::new();
        let mut pending = Vec::new();
        for item in &q.projection {
            match item {
                SelectItem::Wildcard => {
                    for f in scope.iter().filter(|f| !f.hidden) {
                        let nf = self.field(&f.name, f.qualifier.clone(), f.data_type, f.origin);
                        items.push((ScalarExpr::column(f), nf));
                        item_asts.push(None);
                    }
                }
                SelectItem::QualifiedWildcard(qual) => {
                    let matching: Vec<Field> = scope
                        .iter()
                        .filter(|f| !f.hidden && f.qualifier.as_deref().is_some_and(|q| name_eq(q, &qual.value)))
                        .cloned()
                        .collect();
                    if matching.is_empty() {
                        return Err(Error::bind(format!("unknown relation '{}' in {}.*", qual.value, qual.value)));
                    }
                    for f in matching {
                        let nf = self.field(&f.name, f.qualifier.clone(), f.data_type, f.origin);
                        items.push((ScalarExpr::column(&f), nf));
                        item_asts.push(None);
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    let bound = self.bind_expr(expr, &scope, group_ctx.as_ref(), Some(&mut pending))?;
                    let (name, qualifier) = match (alias, expr) {
                        (Some(a), _) => (a.value.clone(), None),
                        (None, Expr::Column { qualifier, name }) => {
                            (name.value.clone(), qualifier.as_ref().map(|q| q.value.clone()))
                        }
                        (None, Expr::Predict(p)) => (
                            p.prompt.as_ref().map_or_else(|| p.model_name.clone(), |t| t.outputs[0].name.clone()),
                            None,
                        ),
                        (None, other) => (other.to_string(), None),
                    };
                    let origin = origin_of(&bound, &scope, &pending);
                    let nf = self.field(&name, qualifier, bound.data_type().unwrap_or(DataType::Varchar), origin);
                    items.push((bound, nf));
                    item_asts.push(Some(expr));
                }
            }
        }

        // ORDER BY resolves against output names first, then the input scope.
        let mut sort_keys = Vec::new();
        for o in &q.order_by {
            let projected = match &o.expr {
                Expr::Column { qualifier, name } => {
                    let hits: Vec<usize> = items
                        .iter()
                        .enumerate()
                        .filter(|(_, (_, f))| {
                            name_eq(&f.name, &name.value)
                                && qualifier
                                    .as_ref()
                                    .is_none_or(|q| f.qualifier.as_deref().is_some_and(|fq| name_eq(fq, &q.value)))
                        })
                        .map(|(i, _)| i)
                        .collect();
                    if hits.len() > 1 && qualifier.is_none() {
                        return Err(Error::bind(format!("ORDER BY column '{}' is ambiguous", name.value)));
                    }
                    hits.first().copied()
                }
                other => item_asts.iter().position(|a| *a == Some(other)),
            };
            let field = match projected {
                Some(i) => items[i].1.clone(),
                None => {
                    let bound = self.bind_expr(&o.expr, &scope, group_ctx.as_ref(), Some(&mut pending))?;
                    let mut nf = self.field(
                        &o.expr.to_string(),
                        None,
                        bound.data_type().unwrap_or(DataType::Varchar),
                        Origin::Stored,
                    );
                    nf.hidden = true;
                    items.push((bound, nf.clone()));
                    item_asts.push(None);
                    nf
                }
            };
            sort_keys.push(SortKey { expr: ScalarExpr::column(&field), descending: o.descending });
        }

        plan = self.place_predicts(plan, pending);
        plan = LogicalPlan::Project { input: Box::new(plan), items };
        if !sort_keys.is_empty() {
            plan = LogicalPlan::Sort { input: Box::new(plan), keys: sort_keys };
        }
        if let Some(n) = q.limit {
            plan = LogicalPlan::Limit { input: Box::new(plan), limit: n };
        }
        Ok(plan)
    }

    fn bind_aggregate(
        &mut self,
        mut plan: LogicalPlan,
        group_by: &[Expr],
        agg_asts: Vec<Expr>,
    ) -> Result<(LogicalPlan, GroupCtx)> {
        let pre_scope = plan.schema();
        let mut pending = Vec::new();
        let mut groups = Vec::new();
        let mut group_bound = Vec::new();
        for g in group_by {
            if is_agg_expr(g) {
                return Err(Error::bind(format!("aggregate '{g}' is not allowed in GROUP BY")));
            }
            let bound = self.bind_expr(g, &pre_scope, None, Some(&mut pending))?;
            let ty = bound.data_type().unwrap_or(DataType::Varchar);
            let field = match (&bound, g) {
                (ScalarExpr::Column { id, .. }, _) => {
                    let src = pre_scope.iter().chain(pending.iter().map(|p| &p.field)).find(|f| f.id == *id);
                    match src {
                        Some(s) => self.field(&s.name, s.qualifier.clone(), ty, s.origin),
                        None => self.field(&g.to_string(), None, ty, Origin::Stored),
                    }
                }
                (_, Expr::Predict(p)) => {
                    let name = p.prompt.as_ref().map_or_else(|| g.to_string(), |t| t.outputs[0].name.clone());
                    self.field(&name, None, ty, Origin::Predicted)
                }
                _ => self.field(&g.to_string(), None, ty, Origin::Stored),
            };
            group_bound.push(bound.clone());
            groups.push((bound, field));
        }

        let mut aggs = Vec::new();
        for a in &agg_asts {
            aggs.push(self.bind_agg_call(a, &pre_scope, &mut pending)?);
        }
        plan = self.place_predicts(plan, pending);
        let ctx = GroupCtx {
            group_asts: group_by.to_vec(),
            group_bound,
            group_fields: groups.iter().map(|(_, f)| f.clone()).collect(),
            agg_asts,
            agg_fields: aggs.iter().map(|a: &AggCall| a.field.clone()).collect(),
            pre_scope,
        };
        Ok((LogicalPlan::Aggregate { input: Box::new(plan), groups, aggs }, ctx))
    }

    fn bind_agg_call(&mut self, e: &Expr, scope: &[Field], pending: &mut Vec<PendingPredict>) -> Result<AggCall> {
        let mut nested = Vec::new();
        match e {
            Expr::Function { args, .. } => args.iter().for_each(|a| collect_aggs(a, &mut nested)),
            Expr::Predict(p) => p.args.iter().for_each(|a| collect_aggs(a, &mut nested)),
            _ => {}
        }
        if !nested.is_empty() {
            return Err(Error::bind(format!("nested aggregate in '{e}'")));
        }
        match e {
            Expr::Function { name, star: true, .. } => {
                if !name_eq(name, "count") {
                    return Err(Error::bind(format!("{name}(*) is not supported")));
                }
                let field = self.field("count", None, DataType::Integer, Origin::Stored);
                Ok(AggCall { func: AggFunc::CountStar, arg: None, predict: None, field })
            }
            Expr::Function { name, args, .. } => {
                let func = AggFunc::from_name(name).expect("caller checked aggregate name");
                if args.len() != 1 {
                    return Err(Error::bind(format!("{name} takes exactly one argument")));
                }
                let arg = self.bind_expr(&args[0], scope, None, Some(pending))?;
                let at = arg.data_type();
                let ty = match func {
                    AggFunc::Count => DataType::Integer,
                    AggFunc::Sum | AggFunc::Avg => {
                        if at.is_some_and(|t| !t.is_numeric()) {
                            return Err(Error::bind(format!(
                                "{name} requires a numeric argument, found {}",
                                type_name(at)
                            )));
                        }
                        if func == AggFunc::Avg {
                            DataType::Double
                        } else {
                            at.unwrap_or(DataType::Integer)
                        }
                    }
                    _ => at.unwrap_or(DataType::Varchar),
                };
                let field = self.field(&e.to_string(), None, ty, Origin::Stored);
                Ok(AggCall { func, arg: Some(arg), predict: None, field })
            }
            Expr::Predict(node) => {
                let info = self.bind_predict_info(node, scope, PredictMode::Aggregate)?;
                if info.prompt.outputs.len() != 1 {
                    return Err(Error::bind("LLM AGG must declare exactly one output placeholder"));
                }
                let out = &info.prompt.outputs[0];
                let field = self.field(&out.name, None, out.data_type, Origin::Predicted);
                Ok(AggCall { func: AggFunc::Semantic, arg: None, predict: Some(Box::new(info)), field })
            }
            _ => unreachable!("not an aggregate"),
        }
    }

    fn bind_table_ref(&mut self, tr: &TableRef) -> Result<LogicalPlan> {
        let mut plan = self.bind_factor(&tr.factor)?;
        for j in &tr.joins {
            let right = self.bind_factor(&j.factor)?;
            plan = match &j.kind {
                JoinKind::Cross => LogicalPlan::Join {
                    left: Box::new(plan),
                    right: Box::new(right),
                    kind: JoinType::Cross,
                    condition: None,
                    hidden: Vec::new(),
                },
                JoinKind::Natural => {
                    let ls = plan.schema();
                    let rs = right.schema();
                    let mut conds = Vec::new();
                    let mut hidden = Vec::new();
                    for r in rs.iter().filter(|f| !f.hidden) {
                        let shared: Vec<&Field> =
                            ls.iter().filter(|l| !l.hidden && name_eq(&l.name, &r.name)).collect();
                        if let Some(l) = shared.first() {
                            if shared.len() > 1 {
                                return Err(Error::bind(format!("natural join column '{}' is ambiguous", r.name)));
                            }
                            conds.push(self.make_binary(BinaryOp::Eq, ScalarExpr::column(l), ScalarExpr::column(r))?);
                            hidden.push(r.id);
                        }
                    }
                    let condition = conjoin(conds);
                    LogicalPlan::Join {
                        left: Box::new(plan),
                        right: Box::new(right),
                        kind: if condition.is_some() { JoinType::Inner } else { JoinType::Cross },
                        condition,
                        hidden,
                    }
                }
                JoinKind::Inner(on) => self.bind_join_on(plan, right, on)?,
            };
        }
        Ok(plan)
    }

    fn bind_join_on(&mut self, left: LogicalPlan, right: LogicalPlan, on: &Expr) -> Result<LogicalPlan> {
        let ls = left.schema();
        let rs = right.schema();
        let scope: Vec<Field> = ls.iter().chain(rs.iter()).cloned().collect();
        let mut classical = Vec::new();
        let mut semantic = Vec::new();
        for conj in split_ast_conjuncts(on) {
            let mut pending = Vec::new();
            let e = self.bind_expr(conj, &scope, None, Some(&mut pending))?;
            self.expect_boolean(&e, "ON")?;
            if pending.is_empty() {
                classical.push(e);
            } else {
                semantic.push((e, pending));
            }
        }
        let condition = conjoin(classical);
        let mut plan = LogicalPlan::Join {
            left: Box::new(left),
            right: Box::new(right),
            kind: if condition.is_some() { JoinType::Inner } else { JoinType::Cross },
            condition,
            hidden: Vec::new(),
        };
        let left_ids: Vec<ColumnId> = ls.iter().map(|f| f.id).collect();
        let right_ids: Vec<ColumnId> = rs.iter().map(|f| f.id).collect();
        for (e, pending) in semantic {
            for p in &pending {
                let cols = p.info.input_columns();
                let side = if cols.iter().all(|c| left_ids.contains(c)) && !cols.is_empty() {
                    Some("left")
                } else if cols.iter().all(|c| right_ids.contains(c)) && !cols.is_empty() {
                    Some("right")
                } else {
                    None
                };
                if let Some(side) = side {
                    self.notices.push(format!(
                        "semantic join condition on model {} reads only the {side} input; evaluated as a semantic select on that side",
                        p.info.model.name
                    ));
                }
            }
            plan = self.place_predicts(plan, pending);
            plan = place_filter(plan, e);
        }
        Ok(plan)
    }

    fn bind_factor(&mut self, f: &TableFactor) -> Result<LogicalPlan> {
        match f {
            TableFactor::Table { name, alias } => self.bind_table(name, alias.as_ref()),
            TableFactor::Derived { query, alias } => {
                let inner = self.bind_query(query)?;
                let items: Vec<(ScalarExpr, Field)> = inner
                    .schema()
                    .iter()
                    .filter(|f| !f.hidden)
                    .map(|f| {
                        let nf = self.field(&f.name, Some(alias.value.clone()), f.data_type, f.origin);
                        (ScalarExpr::column(f), nf)
                    })
                    .collect();
                Ok(LogicalPlan::Project { input: Box::new(inner), items })
            }
            TableFactor::Predict(node) => self.bind_from_predict(node),
        }
    }

    fn bind_table(&mut self, name: &Ident, alias: Option<&Ident>) -> Result<LogicalPlan> {
        let table =
            self.tables.get(&name.value).map_err(|_| Error::bind(format!("table not found: {}", name.value)))?;
        let qual = alias.map_or_else(|| name.value.clone(), |a| a.value.clone());
        let fields =
            table.schema.iter().map(|c| self.field(&c.name, Some(qual.clone()), c.data_type, c.origin)).collect();
        Ok(LogicalPlan::Get { table: table.name.clone(), alias: alias.map(|a| a.value.clone()), fields })
    }

    fn bind_from_predict(&mut self, node: &PredictExprNode) -> Result<LogicalPlan> {
        if node.agg {
            return Err(Error::bind("LLM AGG cannot appear in FROM"));
        }
        let Some(source) = &node.source else {
            let info = self.bind_predict_info(node, &[], PredictMode::TableGeneration)?;
            if !info.inputs.is_empty() {
                return Err(Error::bind("a prompt with {{...}} inputs needs a source relation"));
            }
            let qual = node.alias.as_ref().map(|a| a.value.clone());
            let outputs = info
                .prompt
                .outputs
                .iter()
                .map(|o| self.field(&o.name, qual.clone(), o.data_type, Origin::Predicted))
                .collect();
            return Ok(LogicalPlan::Predict { input: None, info, outputs });
        };
        let child = self.bind_table(source, node.alias.as_ref())?;
        let scope = child.schema();
        let mut info = self.bind_predict_info(node, &scope, PredictMode::TableInference)?;
        info.source = Some(source.value.clone());
        let qual = node.alias.as_ref().map_or_else(|| source.value.clone(), |a| a.value.clone());
        let mut outputs = Vec::new();
        for o in &info.prompt.outputs {
            if scope.iter().any(|f| name_eq(&f.name, &o.name)) {
                return Err(Error::bind(format!(
                    "predicted column '{}' collides with an existing column of {}; rename the output placeholder",
                    o.name, source.value
                )));
            }
            outputs.push(self.field(&o.name, Some(qual.clone()), o.data_type, Origin::Predicted));
        }
        Ok(LogicalPlan::Predict { input: Some(Box::new(child)), info, outputs })
    }

    /// Resolves the model and prompt inputs of an LLM or PREDICT clause.
    fn bind_predict_info(&mut self, node: &PredictExprNode, scope: &[Field], mode: PredictMode) -> Result<PredictInfo> {
        let model = self.model(&node.model_name)?;
        if model.kind == ModelKind::Embed {
            return Err(Error::bind(format!("model {} is an EMBED model, which cannot be executed", model.name)));
        }
        let (prompt, input_cols): (PromptTemplate, Vec<(String, Field)>) = match node.clause {
            PredictClause::Llm => {
                if model.kind == ModelKind::Tabular {
                    return Err(Error::bind(format!(
                        "model {} is TABULAR; use PREDICT {}(...)",
                        model.name, model.name
                    )));
                }
                let prompt = node.prompt.clone().expect("parser guarantees a prompt");
                let mut cols = Vec::new();
                for input in &prompt.inputs {
                    let f = resolve(scope, input.qualifier.as_deref(), &input.column)?.ok_or_else(|| {
                        Error::bind(format!("prompt input {{{{{input}}}}} does not match any column in scope"))
                    })?;
                    cols.push((input.key(), f));
                }
                (prompt, cols)
            }
            PredictClause::Predict => {
                let (Some(features), Some(outputs)) = (&model.input_set, &model.output_set) else {
                    return Err(Error::bind(format!(
                        "model {} has no FEATURES/OUTPUT; use an LLM clause with a prompt",
                        model.name
                    )));
                };
                let mut cols = Vec::new();
                if node.source.is_some() {
                    for feat in features {
                        let f = resolve(scope, None, feat)?.ok_or_else(|| {
                            Error::bind(format!("feature column '{feat}' not found for model {}", model.name))
                        })?;
                        cols.push((feat.clone(), f));
                    }
                } else {
                    if node.args.len() != features.len() {
                        return Err(Error::bind(format!(
                            "model {} expects {} feature columns, got {}",
                            model.name,
                            features.len(),
                            node.args.len()
                        )));
                    }
                    for (feat, arg) in features.iter().zip(&node.args) {
                        let Expr::Column { qualifier, name } = arg else {
                            return Err(Error::bind("PREDICT arguments must be column references"));
                        };
                        let f = resolve(scope, qualifier.as_ref().map(|q| q.value.as_str()), &name.value)?
                            .ok_or_else(|| Error::bind(format!("unknown column '{arg}'")))?;
                        cols.push((feat.clone(), f));
                    }
                }
                let inputs = cols.iter().map(|(k, _)| InputRef { qualifier: None, column: k.clone() }).collect();
                let outs = outputs.iter().map(|(n, t)| OutputSpec { name: n.clone(), data_type: *t }).collect();
                (PromptTemplate::from_parts(String::new(), inputs, outs), cols)
            }
        };
        let inputs =
            input_cols.into_iter().map(|(key, f)| BoundInput { key, column: f.id, data_type: f.data_type }).collect();
        Ok(PredictInfo { model, prompt, inputs, mode, source: None, options: node.options.clone() })
    }

    fn bind_scalar_predict(
        &mut self,
        node: &PredictExprNode,
        scope: &[Field],
        pending: &mut Vec<PendingPredict>,
    ) -> Result<ScalarExpr> {
        if node.source.is_some() {
            return Err(Error::bind("a model call with a source relation belongs in FROM"));
        }
        let info = self.bind_predict_info(node, scope, PredictMode::Scalar)?;
        if info.prompt.outputs.len() != 1 {
            return Err(Error::bind(format!(
                "a model call used as an expression must declare exactly one output, found {}",
                info.prompt.outputs.len()
            )));
        }
        let out = info.prompt.outputs[0].clone();
        let mut field = self.field(&out.name, None, out.data_type, Origin::Predicted);
        field.hidden = true;
        let expr = ScalarExpr::column(&field);
        pending.push(PendingPredict { info, field });
        Ok(expr)
    }

    fn place_predicts(&mut self, mut plan: LogicalPlan, pending: Vec<PendingPredict>) -> LogicalPlan {
        for p in pending {
            let required = p.info.input_columns();
            let mut slot = Some((p.info, p.field));
            plan = place(plan, &required, &mut |child| {
                let (info, field) = slot.take().expect("placement wraps exactly once");
                LogicalPlan::Predict { input: Some(Box::new(child)), info, outputs: vec![field] }
            });
        }
        plan
    }

    fn expect_boolean(&self, e: &ScalarExpr, clause: &str) -> Result<()> {
        match e.data_type() {
            None | Some(DataType::Boolean) => Ok(()),
            Some(t) => Err(Error::bind(format!("{clause} condition must be BOOLEAN, found {}", t.keyword()))),
        }
    }

    fn make_binary(&self, op: BinaryOp, mut left: ScalarExpr, mut right: ScalarExpr) -> Result<ScalarExpr> {
        let (lt, rt) = (left.data_type(), right.data_type());
        match op {
            BinaryOp::And | BinaryOp::Or => {
                for t in [lt, rt] {
                    if t.is_some_and(|t| t != DataType::Boolean) {
                        return Err(Error::bind(format!(
                            "{} requires BOOLEAN operands, found {}",
                            op.symbol(),
                            type_name(t)
                        )));
                    }
                }
            }
            _ if op.is_comparison() => {
                // A string literal compared to a datetime is read as a timestamp.
                coerce_datetime_literal(&mut right, lt);
                coerce_datetime_literal(&mut left, rt);
                let (lt, rt) = (left.data_type(), right.data_type());
                if !comparable(lt, rt) {
                    return Err(Error::bind(format!(
                        "type mismatch: cannot compare {} with {} in ({left} {} {right})",
                        type_name(lt),
                        type_name(rt),
                        op.symbol()
                    )));
                }
            }
            BinaryOp::Concat => {}
            _ => {
                for t in [lt, rt] {
                    if t.is_some_and(|t| !t.is_numeric()) {
                        return Err(Error::bind(format!(
                            "arithmetic '{}' requires numeric operands, found {}",
                            op.symbol(),
                            type_name(t)
                        )));
                    }
                }
            }
        }
        Ok(ScalarExpr::Binary { op, left: Box::new(left), right: Box::new(right) })
    }

    fn bind_expr(
        &mut self,
        e: &Expr,
        scope: &[Field],
        group: Option<&GroupCtx>,
        mut pending: Option<&mut Vec<PendingPredict>>,
    ) -> Result<ScalarExpr> {
        if let Some(g) = group {
            if let Some(i) = g.group_asts.iter().position(|a| a == e) {
                return Ok(ScalarExpr::column(&g.group_fields[i]));
            }
            if is_agg_expr(e) {
                let i = g.agg_asts.iter().position(|a| a == e).expect("aggregates collected before binding");
                return Ok(ScalarExpr::column(&g.agg_fields[i]));
            }
        }
        match e {
            Expr::Column { qualifier, name } => {
                let q = qualifier.as_ref().map(|q| q.value.as_str());
                if let Some(g) = group {
                    if let Some(f) = resolve(&g.pre_scope, q, &name.value)? {
                        let pos = g
                            .group_bound
                            .iter()
                            .position(|b| matches!(b, ScalarExpr::Column { id, .. } if *id == f.id));
                        return match pos {
                            Some(i) => Ok(ScalarExpr::column(&g.group_fields[i])),
                            None => Err(Error::bind(format!(
                                "column '{e}' must appear in GROUP BY or be used in an aggregate"
                            ))),
                        };
                    }
                }
                match resolve(scope, q, &name.value)? {
                    Some(f) => Ok(ScalarExpr::column(&f)),
                    None if name.quoted && qualifier.is_none() => {
                        self.notices.push(format!(
                            "\"{}\" matches no column; treated as the string literal '{}'",
                            name.value, name.value
                        ));
                        Ok(ScalarExpr::Literal(Value::Varchar(name.value.clone())))
                    }
                    None => Err(Error::bind(format!("unknown column '{e}'"))),
                }
            }
            Expr::Literal(l) => Ok(ScalarExpr::Literal(match l {
                Literal::Null => Value::Null,
                Literal::Boolean(b) => Value::Boolean(*b),
                Literal::Integer(i) => Value::Integer(*i),
                Literal::Double(d) => Value::Double(*d),
                Literal::String(s) => Value::Varchar(s.clone()),
            })),
            Expr::Binary { op, left, right } => {
                let l = self.bind_expr(left, scope, group, pending.as_deref_mut())?;
                let r = self.bind_expr(right, scope, group, pending.as_deref_mut())?;
                self.make_binary(*op, l, r)
            }
            Expr::Unary { op, expr } => {
                let inner = self.bind_expr(expr, scope, group, pending)?;
                let t = inner.data_type();
                let ok = match op {
                    UnaryOp::Not => t.is_none_or(|t| t == DataType::Boolean),
                    UnaryOp::Minus => t.is_none_or(DataType::is_numeric),
                };
                if !ok {
                    return Err(Error::bind(format!("invalid operand type {} in {e}", type_name(t))));
                }
                Ok(ScalarExpr::Unary { op: *op, expr: Box::new(inner) })
            }
            Expr::IsNull { expr, negated } => {
                let inner = self.bind_expr(expr, scope, group, pending)?;
                Ok(ScalarExpr::IsNull { expr: Box::new(inner), negated: *negated })
            }
            Expr::Function { name, args, star } => {
                if *star || AggFunc::from_name(name).is_some() {
                    return Err(Error::bind(format!("aggregate function {name} is not allowed here")));
                }
                let func =
                    ScalarFunc::from_name(name).ok_or_else(|| Error::bind(format!("unknown function '{name}'")))?;
                let mut bound = Vec::new();
                for a in args {
                    bound.push(self.bind_expr(a, scope, group, pending.as_deref_mut())?);
                }
                let arity_ok = match func {
                    ScalarFunc::Coalesce => !bound.is_empty(),
                    ScalarFunc::Round => (1..=2).contains(&bound.len()),
                    _ => bound.len() == 1,
                };
                if !arity_ok {
                    return Err(Error::bind(format!("wrong number of arguments to {name}")));
                }
                Ok(ScalarExpr::Function { func, args: bound })
            }
            Expr::Predict(node) => {
                if node.agg {
                    return Err(Error::bind("LLM AGG is only allowed in the SELECT list"));
                }
                let Some(pending) = pending else {
                    return Err(Error::bind("a model call is not allowed in this position"));
                };
                self.bind_scalar_predict(node, scope, pending)
            }
        }
    }
}

fn coerce_datetime_literal(e: &mut ScalarExpr, other: Option<DataType>) {
    if other != Some(DataType::Datetime) {
        return;
    }
    if let ScalarExpr::Literal(Value::Varchar(s)) = e {
        if let Some(t) = parse_datetime(s) {
            *e = ScalarExpr::Literal(Value::Datetime(t));
        }
    }
}

fn place_filter(plan: LogicalPlan, predicate: ScalarExpr) -> LogicalPlan {
    let required = predicate.columns();
    let mut slot = Some(predicate);
    place(plan, &required, &mut |child| LogicalPlan::Filter {
        input: Box::new(child),
        predicate: slot.take().expect("placement wraps exactly once"),
    })
}

fn origin_of(e: &ScalarExpr, scope: &[Field], pending: &[PendingPredict]) -> Origin {
    match e {
        ScalarExpr::Column { id, .. } => scope
            .iter()
            .chain(pending.iter().map(|p| &p.field))
            .find(|f| f.id == *id)
            .map_or(Origin::Stored, |f| f.origin),
        _ => Origin::Stored,
    }
}

/// Finds the column `qualifier.name` in scope. Hidden columns are reachable only
/// through an explicit qualifier.
fn resolve(scope: &[Field], qualifier: Option<&str>, name: &str) -> Result<Option<Field>> {
    let matches_q = |f: &&Field| match qualifier {
        None => true,
        Some(q) => f.qualifier.as_deref().is_some_and(|fq| name_eq(fq, q)),
    };
    let visible: Vec<&Field> = scope.iter().filter(|f| !f.hidden && name_eq(&f.name, name)).filter(matches_q).collect();
    match visible.len() {
        0 => {}
        1 => return Ok(Some(visible[0].clone())),
        _ => {
            let shown = match qualifier {
                Some(q) => format!("{q}.{name}"),
                None => name.to_string(),
            };
            return Err(Error::bind(format!("column reference '{shown}' is ambiguous")));
        }
    }
    if qualifier.is_some() {
        if let Some(f) = scope.iter().filter(|f| f.hidden && name_eq(&f.name, name)).find(matches_q) {
            return Ok(Some(f.clone()));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_statement, Statement};
    use crate::storage::Table;
    use crate::types::ColumnSchema;

    fn catalogs() -> (TableCatalog, ModelCatalog) {
        let mut t = TableCatalog::new();
        t.register(Table::new(
            "Movie",
            vec![
                ColumnSchema::new("id", DataType::Integer),
                ColumnSchema::new("title", DataType::Varchar),
                ColumnSchema::new("plot", DataType::Varchar),
            ],
        ));
        t.register(Table::new(
            "Review",
            vec![ColumnSchema::new("id", DataType::Integer), ColumnSchema::new("review", DataType::Varchar)],
        ));
        let mut m = ModelCatalog::in_memory();
        let Statement::CreateModel(s) = parse_statement("CREATE LLM MODEL m PATH 'x'").unwrap() else { panic!() };
        m.create_model(&s, &t).unwrap();
        (t, m)
    }

    fn plan(sql: &str) -> Result<LogicalPlan> {
        let (t, m) = catalogs();
        let Statement::Select(q) = parse_statement(sql).unwrap() else { panic!() };
        bind_query(&q, &t, &m).map(|b| b.plan)
    }

    #[test]
    fn table_inference_appends_outputs() {
        let p = plan("SELECT * FROM LLM m (PROMPT 'genre of {{plot}} {genre VARCHAR}', Movie)").unwrap();
        let names: Vec<String> = p.schema().iter().map(|f| f.name.clone()).collect();
        assert_eq!(names, ["id", "title", "plot", "genre"]);
    }

    #[test]
    fn generation_schema_is_outputs_only() {
        let p = plan("SELECT * FROM LLM m (PROMPT 'list the {name VARCHAR} of all states') AS states").unwrap();
        let names: Vec<String> = p.schema().iter().map(|f| f.display_name()).collect();
        assert_eq!(names, ["states.name"]);
    }

    #[test]
    fn unknown_prompt_input_is_a_bind_error() {
        let e = plan("SELECT LLM m (PROMPT '{{nope}} {x VARCHAR}') FROM Review").unwrap_err();
        assert!(matches!(e, Error::Bind(_)), "{e}");
    }

    #[test]
    fn collision_suggests_renaming() {
        let e = plan("SELECT * FROM LLM m (PROMPT '{{plot}} {title VARCHAR}', Movie)").unwrap_err();
        assert!(e.to_string().contains("rename"), "{e}");
    }

    #[test]
    fn semantic_join_lowers_to_cross_predict_filter() {
        let p = plan(
            "SELECT m.title FROM Movie m JOIN Review r ON LLM m (PROMPT 'does {{r.review}} fit {{m.title}} {ok BOOLEAN}')",
        )
        .unwrap();
        let text = p.to_string();
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        assert!(lines[1].starts_with("Filter ok"), "{text}");
        assert!(lines[2].starts_with("Predict scalar"), "{text}");
        assert_eq!(lines[3], "CrossJoin");
    }

    #[test]
    fn one_sided_join_condition_becomes_select() {
        let (t, m) = catalogs();
        let Statement::Select(q) = parse_statement(
            "SELECT m.title FROM Movie m JOIN Review r ON m.id = r.id AND LLM m (PROMPT 'is {{r.review}} bad {b BOOLEAN}')",
        )
        .unwrap() else {
            panic!()
        };
        let b = bind_query(&q, &t, &m).unwrap();
        assert_eq!(b.notices.len(), 1);
        let text = b.plan.to_string();
        assert!(text.contains("Join ON (m.id = r.id)"), "{text}");
        let join_line = text.lines().position(|l| l.trim().starts_with("Join")).unwrap();
        let filter_line = text.lines().position(|l| l.trim().starts_with("Filter b")).unwrap();
        assert!(filter_line > join_line, "{text}");
    }

    #[test]
    fn grouping_rules() {
        assert!(plan("SELECT title, count(*) FROM Movie GROUP BY title").is_ok());
        let e = plan("SELECT plot, count(*) FROM Movie GROUP BY title").unwrap_err();
        assert!(e.to_string().contains("GROUP BY"), "{e}");
    }

    #[test]
    fn predicted_type_mismatch() {
        let e = plan("SELECT title FROM Movie WHERE LLM m (PROMPT '{{plot}} {n INTEGER}') = 'x'").unwrap_err();
        assert!(e.to_string().contains("type mismatch"), "{e}");
    }

    #[test]
    fn quoted_unknown_identifier_is_a_string() {
        assert!(plan("SELECT title FROM Movie WHERE title = \"USA\"").is_ok());
    }
}
