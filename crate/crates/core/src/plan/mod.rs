//! Logical plans: relational operators plus the predict operator.

mod binder;
mod explain;

pub use binder::{bind_query, Binder, BoundQuery};
pub use explain::{explain, explain_annotated};

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use crate::catalog::ModelEntry;
use crate::sql::{BinaryOp, Options, PromptTemplate, UnaryOp};
use crate::types::{format_datetime, DataType, Origin, Value};

/// Plan-wide identity of a column. Expressions refer to columns by id, so
/// rewrites can move operators without renumbering anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub id: ColumnId,
    pub name: String,
    pub qualifier: Option<String>,
    pub data_type: DataType,
    pub origin: Origin,
    /// Hidden fields flow through the plan but are not visible to `*` or
    /// unqualified name lookup (natural-join duplicates, synthetic predictions).
    pub hidden: bool,
}

impl Field {
    pub fn display_name(&self) -> String {
        match &self.qualifier {
            Some(q) => format!("{q}.{}", self.name),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarFunc {
    Lower,
    Upper,
    Length,
    Abs,
    Round,
    Coalesce,
}

impl ScalarFunc {
    pub fn from_name(name: &str) -> Option<ScalarFunc> {
        Some(match name.to_ascii_lowercase().as_str() {
            "lower" => ScalarFunc::Lower,
            "upper" => ScalarFunc::Upper,
            "length" | "len" => ScalarFunc::Length,
            "abs" => ScalarFunc::Abs,
            "round" => ScalarFunc::Round,
            "coalesce" => ScalarFunc::Coalesce,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarFunc::Lower => "lower",
            ScalarFunc::Upper => "upper",
            ScalarFunc::Length => "length",
            ScalarFunc::Abs => "abs",
            ScalarFunc::Round => "round",
            ScalarFunc::Coalesce => "coalesce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarExpr {
    Column { id: ColumnId, name: String, data_type: DataType },
    Literal(Value),
    Binary { op: BinaryOp, left: Box<ScalarExpr>, right: Box<ScalarExpr> },
    Unary { op: UnaryOp, expr: Box<ScalarExpr> },
    IsNull { expr: Box<ScalarExpr>, negated: bool },
    Function { func: ScalarFunc, args: Vec<ScalarExpr> },
}

impl ScalarExpr {
    pub fn column(field: &Field) -> ScalarExpr {
        ScalarExpr::Column { id: field.id, name: field.display_name(), data_type: field.data_type }
    }

    /// Static type; `None` for an untyped NULL.
    pub fn data_type(&self) -> Option<DataType> {
        match self {
            ScalarExpr::Column { data_type, .. } => Some(*data_type),
            ScalarExpr::Literal(v) => v.data_type(),
            ScalarExpr::Binary { op, left, right } => match op {
                BinaryOp::Plus | BinaryOp::Minus | BinaryOp::Multiply | BinaryOp::Modulo => {
                    match (left.data_type(), right.data_type()) {
                        (Some(DataType::Integer), Some(DataType::Integer)) => Some(DataType::Integer),
                        (None, None) => None,
                        _ => Some(DataType::Double),
                    }
                }
                BinaryOp::Divide => Some(DataType::Double),
                BinaryOp::Concat => Some(DataType::Varchar),
                _ => Some(DataType::Boolean),
            },
            ScalarExpr::Unary { op: UnaryOp::Not, .. } | ScalarExpr::IsNull { .. } => Some(DataType::Boolean),
            ScalarExpr::Unary { op: UnaryOp::Minus, expr } => expr.data_type(),
            ScalarExpr::Function { func, args } => match func {
                ScalarFunc::Lower | ScalarFunc::Upper => Some(DataType::Varchar),
                ScalarFunc::Length => Some(DataType::Integer),
                ScalarFunc::Abs => args.first().and_then(|a| a.data_type()),
                ScalarFunc::Round => Some(DataType::Double),
                ScalarFunc::Coalesce => args.iter().find_map(|a| a.data_type()),
            },
        }
    }

    pub fn columns(&self) -> Vec<ColumnId> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut Vec<ColumnId>) {
        match self {
            ScalarExpr::Column { id, .. } => {
                if !out.contains(id) {
                    out.push(*id);
                }
            }
            ScalarExpr::Literal(_) => {}
            ScalarExpr::Binary { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
            ScalarExpr::Unary { expr, .. } | ScalarExpr::IsNull { expr, .. } => expr.collect_columns(out),
            ScalarExpr::Function { args, .. } => args.iter().for_each(|a| a.collect_columns(out)),
        }
    }

    pub fn and(self, other: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Binary { op: BinaryOp::And, left: Box::new(self), right: Box::new(other) }
    }
}

/// Splits a predicate on top-level ANDs.
pub fn split_conjuncts(expr: ScalarExpr) -> Vec<ScalarExpr> {
    match expr {
        ScalarExpr::Binary { op: BinaryOp::And, left, right } => {
            let mut v = split_conjuncts(*left);
            v.extend(split_conjuncts(*right));
            v
        }
        other => vec![other],
    }
}

pub fn conjoin(mut parts: Vec<ScalarExpr>) -> Option<ScalarExpr> {
    if parts.is_empty() {
        return None;
    }
    let first = parts.remove(0);
    Some(parts.into_iter().fold(first, ScalarExpr::and))
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Column { name, .. } => f.write_str(name),
            ScalarExpr::Literal(v) => write_literal(f, v),
            ScalarExpr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            ScalarExpr::Unary { op: UnaryOp::Not, expr } => write!(f, "(NOT {expr})"),
            ScalarExpr::Unary { op: UnaryOp::Minus, expr } => write!(f, "(- {expr})"),
            ScalarExpr::IsNull { expr, negated } => {
                write!(f, "({expr} IS {}NULL)", if *negated { "NOT " } else { "" })
            }
            ScalarExpr::Function { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, v: &Value) -> fmt::Result {
    match v {
        Value::Null => f.write_str("NULL"),
        Value::Boolean(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
        Value::Varchar(s) => write!(f, "'{}'", s.replace('\'', "''")),
        Value::Datetime(t) => write!(f, "'{}'", format_datetime(*t)),
        other => write!(f, "{other}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    TableInference,
    TableGeneration,
    Scalar,
    Aggregate,
}

impl PredictMode {
    pub fn label(self) -> &'static str {
        match self {
            PredictMode::TableInference => "table_inference",
            PredictMode::TableGeneration => "table_generation",
            PredictMode::Scalar => "scalar",
            PredictMode::Aggregate => "aggregate",
        }
    }
}

/// A prompt input resolved to a column of the operator's input.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInput {
    /// Key used in the rendered payload, as written in the prompt.
    pub key: String,
    pub column: ColumnId,
    pub data_type: DataType,
}

/// Everything the predict operator needs, resolved at bind time.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictInfo {
    pub model: Arc<ModelEntry>,
    pub prompt: PromptTemplate,
    pub inputs: Vec<BoundInput>,
    pub mode: PredictMode,
    pub source: Option<String>,
    /// Options written on the clause itself; they override model options.
    pub options: Options,
}

impl PredictInfo {
    pub fn outputs(&self) -> Vec<(String, DataType)> {
        self.prompt.outputs.iter().map(|o| (o.name.clone(), o.data_type)).collect()
    }

    pub fn input_columns(&self) -> Vec<ColumnId> {
        let mut v: Vec<ColumnId> = Vec::new();
        for i in &self.inputs {
            if !v.contains(&i.column) {
                v.push(i.column);
            }
        }
        v
    }

    pub fn clause_option(&self, key: &str) -> Option<&crate::sql::OptionValue> {
        self.options.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    CountStar,
    Sum,
    Avg,
    Min,
    Max,
    Semantic,
}

impl AggFunc {
    pub fn from_name(name: &str) -> Option<AggFunc> {
        Some(match name.to_ascii_lowercase().as_str() {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggCall {
    pub func: AggFunc,
    pub arg: Option<ScalarExpr>,
    /// Present for `LLM AGG`; inputs refer to the aggregate's input columns.
    pub predict: Option<Box<PredictInfo>>,
    pub field: Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinType {
    Inner,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortKey {
    pub expr: ScalarExpr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogicalPlan {
    Get {
        table: String,
        alias: Option<String>,
        fields: Vec<Field>,
    },
    OneRow,
    Filter {
        input: Box<LogicalPlan>,
        predicate: ScalarExpr,
    },
    Project {
        input: Box<LogicalPlan>,
        items: Vec<(ScalarExpr, Field)>,
    },
    Join {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        kind: JoinType,
        condition: Option<ScalarExpr>,
        /// Right-side columns hidden by a natural join.
        hidden: Vec<ColumnId>,
    },
    Aggregate {
        input: Box<LogicalPlan>,
        groups: Vec<(ScalarExpr, Field)>,
        aggs: Vec<AggCall>,
    },
    Sort {
        input: Box<LogicalPlan>,
        keys: Vec<SortKey>,
    },
    Limit {
        input: Box<LogicalPlan>,
        limit: u64,
    },
    /// Model inference. Without an input this is a generation leaf; otherwise
    /// the predicted `outputs` are appended to the input columns.
    Predict {
        input: Option<Box<LogicalPlan>>,
        info: PredictInfo,
        outputs: Vec<Field>,
    },
}

impl LogicalPlan {
    pub fn schema(&self) -> Vec<Field> {
        match self {
            LogicalPlan::Get { fields, .. } => fields.clone(),
            LogicalPlan::OneRow => Vec::new(),
            LogicalPlan::Filter { input, .. } | LogicalPlan::Sort { input, .. } | LogicalPlan::Limit { input, .. } => {
                input.schema()
            }
            LogicalPlan::Project { items, .. } => items.iter().map(|(_, f)| f.clone()).collect(),
            LogicalPlan::Join { left, right, hidden, .. } => {
                let mut s = left.schema();
                s.extend(right.schema().into_iter().map(|mut f| {
                    if hidden.contains(&f.id) {
                        f.hidden = true;
                    }
                    f
                }));
                s
            }
            LogicalPlan::Aggregate { groups, aggs, .. } => {
                groups.iter().map(|(_, f)| f.clone()).chain(aggs.iter().map(|a| a.field.clone())).collect()
            }
            LogicalPlan::Predict { input, outputs, .. } => {
                let mut s = input.as_ref().map(|i| i.schema()).unwrap_or_default();
                s.extend(outputs.iter().cloned());
                s
            }
        }
    }

    pub fn column_ids(&self) -> HashSet<ColumnId> {
        self.schema().iter().map(|f| f.id).collect()
    }

    pub fn provides(&self, ids: &[ColumnId]) -> bool {
        let have = self.column_ids();
        ids.iter().all(|i| have.contains(i))
    }

    pub fn children(&self) -> Vec<&LogicalPlan> {
        match self {
            LogicalPlan::Get { .. } | LogicalPlan::OneRow => vec![],
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::Aggregate { input, .. }
            | LogicalPlan::Sort { input, .. }
            | LogicalPlan::Limit { input, .. } => vec![input],
            LogicalPlan::Join { left, right, .. } => vec![left, right],
            LogicalPlan::Predict { input, .. } => input.iter().map(|b| b.as_ref()).collect(),
        }
    }

    /// Number of predict operators (including semantic aggregates) in the tree.
    pub fn predict_count(&self) -> usize {
        let own = match self {
            LogicalPlan::Predict { .. } => 1,
            LogicalPlan::Aggregate { aggs, .. } => aggs.iter().filter(|a| a.predict.is_some()).count(),
            _ => 0,
        };
        own + self.children().iter().map(|c| c.predict_count()).sum::<usize>()
    }

    /// Largest column id in use, so rewrites can allocate fresh ones.
    pub fn max_column_id(&self) -> u32 {
        let own = self.schema().iter().map(|f| f.id.0).max().unwrap_or(0);
        self.children().iter().map(|c| c.max_column_id()).fold(own, u32::max)
    }
}

impl fmt::Display for LogicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&explain(self))
    }
}
