//! Statement AST. `Display` renders parseable SQL; `parse(display(ast)) == ast`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::prompt::PromptTemplate;
use crate::types::DataType;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ident {
    pub value: String,
    pub quoted: bool,
}

impl Ident {
    pub fn new(value: impl Into<String>) -> Self {
        Self { value: value.into(), quoted: false }
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.quoted {
            write!(f, "\"{}\"", self.value.replace('"', "\"\""))
        } else {
            f.write_str(&self.value)
        }
    }
}

/// Typed option value from an `OPTIONS { ... }` clause or a `SET` statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptionValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl OptionValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            OptionValue::Int(i) => Some(*i),
            OptionValue::Float(f) if f.fract() == 0.0 => Some(*f as i64),
            OptionValue::Str(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            OptionValue::Int(i) => Some(*i as f64),
            OptionValue::Float(f) => Some(*f),
            OptionValue::Str(s) => s.trim().parse().ok(),
            OptionValue::Bool(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            OptionValue::Bool(b) => Some(*b),
            OptionValue::Int(0) => Some(false),
            OptionValue::Int(1) => Some(true),
            OptionValue::Str(s) => match s.to_ascii_lowercase().as_str() {
                "true" | "on" | "yes" => Some(true),
                "false" | "off" | "no" => Some(false),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            OptionValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for OptionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptionValue::Bool(b) => write!(f, "{b}"),
            OptionValue::Int(i) => write!(f, "{i}"),
            OptionValue::Float(x) => write!(f, "{x:?}"),
            OptionValue::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

/// Ordered key/value list; keys are unique.
pub type Options = Vec<(String, OptionValue)>;

/// Renders options in the `OPTIONS { 'k': v }` literal form.
pub fn options_to_string(options: &Options) -> String {
    struct Show<'a>(&'a Options);
    impl fmt::Display for Show<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            fmt_options(f, self.0)
        }
    }
    Show(options).to_string()
}

fn fmt_options(f: &mut fmt::Formatter<'_>, options: &Options) -> fmt::Result {
    f.write_str("{")?;
    for (i, (k, v)) in options.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, " '{}': {v}", k.replace('\'', "''"))?;
    }
    f.write_str(if options.is_empty() { "}" } else { " }" })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Llm,
    Tabular,
    Embed,
}

impl ModelKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ModelKind::Llm => "LLM",
            ModelKind::Tabular => "TABULAR",
            ModelKind::Embed => "EMBED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateModelStmt {
    pub name: String,
    pub kind: ModelKind,
    pub path: String,
    pub on_prompt: bool,
    pub api: Option<String>,
    pub secret: Option<String>,
    pub relation: Option<String>,
    pub features: Option<Vec<String>>,
    pub outputs: Option<Vec<(String, DataType)>>,
    pub options: Options,
}

/// Which clause introduced a predict expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictClause {
    Llm,
    Predict,
}

/// Unified inference node for `LLM` and `PREDICT` clauses.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictExprNode {
    pub clause: PredictClause,
    pub model_name: String,
    pub source: Option<Ident>,
    pub prompt: Option<PromptTemplate>,
    pub agg: bool,
    pub alias: Option<Ident>,
    /// Feature columns for expression-position `PREDICT model (col, ...)`.
    pub args: Vec<Expr>,
    /// Per-clause hints such as `selectivity` and `quality`.
    pub options: Options,
}

impl fmt::Display for PredictExprNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.clause {
            PredictClause::Llm => {
                f.write_str("LLM ")?;
                if self.agg {
                    f.write_str("AGG ")?;
                }
                write!(f, "{} (", self.model_name)?;
                let mut first = true;
                if let Some(p) = &self.prompt {
                    write!(f, "PROMPT '{}'", p.raw.replace('\'', "''"))?;
                    first = false;
                }
                if let Some(src) = &self.source {
                    if !first {
                        f.write_str(", ")?;
                    }
                    write!(f, "{src}")?;
                    first = false;
                }
                if !self.options.is_empty() {
                    if !first {
                        f.write_str(", ")?;
                    }
                    f.write_str("OPTIONS ")?;
                    fmt_options(f, &self.options)?;
                }
                f.write_str(")")
            }
            PredictClause::Predict => {
                write!(f, "PREDICT {} (", self.model_name)?;
                if let Some(src) = &self.source {
                    write!(f, "{src}")?;
                } else {
                    for (i, a) in self.args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{a}")?;
                    }
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Boolean(bool),
    Integer(i64),
    Double(f64),
    String(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Null => f.write_str("NULL"),
            Literal::Boolean(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
            Literal::Integer(i) => write!(f, "{i}"),
            Literal::Double(d) => write!(f, "{d:?}"),
            Literal::String(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    And,
    Or,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Plus,
    Minus,
    Multiply,
    Divide,
    Modulo,
    Concat,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Plus => "+",
            BinaryOp::Minus => "-",
            BinaryOp::Multiply => "*",
            BinaryOp::Divide => "/",
            BinaryOp::Modulo => "%",
            BinaryOp::Concat => "||",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Eq | BinaryOp::NotEq | BinaryOp::Lt | BinaryOp::LtEq | BinaryOp::Gt | BinaryOp::GtEq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column { qualifier: Option<Ident>, name: Ident },
    Literal(Literal),
    Binary { op: BinaryOp, left: Box<Expr>, right: Box<Expr> },
    Unary { op: UnaryOp, expr: Box<Expr> },
    IsNull { expr: Box<Expr>, negated: bool },
    Function { name: String, args: Vec<Expr>, star: bool },
    Predict(Box<PredictExprNode>),
}

impl Expr {
    pub fn column(name: &str) -> Expr {
        Expr::Column { qualifier: None, name: Ident::new(name) }
    }

    /// Visits this expression and all sub-expressions, pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Binary { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => expr.walk(f),
            Expr::Function { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Predict(p) => p.args.iter().for_each(|a| a.walk(f)),
            Expr::Column { .. } | Expr::Literal(_) => {}
        }
    }

    pub fn contains_predict(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e, Expr::Predict(_)));
        found
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column { qualifier: Some(q), name } => write!(f, "{q}.{name}"),
            Expr::Column { qualifier: None, name } => write!(f, "{name}"),
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::Unary { op: UnaryOp::Not, expr } => write!(f, "(NOT {expr})"),
            Expr::Unary { op: UnaryOp::Minus, expr } => write!(f, "(- {expr})"),
            Expr::IsNull { expr, negated } => {
                write!(f, "({expr} IS {}NULL)", if *negated { "NOT " } else { "" })
            }
            Expr::Function { name, star: true, .. } => write!(f, "{name}(*)"),
            Expr::Function { name, args, .. } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Predict(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    QualifiedWildcard(Ident),
    Expr { expr: Expr, alias: Option<Ident> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableFactor {
    Table {
        name: Ident,
        alias: Option<Ident>,
    },
    Derived {
        query: Box<Query>,
        alias: Ident,
    },
    /// FROM-position `LLM` / `PREDICT`; the alias lives inside the node.
    Predict(Box<PredictExprNode>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum JoinKind {
    Inner(Expr),
    Natural,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub kind: JoinKind,
    pub factor: TableFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub factor: TableFactor,
    pub joins: Vec<Join>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Query {
    pub projection: Vec<SelectItem>,
    pub from: Vec<TableRef>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainMode {
    Logical,
    Optimized,
    Analyze,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KeyDecl {
    Primary(String),
    Foreign { column: String, ref_table: String, ref_column: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Select(Box<Query>),
    Explain { mode: ExplainMode, query: Box<Query> },
    CreateModel(CreateModelStmt),
    CreateTableAs { name: Ident, query: Box<Query> },
    CreateTable { name: Ident, columns: Vec<(Ident, DataType)> },
    Insert { table: Ident, rows: Vec<Vec<Expr>> },
    CreateSecret { name: String, value: String },
    DropModel { name: String },
    DropTable { name: Ident },
    Set { name: String, value: OptionValue },
    AlterTableAddKey { table: Ident, key: KeyDecl },
}

impl fmt::Display for TableFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableFactor::Table { name, alias } => {
                write!(f, "{name}")?;
                if let Some(a) = alias {
                    write!(f, " AS {a}")?;
                }
                Ok(())
            }
            TableFactor::Derived { query, alias } => write!(f, "({query}) AS {alias}"),
            TableFactor::Predict(p) => {
                write!(f, "{p}")?;
                if let Some(a) = &p.alias {
                    write!(f, " AS {a}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factor)?;
        for j in &self.joins {
            match &j.kind {
                JoinKind::Inner(on) => write!(f, " JOIN {} ON {on}", j.factor)?,
                JoinKind::Natural => write!(f, " NATURAL JOIN {}", j.factor)?,
                JoinKind::Cross => write!(f, " CROSS JOIN {}", j.factor)?,
            }
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.projection.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match item {
                SelectItem::Wildcard => f.write_str("*")?,
                SelectItem::QualifiedWildcard(q) => write!(f, "{q}.*")?,
                SelectItem::Expr { expr, alias } => {
                    write!(f, "{expr}")?;
                    if let Some(a) = alias {
                        write!(f, " AS {a}")?;
                    }
                }
            }
        }
        if !self.from.is_empty() {
            f.write_str(" FROM ")?;
            for (i, t) in self.from.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{t}")?;
            }
        }
        if let Some(w) = &self.selection {
            write!(f, " WHERE {w}")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY ")?;
            for (i, g) in self.group_by.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{g}")?;
            }
        }
        if let Some(h) = &self.having {
            write!(f, " HAVING {h}")?;
        }
        if !self.order_by.is_empty() {
            f.write_str(" ORDER BY ")?;
            for (i, o) in self.order_by.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}{}", o.expr, if o.descending { " DESC" } else { "" })?;
            }
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Select(q) => write!(f, "{q}"),
            Statement::Explain { mode, query } => {
                let m = match mode {
                    ExplainMode::Logical => "",
                    ExplainMode::Optimized => "OPTIMIZED ",
                    ExplainMode::Analyze => "ANALYZE ",
                };
                write!(f, "EXPLAIN {m}{query}")
            }
            Statement::CreateModel(m) => {
                write!(f, "CREATE {} MODEL {} PATH '{}'", m.kind.keyword(), m.name, m.path.replace('\'', "''"))?;
                if m.on_prompt {
                    f.write_str(" ON PROMPT")?;
                }
                if let Some(api) = &m.api {
                    write!(f, " API '{}'", api.replace('\'', "''"))?;
                }
                if let Some(s) = &m.secret {
                    write!(f, " SECRET {s}")?;
                }
                if let Some(r) = &m.relation {
                    write!(f, " ON TABLE {r}")?;
                }
                if let Some(feats) = &m.features {
                    write!(f, " FEATURES ({})", feats.join(", "))?;
                }
                if let Some(outs) = &m.outputs {
                    let cols: Vec<String> = outs.iter().map(|(n, t)| format!("{n} {t}")).collect();
                    write!(f, " OUTPUT ({})", cols.join(", "))?;
                }
                if !m.options.is_empty() {
                    f.write_str(" OPTIONS ")?;
                    fmt_options(f, &m.options)?;
                }
                Ok(())
            }
            Statement::CreateTableAs { name, query } => write!(f, "CREATE TABLE {name} AS {query}"),
            Statement::CreateTable { name, columns } => {
                let cols: Vec<String> = columns.iter().map(|(n, t)| format!("{n} {t}")).collect();
                write!(f, "CREATE TABLE {name} ({})", cols.join(", "))
            }
            Statement::Insert { table, rows } => {
                write!(f, "INSERT INTO {table} VALUES ")?;
                for (i, row) in rows.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    let vals: Vec<String> = row.iter().map(|e| e.to_string()).collect();
                    write!(f, "({})", vals.join(", "))?;
                }
                Ok(())
            }
            Statement::CreateSecret { name, .. } => write!(f, "CREATE SECRET {name} AS '***'"),
            Statement::DropModel { name } => write!(f, "DROP MODEL {name}"),
            Statement::DropTable { name } => write!(f, "DROP TABLE {name}"),
            Statement::Set { name, value } => write!(f, "SET {name} = {value}"),
            Statement::AlterTableAddKey { table, key } => match key {
                KeyDecl::Primary(c) => write!(f, "ALTER TABLE {table} ADD PRIMARY KEY ({c})"),
                KeyDecl::Foreign { column, ref_table, ref_column } => {
                    write!(f, "ALTER TABLE {table} ADD FOREIGN KEY ({column}) REFERENCES {ref_table} ({ref_column})")
                }
            },
        }
    }
}
