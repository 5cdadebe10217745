//! Recursive-descent parser for the extended dialect.

use super::ast::*;
use super::lexer::{tokenize, Spanned, Token};
use super::prompt::{OutputSpec, PromptTemplate};
use crate::error::{Error, Location, Result};
use crate::types::DataType;

/// Output name given to a prompt that declares no output placeholder.
pub const IMPLICIT_OUTPUT: &str = "answer";

const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "HAVING", "LIMIT", "JOIN", "ON", "AS", "AND", "OR", "NOT",
    "NATURAL", "INNER", "CROSS", "LEFT", "RIGHT", "FULL", "OUTER", "UNION", "IS", "NULL", "TRUE", "FALSE", "ASC",
    "DESC", "LLM", "PREDICT", "PROMPT", "OPTIONS", "CREATE", "DROP", "SET", "EXPLAIN", "INSERT", "INTO", "VALUES",
    "TABLE",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

/// Parses a script of `;`-separated statements.
pub fn parse_statements(text: &str) -> Result<Vec<Statement>> {
    let tokens = tokenize(text)?;
    let mut p = Parser::new(tokens, text);
    let mut out = Vec::new();
    loop {
        while p.eat(&Token::Semicolon) {}
        if p.at_end() {
            break;
        }
        out.push(p.statement()?);
        if !p.at_end() && !p.eat(&Token::Semicolon) {
            return Err(p.expected("';' or end of input"));
        }
    }
    Ok(out)
}

/// Parses exactly one statement (a trailing `;` is allowed).
pub fn parse_statement(text: &str) -> Result<Statement> {
    let mut stmts = parse_statements(text)?;
    match stmts.len() {
        1 => Ok(stmts.remove(0)),
        0 => Err(Error::Syntax { location: Location { line: 1, column: 1 }, message: "empty statement".into() }),
        _ => Err(Error::Syntax {
            location: Location { line: 1, column: 1 },
            message: "expected a single statement".into(),
        }),
    }
}

/// Parses the body of an `OPTIONS` clause, e.g. `{ 'n_threads': 1 }`.
pub fn parse_options(text: &str) -> Result<Options> {
    let tokens = tokenize(text)?;
    let mut p = Parser::new(tokens, text);
    let opts = p.options_body()?;
    if !p.at_end() {
        return Err(p.expected("end of input"));
    }
    Ok(opts)
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    end: Location,
    allow_agg: bool,
}

impl Parser {
    fn new(tokens: Vec<Spanned>, text: &str) -> Self {
        let line = text.lines().count().max(1);
        let column = text.lines().last().map_or(0, |l| l.chars().count()) + 1;
        Parser { tokens, pos: 0, end: Location { line, column }, allow_agg: false }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.token)
    }

    fn peek_at(&self, offset: usize) -> Option<&Token> {
        self.tokens.get(self.pos + offset).map(|t| &t.token)
    }

    fn location(&self) -> Location {
        self.tokens.get(self.pos).map_or(self.end, |t| t.location)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|t| t.token.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, t: &Token) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn peek_kw(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Syntax { location: self.location(), message: message.into() }
    }

    fn expected(&self, what: &str) -> Error {
        let found = self.peek().map_or("end of input".to_string(), |t| format!("'{t}'"));
        self.error(format!("expected {what}, found {found}"))
    }

    fn expect(&mut self, t: &Token) -> Result<()> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.expected(&format!("'{t}'")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.expected(kw))
        }
    }

    fn ident(&mut self) -> Result<Ident> {
        match self.peek() {
            Some(Token::Word(w)) if !is_reserved(w) => {
                let v = w.clone();
                self.pos += 1;
                Ok(Ident::new(v))
            }
            Some(Token::QuotedIdent(s)) => {
                let v = s.clone();
                self.pos += 1;
                Ok(Ident { value: v, quoted: true })
            }
            _ => Err(self.expected("identifier")),
        }
    }

    /// Any word, reserved or not; used where a name cannot be confused with syntax.
    fn any_name(&mut self) -> Result<Ident> {
        match self.peek() {
            Some(Token::Word(w)) => {
                let v = w.clone();
                self.pos += 1;
                Ok(Ident::new(v))
            }
            Some(Token::QuotedIdent(_)) => self.ident(),
            _ => Err(self.expected("name")),
        }
    }

    /// Possibly dotted name such as `schema.model`.
    fn qualified_name(&mut self) -> Result<String> {
        let mut name = self.ident()?.value;
        while self.peek() == Some(&Token::Dot) {
            self.pos += 1;
            name.push('.');
            name.push_str(&self.ident()?.value);
        }
        Ok(name)
    }

    fn string(&mut self) -> Result<(String, Location)> {
        let loc = self.location();
        match self.next() {
            Some(Token::Str(s)) => Ok((s, loc)),
            _ => {
                self.pos -= 1;
                Err(self.expected("string literal"))
            }
        }
    }

    fn statement(&mut self) -> Result<Statement> {
        if self.peek_kw("SELECT") {
            return Ok(Statement::Select(Box::new(self.query()?)));
        }
        if self.eat_kw("EXPLAIN") {
            let mode = if self.eat_kw("OPTIMIZED") {
                ExplainMode::Optimized
            } else if self.eat_kw("ANALYZE") {
                ExplainMode::Analyze
            } else {
                ExplainMode::Logical
            };
            return Ok(Statement::Explain { mode, query: Box::new(self.query()?) });
        }
        if self.eat_kw("CREATE") {
            return self.create();
        }
        if self.eat_kw("DROP") {
            if self.eat_kw("MODEL") {
                return Ok(Statement::DropModel { name: self.qualified_name()? });
            }
            self.expect_kw("TABLE")?;
            return Ok(Statement::DropTable { name: self.ident()? });
        }
        if self.eat_kw("SET") {
            let name = self.any_name()?.value.to_ascii_lowercase();
            if !self.eat(&Token::Eq) {
                self.expect_kw("TO")?;
            }
            let value = self.set_value()?;
            return Ok(Statement::Set { name, value });
        }
        if self.eat_kw("INSERT") {
            self.expect_kw("INTO")?;
            let table = self.ident()?;
            self.expect_kw("VALUES")?;
            let mut rows = Vec::new();
            loop {
                self.expect(&Token::LParen)?;
                let row = self.expr_list()?;
                self.expect(&Token::RParen)?;
                rows.push(row);
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
            return Ok(Statement::Insert { table, rows });
        }
        if self.eat_kw("ALTER") {
            self.expect_kw("TABLE")?;
            let table = self.ident()?;
            self.expect_kw("ADD")?;
            let key = if self.eat_kw("FOREIGN") {
                self.expect_kw("KEY")?;
                let column = self.paren_ident()?;
                self.expect_kw("REFERENCES")?;
                let ref_table = self.ident()?.value;
                let ref_column = self.paren_ident()?;
                KeyDecl::Foreign { column, ref_table, ref_column }
            } else {
                self.eat_kw("PRIMARY");
                self.expect_kw("KEY")?;
                KeyDecl::Primary(self.paren_ident()?)
            };
            return Ok(Statement::AlterTableAddKey { table, key });
        }
        Err(self.expected("statement"))
    }

    fn paren_ident(&mut self) -> Result<String> {
        self.expect(&Token::LParen)?;
        let v = self.ident()?.value;
        self.expect(&Token::RParen)?;
        Ok(v)
    }

    fn set_value(&mut self) -> Result<OptionValue> {
        let negative = self.eat(&Token::Minus);
        let v = match self.next() {
            Some(Token::Int(i)) => OptionValue::Int(if negative { -i } else { i }),
            Some(Token::Float(f)) => OptionValue::Float(if negative { -f } else { f }),
            Some(Token::Str(s)) if !negative => OptionValue::Str(s),
            Some(Token::Word(w)) if !negative && w.eq_ignore_ascii_case("true") => OptionValue::Bool(true),
            Some(Token::Word(w)) if !negative && w.eq_ignore_ascii_case("false") => OptionValue::Bool(false),
            Some(Token::Word(w)) if !negative => OptionValue::Str(w),
            _ => {
                self.pos -= 1;
                return Err(self.expected("literal value"));
            }
        };
        Ok(v)
    }

    fn create(&mut self) -> Result<Statement> {
        let start = self.location();
        if self.eat_kw("TABLE") {
            let name = self.ident()?;
            if self.eat_kw("AS") {
                return Ok(Statement::CreateTableAs { name, query: Box::new(self.query()?) });
            }
            self.expect(&Token::LParen)?;
            let mut columns = Vec::new();
            loop {
                let col = self.ident()?;
                let ty = self.data_type()?;
                columns.push((col, ty));
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
            self.expect(&Token::RParen)?;
            return Ok(Statement::CreateTable { name, columns });
        }
        if self.eat_kw("SECRET") {
            let name = self.qualified_name()?;
            if !self.eat_kw("AS") {
                self.expect_kw("VALUE")?;
            }
            let (value, _) = self.string()?;
            return Ok(Statement::CreateSecret { name, value });
        }
        let kind = if self.eat_kw("LLM") {
            ModelKind::Llm
        } else if self.eat_kw("TABULAR") {
            ModelKind::Tabular
        } else if self.eat_kw("EMBED") {
            ModelKind::Embed
        } else {
            ModelKind::Llm
        };
        self.expect_kw("MODEL")?;
        let name = self.qualified_name()?;
        self.expect_kw("PATH")?;
        let (path, _) = self.string()?;
        let mut stmt = CreateModelStmt {
            name,
            kind,
            path,
            on_prompt: false,
            api: None,
            secret: None,
            relation: None,
            features: None,
            outputs: None,
            options: Vec::new(),
        };
        let mut explicit_on_prompt = false;
        loop {
            if self.eat_kw("ON") {
                if self.eat_kw("PROMPT") {
                    explicit_on_prompt = true;
                } else if self.eat_kw("TABLE") {
                    stmt.relation = Some(self.ident()?.value);
                } else {
                    return Err(self.expected("PROMPT or TABLE"));
                }
            } else if self.eat_kw("API") {
                stmt.api = Some(self.string()?.0);
            } else if self.eat_kw("SECRET") {
                stmt.secret = Some(self.qualified_name()?);
            } else if self.eat_kw("FEATURES") {
                self.expect(&Token::LParen)?;
                let mut cols = vec![self.ident()?.value];
                while self.eat(&Token::Comma) {
                    cols.push(self.ident()?.value);
                }
                self.expect(&Token::RParen)?;
                stmt.features = Some(cols);
            } else if self.eat_kw("OUTPUT") {
                self.expect(&Token::LParen)?;
                let mut cols = Vec::new();
                loop {
                    let n = self.ident()?.value;
                    let t = self.data_type()?;
                    cols.push((n, t));
                    if !self.eat(&Token::Comma) {
                        break;
                    }
                }
                self.expect(&Token::RParen)?;
                stmt.outputs = Some(cols);
            } else if self.eat_kw("OPTIONS") {
                stmt.options = self.options_body()?;
            } else {
                break;
            }
        }
        let has_io = stmt.features.is_some() || stmt.outputs.is_some();
        let err = |m: &str| Error::Syntax { location: start, message: m.to_string() };
        if stmt.features.is_some() != stmt.outputs.is_some() {
            return Err(err("FEATURES and OUTPUT must be given together"));
        }
        if explicit_on_prompt && has_io {
            return Err(err("ON PROMPT models take their inputs and outputs from the prompt, not FEATURES/OUTPUT"));
        }
        if stmt.kind == ModelKind::Tabular && !has_io {
            return Err(err("TABULAR models require FEATURES and OUTPUT"));
        }
        if stmt.kind == ModelKind::Tabular && explicit_on_prompt {
            return Err(err("TABULAR models cannot be ON PROMPT"));
        }
        // Language models without declared features resolve their I/O from the prompt.
        stmt.on_prompt = explicit_on_prompt || (stmt.kind != ModelKind::Tabular && !has_io);
        Ok(Statement::CreateModel(stmt))
    }

    fn data_type(&mut self) -> Result<DataType> {
        match self.peek() {
            Some(Token::Word(w)) => match DataType::from_keyword(w) {
                Some(t) => {
                    self.pos += 1;
                    Ok(t)
                }
                None => Err(self.error(format!("unknown type '{w}'"))),
            },
            _ => Err(self.expected("type name")),
        }
    }

    fn options_body(&mut self) -> Result<Options> {
        self.expect(&Token::LBrace)?;
        let mut opts: Options = Vec::new();
        while !self.eat(&Token::RBrace) {
            let loc = self.location();
            let key = match self.next() {
                Some(Token::Str(s)) => s,
                _ => {
                    self.pos -= 1;
                    return Err(self.expected("quoted option key"));
                }
            };
            self.expect(&Token::Colon)?;
            let negative = self.eat(&Token::Minus);
            let value = match self.next() {
                Some(Token::Int(i)) => OptionValue::Int(if negative { -i } else { i }),
                Some(Token::Float(f)) => OptionValue::Float(if negative { -f } else { f }),
                Some(Token::Str(s)) if !negative => OptionValue::Str(s),
                Some(Token::Word(w)) if !negative && w.eq_ignore_ascii_case("true") => OptionValue::Bool(true),
                Some(Token::Word(w)) if !negative && w.eq_ignore_ascii_case("false") => OptionValue::Bool(false),
                _ => {
                    self.pos -= 1;
                    return Err(self.expected("option value (number, string or boolean)"));
                }
            };
            if opts.iter().any(|(k, _)| k.eq_ignore_ascii_case(&key)) {
                return Err(Error::Syntax { location: loc, message: format!("duplicate option key '{key}'") });
            }
            opts.push((key, value));
            if !self.eat(&Token::Comma) {
                self.expect(&Token::RBrace)?;
                break;
            }
        }
        Ok(opts)
    }

    fn query(&mut self) -> Result<Query> {
        self.expect_kw("SELECT")?;
        let mut q = Query::default();
        let prev = std::mem::replace(&mut self.allow_agg, true);
        loop {
            q.projection.push(self.select_item()?);
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.allow_agg = false;
        if self.eat_kw("FROM") {
            loop {
                q.from.push(self.table_ref()?);
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
        }
        if self.eat_kw("WHERE") {
            q.selection = Some(self.expr()?);
        }
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            q.group_by = self.expr_list()?;
        }
        if self.eat_kw("HAVING") {
            q.having = Some(self.expr()?);
        }
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let expr = self.expr()?;
                let descending = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                q.order_by.push(OrderItem { expr, descending });
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
        }
        if self.eat_kw("LIMIT") {
            match self.next() {
                Some(Token::Int(n)) if n >= 0 => q.limit = Some(n as u64),
                _ => {
                    self.pos -= 1;
                    return Err(self.expected("non-negative integer"));
                }
            }
        }
        self.allow_agg = prev;
        Ok(q)
    }

    fn select_item(&mut self) -> Result<SelectItem> {
        if self.eat(&Token::Star) {
            return Ok(SelectItem::Wildcard);
        }
        if matches!(self.peek(), Some(Token::Word(_) | Token::QuotedIdent(_)))
            && self.peek_at(1) == Some(&Token::Dot)
            && self.peek_at(2) == Some(&Token::Star)
        {
            let q = self.ident()?;
            self.pos += 2;
            return Ok(SelectItem::QualifiedWildcard(q));
        }
        let expr = self.expr()?;
        let alias = self.alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    fn alias(&mut self) -> Result<Option<Ident>> {
        if self.eat_kw("AS") {
            return Ok(Some(self.ident()?));
        }
        match self.peek() {
            Some(Token::Word(w)) if !is_reserved(w) => Ok(Some(self.ident()?)),
            Some(Token::QuotedIdent(_)) => Ok(Some(self.ident()?)),
            _ => Ok(None),
        }
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        let factor = self.table_factor()?;
        let mut joins = Vec::new();
        loop {
            if self.eat_kw("NATURAL") {
                self.expect_kw("JOIN")?;
                joins.push(Join { kind: JoinKind::Natural, factor: self.table_factor()? });
            } else if self.eat_kw("CROSS") {
                self.expect_kw("JOIN")?;
                joins.push(Join { kind: JoinKind::Cross, factor: self.table_factor()? });
            } else if self.peek_kw("JOIN") || self.peek_kw("INNER") {
                if self.eat_kw("INNER") {
                    self.expect_kw("JOIN")?;
                } else {
                    self.pos += 1;
                }
                let factor = self.table_factor()?;
                self.expect_kw("ON")?;
                let on = self.expr()?;
                joins.push(Join { kind: JoinKind::Inner(on), factor });
            } else if self.peek_kw("LEFT") || self.peek_kw("RIGHT") || self.peek_kw("FULL") {
                return Err(self.error("outer joins are not supported"));
            } else {
                break;
            }
        }
        Ok(TableRef { factor, joins })
    }

    fn table_factor(&mut self) -> Result<TableFactor> {
        if self.peek_kw("LLM") || self.peek_kw("PREDICT") {
            let mut node = self.predict_node(true)?;
            node.alias = self.alias()?;
            return Ok(TableFactor::Predict(Box::new(node)));
        }
        if self.eat(&Token::LParen) {
            let query = self.query()?;
            self.expect(&Token::RParen)?;
            let alias = self.alias()?.ok_or_else(|| self.error("derived table requires an alias"))?;
            return Ok(TableFactor::Derived { query: Box::new(query), alias });
        }
        let name = self.ident()?;
        let alias = self.alias()?;
        Ok(TableFactor::Table { name, alias })
    }

    /// `LLM [AGG] model (PROMPT '...' [, source] [, OPTIONS {...}])` or
    /// `PREDICT model (source | col, ...)`.
    fn predict_node(&mut self, from_position: bool) -> Result<PredictExprNode> {
        let start = self.location();
        let clause = if self.eat_kw("LLM") {
            PredictClause::Llm
        } else {
            self.expect_kw("PREDICT")?;
            PredictClause::Predict
        };
        let agg = clause == PredictClause::Llm && self.eat_kw("AGG");
        if agg && !self.allow_agg {
            return Err(Error::Syntax {
                location: start,
                message: "LLM AGG is only allowed in the SELECT list".into(),
            });
        }
        let model_name = self.qualified_name()?;
        self.expect(&Token::LParen)?;
        let mut node = PredictExprNode {
            clause,
            model_name,
            source: None,
            prompt: None,
            agg,
            alias: None,
            args: Vec::new(),
            options: Vec::new(),
        };
        match clause {
            PredictClause::Llm => {
                let mut first = true;
                while !self.eat(&Token::RParen) {
                    if !first {
                        self.expect(&Token::Comma)?;
                    }
                    first = false;
                    if self.eat_kw("PROMPT") {
                        if node.prompt.is_some() {
                            return Err(self.error("duplicate PROMPT"));
                        }
                        let (raw, loc) = self.string()?;
                        node.prompt = Some(PromptTemplate::parse_at(&raw, loc)?);
                    } else if self.eat_kw("OPTIONS") {
                        node.options = self.options_body()?;
                    } else if node.source.is_none() {
                        node.source = Some(self.any_name()?);
                    } else {
                        return Err(self.expected("')'"));
                    }
                }
                match &mut node.prompt {
                    None => {
                        return Err(Error::Syntax { location: start, message: "LLM clause requires a PROMPT".into() })
                    }
                    // A yes/no question in an expression: one implicit Boolean answer.
                    Some(p) if p.outputs.is_empty() && !from_position && !agg => {
                        p.outputs.push(OutputSpec { name: IMPLICIT_OUTPUT.into(), data_type: DataType::Boolean });
                    }
                    Some(p) if p.outputs.is_empty() => {
                        return Err(Error::Syntax {
                            location: start,
                            message: "prompt declares no output placeholder such as {name VARCHAR}".into(),
                        })
                    }
                    Some(_) => {}
                }
            }
            PredictClause::Predict => {
                if from_position {
                    node.source = Some(self.any_name()?);
                } else {
                    node.args = self.expr_list()?;
                }
                self.expect(&Token::RParen)?;
            }
        }
        Ok(node)
    }

    fn expr_list(&mut self) -> Result<Vec<Expr>> {
        let mut v = vec![self.expr()?];
        while self.eat(&Token::Comma) {
            v.push(self.expr()?);
        }
        Ok(v)
    }

    pub fn expr(&mut self) -> Result<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_kw("OR") {
            let right = self.and_expr()?;
            left = Expr::Binary { op: BinaryOp::Or, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_kw("AND") {
            let right = self.not_expr()?;
            left = Expr::Binary { op: BinaryOp::And, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr> {
        if self.eat_kw("NOT") {
            let e = self.not_expr()?;
            return Ok(Expr::Unary { op: UnaryOp::Not, expr: Box::new(e) });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr> {
        let left = self.additive()?;
        if self.eat_kw("IS") {
            let negated = self.eat_kw("NOT");
            self.expect_kw("NULL")?;
            return Ok(Expr::IsNull { expr: Box::new(left), negated });
        }
        let op = match self.peek() {
            Some(Token::Eq) => BinaryOp::Eq,
            Some(Token::NotEq) => BinaryOp::NotEq,
            Some(Token::Lt) => BinaryOp::Lt,
            Some(Token::LtEq) => BinaryOp::LtEq,
            Some(Token::Gt) => BinaryOp::Gt,
            Some(Token::GtEq) => BinaryOp::GtEq,
            _ => return Ok(left),
        };
        self.pos += 1;
        let right = self.additive()?;
        Ok(Expr::Binary { op, left: Box::new(left), right: Box::new(right) })
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinaryOp::Plus,
                Some(Token::Minus) => BinaryOp::Minus,
                Some(Token::Concat) => BinaryOp::Concat,
                _ => return Ok(left),
            };
            self.pos += 1;
            let right = self.multiplicative()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinaryOp::Multiply,
                Some(Token::Slash) => BinaryOp::Divide,
                Some(Token::Percent) => BinaryOp::Modulo,
                _ => return Ok(left),
            };
            self.pos += 1;
            let right = self.unary()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(&Token::Minus) {
            let e = self.unary()?;
            return Ok(Expr::Unary { op: UnaryOp::Minus, expr: Box::new(e) });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        if self.peek_kw("LLM") || self.peek_kw("PREDICT") {
            return Ok(Expr::Predict(Box::new(self.predict_node(false)?)));
        }
        match self.peek().cloned() {
            Some(Token::Int(i)) => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Integer(i)))
            }
            Some(Token::Float(f)) => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Double(f)))
            }
            Some(Token::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::String(s)))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(&Token::RParen)?;
                Ok(e)
            }
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("NULL") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Null))
            }
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("TRUE") || w.eq_ignore_ascii_case("FALSE") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Boolean(w.eq_ignore_ascii_case("TRUE"))))
            }
            Some(Token::Word(w)) if !is_reserved(&w) && self.peek_at(1) == Some(&Token::LParen) => {
                self.pos += 2;
                let name = w.to_ascii_lowercase();
                if self.eat(&Token::Star) {
                    self.expect(&Token::RParen)?;
                    return Ok(Expr::Function { name, args: Vec::new(), star: true });
                }
                let args = if self.peek() == Some(&Token::RParen) { Vec::new() } else { self.expr_list()? };
                self.expect(&Token::RParen)?;
                Ok(Expr::Function { name, args, star: false })
            }
            Some(Token::Word(_) | Token::QuotedIdent(_)) => {
                let first = self.ident()?;
                if self.eat(&Token::Dot) {
                    let name = self.ident()?;
                    Ok(Expr::Column { qualifier: Some(first), name })
                } else {
                    Ok(Expr::Column { qualifier: None, name: first })
                }
            }
            _ => Err(self.expected("expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn options_listing() {
        let o = parse_options("{ 'n_threads': 1, 'batch_size': 16, 'temperature': 0.5 }").unwrap();
        assert_eq!(o.len(), 3);
        assert_eq!(o[2], ("temperature".into(), OptionValue::Float(0.5)));
        assert!(parse_options("{}").unwrap().is_empty());
        assert_eq!(parse_options("{ 'x': 'y' }").unwrap(), vec![("x".into(), OptionValue::Str("y".into()))]);
        assert!(parse_options("{ 'a': 1, 'A': 2 }").is_err());
        assert!(parse_options("{ 'a': }").is_err());
        assert_eq!(parse_options("{ 'a': 1, }").unwrap().len(), 1);
    }

    #[test]
    fn agg_outside_projection_is_rejected() {
        let e = parse_statement("SELECT a FROM t WHERE LLM AGG m (PROMPT '{{x}} {y BOOLEAN}')").unwrap_err();
        assert!(matches!(e, Error::Syntax { .. }));
        parse_statement("SELECT LLM AGG m (PROMPT 'sum {{x}} {y VARCHAR}') FROM t GROUP BY z").unwrap();
    }

    #[test]
    fn generation_in_from() {
        let s = parse_statement("SELECT * FROM LLM m (PROMPT 'list {x VARCHAR}')").unwrap();
        let Statement::Select(q) = s else { panic!() };
        let TableFactor::Predict(node) = &q.from[0].factor else { panic!() };
        assert!(node.source.is_none());
        assert_eq!(node.prompt.as_ref().unwrap().outputs.len(), 1);
    }

    #[test]
    fn syntax_error_has_location() {
        let e = parse_statement("SELECT a\nFROM t WHERE").unwrap_err();
        let Error::Syntax { location, message } = e else { panic!() };
        assert_eq!(location.line, 2);
        assert!(message.contains("expected expression"), "{message}");
    }

    #[test]
    fn prompt_without_outputs() {
        let e = parse_statement("SELECT * FROM LLM m (PROMPT 'hello world', t)").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        assert!(parse_statement("SELECT LLM AGG m (PROMPT 'sum up {{a}}') FROM t").is_err());
        let Statement::Select(q) = parse_statement("SELECT a FROM t WHERE LLM m (PROMPT 'is {{a}} red?')").unwrap()
        else {
            panic!()
        };
        let text = q.to_string();
        assert!(text.contains("'is {{a}} red?'"), "{text}");
        let Statement::Select(again) = parse_statement(&text).unwrap() else { panic!() };
        assert_eq!(*q, *again);
    }

    #[test]
    fn tabular_requires_features() {
        assert!(parse_statement("CREATE TABULAR MODEL c PATH 'x.onnx'").is_err());
        let s = parse_statement(
            "CREATE TABULAR MODEL categorizer PATH '/temp/models/categorizer.onnx' ON TABLE Product FEATURES (name,description,price) OUTPUT (category_id INTEGER)",
        )
        .unwrap();
        let Statement::CreateModel(m) = s else { panic!() };
        assert!(!m.on_prompt);
        assert_eq!(m.outputs, Some(vec![("category_id".into(), DataType::Integer)]));
    }

    #[test]
    fn reserved_word_as_llm_source() {
        let s =
            parse_statement("SELECT state FROM LLM o4mini(PROMPT 'find {state VARCHAR} from {{a}}', Order)").unwrap();
        let Statement::Select(q) = s else { panic!() };
        let TableFactor::Predict(node) = &q.from[0].factor else { panic!() };
        assert_eq!(node.source.as_ref().unwrap().value, "Order");
    }

    #[test]
    fn precedence() {
        let Statement::Select(q) = parse_statement("SELECT 1 + 2 * 3 = 7 AND NOT x IS NULL OR y").unwrap() else {
            panic!()
        };
        let SelectItem::Expr { expr, .. } = &q.projection[0] else { panic!() };
        assert_eq!(expr.to_string(), "((((1 + (2 * 3)) = 7) AND (NOT (x IS NULL))) OR y)");
    }

    #[test]
    fn set_and_alter() {
        assert_eq!(
            parse_statement("SET batch_size = 4").unwrap(),
            Statement::Set { name: "batch_size".into(), value: OptionValue::Int(4) }
        );
        assert!(matches!(
            parse_statement("ALTER TABLE Review ADD FOREIGN KEY (movie_id) REFERENCES Movie (id)").unwrap(),
            Statement::AlterTableAddKey { key: KeyDecl::Foreign { .. }, .. }
        ));
    }
}
