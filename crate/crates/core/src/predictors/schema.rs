//! Output constraints: JSON schema for structured-output APIs, and a
//! GBNF grammar for grammar-constrained local decoders.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value as Json};

use crate::types::DataType;

fn type_schema(ty: DataType) -> Json {
    match ty {
        DataType::Varchar => json!({"type": ["string", "null"]}),
        DataType::Integer => json!({"type": ["integer", "null"]}),
        DataType::Double => json!({"type": ["number", "null"]}),
        DataType::Boolean => json!({"type": ["boolean", "null"]}),
        DataType::Datetime => json!({"type": ["string", "null"], "format": "date-time"}),
    }
}

/// Schema of one output object.
pub fn row_schema(outputs: &[(String, DataType)], with_row_id: bool) -> Json {
    let mut props = Map::new();
    let mut required = Vec::new();
    if with_row_id {
        props.insert("row_id".into(), json!({"type": "integer"}));
        required.push(Json::String("row_id".into()));
    }
    for (name, ty) in outputs {
        props.insert(name.clone(), type_schema(*ty));
        required.push(Json::String(name.clone()));
    }
    json!({
        "type": "object",
        "properties": props,
        "required": required,
        "additionalProperties": false,
    })
}

/// The structured-output schema: an object wrapping the row array, since
/// response-format APIs require an object at the top level.
pub fn build_json_schema(outputs: &[(String, DataType)], with_row_id: bool) -> Json {
    json!({
        "type": "object",
        "properties": {"rows": {"type": "array", "items": row_schema(outputs, with_row_id)}},
        "required": ["rows"],
        "additionalProperties": false,
    })
}

fn gbnf_literal(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn gbnf_value(ty: DataType) -> &'static str {
    match ty {
        DataType::Varchar | DataType::Datetime => "string",
        DataType::Integer => "integer",
        DataType::Double => "number",
        DataType::Boolean => "boolean",
    }
}

/// GBNF text that derives exactly a JSON array of output objects with the
/// declared keys, in order, each value of its declared type or null.
pub fn build_bnf_grammar(outputs: &[(String, DataType)], with_row_id: bool) -> String {
    let mut fields: Vec<String> = Vec::new();
    if with_row_id {
        fields.push(format!("{} ws \":\" ws integer", gbnf_literal("\"row_id\"")));
    }
    for (name, ty) in outputs {
        let key = serde_json::to_string(name).expect("string serializes");
        fields.push(format!("{} ws \":\" ws ( {} | null )", gbnf_literal(&key), gbnf_value(*ty)));
    }
    let row = fields.join(" ws \",\" ws ");
    [
        "root ::= ws \"[\" ws ( row ( ws \",\" ws row )* )? ws \"]\" ws".to_string(),
        format!("row ::= \"{{\" ws {row} ws \"}}\""),
        r#"string ::= "\"" ( [^"\\] | "\\" ["\\/bfnrt] )* "\"""#.to_string(),
        r#"integer ::= "-"? [0-9]+"#.to_string(),
        r#"number ::= "-"? [0-9]+ ( "." [0-9]+ )? ( [eE] [-+]? [0-9]+ )?"#.to_string(),
        r#"boolean ::= "true" | "false""#.to_string(),
        r#"null ::= "null""#.to_string(),
        r#"ws ::= [ \t\n]*"#.to_string(),
    ]
    .join("\n")
        + "\n"
}

#[derive(Debug, Clone)]
enum Node {
    Lit(Vec<char>),
    Class { negated: bool, ranges: Vec<(char, char)> },
    Ref(String),
    Seq(Vec<Node>),
    Alt(Vec<Node>),
    Opt(Box<Node>),
    Star(Box<Node>),
    Plus(Box<Node>),
}

/// Reference checker for the GBNF subset emitted above. Matching computes
/// the set of reachable end positions, so it needs no backtracking stack.
#[derive(Debug)]
pub struct Grammar {
    rules: BTreeMap<String, Node>,
}

struct RuleParser<'a> {
    chars: Vec<char>,
    pos: usize,
    rule: &'a str,
}

impl RuleParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> String {
        format!("grammar rule {}: {msg} at {}", self.rule, self.pos)
    }

    fn escaped(&mut self) -> Result<char, String> {
        let c = self.peek().ok_or_else(|| self.err("dangling escape"))?;
        self.pos += 1;
        Ok(match c {
            'n' => '\n',
            't' => '\t',
            'r' => '\r',
            other => other,
        })
    }

    fn alternatives(&mut self) -> Result<Node, String> {
        let mut alts = vec![self.sequence()?];
        loop {
            self.skip_ws();
            if self.peek() == Some('|') {
                self.pos += 1;
                alts.push(self.sequence()?);
            } else {
                break;
            }
        }
        Ok(if alts.len() == 1 { alts.pop().expect("one") } else { Node::Alt(alts) })
    }

    fn sequence(&mut self) -> Result<Node, String> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None | Some('|') | Some(')') => break,
                _ => {
                    let atom = self.atom()?;
                    items.push(match self.peek() {
                        Some('*') => {
                            self.pos += 1;
                            Node::Star(Box::new(atom))
                        }
                        Some('+') => {
                            self.pos += 1;
                            Node::Plus(Box::new(atom))
                        }
                        Some('?') => {
                            self.pos += 1;
                            Node::Opt(Box::new(atom))
                        }
                        _ => atom,
                    });
                }
            }
        }
        Ok(Node::Seq(items))
    }

    fn atom(&mut self) -> Result<Node, String> {
        match self.peek().ok_or_else(|| self.err("unexpected end"))? {
            '"' => {
                self.pos += 1;
                let mut lit = Vec::new();
                loop {
                    match self.peek().ok_or_else(|| self.err("unterminated literal"))? {
                        '"' => {
                            self.pos += 1;
                            break;
                        }
                        '\\' => {
                            self.pos += 1;
                            lit.push(self.escaped()?);
                        }
                        c => {
                            self.pos += 1;
                            lit.push(c);
                        }
                    }
                }
                Ok(Node::Lit(lit))
            }
            '[' => {
                self.pos += 1;
                let negated = self.peek() == Some('^');
                if negated {
                    self.pos += 1;
                }
                let mut ranges = Vec::new();
                loop {
                    let c = match self.peek().ok_or_else(|| self.err("unterminated class"))? {
                        ']' => {
                            self.pos += 1;
                            break;
                        }
                        '\\' => {
                            self.pos += 1;
                            self.escaped()?
                        }
                        c => {
                            self.pos += 1;
                            c
                        }
                    };
                    if self.peek() == Some('-') && self.chars.get(self.pos + 1).is_some_and(|&n| n != ']') {
                        self.pos += 1;
                        let hi = match self.peek().expect("checked") {
                            '\\' => {
                                self.pos += 1;
                                self.escaped()?
                            }
                            h => {
                                self.pos += 1;
                                h
                            }
                        };
                        ranges.push((c, hi));
                    } else {
                        ranges.push((c, c));
                    }
                }
                Ok(Node::Class { negated, ranges })
            }
            '(' => {
                self.pos += 1;
                let inner = self.alternatives()?;
                self.skip_ws();
                if self.peek() != Some(')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    self.pos += 1;
                }
                Ok(Node::Ref(self.chars[start..self.pos].iter().collect()))
            }
            c => Err(self.err(&format!("unexpected '{c}'"))),
        }
    }
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Grammar, String> {
        let mut rules = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (name, body) = line.split_once("::=").ok_or_else(|| format!("not a rule: {line}"))?;
            let name = name.trim();
            let mut p = RuleParser { chars: body.chars().collect(), pos: 0, rule: name };
            let node = p.alternatives()?;
            if p.pos != p.chars.len() {
                return Err(p.err("trailing input"));
            }
            rules.insert(name.to_string(), node);
        }
        if !rules.contains_key("root") {
            return Err("grammar has no root rule".into());
        }
        Ok(Grammar { rules })
    }

    pub fn accepts(&self, text: &str) -> bool {
        let chars: Vec<char> = text.chars().collect();
        self.ends(&self.rules["root"], &chars, 0).contains(&chars.len())
    }

    fn ends(&self, node: &Node, s: &[char], pos: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        match node {
            Node::Lit(lit) => {
                if s[pos..].starts_with(lit) {
                    out.insert(pos + lit.len());
                }
            }
            Node::Class { negated, ranges } => {
                if let Some(&c) = s.get(pos) {
                    if ranges.iter().any(|&(lo, hi)| lo <= c && c <= hi) != *negated {
                        out.insert(pos + 1);
                    }
                }
            }
            Node::Ref(name) => {
                if let Some(rule) = self.rules.get(name) {
                    out = self.ends(rule, s, pos);
                }
            }
            Node::Seq(items) => {
                out.insert(pos);
                for item in items {
                    out = out.iter().flat_map(|&p| self.ends(item, s, p)).collect();
                    if out.is_empty() {
                        break;
                    }
                }
            }
            Node::Alt(alts) => {
                for a in alts {
                    out.extend(self.ends(a, s, pos));
                }
            }
            Node::Opt(inner) => {
                out.insert(pos);
                out.extend(self.ends(inner, s, pos));
            }
            Node::Star(inner) => {
                out = self.closure(inner, s, BTreeSet::from([pos]));
            }
            Node::Plus(inner) => {
                let first = self.ends(inner, s, pos);
                out = self.closure(inner, s, first);
            }
        }
        out
    }

    fn closure(&self, inner: &Node, s: &[char], start: BTreeSet<usize>) -> BTreeSet<usize> {
        let mut reached = start.clone();
        let mut frontier = start;
        while !frontier.is_empty() {
            let next: BTreeSet<usize> =
                frontier.iter().flat_map(|&p| self.ends(inner, s, p)).filter(|p| !reached.contains(p)).collect();
            reached.extend(next.iter().copied());
            frontier = next;
        }
        reached
    }
}
