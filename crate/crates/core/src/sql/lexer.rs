//! SQL tokenizer. String literals are opaque: braces inside them are kept verbatim
//! for the prompt sub-parser.

use std::fmt;

use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    /// Unquoted identifier or keyword.
    Word(String),
    /// `"quoted identifier"`.
    QuotedIdent(String),
    /// `'string literal'` with `''` unescaped.
    Str(String),
    Int(i64),
    Float(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semicolon,
    Colon,
    Dot,
    Star,
    Plus,
    Minus,
    Slash,
    Percent,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Concat,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(self, Token::Word(w) if w.eq_ignore_ascii_case(kw))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => f.write_str(&w.to_ascii_uppercase()),
            Token::QuotedIdent(s) => write!(f, "\"{s}\""),
            Token::Str(s) => write!(f, "'{s}'"),
            Token::Int(i) => write!(f, "{i}"),
            Token::Float(x) => write!(f, "{x}"),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
            Token::LBrace => f.write_str("{"),
            Token::RBrace => f.write_str("}"),
            Token::Comma => f.write_str(","),
            Token::Semicolon => f.write_str(";"),
            Token::Colon => f.write_str(":"),
            Token::Dot => f.write_str("."),
            Token::Star => f.write_str("*"),
            Token::Plus => f.write_str("+"),
            Token::Minus => f.write_str("-"),
            Token::Slash => f.write_str("/"),
            Token::Percent => f.write_str("%"),
            Token::Eq => f.write_str("="),
            Token::NotEq => f.write_str("<>"),
            Token::Lt => f.write_str("<"),
            Token::LtEq => f.write_str("<="),
            Token::Gt => f.write_str(">"),
            Token::GtEq => f.write_str(">="),
            Token::Concat => f.write_str("||"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    pub location: Location,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn location(&self) -> Location {
        Location { line: self.line, column: self.column }
    }
}

fn err(location: Location, message: impl Into<String>) -> Error {
    Error::Syntax { location, message: message.into() }
}

pub fn tokenize(text: &str) -> Result<Vec<Spanned>> {
    let mut cur = Cursor { chars: text.chars().peekable(), line: 1, column: 1 };
    let mut out = Vec::new();

    while let Some(c) = cur.peek() {
        let location = cur.location();
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        let token = match c {
            '-' => {
                cur.bump();
                if cur.peek() == Some('-') {
                    while let Some(c) = cur.peek() {
                        if c == '\n' {
                            break;
                        }
                        cur.bump();
                    }
                    continue;
                }
                Token::Minus
            }
            '/' => {
                cur.bump();
                if cur.peek() == Some('*') {
                    cur.bump();
                    let mut closed = false;
                    while let Some(c) = cur.bump() {
                        if c == '*' && cur.peek() == Some('/') {
                            cur.bump();
                            closed = true;
                            break;
                        }
                    }
                    if !closed {
                        return Err(err(location, "unterminated block comment"));
                    }
                    continue;
                }
                Token::Slash
            }
            '\'' => {
                cur.bump();
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None => return Err(err(location, "unterminated string literal")),
                        Some('\'') => {
                            if cur.peek() == Some('\'') {
                                cur.bump();
                                s.push('\'');
                            } else {
                                break;
                            }
                        }
                        Some(c) => s.push(c),
                    }
                }
                Token::Str(s)
            }
            '"' => {
                cur.bump();
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None => return Err(err(location, "unterminated quoted identifier")),
                        Some('"') => {
                            if cur.peek() == Some('"') {
                                cur.bump();
                                s.push('"');
                            } else {
                                break;
                            }
                        }
                        Some(c) => s.push(c),
                    }
                }
                Token::QuotedIdent(s)
            }
            c if c.is_ascii_digit() => lex_number(&mut cur, location)?,
            c if c.is_alphabetic() || c == '_' => {
                let mut w = String::new();
                while let Some(c) = cur.peek() {
                    if c.is_alphanumeric() || c == '_' || c == '$' {
                        w.push(c);
                        cur.bump();
                    } else {
                        break;
                    }
                }
                Token::Word(w)
            }
            _ => {
                cur.bump();
                match c {
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    '{' => Token::LBrace,
                    '}' => Token::RBrace,
                    ',' => Token::Comma,
                    ';' => Token::Semicolon,
                    ':' => Token::Colon,
                    '.' => Token::Dot,
                    '*' => Token::Star,
                    '+' => Token::Plus,
                    '%' => Token::Percent,
                    '=' => {
                        if cur.peek() == Some('=') {
                            cur.bump();
                        }
                        Token::Eq
                    }
                    '!' => {
                        if cur.peek() == Some('=') {
                            cur.bump();
                            Token::NotEq
                        } else {
                            return Err(err(location, "unexpected character '!'"));
                        }
                    }
                    '<' => match cur.peek() {
                        Some('=') => {
                            cur.bump();
                            Token::LtEq
                        }
                        Some('>') => {
                            cur.bump();
                            Token::NotEq
                        }
                        _ => Token::Lt,
                    },
                    '>' => {
                        if cur.peek() == Some('=') {
                            cur.bump();
                            Token::GtEq
                        } else {
                            Token::Gt
                        }
                    }
                    '|' => {
                        if cur.peek() == Some('|') {
                            cur.bump();
                            Token::Concat
                        } else {
                            return Err(err(location, "unexpected character '|'"));
                        }
                    }
                    other => return Err(err(location, format!("unexpected character {other:?}"))),
                }
            }
        };
        out.push(Spanned { token, location });
    }
    Ok(out)
}

fn lex_number(cur: &mut Cursor<'_>, location: Location) -> Result<Token> {
    let mut s = String::new();
    let mut is_float = false;
    while let Some(c) = cur.peek() {
        if c.is_ascii_digit() {
            s.push(c);
            cur.bump();
        } else if c == '.' && !is_float {
            is_float = true;
            s.push(c);
            cur.bump();
        } else if (c == 'e' || c == 'E') && !s.contains(['e', 'E']) {
            is_float = true;
            s.push(c);
            cur.bump();
            if let Some(sign @ ('+' | '-')) = cur.peek() {
                s.push(sign);
                cur.bump();
            }
        } else {
            break;
        }
    }
    if is_float {
        s.parse::<f64>().map(Token::Float).map_err(|_| err(location, format!("malformed number {s:?}")))
    } else {
        s.parse::<i64>().map(Token::Int).map_err(|_| err(location, format!("integer out of range {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s).unwrap().into_iter().map(|t| t.token).collect()
    }

    #[test]
    fn select_one() {
        assert_eq!(toks("SELECT 1;"), vec![Token::Word("SELECT".into()), Token::Int(1), Token::Semicolon]);
    }

    #[test]
    fn prompt_string_is_opaque() {
        let t = toks("PROMPT 'a {{b}} {c INT}'");
        assert_eq!(t, vec![Token::Word("PROMPT".into()), Token::Str("a {{b}} {c INT}".into())]);
    }

    #[test]
    fn remote_model_upload_keywords() {
        let t = toks("CREATE LLM MODEL o4mini\nPATH 'o4-mini'\nON PROMPT API 'https://api.openai.com/v1/';");
        for kw in ["LLM", "MODEL", "PATH", "ON", "PROMPT", "API"] {
            assert!(t.iter().any(|x| x.is_keyword(kw)), "missing {kw}");
        }
    }

    #[test]
    fn unterminated_string_reports_position() {
        let e = tokenize("SELECT\n  'abc").unwrap_err();
        let Error::Syntax { location, .. } = e else { panic!() };
        assert_eq!(location, Location { line: 2, column: 3 });
    }

    #[test]
    fn unterminated_comment() {
        assert!(tokenize("SELECT /* nope").is_err());
        assert_eq!(toks("SELECT -- trailing\n 1"), vec![Token::Word("SELECT".into()), Token::Int(1)]);
    }

    #[test]
    fn doubled_quote_escape() {
        assert_eq!(toks("'it''s'"), vec![Token::Str("it's".into())]);
    }

    #[test]
    fn numbers() {
        assert_eq!(toks("0.5 16 1e3"), vec![Token::Float(0.5), Token::Int(16), Token::Float(1000.0)]);
    }
}
