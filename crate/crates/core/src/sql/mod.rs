//! Lexer, parser and AST for the extended SQL dialect.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod prompt;

pub use ast::*;
pub use lexer::{tokenize, Spanned, Token};
pub use parser::{parse_options, parse_statement, parse_statements, IMPLICIT_OUTPUT};
pub use prompt::{InputRef, OutputSpec, PromptTemplate, Segment};
