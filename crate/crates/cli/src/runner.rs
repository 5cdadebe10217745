//! Statement splitting and execution shared by the REPL and the script runner.

use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use semaquery::csv_io::ImportOptions;
use semaquery::error::Error;
use semaquery::session::{Outcome, QueryStats, Session, StatementResult};
use semaquery::sql::{parse_statement, ExplainMode, Statement};

use crate::format::{write_result, Format};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Sql(String),
    Meta(String),
}

/// Splits input into `;`-terminated statements and backslash meta-commands.
/// Semicolons inside string literals, quoted identifiers and `--` comments
/// do not terminate a statement.
#[derive(Debug, Default)]
pub struct Splitter {
    buf: String,
    quote: Option<char>,
}

impl Splitter {
    pub fn feed_line(&mut self, line: &str) -> Vec<Item> {
        if self.buf.trim().is_empty() && self.quote.is_none() && line.trim_start().starts_with('\\') {
            self.buf.clear();
            return vec![Item::Meta(line.trim().to_string())];
        }
        let mut items = Vec::new();
        let mut chars = line.chars().peekable();
        while let Some(c) = chars.next() {
            match self.quote {
                Some(q) => {
                    self.buf.push(c);
                    if c == q {
                        self.quote = None;
                    }
                }
                None => match c {
                    '\'' | '"' => {
                        self.quote = Some(c);
                        self.buf.push(c);
                    }
                    '-' if chars.peek() == Some(&'-') => break,
                    ';' => {
                        let stmt = std::mem::take(&mut self.buf);
                        if !stmt.trim().is_empty() {
                            items.push(Item::Sql(stmt.trim().to_string()));
                        }
                    }
                    _ => self.buf.push(c),
                },
            }
        }
        self.buf.push('\n');
        items
    }

    /// Text left without a terminating semicolon.
    pub fn finish(&mut self) -> Option<Item> {
        let rest = std::mem::take(&mut self.buf);
        self.quote = None;
        (!rest.trim().is_empty()).then(|| Item::Sql(rest.trim().to_string()))
    }

    pub fn pending(&self) -> bool {
        !self.buf.trim().is_empty()
    }
}

pub struct Runner {
    pub session: Session,
    pub format: Format,
    pub stats: bool,
    pub timing: bool,
    pub failures: usize,
    pub quit: bool,
}

impl Runner {
    pub fn new(session: Session, format: Format, stats: bool) -> Self {
        Runner { session, format, stats, timing: false, failures: 0, quit: false }
    }

    /// Runs one item; returns false if it failed.
    pub fn run_item(&mut self, item: &Item) -> bool {
        let started = Instant::now();
        let ok = match item {
            Item::Sql(text) => self.run_sql(text),
            Item::Meta(cmd) => self.run_meta(cmd),
        };
        if self.timing {
            println!("Time: {:.3} ms", started.elapsed().as_secs_f64() * 1000.0);
        }
        if !ok {
            self.failures += 1;
        }
        ok
    }

    fn run_sql(&mut self, text: &str) -> bool {
        let result = parse_statement(text).and_then(|stmt| self.session.execute(&stmt).map(|o| (stmt, o)));
        match result {
            Ok((stmt, outcome)) => {
                self.print_outcome(&stmt, &outcome);
                true
            }
            Err(e) => {
                report_error(&e, text);
                false
            }
        }
    }

    fn print_outcome(&mut self, stmt: &Statement, outcome: &Outcome) {
        for n in &outcome.notices {
            eprintln!("NOTICE: {n}");
        }
        for w in &outcome.warnings {
            eprintln!("WARNING: {w}");
        }
        let mut out = io::stdout().lock();
        let _ = match &outcome.result {
            StatementResult::Rows(r) => write_result(&mut out, r, self.format),
            StatementResult::Explain(text) => write!(out, "{text}"),
            StatementResult::Done(tag) => writeln!(out, "{tag}"),
        };
        let is_query = matches!(stmt, Statement::Select(_) | Statement::CreateTableAs { .. })
            || matches!(stmt, Statement::Explain { mode: ExplainMode::Analyze, .. });
        if self.stats && is_query {
            if let Some(s) = self.session.last_stats() {
                eprintln!("{}", stats_line(s));
            }
        }
    }

    fn run_meta(&mut self, cmd: &str) -> bool {
        let mut parts = cmd.split_whitespace();
        let name = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        match name {
            "\\q" | "\\quit" => {
                self.quit = true;
                true
            }
            "\\timing" => match args.as_slice() {
                ["on"] => {
                    self.timing = true;
                    true
                }
                ["off"] => {
                    self.timing = false;
                    true
                }
                _ => usage("\\timing on|off"),
            },
            "\\models" => {
                let mut out = io::stdout().lock();
                let _ = writeln!(out, "name | kind | path | on_prompt | base_api | relation");
                for m in self.session.models.list_models() {
                    let _ = writeln!(
                        out,
                        "{} | {} | {} | {} | {} | {}",
                        m.name,
                        m.kind.keyword(),
                        m.path,
                        m.on_prompt,
                        m.base_api.as_deref().unwrap_or(""),
                        m.relation.as_deref().unwrap_or("")
                    );
                }
                true
            }
            "\\stats" => {
                match self.session.last_stats() {
                    Some(s) => {
                        println!("{}", stats_line(s));
                        for p in &s.predicts {
                            let c = &p.stats.counts;
                            println!(
                                "  #{} {} ({}): calls={} retries={} cache_hits={} input_tokens={}",
                                p.index,
                                p.model,
                                p.mode.label(),
                                c.calls,
                                c.retries,
                                c.cache_hits,
                                c.input_tokens
                            );
                        }
                    }
                    None => println!("no query has run yet"),
                }
                true
            }
            "\\explain" => {
                let sql = cmd.trim_start_matches("\\explain").trim().trim_end_matches(';');
                if sql.is_empty() {
                    return usage("\\explain <query>");
                }
                self.run_sql(&format!("EXPLAIN OPTIMIZED {sql}"))
            }
            "\\import" => {
                let (flags, rest): (Vec<&str>, Vec<&str>) = args.iter().partition(|a| a.starts_with("--"));
                let [path, table] = rest.as_slice() else {
                    return usage("\\import <file.csv> <table> [--no-header] [--no-infer]");
                };
                let options = ImportOptions {
                    header: !flags.contains(&"--no-header"),
                    infer_types: !flags.contains(&"--no-infer"),
                    ..Default::default()
                };
                match self.session.import_csv(Path::new(path), table, &options) {
                    Ok(n) => {
                        println!("IMPORT {n}");
                        true
                    }
                    Err(e) => {
                        report_error(&e, cmd);
                        false
                    }
                }
            }
            "\\help" | "\\?" => {
                println!("\\import <file.csv> <table> [--no-header] [--no-infer]");
                println!("\\models");
                println!("\\explain <query>");
                println!("\\stats");
                println!("\\timing on|off");
                println!("\\q");
                true
            }
            other => {
                eprintln!("ERROR: unknown meta-command {other} (try \\help)");
                false
            }
        }
    }
}

fn usage(text: &str) -> bool {
    eprintln!("usage: {text}");
    false
}

fn report_error(e: &Error, statement: &str) {
    eprintln!("ERROR: {e}");
    eprintln!("  in: {}", statement.lines().next().unwrap_or(""));
}

pub fn stats_line(s: &QueryStats) -> String {
    let c = &s.counts;
    format!(
        "-- calls={} retries={} reprompts={} fallback_batches={} cache_hits={} input_tokens={} output_tokens={} failed_rows={} elapsed_ms={:.1}",
        c.calls,
        c.retries,
        c.reprompts,
        c.fallback_batches,
        c.cache_hits,
        c.input_tokens,
        c.output_tokens,
        c.failed_rows,
        s.elapsed.as_secs_f64() * 1000.0
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(text: &str) -> Vec<Item> {
        let mut s = Splitter::default();
        let mut items: Vec<Item> = text.lines().flat_map(|l| s.feed_line(l)).collect();
        items.extend(s.finish());
        items
    }

    #[test]
    fn splits_on_unquoted_semicolons() {
        let items = split("SELECT 'a;b';\nSELECT 1; SELECT\n 2;\n\\models\nSELECT 3");
        assert_eq!(
            items,
            vec![
                Item::Sql("SELECT 'a;b'".into()),
                Item::Sql("SELECT 1".into()),
                Item::Sql("SELECT\n 2".into()),
                Item::Meta("\\models".into()),
                Item::Sql("SELECT 3".into()),
            ]
        );
    }

    #[test]
    fn comments_and_multiline_strings() {
        let items = split("-- leading; comment\nSELECT 'x\n;y' -- tail;\n;");
        assert_eq!(items, vec![Item::Sql("SELECT 'x\n;y'".into())]);
    }
}
