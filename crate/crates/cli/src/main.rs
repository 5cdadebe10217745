mod format;
mod runner;

use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use semaquery::predictors::{
    BackendFactory, CassetteTransport, HttpTransport, MockFactory, MockPredictor, RemoteFactory, ReqwestTransport,
};
use semaquery::session::Session;

use format::Format;
use runner::{Runner, Splitter};

const DEFAULT_MOCK: &str = "{\"format\":\"semaquery-mock\",\"version\":1}\n{\"default\":true,\"output\":\"echo\"}\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

/// SQL with semantic operators over LLM and tabular models.
#[derive(Debug, Parser)]
#[command(name = "semaquery", version)]
struct Args {
    /// Directory holding the persistent model catalog and secrets.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Run this script instead of reading standard input.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Session default, as if `SET key = value` ran first. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum, default_value = "mock")]
    backend: Backend,
    /// Mock fixture file (JSONL); defaults to echoing the prompt.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Replay HTTP exchanges from a cassette instead of the network (remote backend).
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Print call and token counts to stderr after each query.
    #[arg(long)]
    stats: bool,
    /// Stop at the first failing statement.
    #[arg(long)]
    stop_on_error: bool,
}

fn backend(args: &Args) -> Result<Arc<dyn BackendFactory>, String> {
    match args.backend {
        Backend::Mock => {
            let mock = match &args.fixtures {
                Some(p) => MockPredictor::from_path(p),
                None => MockPredictor::parse(DEFAULT_MOCK),
            }
            .map_err(|e| e.to_string())?;
            Ok(Arc::new(MockFactory { mock: Arc::new(mock) }))
        }
        Backend::Remote => {
            let transport: Arc<dyn HttpTransport> = match &args.cassette {
                Some(p) => Arc::new(CassetteTransport::from_path(p).map_err(|e| e.to_string())?),
                None => Arc::new(ReqwestTransport::new().map_err(|e| e.to_string())?),
            };
            Ok(Arc::new(RemoteFactory { transport }))
        }
    }
}

fn apply_set(runner: &mut Runner, kv: &str) -> Result<(), String> {
    let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
    let (k, v) = (k.trim(), v.trim());
    // Numbers and booleans parse as-is; anything else is taken as a string.
    let direct = format!("SET {k} = {v}");
    if runner.session.run(&direct).is_ok() {
        return Ok(());
    }
    let quoted = format!("SET {k} = '{}'", v.replace('\'', "''"));
    runner.session.run(&quoted).map(|_| ()).map_err(|e| e.to_string())
}

fn run_lines(runner: &mut Runner, lines: impl Iterator<Item = io::Result<String>>, stop_on_error: bool, prompt: bool) {
    let mut splitter = Splitter::default();
    let show_prompt = |pending: bool| {
        if prompt {
            print!("{}", if pending { "...> " } else { "semaquery> " });
            let _ = io::stdout().flush();
        }
    };
    show_prompt(false);
    for line in lines {
        let Ok(line) = line else { break };
        for item in splitter.feed_line(&line) {
            if !runner.run_item(&item) && stop_on_error || runner.quit {
                return;
            }
        }
        show_prompt(splitter.pending());
    }
    if let Some(item) = splitter.finish() {
        runner.run_item(&item);
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let factory = match backend(&args) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("ERROR: {e}");
            return ExitCode::from(2);
        }
    };
    let session = match &args.db {
        Some(dir) => match Session::open(dir, factory) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("ERROR: {e}");
                return ExitCode::from(2);
            }
        },
        None => Session::new(factory),
    };
    let mut runner = Runner::new(session, args.format, args.stats);
    for kv in &args.set {
        if let Err(e) = apply_set(&mut runner, kv) {
            eprintln!("ERROR: {e}");
            return ExitCode::from(2);
        }
    }

    match &args.script {
        Some(path) => {
            let text = match fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("ERROR: cannot read {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            };
            run_lines(&mut runner, text.lines().map(|l| Ok(l.to_string())), args.stop_on_error, false);
        }
        None => {
            let stdin = io::stdin();
            let interactive = stdin.is_terminal();
            run_lines(&mut runner, stdin.lock().lines(), args.stop_on_error && !interactive, interactive);
            if interactive {
                println!();
            }
        }
    }

    if runner.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn args_parse() {
        let a = Args::try_parse_from(["semaquery", "--set", "batch_size=8", "--format", "csv", "--stats"]).unwrap();
        assert_eq!(a.set, vec!["batch_size=8"]);
        assert_eq!(a.format, Format::Csv);
        assert!(a.stats && !a.stop_on_error);
        assert_eq!(a.backend, Backend::Mock);
    }

    #[test]
    fn set_flag_quotes_strings() {
        let args = Args::try_parse_from(["semaquery"]).unwrap();
        let mut r = Runner::new(Session::new(backend(&args).unwrap()), Format::Table, false);
        apply_set(&mut r, "batch_size=8").unwrap();
        apply_set(&mut r, "error_policy=null").unwrap();
        assert!(apply_set(&mut r, "bogus").is_err());
    }
}
