use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use semaquery_bench::sweep::{DEFAULT_BATCHES, DEFAULT_WORKERS};
use semaquery_bench::{measure_mock, run_opt_ablation, sweep, write_csv, LatencyModel, Workload};

#[derive(Parser)]
#[command(name = "semaquery-bench", about = "Cost-model sweeps and optimization ablations")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Predicted and simulated operator latency over batch sizes and worker counts, as CSV.
    Sweep {
        /// `batch_size,seconds` CSV of measured per-call latency; the linear default otherwise.
        #[arg(long)]
        latency_table: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        tuples: usize,
        /// Requests per minute; unlimited when absent.
        #[arg(long)]
        rpm: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        batches: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        workers: Option<Vec<usize>>,
        /// Also run the mock backend at this time scale and print measured seconds to stderr.
        #[arg(long)]
        measure_scale: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Runs one workload with dedup, batching, parallelism and pull-up switched off in turn.
    Ablation {
        #[arg(long, default_value_t = 400)]
        reviews: usize,
        #[arg(long, default_value_t = 200)]
        distinct: usize,
        #[arg(long, default_value_t = 2.0)]
        latency_ms: f64,
    },
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    match args.cmd {
        Cmd::Sweep { latency_table, tuples, rpm, batches, workers, measure_scale, out } => {
            let model = match latency_table {
                Some(path) => LatencyModel::from_csv(File::open(path)?, rpm, 1, tuples)?,
                None => LatencyModel::synthetic(rpm, 1, tuples),
            };
            if model.synthetic {
                eprintln!("note: using the synthetic latency model (0.8 s + 0.15 s per tuple)");
            }
            let batches = batches.unwrap_or(DEFAULT_BATCHES.to_vec());
            let workers = workers.unwrap_or(DEFAULT_WORKERS.to_vec());
            let points = sweep(&model, &batches, &workers);
            match out {
                Some(path) => write_csv(&points, File::create(path)?)?,
                None => write_csv(&points, io::stdout().lock())?,
            }
            if let Some(scale) = measure_scale {
                for p in &points {
                    let m = measure_mock(&model.with_workers(p.workers), p.batch, scale)?;
                    eprintln!(
                        "measured batch={} workers={} calls={} seconds={:.3}",
                        p.batch, p.workers, m.calls, m.total_s
                    );
                }
            }
        }
        Cmd::Ablation { reviews, distinct, latency_ms } => {
            let w = Workload { reviews, distinct, latency_ms, ..Workload::default() };
            let rows = run_opt_ablation(&w)?;
            let mut out = io::stdout().lock();
            writeln!(out, "variant,calls,cache_hits,input_tokens,rows,elapsed_ms")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{:.1}",
                    r.variant,
                    r.calls,
                    r.cache_hits,
                    r.input_tokens,
                    r.rows,
                    r.elapsed.as_secs_f64() * 1000.0
                )?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
