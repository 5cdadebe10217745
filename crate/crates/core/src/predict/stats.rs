use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

/// Counters for one predict operator, updated concurrently by its workers.
#[derive(Debug, Default)]
pub struct CallStats {
    calls: AtomicU64,
    retries: AtomicU64,
    reprompts: AtomicU64,
    fallback_batches: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
    transport_retries: AtomicU64,
    cache_hits: AtomicU64,
    rows_in: AtomicU64,
    rows_predicted: AtomicU64,
    failed_rows: AtomicU64,
    flagged_rows: AtomicU64,
    call_micros: AtomicU64,
    max_call_micros: AtomicU64,
}

/// Counters that do not depend on timing; equal across runs of the same query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    /// First attempts plus re-prompts; retries are counted separately.
    pub calls: u64,
    pub retries: u64,
    pub reprompts: u64,
    pub fallback_batches: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cache_hits: u64,
    pub rows_in: u64,
    pub rows_predicted: u64,
    pub failed_rows: u64,
    pub flagged_rows: u64,
}

impl CallCounts {
    pub fn add(&mut self, o: &CallCounts) {
        self.calls += o.calls;
        self.retries += o.retries;
        self.reprompts += o.reprompts;
        self.fallback_batches += o.fallback_batches;
        self.input_tokens += o.input_tokens;
        self.output_tokens += o.output_tokens;
        self.cache_hits += o.cache_hits;
        self.rows_in += o.rows_in;
        self.rows_predicted += o.rows_predicted;
        self.failed_rows += o.failed_rows;
        self.flagged_rows += o.flagged_rows;
    }

    /// Backend invocations, retries included.
    pub fn invocations(&self) -> u64 {
        self.calls + self.retries
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CallStatsSnapshot {
    pub counts: CallCounts,
    /// Retries done inside the transport (HTTP 429, timeouts), not visible as calls.
    pub transport_retries: u64,
    pub total_call_time: Duration,
    pub max_call_time: Duration,
}

impl CallStatsSnapshot {
    pub fn mean_call_time(&self) -> Duration {
        match self.counts.invocations() {
            0 => Duration::ZERO,
            n => self.total_call_time / n as u32,
        }
    }
}

macro_rules! bump {
    ($name:ident, $field:ident) => {
        pub fn $name(&self, n: u64) {
            self.$field.fetch_add(n, Ordering::Relaxed);
        }
    };
}

impl CallStats {
    pub fn new() -> Self {
        Self::default()
    }

    bump!(add_calls, calls);
    bump!(add_retries, retries);
    bump!(add_reprompts, reprompts);
    bump!(add_fallback_batches, fallback_batches);
    bump!(add_input_tokens, input_tokens);
    bump!(add_output_tokens, output_tokens);
    bump!(add_transport_retries, transport_retries);
    bump!(add_cache_hits, cache_hits);
    bump!(add_rows_in, rows_in);
    bump!(add_rows_predicted, rows_predicted);
    bump!(add_failed_rows, failed_rows);
    bump!(add_flagged_rows, flagged_rows);

    pub fn record_call_time(&self, d: Duration) {
        let us = d.as_micros() as u64;
        self.call_micros.fetch_add(us, Ordering::Relaxed);
        self.max_call_micros.fetch_max(us, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CallStatsSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CallStatsSnapshot {
            counts: CallCounts {
                calls: g(&self.calls),
                retries: g(&self.retries),
                reprompts: g(&self.reprompts),
                fallback_batches: g(&self.fallback_batches),
                input_tokens: g(&self.input_tokens),
                output_tokens: g(&self.output_tokens),
                cache_hits: g(&self.cache_hits),
                rows_in: g(&self.rows_in),
                rows_predicted: g(&self.rows_predicted),
                failed_rows: g(&self.failed_rows),
                flagged_rows: g(&self.flagged_rows),
            },
            transport_retries: g(&self.transport_retries),
            total_call_time: Duration::from_micros(g(&self.call_micros)),
            max_call_time: Duration::from_micros(g(&self.max_call_micros)),
        }
    }
}
