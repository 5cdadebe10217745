//! Wall-clock runs of the real operator against the mock backend, with call
//! latency and rate limit scaled down by `time_scale` so a run takes
//! milliseconds. Results are reported back in unscaled seconds.

use std::sync::Arc;
use std::time::Instant;

use semaquery::error::Error;
use semaquery::predictors::{MockFactory, MockPredictor};
use semaquery::session::Session;

use crate::latency::LatencyModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub calls: u64,
    pub total_s: f64,
}

pub fn measure_mock(model: &LatencyModel, batch: usize, time_scale: f64) -> Result<Measured, Error> {
    let latency_ms = model.latency(batch) * 1000.0 * time_scale;
    let mock = MockPredictor::parse(&format!("{{\"default\":true,\"output\":\"echo\",\"latency_ms\":{latency_ms}}}"))?;
    let mut s = Session::new(Arc::new(MockFactory { mock: Arc::new(mock) }));
    s.run("CREATE LLM MODEL m PATH 'mock'; CREATE TABLE T (id INTEGER, t VARCHAR);")?;
    if model.tuples > 0 {
        let rows: Vec<String> = (0..model.tuples).map(|i| format!("({i}, 'tuple {i}')")).collect();
        s.run(&format!("INSERT INTO T VALUES {}", rows.join(", ")))?;
    }
    s.run(&format!("SET batch_size = {batch}; SET n_threads = {}; SET use_dedup = false;", model.workers))?;
    if let Some(rpm) = model.rpm {
        s.run(&format!("SET rate_limit_rpm = {};", rpm / time_scale))?;
    }
    let started = Instant::now();
    let r = s.query("SELECT id, LLM m (PROMPT 'copy {out VARCHAR} from {{t}}') FROM T")?;
    let total_s = started.elapsed().as_secs_f64() / time_scale;
    Ok(Measured { calls: r.stats.counts.calls, total_s })
}
