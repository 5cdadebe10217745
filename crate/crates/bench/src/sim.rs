//! Discrete-event simulation of a predict operator: a pool of workers taking
//! batches in order, each call first taking a slot from a smooth rate limiter
//! (one slot every `60 / rpm` seconds, granted in request order), as the
//! executor does.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::latency::LatencyModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    pub calls: usize,
    /// Seconds until the last call finishes.
    pub total_s: f64,
    /// Seconds calls spent waiting for a rate-limit slot, summed.
    pub throttled_s: f64,
}

fn nanos(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

pub fn simulate(model: &LatencyModel, batch: usize) -> SimOutcome {
    let batch = batch.max(1);
    let calls = model.calls(batch);
    let interval = model.rpm.map(|r| nanos(60.0 / r)).unwrap_or(0);
    let mut free: BinaryHeap<Reverse<u64>> = (0..model.workers).map(|_| Reverse(0)).collect();
    let mut next_slot = 0u64;
    let (mut end, mut throttled) = (0u64, 0u64);
    for i in 0..calls {
        let rows = if i + 1 == calls { model.tuples - batch * i } else { batch };
        let Reverse(ready) = free.pop().expect("at least one worker");
        let start = ready.max(next_slot);
        next_slot = start + interval;
        throttled += start - ready;
        let finish = start + nanos(model.latency(rows));
        end = end.max(finish);
        free.push(Reverse(finish));
    }
    SimOutcome { calls, total_s: end as f64 / 1e9, throttled_s: throttled as f64 / 1e9 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unthrottled_pool_matches_waves() {
        let m = LatencyModel::from_points(vec![(4, 2.0)], None, 3, 40).unwrap();
        let o = simulate(&m, 4);
        assert_eq!(o.calls, 10);
        // 10 calls on 3 workers: 4 waves of 2 s.
        assert!((o.total_s - 8.0).abs() < 1e-9);
        assert_eq!(o.throttled_s, 0.0);
    }

    #[test]
    fn limiter_spaces_call_starts() {
        // One slot per second, calls far shorter than that: the last call
        // starts at 9 s and ends 0.1 s later.
        let m = LatencyModel::from_points(vec![(1, 0.1)], Some(60.0), 8, 10).unwrap();
        let o = simulate(&m, 1);
        assert!((o.total_s - 9.1).abs() < 1e-9, "{o:?}");
        assert!(o.throttled_s > 0.0);
    }

    #[test]
    fn short_last_batch_uses_its_own_latency() {
        let m = LatencyModel::synthetic(None, 1, 17);
        let o = simulate(&m, 16);
        assert!((o.total_s - (m.latency(16) + m.latency(1))).abs() < 1e-9);
    }
}
