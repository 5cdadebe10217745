//! Batch-size by worker-count sweeps of the analytic model against the simulation.

use std::io::Write;

use crate::latency::LatencyModel;
use crate::sim::simulate;

pub const DEFAULT_BATCHES: [usize; 5] = [1, 2, 4, 8, 16];
pub const DEFAULT_WORKERS: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub batch: usize,
    pub workers: usize,
    pub calls: usize,
    pub serial_s: f64,
    pub rate_s: f64,
    pub predicted_s: f64,
    pub simulated_s: f64,
}

impl SweepPoint {
    /// Relative gap between prediction and simulation.
    pub fn error(&self) -> f64 {
        if self.simulated_s == 0.0 {
            return 0.0;
        }
        (self.predicted_s - self.simulated_s).abs() / self.simulated_s
    }
}

pub fn sweep(model: &LatencyModel, batches: &[usize], workers: &[usize]) -> Vec<SweepPoint> {
    let mut out = Vec::with_capacity(batches.len() * workers.len());
    for &b in batches {
        for &w in workers {
            let m = model.with_workers(w);
            out.push(SweepPoint {
                batch: b,
                workers: m.workers,
                calls: m.calls(b),
                serial_s: m.serial_bound(b),
                rate_s: m.rate_bound(b),
                predicted_s: m.predict_total_latency(b),
                simulated_s: simulate(&m, b).total_s,
            });
        }
    }
    out
}

pub fn write_csv(points: &[SweepPoint], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch_size", "workers", "calls", "serial_s", "rate_s", "predicted_s", "simulated_s"])?;
    for p in points {
        w.write_record([
            p.batch.to_string(),
            p.workers.to_string(),
            p.calls.to_string(),
            format!("{:.3}", p.serial_s),
            format!("{:.3}", p.rate_s),
            format!("{:.3}", p.predicted_s),
            format!("{:.3}", p.simulated_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Smallest worker count of `batch`'s curve after which adding workers saves
/// less than `tolerance` of the time, i.e. where the curve flattens.
pub fn plateau_workers(points: &[SweepPoint], batch: usize, tolerance: f64) -> Option<usize> {
    let curve: Vec<&SweepPoint> = points.iter().filter(|p| p.batch == batch).collect();
    (0..curve.len())
        .find(|&i| curve[i..].iter().all(|p| p.predicted_s >= curve[i].predicted_s * (1.0 - tolerance)))
        .map(|i| curve[i].workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_grid_point() {
        let m = LatencyModel::synthetic(Some(500.0), 1, 1000);
        let points = sweep(&m, &[1, 16], &[1, 4]);
        let mut buf = Vec::new();
        write_csv(&points, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("batch_size,workers,calls,"));
        assert!(text.contains("\n16,4,63,"), "{text}");
    }

    #[test]
    fn rate_bound_flattens_unbatched_curve() {
        let m = LatencyModel::synthetic(Some(500.0), 1, 10_000);
        let points = sweep(&m, &[1], &DEFAULT_WORKERS);
        // 0.95 s calls against a 0.12 s slot interval: 8 workers keep up.
        assert_eq!(plateau_workers(&points, 1, 0.01), Some(8));
    }
}
