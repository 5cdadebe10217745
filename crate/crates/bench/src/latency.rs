//! Per-call latency as a function of batch size, and the analytic total-latency model.

use std::fmt;
use std::io::Read;

use semaquery::optimizer::{CALL_OVERHEAD_S, PER_ROW_S};

#[derive(Debug)]
pub struct TableError(pub String);

impl fmt::Display for TableError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "latency table: {}", self.0)
    }
}

impl std::error::Error for TableError {}

/// Mean seconds per model call at measured batch sizes, plus the workload it
/// is applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    /// `(batch size, seconds)`, sorted by batch size, sizes distinct.
    points: Vec<(usize, f64)>,
    /// True when the points come from the built-in linear model rather than measurements.
    pub synthetic: bool,
    pub rpm: Option<f64>,
    pub workers: usize,
    pub tuples: usize,
}

impl LatencyModel {
    pub fn from_points(
        mut points: Vec<(usize, f64)>,
        rpm: Option<f64>,
        workers: usize,
        tuples: usize,
    ) -> Result<Self, TableError> {
        if points.is_empty() {
            return Err(TableError("no rows".into()));
        }
        points.sort_by_key(|p| p.0);
        for w in points.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TableError(format!("batch size {} listed twice", w[0].0)));
            }
        }
        if let Some(p) = points.iter().find(|p| p.0 == 0 || !p.1.is_finite() || p.1 <= 0.0) {
            return Err(TableError(format!("bad row ({}, {})", p.0, p.1)));
        }
        if rpm.is_some_and(|r| !r.is_finite() || r <= 0.0) {
            return Err(TableError("rpm must be positive".into()));
        }
        Ok(LatencyModel { points, synthetic: false, rpm, workers: workers.max(1), tuples })
    }

    /// Reads a `batch_size,seconds` CSV with a header row.
    pub fn from_csv(input: impl Read, rpm: Option<f64>, workers: usize, tuples: usize) -> Result<Self, TableError> {
        let mut points = Vec::new();
        for (i, rec) in csv::Reader::from_reader(input).records().enumerate() {
            let rec = rec.map_err(|e| TableError(e.to_string()))?;
            let field = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
            let batch =
                field(0).parse().map_err(|_| TableError(format!("row {}: bad batch size '{}'", i + 1, field(0))))?;
            let secs =
                field(1).parse().map_err(|_| TableError(format!("row {}: bad latency '{}'", i + 1, field(1))))?;
            points.push((batch, secs));
        }
        Self::from_points(points, rpm, workers, tuples)
    }

    /// The engine's default linear model, `overhead + per_row * b`.
    pub fn synthetic(rpm: Option<f64>, workers: usize, tuples: usize) -> Self {
        let points = [1, 2, 4, 8, 16, 32, 64].iter().map(|&b| (b, CALL_OVERHEAD_S + PER_ROW_S * b as f64)).collect();
        LatencyModel { points, synthetic: true, rpm, workers: workers.max(1), tuples }
    }

    pub fn with_workers(&self, workers: usize) -> Self {
        LatencyModel { workers: workers.max(1), ..self.clone() }
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    /// Seconds per call at batch size `b`. Linear between table rows, flat
    /// below the first, and extended along the last segment above the last.
    /// A one-row table is flat everywhere.
    pub fn latency(&self, b: usize) -> f64 {
        let b = b.max(1);
        let p = &self.points;
        if let Ok(i) = p.binary_search_by_key(&b, |x| x.0) {
            return p[i].1;
        }
        if b < p[0].0 || p.len() == 1 {
            return p[0].1;
        }
        let hi = p.iter().position(|x| x.0 > b).unwrap_or(p.len() - 1);
        let (x0, y0) = p[hi - 1];
        let (x1, y1) = p[hi];
        let slope = (y1 - y0) / (x1 - x0) as f64;
        (y0 + slope * (b as f64 - x0 as f64)).max(f64::MIN_POSITIVE)
    }

    pub fn calls(&self, b: usize) -> usize {
        self.tuples.div_ceil(b.max(1))
    }

    /// Time if calls only wait on free workers.
    pub fn serial_bound(&self, b: usize) -> f64 {
        self.calls(b).div_ceil(self.workers) as f64 * self.latency(b)
    }

    /// Time if calls only wait on the rate limit.
    pub fn rate_bound(&self, b: usize) -> f64 {
        match self.rpm {
            Some(rpm) => self.calls(b) as f64 / (rpm / 60.0),
            None => 0.0,
        }
    }

    /// Predicted end-to-end latency of the predict operator at batch size `b`.
    pub fn predict_total_latency(&self, b: usize) -> f64 {
        self.serial_bound(b).max(self.rate_bound(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_between_rows() {
        let m = LatencyModel::from_points(vec![(1, 1.0), (4, 2.5), (8, 4.5)], None, 1, 10).unwrap();
        assert_eq!(m.latency(4), 2.5);
        assert!((m.latency(2) - 1.5).abs() < 1e-12);
        assert!((m.latency(6) - 3.5).abs() < 1e-12);
        assert!((m.latency(16) - 8.5).abs() < 1e-12);
        assert_eq!(m.latency(0), 1.0);
    }

    #[test]
    fn csv_table_is_validated() {
        let m = LatencyModel::from_csv("batch_size,seconds\n1,0.9\n16,3.1\n".as_bytes(), Some(60.0), 2, 100).unwrap();
        assert_eq!(m.points(), &[(1, 0.9), (16, 3.1)]);
        assert!(!m.synthetic);
        assert!(LatencyModel::from_csv("b,s\n1,0.9\n1,1.0\n".as_bytes(), None, 1, 1).is_err());
        assert!(LatencyModel::from_csv("b,s\n1,-2\n".as_bytes(), None, 1, 1).is_err());
        assert!(LatencyModel::from_csv("b,s\nx,1\n".as_bytes(), None, 1, 1).is_err());
    }

    #[test]
    fn total_is_the_larger_bound() {
        let m = LatencyModel::synthetic(Some(500.0), 16, 10_000);
        assert!((m.latency(1) - 0.95).abs() < 1e-12);
        assert_eq!(m.calls(16), 625);
        assert!((m.rate_bound(1) - 1200.0).abs() < 1e-9);
        assert!((m.serial_bound(1) - 625.0 * 0.95).abs() < 1e-9);
        assert_eq!(m.predict_total_latency(1), m.rate_bound(1));
        assert_eq!(LatencyModel::synthetic(None, 4, 10).rate_bound(1), 0.0);
    }
}
