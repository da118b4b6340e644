//! Time series of recorded observables, CSV serialization, and the timeline
//! segmentation shared by both solvers.
//!
//! Integrators never step across a record time or a gate event: the timeline
//! is cut at every such boundary and each segment is integrated with steps of
//! at most the configured dt. Gates fire at their boundary before anything is
//! recorded there.

use crate::statecraft::PulseSchedule;
use std::fmt::Write as _;

/// Recorded observable values on a time grid, one named column per value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(columns: Vec<String>) -> Self {
        Self { times: Vec::new(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, time: f64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.times.push(time);
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of the named column across all record times.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// CSV with header `time_us,<columns...>`; 17 significant digits so that
    /// re-runs can be compared byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_us");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.rows) {
            let _ = write!(out, "{t:.16e}");
            for v in row {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// One integration segment: advance to `t_end`, fire `gates` (X gates on the
/// listed qubits), then record if `record` is set.
#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub t_end: f64,
    pub gates: Vec<usize>,
    pub record: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Timeline {
    pub record_at_zero: bool,
    pub segments: Vec<Segment>,
}

pub(crate) fn build_timeline(times: &[f64], schedule: &PulseSchedule) -> Result<Timeline, String> {
    if times.is_empty() {
        return Err("no record times requested".into());
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted[0] < 0.0 {
        return Err(format!("negative record time {}", sorted[0]));
    }
    let t_max = *sorted.last().unwrap();
    let groups = schedule.grouped();
    if let Some((t, _)) = groups.iter().find(|(t, _)| *t > t_max) {
        return Err(format!("schedule event at {t} us lies beyond the last record time {t_max} us"));
    }

    let record_at_zero = sorted[0] == 0.0;
    let mut boundaries: Vec<f64> = sorted.iter().copied().filter(|&t| t > 0.0).collect();
    boundaries.extend(groups.iter().map(|(t, _)| *t));
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup();

    let record_set: std::collections::BTreeSet<u64> =
        sorted.iter().map(|t| t.to_bits()).collect();
    let segments = boundaries
        .into_iter()
        .map(|t| {
            let gates = groups
                .iter()
                .find(|(gt, _)| *gt == t)
                .map(|(_, qs)| qs.clone())
                .unwrap_or_default();
            Segment { t_end: t, gates, record: record_set.contains(&t.to_bits()) }
        })
        .collect();
    Ok(Timeline { record_at_zero, segments })
}

/// Evenly spaced grid from `start` to `stop` inclusive with spacing close to
/// `step` (the count is rounded so the endpoints are hit exactly).
pub fn time_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    assert!(stop >= start && step > 0.0);
    let n = ((stop - start) / step).round().max(1.0) as usize;
    (0..=n).map(|k| start + (stop - start) * k as f64 / n as f64).collect()
}
