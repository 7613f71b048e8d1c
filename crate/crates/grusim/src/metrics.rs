//! Latency measurement over output-valid events.
//!
//! Mirrors the hardware methodology: watch consecutive valid assertions on
//! the output stream and take their differences. Because the recurrent
//! dependency serializes iterations, the per-iteration latency and the
//! iteration interval are one and the same measurement; the report carries
//! both names for the sweep CSV.

use crate::arch::{cycles_to_ns, ArchConfig};
use crate::sim::SimResult;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need >= 2 valid events after warm-up, got {events} with warmup {warmup}")]
    TooFewEvents { events: usize, warmup: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    pub min_ns: f64,
    pub median_ns: f64,
    pub max_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    /// Raw valid-event times, AIE cycles.
    pub valid_timestamps: Vec<u64>,
    /// Differences of consecutive valid events, cycles (all of them).
    pub intervals_cycles: Vec<u64>,
    /// Same differences in nanoseconds.
    pub latency_ns: Vec<f64>,
    /// Alias of `latency_ns`: for a recurrent graph the iteration interval
    /// is the latency.
    pub iteration_interval_ns: Vec<f64>,
    /// Intervals excluded from the summary.
    pub warmup_discarded: usize,
    /// Summary over the post-warm-up intervals.
    pub summary: LatencySummary,
}

impl LatencyReport {
    /// Post-warm-up intervals in cycles.
    pub fn steady_intervals_cycles(&self) -> &[u64] {
        &self.intervals_cycles[self.warmup_discarded..]
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "latency over {} intervals ({} warm-up discarded):",
            self.intervals_cycles.len(),
            self.warmup_discarded
        )?;
        writeln!(
            f,
            "  min {:.3} ns   median {:.3} ns   max {:.3} ns",
            self.summary.min_ns, self.summary.median_ns, self.summary.max_ns
        )?;
        write!(f, "  intervals (cycles): {:?}", self.intervals_cycles)
    }
}

/// Median of a sorted-by-us copy; even lengths average the middle pair.
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Derive the latency report from a run's valid events, discarding the first
/// `warmup` intervals from the summary.
pub fn probe_latency(result: &SimResult, cfg: &ArchConfig, warmup: usize) -> Result<LatencyReport, MetricsError> {
    probe_timestamps(&result.valid_timestamps, cfg, warmup)
}

/// [`probe_latency`] over raw timestamps.
pub fn probe_timestamps(timestamps: &[u64], cfg: &ArchConfig, warmup: usize) -> Result<LatencyReport, MetricsError> {
    if timestamps.len() < warmup + 2 {
        return Err(MetricsError::TooFewEvents {
            events: timestamps.len(),
            warmup,
        });
    }
    let intervals_cycles: Vec<u64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let latency_ns: Vec<f64> = intervals_cycles.iter().map(|&c| cycles_to_ns(cfg, c)).collect();
    let steady = &latency_ns[warmup..];
    let summary = LatencySummary {
        min_ns: steady.iter().copied().fold(f64::INFINITY, f64::min),
        median_ns: median(steady),
        max_ns: steady.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(LatencyReport {
        valid_timestamps: timestamps.to_vec(),
        intervals_cycles: intervals_cycles.clone(),
        latency_ns: latency_ns.clone(),
        iteration_interval_ns: latency_ns,
        warmup_discarded: warmup,
        summary,
    })
}

/// Shape of a latency-vs-input sweep at fixed hidden dimension: flat up to a
/// breakpoint, then increasing with (eventually) constant differences.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauAnalysis {
    /// Steady latency on the plateau, cycles.
    pub plateau_cycles: u64,
    /// Index of the last sweep point still on the plateau.
    pub breakpoint_index: usize,
    /// True when every point at or below the breakpoint equals the plateau
    /// value exactly and points beyond it strictly increase.
    pub is_flat_then_increasing: bool,
    /// First differences past the breakpoint, cycles.
    pub tail_first_differences: Vec<i64>,
}

impl PlateauAnalysis {
    /// Are the final `n` first differences constant to within `tol` cycles
    /// of each other and positive? Tests the asymptotically-linear tail.
    pub fn tail_is_linear(&self, n: usize, tol: i64) -> bool {
        if self.tail_first_differences.len() < n || n == 0 {
            return false;
        }
        let tail = &self.tail_first_differences[self.tail_first_differences.len() - n..];
        let lo = *tail.iter().min().expect("non-empty");
        let hi = *tail.iter().max().expect("non-empty");
        lo > 0 && hi - lo <= tol
    }
}

/// Classify a `(sweep point, steady latency in cycles)` series.
pub fn analyze_plateau(latencies_cycles: &[u64]) -> PlateauAnalysis {
    assert!(!latencies_cycles.is_empty(), "empty sweep");
    let plateau = latencies_cycles[0];
    let mut breakpoint = 0;
    for (i, &v) in latencies_cycles.iter().enumerate() {
        if v == plateau {
            breakpoint = i;
        } else {
            break;
        }
    }
    let mut flat_then_increasing = true;
    for i in 1..latencies_cycles.len() {
        if i <= breakpoint {
            if latencies_cycles[i] != plateau {
                flat_then_increasing = false;
            }
        } else if latencies_cycles[i] <= latencies_cycles[i - 1] {
            flat_then_increasing = false;
        }
    }
    let tail_first_differences = latencies_cycles[breakpoint..]
        .windows(2)
        .map(|w| w[1] as i64 - w[0] as i64)
        .collect();
    PlateauAnalysis {
        plateau_cycles: plateau,
        breakpoint_index: breakpoint,
        is_flat_then_increasing: flat_then_increasing,
        tail_first_differences,
    }
}
