//! Summary statistics over the steady window of a trace.
//!
//! Every statistic is computed from values rounded to 9 significant digits,
//! the same values the CSV carries, so the report can be recomputed from the
//! CSV alone.

use serde::Serialize;
use thiserror::Error;

use crate::sim::{Sample, SimTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("steady fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("steady window contains no samples")]
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub id: String,
    pub cca: String,
    pub throughput_mean_mbps: f64,
    pub throughput_median_mbps: f64,
    pub throughput_p95_mbps: f64,
    pub rtt_mean_ms: f64,
    pub rtt_median_ms: f64,
    /// RTT standard deviation over the window.
    pub jitter_ms: f64,
    /// Cumulative dropped or marked bits at the end of the trace.
    pub drop_bits: f64,
    /// Mean of |x - theta_eff| / x over samples with x > 0.
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub scenario: String,
    pub config_hash: String,
    pub duration_s: f64,
    pub dt_s: f64,
    pub steady_fraction: f64,
    pub window_start_s: f64,
    pub window_samples: usize,
    pub flows: Vec<FlowSummary>,
    pub jain_index: f64,
}

/// Rounds to 9 significant digits.
pub fn round9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { 0.0 } else { v };
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

/// Index of the first sample in the steady window: the last `ceil(f * n)` samples.
pub fn window_start(n: usize, fraction: f64) -> usize {
    let len = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    n - len.min(n)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(v: &[f64], pct: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = pct / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// `(sum r)^2 / (N sum r^2)`; equal shares (including all zero) give 1.
pub fn jain_index(rates: &[f64]) -> f64 {
    let sum: f64 = rates.iter().sum();
    let sq: f64 = rates.iter().map(|r| r * r).sum();
    if rates.is_empty() || sq == 0.0 {
        return 1.0;
    }
    sum * sum / (rates.len() as f64 * sq)
}

/// Pearson correlation at lag 0; zero when either series is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(&a[..n]), mean(&b[..n]));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for k in 0..n {
        let (da, db) = (a[k] - ma, b[k] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn sup_norm_relative(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    diff / scale
}

/// Mean |x - theta_eff| / x over samples with x > 0.
pub fn alignment(x: &[f64], theta_eff: &[f64]) -> f64 {
    let terms: Vec<f64> = x
        .iter()
        .zip(theta_eff)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, th)| (x - th).abs() / x)
        .collect();
    mean(&terms)
}

/// Largest per-flow `|q_end - (arrived - served - dropped)| / max(1, arrived)`.
pub fn conservation_residual(trace: &SimTrace) -> f64 {
    let Some(last) = trace.samples.last() else {
        return 0.0;
    };
    last.iter()
        .map(|s| (s.q - (s.arrived_cum - s.served_cum - s.drop_cum)).abs() / s.arrived_cum.max(1.0))
        .fold(0.0, f64::max)
}

/// Rounded steady-window series of one field for one flow.
pub fn window_series(trace: &SimTrace, flow: usize, start: usize, field: impl Fn(&Sample) -> f64) -> Vec<f64> {
    trace.samples[start..]
        .iter()
        .map(|row| round9(field(&row[flow])))
        .collect()
}

pub fn summarize(trace: &SimTrace, steady_fraction: f64) -> Result<SummaryReport, ReportError> {
    if !(steady_fraction > 0.0 && steady_fraction <= 1.0) {
        return Err(ReportError::InvalidFraction(steady_fraction));
    }
    let n = trace.times.len();
    let start = window_start(n, steady_fraction);
    if start >= n {
        return Err(ReportError::EmptyWindow);
    }
    let flows: Vec<FlowSummary> = trace
        .flows
        .iter()
        .enumerate()
        .map(|(i, info)| {
            let thr: Vec<f64> = window_series(trace, i, start, |s| s.theta_eff)
                .iter()
                .map(|v| v / 1e6)
                .collect();
            let rtt: Vec<f64> = window_series(trace, i, start, |s| s.rtt)
                .iter()
                .map(|v| v * 1e3)
                .collect();
            let x = window_series(trace, i, start, |s| s.x);
            let eff = window_series(trace, i, start, |s| s.theta_eff);
            FlowSummary {
                id: info.id.clone(),
                cca: info.cca.clone(),
                throughput_mean_mbps: mean(&thr),
                throughput_median_mbps: percentile(&thr, 50.0),
                throughput_p95_mbps: percentile(&thr, 95.0),
                rtt_mean_ms: mean(&rtt),
                rtt_median_ms: percentile(&rtt, 50.0),
                jitter_ms: std_dev(&rtt),
                drop_bits: round9(trace.samples[n - 1][i].drop_cum),
                alignment: alignment(&x, &eff),
            }
        })
        .collect();
    let means: Vec<f64> = flows.iter().map(|f| f.throughput_mean_mbps).collect();
    Ok(SummaryReport {
        scenario: trace.scenario.clone(),
        config_hash: trace.config_hash.clone(),
        duration_s: trace.duration,
        dt_s: trace.dt,
        steady_fraction,
        window_start_s: trace.times[start],
        window_samples: n - start,
        jain_index: jain_index(&means),
        flows,
    })
}
