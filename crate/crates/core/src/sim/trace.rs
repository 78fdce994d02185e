//! Sampled simulation output.

use crate::scenario::Direction;

/// One flow's observables at one sample instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub phase: &'static str,
    /// Sending rate (bits/s).
    pub x: f64,
    pub theta_eff: f64,
    pub rtt: f64,
    pub q: f64,
    /// Cumulative dropped or marked bits.
    pub drop_cum: f64,
    /// Combined loss/mark probability.
    pub p_pi: f64,
    /// BBR base window, or the competitor's window (bits).
    pub w_bar: f64,
    pub m_crs: f64,
    pub pacing: f64,
    pub cwnd: f64,
    pub inflight: f64,
    /// Nominal per-flow service rate used for the queueing delay (bits/s).
    pub theta_nom: f64,
    pub sojourn: f64,
    pub arrived_cum: f64,
    pub served_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowInfo {
    pub id: String,
    pub direction: Direction,
    pub cca: String,
    pub tau_min: f64,
    pub start: f64,
    pub stop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEvent {
    pub t: f64,
    pub flow: usize,
    pub from: &'static str,
    pub to: &'static str,
}

/// Per-flow ProbeRTT bookkeeping, checked at every committed step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeRttStats {
    pub episodes: usize,
    /// Largest inflight / (w_bar / 2) seen while in ProbeRTT.
    pub max_inflight_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scenario: String,
    pub config_hash: String,
    pub dt: f64,
    pub output_cadence: f64,
    pub duration: f64,
    pub flows: Vec<FlowInfo>,
    pub times: Vec<f64>,
    /// `samples[k][i]` is flow `i` at `times[k]`.
    pub samples: Vec<Vec<Sample>>,
    pub events: Vec<PhaseEvent>,
    pub probe_rtt: Vec<ProbeRttStats>,
    pub steps: u64,
}

impl SimTrace {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn flow_index(&self, id: &str) -> Option<usize> {
        self.flows.iter().position(|f| f.id == id)
    }

    /// Time series of one field for one flow.
    pub fn series(&self, flow: usize, field: impl Fn(&Sample) -> f64) -> Vec<f64> {
        self.samples.iter().map(|row| field(&row[flow])).collect()
    }

    /// Entry times into `phase` for one flow.
    pub fn entries(&self, flow: usize, phase: &str) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.flow == flow && e.to == phase)
            .map(|e| e.t)
            .collect()
    }
}
