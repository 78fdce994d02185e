//! Congestion-control models driven by the fluid engine.

pub mod bbr;
pub mod competitor;

pub use bbr::{
    loss_intensity, probe_bw_window, window_derivatives, BbrFlow, BbrParams, BbrVersion, BbrWindows, ProbeRttCwnd,
    WindowInputs,
};
pub use competitor::{Competitor, CompetitorParams};

use serde::{Deserialize, Serialize};

/// Segment size used for window floors and loss-event accounting (bits).
pub const DEFAULT_MSS_BITS: f64 = 12_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Startup,
    Drain,
    ProbeBwUp,
    ProbeBwDown,
    ProbeBwRefill,
    ProbeBwCruise,
    ProbeRtt,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Startup => "Startup",
            Phase::Drain => "Drain",
            Phase::ProbeBwUp => "ProbeBW_Up",
            Phase::ProbeBwDown => "ProbeBW_Down",
            Phase::ProbeBwRefill => "ProbeBW_Refill",
            Phase::ProbeBwCruise => "ProbeBW_Cruise",
            Phase::ProbeRtt => "ProbeRTT",
        }
    }

    pub fn is_probe_bw(self) -> bool {
        matches!(
            self,
            Phase::ProbeBwUp | Phase::ProbeBwDown | Phase::ProbeBwRefill | Phase::ProbeBwCruise
        )
    }
}

/// Instantaneous path observables for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathSample {
    /// Sending rate (bits/s).
    pub x: f64,
    /// Current RTT (s).
    pub rtt: f64,
    /// Combined loss/mark probability.
    pub p_pi: f64,
}

impl PathSample {
    /// Fluid inflight `x * rtt`.
    pub fn inflight(&self) -> f64 {
        self.x * self.rtt
    }
}

/// Cumulative per-flow counters (bits) used for round-level rate and loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counters {
    pub arrived: f64,
    pub served: f64,
    pub dropped: f64,
}
