//! Closed-loop fluid simulation: queues, RTT and senders integrated together.

pub mod engine;
pub mod trace;

pub use engine::{run_scenario, Simulation};
pub use trace::{FlowInfo, PhaseEvent, ProbeRttStats, Sample, SimTrace};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("integrator failure at t = {t:.6} s (flow {flow}): {detail}")]
    IntegratorPanic { t: f64, flow: String, detail: String },
    #[error("domain error: {0}")]
    Domain(String),
}

/// `tau_min + q / theta`.
pub fn rtt(q: f64, theta: f64, tau_min: f64) -> Result<f64, SimError> {
    if q <= 0.0 {
        return Ok(tau_min);
    }
    if theta <= 0.0 {
        return Err(SimError::Domain(format!(
            "backlog {q} bits with zero service rate"
        )));
    }
    Ok(tau_min + q / theta)
}

/// `x - service - drop`, held at zero when an empty queue would go negative.
pub fn queue_derivative(q: f64, x: f64, service: f64, drop: f64) -> f64 {
    let dq = x - service - drop;
    if q <= 0.0 && dq < 0.0 {
        0.0
    } else {
        dq
    }
}

/// `(1 - p) x`.
pub fn effective_throughput(p: f64, x: f64) -> f64 {
    (1.0 - p) * x
}
