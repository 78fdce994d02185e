//! Fluid queue disciplines: a shared drop-tail/RED FIFO, per-flow fair
//! queuing with CoDel-style sojourn drops, and CAKE-style host-fair queuing
//! with backlog- and delay-driven marking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{smooth_step, DEFAULT_STEEPNESS};
use crate::cca::DEFAULT_MSS_BITS;

/// Sojourn reported for a backlogged queue that receives no service (s).
pub const SOJOURN_CAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AqmError {
    #[error("AQM domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    Pfifo,
    FqCodel,
    Cake,
}

impl Discipline {
    pub fn label(self) -> &'static str {
        match self {
            Discipline::Pfifo => "pfifo",
            Discipline::FqCodel => "fq_codel",
            Discipline::Cake => "cake",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CakeParams {
    /// Per-host factor; hosts not listed get `1 / (active flows on host)`.
    #[serde(default)]
    pub host_weights: BTreeMap<String, f64>,
    /// Per-flow factor; flows not listed get 1.
    #[serde(default)]
    pub flow_weights: BTreeMap<String, f64>,
    #[serde(default = "default_m_max")]
    pub m_max: f64,
    /// Width of the sojourn activation (s).
    #[serde(default = "default_sojourn_scale")]
    pub sojourn_scale: f64,
}

fn default_m_max() -> f64 {
    1.0
}

fn default_sojourn_scale() -> f64 {
    5e-3
}

impl Default for CakeParams {
    fn default() -> Self {
        CakeParams {
            host_weights: BTreeMap::new(),
            flow_weights: BTreeMap::new(),
            m_max: default_m_max(),
            sojourn_scale: default_sojourn_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqmConfig {
    pub discipline: Discipline,
    /// Buffer capacity (bits).
    #[serde(rename = "Q_max", default = "default_q_max")]
    pub q_max: f64,
    /// Lower RED threshold (bits); half of `Q_max` when omitted.
    #[serde(rename = "Q_min", default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default = "default_codel_target")]
    pub codel_target: f64,
    /// CoDel drop intensity (segments per second while above target).
    #[serde(default = "default_kappa")]
    pub kappa_codel: f64,
    #[serde(default)]
    pub fq_weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub cake: CakeParams,
    #[serde(default = "default_steepness")]
    pub sigmoid_steepness: f64,
}

fn default_q_max() -> f64 {
    50.0 * DEFAULT_MSS_BITS
}

fn default_codel_target() -> f64 {
    5e-3
}

fn default_kappa() -> f64 {
    100.0
}

fn default_steepness() -> f64 {
    DEFAULT_STEEPNESS
}

impl AqmConfig {
    pub fn new(discipline: Discipline) -> Self {
        AqmConfig {
            discipline,
            q_max: default_q_max(),
            q_min: None,
            codel_target: default_codel_target(),
            kappa_codel: default_kappa(),
            fq_weights: BTreeMap::new(),
            cake: CakeParams::default(),
            sigmoid_steepness: default_steepness(),
        }
    }

    pub fn q_min(&self) -> f64 {
        self.q_min.unwrap_or(0.5 * self.q_max)
    }

    /// Fills defaulted fields so the canonical form is explicit.
    pub fn resolve(&mut self) {
        self.q_min = Some(self.q_min());
    }

    /// Validates invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let bad = |k: &str, r: String| Err((k.to_string(), r));
        if !(self.q_max.is_finite() && self.q_max > 0.0) {
            return bad("Q_max", format!("must be positive, got {}", self.q_max));
        }
        let q_min = self.q_min();
        if !(q_min >= 0.0 && q_min < self.q_max) {
            return bad("Q_min", format!("must satisfy 0 <= Q_min < Q_max, got {q_min} vs {}", self.q_max));
        }
        if !(self.codel_target.is_finite() && self.codel_target > 0.0) {
            return bad("codel_target", "must be positive".into());
        }
        if !(self.kappa_codel.is_finite() && self.kappa_codel >= 0.0) {
            return bad("kappa_codel", "must be non-negative".into());
        }
        for (id, w) in &self.fq_weights {
            if !(w.is_finite() && *w > 0.0) {
                return bad("fq_weights", format!("weight for {id} must be positive"));
            }
        }
        for (id, w) in &self.cake.host_weights {
            if !(w.is_finite() && *w > 0.0) {
                return bad("cake.host_weights", format!("weight for {id} must be positive"));
            }
        }
        for (id, w) in &self.cake.flow_weights {
            if !(w.is_finite() && *w > 0.0) {
                return bad("cake.flow_weights", format!("weight for {id} must be positive"));
            }
        }
        if !(self.cake.m_max >= 0.0 && self.cake.m_max <= 1.0) {
            return bad("cake.m_max", "must lie in [0, 1]".into());
        }
        if !(self.cake.sojourn_scale.is_finite() && self.cake.sojourn_scale > 0.0) {
            return bad("cake.sojourn_scale", "must be positive".into());
        }
        if !(self.sigmoid_steepness.is_finite() && self.sigmoid_steepness > 0.0) {
            return bad("sigmoid_steepness", "must be positive".into());
        }
        Ok(())
    }
}

/// Backlog-proportional FIFO share (bits): `theta_i / sum(theta) * min(q_tot, Q_max)`.
pub fn fifo_allocate(q: &[f64], theta: &[f64], cfg: &AqmConfig) -> Result<Vec<f64>, AqmError> {
    let q_tot: f64 = q.iter().map(|v| v.max(0.0)).sum();
    let theta_tot: f64 = theta.iter().sum();
    if theta_tot <= 0.0 {
        if q_tot > 0.0 {
            return Err(AqmError::Domain("zero total service with a non-empty queue".into()));
        }
        return Ok(vec![0.0; q.len()]);
    }
    let capped = q_tot.min(cfg.q_max);
    Ok(theta.iter().map(|t| t / theta_tot * capped).collect())
}

/// Linear RED ramp between `Q_min` and `Q_max`.
pub fn fifo_drop_probability(q_tot: f64, cfg: &AqmConfig) -> f64 {
    let lo = cfg.q_min();
    if q_tot <= lo {
        0.0
    } else if q_tot >= cfg.q_max {
        1.0
    } else {
        (q_tot - lo) / (cfg.q_max - lo)
    }
}

/// Drop rate (bits/s) applied to an arrival rate `x`.
pub fn fifo_drop(q_tot: f64, x: f64, cfg: &AqmConfig) -> f64 {
    fifo_drop_probability(q_tot, cfg) * x
}

/// Weighted share `w_i / sum(w) * theta`.
pub fn fq_allocate(weights: &[f64], theta: f64) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return vec![0.0; weights.len()];
    }
    weights.iter().map(|w| w / total * theta).collect()
}

/// Queueing delay `q / s`, zero for an empty queue and capped when unserved.
pub fn sojourn(q: f64, s: f64) -> f64 {
    if q <= 0.0 {
        0.0
    } else if s <= 0.0 {
        SOJOURN_CAP
    } else {
        (q / s).min(SOJOURN_CAP)
    }
}

/// Returns `(sojourn, drop intensity)`; the intensity is in segments per
/// second and ramps through `kappa/2` at the target.
pub fn fq_sojourn_drop(q_i: f64, s_i: f64, cfg: &AqmConfig) -> (f64, f64) {
    let soj = sojourn(q_i, s_i);
    if q_i <= 0.0 {
        return (0.0, 0.0);
    }
    let z = (soj - cfg.codel_target) / cfg.codel_target;
    (soj, cfg.kappa_codel * smooth_step(z, cfg.sigmoid_steepness))
}

/// Per-flow CAKE weights `phi_host * psi`. Unlisted hosts are equalized.
pub fn cake_weights(
    flow_ids: &[&str],
    hosts: &[&str],
    cake: &CakeParams,
) -> Vec<f64> {
    let mut per_host: BTreeMap<&str, usize> = BTreeMap::new();
    for h in hosts {
        *per_host.entry(h).or_default() += 1;
    }
    flow_ids
        .iter()
        .zip(hosts)
        .map(|(id, h)| {
            let phi = cake
                .host_weights
                .get(*h)
                .copied()
                .unwrap_or(1.0 / per_host[h] as f64);
            let psi = cake.flow_weights.get(*id).copied().unwrap_or(1.0);
            phi * psi
        })
        .collect()
}

/// Host-fair allocation `omega_i / sum(omega) * theta`.
pub fn cake_allocate(flow_ids: &[&str], hosts: &[&str], cake: &CakeParams, theta: f64) -> Vec<f64> {
    fq_allocate(&cake_weights(flow_ids, hosts, cake), theta)
}

/// Mark probability, monotone in sojourn and backlog, zero when empty.
pub fn cake_mark(soj: f64, q_i: f64, cfg: &AqmConfig) -> f64 {
    if q_i <= 0.0 {
        return 0.0;
    }
    let c = &cfg.cake;
    let delay = smooth_step((soj - cfg.codel_target) / c.sojourn_scale, cfg.sigmoid_steepness);
    c.m_max * delay * (q_i / cfg.q_max).min(1.0)
}

pub fn cake_queue_derivative(x: f64, m: f64, s: f64) -> f64 {
    x * (1.0 - m) - s
}

/// Work-conserving weighted max-min split of `capacity`. Flows with an empty
/// queue are limited by their arrival rate; any unused share is handed to the
/// others in proportion to weight.
pub fn water_fill(weights: &[f64], backlogged: &[bool], demand: &[f64], capacity: f64) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    let mut open: Vec<usize> = (0..n).collect();
    let mut remaining = capacity;
    loop {
        let wsum: f64 = open.iter().map(|&i| weights[i]).sum();
        if open.is_empty() || wsum <= 0.0 {
            break;
        }
        let mut settled = false;
        open.retain(|&i| {
            let share = weights[i] / wsum * remaining;
            if !backlogged[i] && demand[i] <= share {
                out[i] = demand[i];
                settled = true;
                false
            } else {
                true
            }
        });
        if settled {
            let used: f64 = (0..n).filter(|i| !open.contains(i)).map(|i| out[i]).sum();
            remaining = (capacity - used).max(0.0);
            continue;
        }
        for &i in &open {
            out[i] = weights[i] / wsum * remaining;
        }
        break;
    }
    out
}

/// Per-flow input to one AQM evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueInput {
    pub q: f64,
    /// Arrival rate (bits/s).
    pub x: f64,
    /// Scheduling weight (FQ weight or CAKE omega).
    pub weight: f64,
    /// Nominal service rate used by the FIFO split (bits/s).
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueueOutput {
    /// Service rate (bits/s).
    pub served: f64,
    /// Dropped or marked rate (bits/s).
    pub dropped: f64,
    pub dq: f64,
    /// Drop/mark probability seen by the sender.
    pub p: f64,
    pub sojourn: f64,
}

/// Evaluates one bottleneck of rate `capacity` shared by `flows`.
/// Non-negativity is enforced by projection: an empty queue never shrinks,
/// and the service it reports equals what actually left.
pub fn evaluate(cfg: &AqmConfig, capacity: f64, flows: &[QueueInput]) -> Vec<QueueOutput> {
    let n = flows.len();
    let mut out = vec![QueueOutput::default(); n];
    if n == 0 {
        return out;
    }
    let q: Vec<f64> = flows.iter().map(|f| f.q.max(0.0)).collect();
    match cfg.discipline {
        Discipline::Pfifo => {
            let q_tot: f64 = q.iter().sum();
            let p = fifo_drop_probability(q_tot, cfg);
            let soj = if capacity > 0.0 { (q_tot / capacity).min(SOJOURN_CAP) } else if q_tot > 0.0 { SOJOURN_CAP } else { 0.0 };
            let weighted: f64 = flows.iter().zip(&q).map(|(f, q)| f.theta * q).sum();
            let x_tot: f64 = flows.iter().map(|f| f.x).sum();
            for (i, f) in flows.iter().enumerate() {
                let served = if weighted > 0.0 {
                    capacity * f.theta * q[i] / weighted
                } else if x_tot > 0.0 {
                    f.x / x_tot * x_tot.min(capacity)
                } else {
                    0.0
                };
                out[i] = QueueOutput {
                    served,
                    dropped: p * f.x,
                    dq: 0.0,
                    p,
                    sojourn: soj,
                };
            }
        }
        Discipline::FqCodel | Discipline::Cake => {
            let weights: Vec<f64> = flows.iter().map(|f| f.weight).collect();
            let backlogged: Vec<bool> = q.iter().map(|&v| v > 0.0).collect();
            let demand: Vec<f64> = flows.iter().map(|f| f.x).collect();
            let shares = water_fill(&weights, &backlogged, &demand, capacity);
            for (i, f) in flows.iter().enumerate() {
                let served = shares[i];
                let (soj, dropped, p) = if cfg.discipline == Discipline::FqCodel {
                    let (soj, intensity) = fq_sojourn_drop(q[i], served, cfg);
                    let d = (intensity * DEFAULT_MSS_BITS).min(f.x);
                    let p = if f.x > 0.0 { d / f.x } else { 0.0 };
                    (soj, d, p)
                } else {
                    let soj = sojourn(q[i], served);
                    let m = cake_mark(soj, q[i], cfg);
                    (soj, m * f.x, m)
                };
                out[i] = QueueOutput {
                    served,
                    dropped,
                    dq: 0.0,
                    p,
                    sojourn: soj,
                };
            }
        }
    }
    for (i, f) in flows.iter().enumerate() {
        let o = &mut out[i];
        let dq = f.x - o.served - o.dropped;
        if q[i] <= 0.0 && dq < 0.0 {
            o.served = (f.x - o.dropped).max(0.0);
            o.dq = 0.0;
        } else {
            o.dq = dq;
        }
    }
    out
}
