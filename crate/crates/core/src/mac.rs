//! Uplink MU-OFDMA service model.
//!
//! One trigger-frame cycle carries a multi-user PPDU whose payload is bounded
//! by the TXOP budget. Random-access contention is resolved by a coupled
//! attempt/collision fixed point, and the resulting per-station share of the
//! aggregate cycle throughput becomes the bottleneck service rate seen by the
//! transport layer.
//!
//! All rates are bits/s, durations seconds, sizes bits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MacError {
    #[error("invalid MAC configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("TXOP duration t_d must exceed T_phy_mu")]
    InvalidTxop,
    #[error("probability out of domain: {0}")]
    Domain(String),
    #[error("attempt/collision fixed point did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// A group of random-access stations sharing contention parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaClass {
    pub count: u32,
    /// Overrides the configuration-wide `cw_min` for this class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cw_min: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacConfig {
    pub d_tfr: f64,
    pub d_bsr: f64,
    pub d_tf: f64,
    pub d_ppdu: f64,
    pub d_mb: f64,
    pub d_sifs: f64,
    pub sigma: f64,
    pub s_p: f64,
    pub s_h: f64,
    pub s_t: f64,
    #[serde(rename = "T_r")]
    pub t_r: f64,
    pub t_d: f64,
    #[serde(rename = "T_phy_mu")]
    pub t_phy_mu: f64,
    #[serde(rename = "P_agg_max")]
    pub p_agg_max: u32,
    pub n_p: u32,
    pub mbo: u32,
    pub fbo: u32,
    /// Minimum contention window W (slots); the stage-k mean backoff is
    /// `(min(2^k W, cw_max) - 1) / 2`.
    pub cw_min: u32,
    /// Largest contention window; defaults to `2^mbo * cw_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cw_max: Option<u32>,
    pub n_ra: u32,
    #[serde(rename = "r_A")]
    pub r_a: f64,
    pub p_phy: f64,
    pub beta_ap: f64,
    /// Station classes for the slot model. Empty means one class of `n_ra`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sta_classes: Vec<StaClass>,
    #[serde(rename = "s_A")]
    pub s_a: f64,
    #[serde(rename = "r_A_success")]
    pub r_a_success: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            d_tfr: 100e-6,
            d_bsr: 100e-6,
            d_tf: 100e-6,
            d_ppdu: 1000e-6,
            d_mb: 100e-6,
            d_sifs: 16e-6,
            sigma: 9e-6,
            s_p: 12_000.0,
            s_h: 320.0,
            s_t: 160.0,
            t_r: 1e8,
            t_d: 2e-3,
            t_phy_mu: 0.1e-3,
            p_agg_max: 64,
            n_p: 64,
            mbo: 5,
            fbo: 0,
            cw_min: 16,
            cw_max: None,
            n_ra: 2,
            r_a: 9.0,
            p_phy: 0.001,
            beta_ap: 0.0,
            sta_classes: Vec::new(),
            s_a: 1.0,
            r_a_success: 0.0,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> MacError {
    MacError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<(), MacError> {
        let durations = [
            ("d_tfr", self.d_tfr),
            ("d_bsr", self.d_bsr),
            ("d_tf", self.d_tf),
            ("d_ppdu", self.d_ppdu),
            ("d_mb", self.d_mb),
            ("d_sifs", self.d_sifs),
            ("sigma", self.sigma),
            ("t_d", self.t_d),
            ("T_phy_mu", self.t_phy_mu),
        ];
        for (name, v) in durations {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be a positive duration, got {v}")));
            }
        }
        for (name, v) in [("p_phy", self.p_phy), ("beta_ap", self.beta_ap)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.s_p.is_finite() && self.s_p > 0.0) {
            return Err(invalid("s_p", "must be positive"));
        }
        for (name, v) in [
            ("s_h", self.s_h),
            ("s_t", self.s_t),
            ("s_A", self.s_a),
            ("r_A_success", self.r_a_success),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.t_r.is_finite() && self.t_r > 0.0) {
            return Err(invalid("T_r", "must be positive"));
        }
        if self.p_agg_max < 1 {
            return Err(invalid("P_agg_max", "must be at least 1"));
        }
        if self.cw_min < 1 {
            return Err(invalid("cw_min", "must be at least 1"));
        }
        if let Some(cw_max) = self.cw_max {
            if cw_max < self.cw_min {
                return Err(invalid("cw_max", "must be at least cw_min"));
            }
        }
        if self.n_ra < 1 {
            return Err(invalid("n_ra", "must be at least 1"));
        }
        if !(self.r_a.is_finite() && self.r_a > 0.0) {
            return Err(invalid("r_A", "must be positive"));
        }
        if self.mbo > 30 {
            return Err(invalid("mbo", "must be at most 30"));
        }
        for c in &self.sta_classes {
            if c.cw_min == Some(0) {
                return Err(invalid("sta_classes", "cw_min must be at least 1"));
            }
        }
        if self.t_d <= self.t_phy_mu {
            return Err(MacError::InvalidTxop);
        }
        Ok(())
    }

    fn cw_max_or_default(&self, cw_min: u32) -> f64 {
        match self.cw_max {
            Some(c) => c as f64,
            None => (1u64 << self.mbo) as f64 * cw_min as f64,
        }
    }

    /// Station classes used by the slot model; one class of `n_ra` when unset.
    pub fn classes(&self) -> Vec<StaClass> {
        if self.sta_classes.is_empty() {
            vec![StaClass {
                count: self.n_ra,
                cw_min: None,
            }]
        } else {
            self.sta_classes.clone()
        }
    }
}

/// Mean backoff slots at stage `k` for minimum window `cw_min`.
pub fn backoff_slots(cfg: &MacConfig, cw_min: u32, k: u32) -> f64 {
    let stage = k.min(cfg.mbo);
    let w = ((1u64 << stage) as f64 * cw_min as f64).min(cfg.cw_max_or_default(cw_min));
    (w - 1.0) / 2.0
}

pub fn tf_cycle_duration(cfg: &MacConfig) -> f64 {
    cfg.d_tfr + cfg.d_bsr + cfg.d_tf + cfg.d_ppdu + cfg.d_mb + 4.0 * cfg.d_sifs
}

/// Packets that fit in one TXOP, capped by the hardware aggregation limit.
pub fn max_aggregation(cfg: &MacConfig) -> Result<u32, MacError> {
    if cfg.t_d <= cfg.t_phy_mu {
        return Err(MacError::InvalidTxop);
    }
    let per_packet = cfg.s_t + cfg.s_h + cfg.s_p;
    let fit = (cfg.t_r * (cfg.t_d - cfg.t_phy_mu) / per_packet).floor();
    Ok((fit.min(cfg.p_agg_max as f64)).max(0.0) as u32)
}

pub fn aggregated_packets(cfg: &MacConfig) -> Result<u32, MacError> {
    Ok(cfg.n_p.min(max_aggregation(cfg)?))
}

fn attempt_probability_for(gamma: f64, cfg: &MacConfig, cw_min: u32) -> f64 {
    // Both sums are evaluated as series so gamma = 1 needs no special case.
    let mut num = 0.0;
    let mut den = 0.0;
    let mut g = 1.0;
    for k in 0..=(cfg.mbo + cfg.fbo) {
        num += g;
        den += backoff_slots(cfg, cw_min, k) * g;
        g *= gamma;
    }
    if den <= 0.0 {
        1.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// Steady-state attempt probability given the conditional collision
/// probability `gamma`.
pub fn attempt_probability(gamma: f64, cfg: &MacConfig) -> f64 {
    attempt_probability_for(gamma.clamp(0.0, 1.0), cfg, cfg.cw_min)
}

pub fn collision_probability(beta: f64, cfg: &MacConfig) -> Result<f64, MacError> {
    let ratio = beta / cfg.r_a;
    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&ratio) || !(-PROB_TOL..=1.0 + PROB_TOL).contains(&beta) {
        return Err(MacError::Domain(format!(
            "beta / r_A = {ratio} (beta = {beta}) outside [0, 1]"
        )));
    }
    let ratio = ratio.clamp(0.0, 1.0);
    Ok(1.0 - (1.0 - ratio).powi(cfg.n_ra as i32 - 1))
}

const FP_TOL: f64 = 1e-10;
const FP_MAX_ITER: usize = 10_000;

/// Solves the attempt/collision coupling by damped Picard iteration on beta.
/// The damping factor starts at 0.5 and is halved whenever the residual fails
/// to shrink.
pub fn solve_fixed_point(cfg: &MacConfig) -> Result<(f64, f64), MacError> {
    if cfg.n_ra == 1 {
        return Ok((attempt_probability(0.0, cfg), 0.0));
    }
    let map = |b: f64| -> Result<f64, MacError> {
        Ok(attempt_probability(collision_probability(b, cfg)?, cfg))
    };
    let mut beta = 0.1_f64.min(cfg.r_a);
    let mut lambda = 0.5;
    let mut residual = (map(beta)? - beta).abs();
    for _ in 0..FP_MAX_ITER {
        if residual < FP_TOL {
            let gamma = collision_probability(beta, cfg)?;
            return Ok((beta, gamma));
        }
        let next = (1.0 - lambda) * beta + lambda * map(beta)?;
        let next_residual = (map(next)? - next).abs();
        if next_residual >= residual {
            lambda = (lambda * 0.5).max(1e-6);
        }
        beta = next;
        residual = next_residual;
    }
    Err(MacError::NoConvergence {
        iterations: FP_MAX_ITER,
    })
}

pub fn failure_probability(gamma: f64, p_phy: f64) -> f64 {
    1.0 - (1.0 - gamma) * (1.0 - p_phy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotModel {
    pub p0: f64,
    pub ps: f64,
    pub pf: f64,
    pub e_x: f64,
    pub t_s_slot: f64,
    pub t_c_slot: f64,
}

fn check_prob(name: &str, v: f64) -> Result<f64, MacError> {
    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&v) || !v.is_finite() {
        return Err(MacError::Domain(format!("{name} = {v}")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Slot-type probabilities and expected slot duration. `betas` pairs with
/// `cfg.classes()`.
///
/// A slot succeeds when the AP is silent, at least one station transmits, and
/// the PHY does not corrupt the frame.
pub fn expected_slot(cfg: &MacConfig, betas: &[f64], t_s: f64) -> Result<SlotModel, MacError> {
    let classes = cfg.classes();
    if betas.len() != classes.len() {
        return Err(MacError::Domain(format!(
            "expected {} class attempt probabilities, got {}",
            classes.len(),
            betas.len()
        )));
    }
    let mut idle = 1.0;
    for (c, &b) in classes.iter().zip(betas) {
        let b = check_prob("beta_j", b)?;
        idle *= (1.0 - b).powi(c.count as i32);
    }
    let silent_ap = 1.0 - cfg.beta_ap;
    let p0 = check_prob("P0", silent_ap * idle)?;
    let ps = check_prob("Ps", silent_ap * (1.0 - idle) * (1.0 - cfg.p_phy))?;
    let pf = check_prob("Pf", 1.0 - p0 - ps)?;
    let difs = cfg.d_sifs + 2.0 * cfg.sigma;
    let t_s_slot = t_s + difs;
    let t_c_slot = t_s - cfg.d_mb + difs;
    Ok(SlotModel {
        p0,
        ps,
        pf,
        e_x: p0 * cfg.sigma + ps * t_s_slot + pf * t_c_slot,
        t_s_slot,
        t_c_slot,
    })
}

pub fn aggregate_throughput(cfg: &MacConfig, t_s: f64) -> f64 {
    let p_agg = aggregated_packets(cfg).unwrap_or(0) as f64;
    p_agg * (cfg.s_a + cfg.r_a_success) * cfg.s_p / t_s
}

pub fn per_sta_rate(beta: f64, f: f64, theta: f64) -> f64 {
    beta * (1.0 - f) * theta
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacRates {
    pub t_s: f64,
    pub p_agg: u32,
    pub p_agg_trf: u32,
    pub beta: f64,
    pub gamma: f64,
    pub f_i: f64,
    pub p0: f64,
    pub ps: f64,
    pub pf: f64,
    pub e_x: f64,
    pub t_s_slot: f64,
    pub t_c_slot: f64,
    pub theta_total: f64,
    pub theta_i: f64,
}

impl MacRates {
    pub fn compute(cfg: &MacConfig) -> Result<Self, MacError> {
        cfg.validate()?;
        let t_s = tf_cycle_duration(cfg);
        let p_agg_trf = max_aggregation(cfg)?;
        let p_agg = cfg.n_p.min(p_agg_trf);
        let (beta, gamma) = solve_fixed_point(cfg)?;
        let f_i = failure_probability(gamma, cfg.p_phy);
        // Every class sees the same collision probability; only its window differs.
        let betas: Vec<f64> = cfg
            .classes()
            .iter()
            .map(|c| attempt_probability_for(gamma, cfg, c.cw_min.unwrap_or(cfg.cw_min)))
            .collect();
        let slot = expected_slot(cfg, &betas, t_s)?;
        let theta_total = aggregate_throughput(cfg, t_s);
        Ok(MacRates {
            t_s,
            p_agg,
            p_agg_trf,
            beta,
            gamma,
            f_i,
            p0: slot.p0,
            ps: slot.ps,
            pf: slot.pf,
            e_x: slot.e_x,
            t_s_slot: slot.t_s_slot,
            t_c_slot: slot.t_c_slot,
            theta_total,
            theta_i: per_sta_rate(beta, f_i, theta_total),
        })
    }
}
