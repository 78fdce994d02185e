//! Loss-based AIMD sender used as the coexistence counterpart.
//!
//! This is a generic fluid Reno-style window, not a CUBIC implementation.

use serde::{Deserialize, Serialize};

use super::DEFAULT_MSS_BITS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetitorParams {
    /// Additive increase, segments per RTT.
    pub alpha: f64,
    /// Multiplicative decrease per loss event.
    pub beta_md: f64,
    pub mss: f64,
    pub initial_cwnd_segments: f64,
}

impl Default for CompetitorParams {
    fn default() -> Self {
        CompetitorParams {
            alpha: 1.0,
            beta_md: 0.5,
            mss: DEFAULT_MSS_BITS,
            initial_cwnd_segments: 10.0,
        }
    }
}

impl CompetitorParams {
    pub fn validate(&self) -> Result<(), String> {
        for (k, v) in [
            ("alpha", self.alpha),
            ("mss", self.mss),
            ("initial_cwnd_segments", self.initial_cwnd_segments),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{k}: must be positive, got {v}"));
            }
        }
        if !(self.beta_md > 0.0 && self.beta_md <= 1.0) {
            return Err(format!("beta_md: must lie in (0, 1], got {}", self.beta_md));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Competitor {
    pub params: CompetitorParams,
}

impl Competitor {
    pub fn new(params: CompetitorParams) -> Self {
        Competitor { params }
    }

    pub fn initial_window(&self) -> f64 {
        self.params.initial_cwnd_segments * self.params.mss
    }

    pub fn sending_rate(&self, w: f64, rtt: f64) -> f64 {
        w / rtt
    }

    /// `dw/dt` for window `w`, loss probability `loss_rate` and RTT `rtt`.
    /// Loss events arrive at `loss_rate * (w / rtt) / mss` per second.
    pub fn derivative(&self, w: f64, loss_rate: f64, rtt: f64) -> f64 {
        let p = &self.params;
        let events = loss_rate * (w / rtt) / p.mss;
        let dw = p.alpha * p.mss / rtt - p.beta_md * w * events;
        if w <= p.mss && dw < 0.0 {
            0.0
        } else {
            dw
        }
    }

    pub fn project(&self, w: &mut f64) {
        *w = w.max(self.params.mss);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pure_additive_increase() {
        let c = Competitor::new(CompetitorParams::default());
        assert_relative_eq!(c.derivative(100_000.0, 0.0, 0.02), 12_000.0 / 0.02);
        assert_relative_eq!(
            c.derivative(100_000.0, 0.0, 0.04),
            0.5 * c.derivative(100_000.0, 0.0, 0.02)
        );
    }

    #[test]
    fn equilibrium_window() {
        let c = Competitor::new(CompetitorParams::default());
        let (rtt, p) = (0.03, 0.01);
        // dw/dt = 0 with events = p w / (rtt mss)  =>  w* = mss sqrt(alpha / (beta p)).
        let w_star = 12_000.0 * (1.0f64 / (0.5 * p)).sqrt();
        assert!(c.derivative(w_star, p, rtt).abs() < 1e-6);
        let events = p * (w_star / rtt) / 12_000.0;
        assert_relative_eq!(w_star, 12_000.0 / (0.5 * rtt * events), max_relative = 1e-12);
        assert!(c.derivative(0.9 * w_star, p, rtt) > 0.0);
        assert!(c.derivative(1.1 * w_star, p, rtt) < 0.0);
    }

    #[test]
    fn window_floor() {
        let c = Competitor::new(CompetitorParams::default());
        assert_eq!(c.derivative(12_000.0, 1.0, 0.02).min(0.0), 0.0);
    }
}
