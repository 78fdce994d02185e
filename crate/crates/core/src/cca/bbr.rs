//! Fluid BBR (v1/v2/v3 presets).
//!
//! The sender's discrete state (phase, estimators, timers) is held in
//! [`BbrFlow`] and only changes at step boundaries. The ProbeBW bound windows
//! and the cruise indicator form the continuous part ([`BbrWindows`]) and are
//! integrated by the engine alongside the queues.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Counters, PathSample, Phase, DEFAULT_MSS_BITS};
use crate::activation::smooth_step;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BbrVersion {
    V1,
    V2,
    V3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeRttCwnd {
    /// Half the estimated BDP.
    HalfBdp,
    /// A fixed number of segments.
    Segments(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbrParams {
    pub version: BbrVersion,
    pub g_hi: f64,
    pub g_startup_pacing: f64,
    pub g_startup_cwnd: f64,
    pub g_drain: f64,
    pub g_probe_up: f64,
    pub g_probe_down: f64,
    /// Loss threshold probability.
    pub p_th: f64,
    /// Time between ProbeRTT entries (s).
    pub probe_rtt_interval: f64,
    /// Minimum ProbeRTT hold (s); the hold is at least one RTT.
    pub probe_rtt_duration: f64,
    pub probe_rtt_cwnd: ProbeRttCwnd,
    /// Startup ends once bandwidth grows by less than this fraction...
    pub startup_exit_growth: f64,
    /// ...for this many consecutive rounds.
    pub startup_exit_rounds: u32,
    /// Round loss fraction that ends Startup early; `None` disables.
    pub startup_exit_loss: Option<f64>,
    /// Steepness of the smooth activation on normalized arguments.
    pub sigmoid_steepness: f64,
    /// Time from the start of a probing cycle until the next Refill (s).
    pub probe_wait: f64,
    /// Whether loss feeds the bound-window dynamics and ends Up early.
    pub loss_response: bool,
    /// Length of the windowed-max bandwidth filter (rounds).
    pub bw_filter_rounds: u32,
    pub mss: f64,
    pub initial_cwnd_segments: f64,
    pub min_cwnd_segments: f64,
}

impl BbrParams {
    pub fn preset(version: BbrVersion) -> Self {
        let v3 = BbrParams {
            version,
            g_hi: 2.25,
            g_startup_pacing: 2.77,
            g_startup_cwnd: 2.0,
            g_drain: 0.5,
            g_probe_up: 1.25,
            g_probe_down: 0.90,
            p_th: 0.02,
            probe_rtt_interval: 5.0,
            probe_rtt_duration: 0.2,
            probe_rtt_cwnd: ProbeRttCwnd::HalfBdp,
            startup_exit_growth: 0.25,
            startup_exit_rounds: 3,
            startup_exit_loss: Some(0.02),
            sigmoid_steepness: crate::activation::DEFAULT_STEEPNESS,
            probe_wait: 2.5,
            loss_response: true,
            bw_filter_rounds: 10,
            mss: DEFAULT_MSS_BITS,
            initial_cwnd_segments: 10.0,
            min_cwnd_segments: 4.0,
        };
        match version {
            BbrVersion::V3 => v3,
            BbrVersion::V2 => BbrParams {
                g_hi: 2.0,
                g_startup_pacing: 2.89,
                g_startup_cwnd: 2.89,
                g_drain: 0.75,
                g_probe_up: 2.0,
                g_probe_down: 0.75,
                ..v3
            },
            BbrVersion::V1 => BbrParams {
                g_hi: 2.0,
                g_startup_pacing: 2.89,
                g_startup_cwnd: 2.89,
                g_drain: 0.75,
                g_probe_up: 1.25,
                g_probe_down: 0.75,
                probe_rtt_interval: 10.0,
                probe_rtt_cwnd: ProbeRttCwnd::Segments(4.0),
                startup_exit_loss: None,
                loss_response: false,
                ..v3
            },
        }
    }

    /// ProbeBW pacing gains in cycle order. v1 uses the fixed eight-slot
    /// cycle; v2/v3 list Up, Down, Refill, Cruise.
    pub fn gain_schedule(&self) -> Vec<f64> {
        match self.version {
            BbrVersion::V1 => {
                let mut g = vec![self.g_probe_up, self.g_probe_down];
                g.extend([1.0; 6]);
                g
            }
            _ => vec![self.g_probe_up, self.g_probe_down, 1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let gains = [
            ("g_hi", self.g_hi),
            ("g_startup_pacing", self.g_startup_pacing),
            ("g_startup_cwnd", self.g_startup_cwnd),
            ("g_drain", self.g_drain),
            ("g_probe_up", self.g_probe_up),
            ("g_probe_down", self.g_probe_down),
            ("sigmoid_steepness", self.sigmoid_steepness),
            ("mss", self.mss),
            ("initial_cwnd_segments", self.initial_cwnd_segments),
            ("probe_wait", self.probe_wait),
            ("probe_rtt_duration", self.probe_rtt_duration),
        ];
        for (k, v) in gains {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{k}: must be positive, got {v}"));
            }
        }
        if !(self.p_th > 0.0 && self.p_th < 1.0) {
            return Err(format!("p_th: must lie in (0, 1), got {}", self.p_th));
        }
        if !(self.probe_rtt_interval > self.probe_rtt_duration) {
            return Err("probe_rtt_interval: must exceed probe_rtt_duration".into());
        }
        if !(self.min_cwnd_segments >= 0.0) {
            return Err("min_cwnd_segments: must be non-negative".into());
        }
        if !(self.startup_exit_growth >= 0.0) || self.startup_exit_rounds == 0 {
            return Err("startup_exit_growth/startup_exit_rounds: invalid plateau rule".into());
        }
        if let Some(l) = self.startup_exit_loss {
            if !(0.0..=1.0).contains(&l) {
                return Err(format!("startup_exit_loss: must lie in [0, 1], got {l}"));
            }
        }
        if self.bw_filter_rounds == 0 {
            return Err("bw_filter_rounds: must be at least 1".into());
        }
        if let ProbeRttCwnd::Segments(s) = self.probe_rtt_cwnd {
            if !(s > 0.0) {
                return Err("probe_rtt_cwnd: segment count must be positive".into());
            }
        }
        Ok(())
    }

    fn uses_bound_windows(&self) -> bool {
        self.version != BbrVersion::V1
    }
}

/// Continuous ProbeBW state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BbrWindows {
    pub w_hi: f64,
    pub w_lo: f64,
    pub m_crs: f64,
}

/// Effective ProbeBW window: a cruising share bounded by `w_lo` plus a
/// probing share bounded by `w_hi`.
pub fn probe_bw_window(w_bar: f64, win: &BbrWindows, p: &BbrParams) -> f64 {
    let m = win.m_crs;
    (2.0 * w_bar).min(m * win.w_lo) + (p.g_hi * w_bar).min((1.0 - m) * win.w_hi)
}

/// Loss-to-reduction-intensity map.
pub fn loss_intensity(p_pi: f64, p_th: f64) -> f64 {
    (p_pi / p_th).clamp(0.0, 1.0)
}

/// Inputs to the bound-window ODEs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowInputs {
    pub w_bar: f64,
    pub tau_min: f64,
    /// RTT currently observed in ProbeBW (s).
    pub t_pbw: f64,
    /// Inflight (bits).
    pub v: f64,
    pub p_pi: f64,
}

/// `(dw_hi/dt, dw_lo/dt)` in bits/s.
///
/// Time arguments of the activation are normalized by `tau_min`, window
/// arguments by `w_bar` and loss arguments by `p_th`. The probe-growth term
/// is dimensionless as written and is scaled by `mss / tau_min`, i.e. one
/// segment per minimum RTT at unit drive.
pub fn window_derivatives(inp: &WindowInputs, win: &BbrWindows, p: &BbrParams) -> (f64, f64) {
    let k = p.sigmoid_steepness;
    let tau = inp.tau_min;
    let w_scale = inp.w_bar.max(p.mss);
    let m = win.m_crs;
    let delay_drive = smooth_step((inp.t_pbw - tau) / tau, k);
    let room_drive = smooth_step((inp.v - win.w_hi) / w_scale, k);
    let (loss_drive, delta) = if p.loss_response {
        (
            smooth_step((inp.p_pi - p.p_th) / p.p_th, k),
            loss_intensity(inp.p_pi, p.p_th),
        )
    } else {
        (0.0, 0.0)
    };
    let grow = (1.0 - m) * p.g_hi * (inp.t_pbw / tau) * delay_drive * room_drive * p.mss / tau;
    let dhi = grow - delta / tau * loss_drive * win.w_hi;
    let dlo = -(1.0 - m) / tau * (win.w_lo - inp.w_bar) - m * delta / tau * loss_drive * win.w_lo;
    (dhi, dlo)
}

/// Cruise-indicator target for a phase; `None` holds the current value.
pub fn cruise_target(phase: Phase) -> Option<f64> {
    match phase {
        Phase::ProbeBwCruise => Some(1.0),
        Phase::ProbeBwUp | Phase::ProbeBwRefill => Some(0.0),
        _ => None,
    }
}

/// Per-flow BBR sender.
#[derive(Debug, Clone)]
pub struct BbrFlow {
    pub params: BbrParams,
    pub phase: Phase,
    /// Base window `btlbw * tau_min` (bits).
    pub w_bar: f64,
    pub btlbw: f64,
    pub tau_min: f64,
    pub filled_pipe: bool,
    full_bw: f64,
    full_bw_count: u32,
    phase_start: f64,
    cycle_start: f64,
    v1_cycle_index: usize,
    rounds_in_phase: u32,
    round_start: f64,
    round_end: f64,
    round_counters: Counters,
    round_rtt_min: f64,
    /// The current round overlaps ProbeRTT, so its delivery rate is sender-limited.
    round_limited: bool,
    last_round_loss: f64,
    probe_rtt_due: f64,
    probe_rtt_end: f64,
    bw_samples: VecDeque<f64>,
    rtt_samples: VecDeque<(f64, f64)>,
}

/// Tolerance when comparing the clock against an absolute event time.
pub const EVENT_EPS: f64 = 1e-9;

impl BbrFlow {
    /// Starts a flow at `t0` with first RTT sample `rtt0`.
    pub fn new(params: BbrParams, t0: f64, rtt0: f64) -> Self {
        let w0 = params.initial_cwnd_segments * params.mss;
        BbrFlow {
            phase: Phase::Startup,
            w_bar: w0,
            btlbw: w0 / rtt0,
            tau_min: rtt0,
            filled_pipe: false,
            full_bw: 0.0,
            full_bw_count: 0,
            phase_start: t0,
            cycle_start: t0,
            v1_cycle_index: 2,
            rounds_in_phase: 0,
            round_start: t0,
            round_end: t0 + rtt0,
            round_counters: Counters::default(),
            round_rtt_min: rtt0,
            round_limited: false,
            last_round_loss: 0.0,
            probe_rtt_due: t0 + params.probe_rtt_interval,
            probe_rtt_end: f64::INFINITY,
            bw_samples: VecDeque::new(),
            rtt_samples: VecDeque::from([(t0, rtt0)]),
            params,
        }
    }

    /// Initial continuous state.
    pub fn initial_windows(&self) -> BbrWindows {
        BbrWindows {
            w_hi: self.params.g_hi * self.w_bar,
            w_lo: self.w_bar,
            m_crs: 1.0,
        }
    }

    fn min_cwnd(&self) -> f64 {
        self.params.min_cwnd_segments * self.params.mss
    }

    /// Pacing gain of the current phase.
    pub fn pacing_gain(&self) -> f64 {
        let p = &self.params;
        match self.phase {
            Phase::Startup => p.g_startup_pacing,
            Phase::Drain => p.g_drain,
            Phase::ProbeRtt => match p.version {
                BbrVersion::V1 => 1.0,
                _ => 0.5,
            },
            Phase::ProbeBwUp => p.g_probe_up,
            Phase::ProbeBwDown => p.g_probe_down,
            Phase::ProbeBwRefill | Phase::ProbeBwCruise => {
                if p.version == BbrVersion::V1 {
                    p.gain_schedule()[self.v1_cycle_index]
                } else {
                    1.0
                }
            }
        }
    }

    /// Pacing rate (bits/s). In ProbeBW the bound window also caps the rate.
    pub fn pacing_rate(&self, win: &BbrWindows) -> f64 {
        let gained = self.pacing_gain() * self.w_bar;
        let w = if self.phase.is_probe_bw() && self.params.uses_bound_windows() {
            gained.min(probe_bw_window(self.w_bar, win, &self.params))
        } else {
            gained
        };
        w / self.tau_min
    }

    /// Congestion window (bits).
    pub fn cwnd(&self, win: &BbrWindows) -> f64 {
        let p = &self.params;
        match self.phase {
            Phase::ProbeRtt => match p.probe_rtt_cwnd {
                ProbeRttCwnd::HalfBdp => 0.5 * self.w_bar,
                ProbeRttCwnd::Segments(s) => s * p.mss,
            },
            Phase::Startup | Phase::Drain => (p.g_startup_cwnd * self.w_bar).max(self.min_cwnd()),
            _ if p.uses_bound_windows() => {
                probe_bw_window(self.w_bar, win, p).max(self.min_cwnd())
            }
            _ => (2.0 * self.w_bar).max(self.min_cwnd()),
        }
    }

    /// Sending rate: paced, and window-limited at the current RTT.
    pub fn sending_rate(&self, win: &BbrWindows, rtt: f64) -> f64 {
        self.pacing_rate(win).min(self.cwnd(win) / rtt)
    }

    /// Time derivative of the continuous state.
    pub fn derivatives(&self, win: &BbrWindows, obs: &PathSample) -> BbrWindows {
        if !self.phase.is_probe_bw() || !self.params.uses_bound_windows() {
            return BbrWindows::default();
        }
        let inp = WindowInputs {
            w_bar: self.w_bar,
            tau_min: self.tau_min,
            t_pbw: obs.rtt,
            v: obs.inflight(),
            p_pi: obs.p_pi,
        };
        let (mut dhi, dlo) = window_derivatives(&inp, win, &self.params);
        if win.w_hi <= self.params.mss && dhi < 0.0 {
            dhi = 0.0;
        }
        let dm = match cruise_target(self.phase) {
            Some(target) => (target - win.m_crs) / (2.0 * self.tau_min),
            None => 0.0,
        };
        BbrWindows {
            w_hi: dhi,
            w_lo: dlo,
            m_crs: dm,
        }
    }

    /// Clamps the continuous state into its admissible set.
    pub fn project(&self, win: &mut BbrWindows) {
        win.w_hi = win.w_hi.max(self.params.mss);
        win.w_lo = win.w_lo.max(0.0);
        win.m_crs = win.m_crs.clamp(0.0, 1.0);
    }

    /// Earliest pending timed event (absolute time).
    pub fn next_event(&self) -> f64 {
        let mut t = self.round_end;
        if self.phase == Phase::ProbeRtt {
            t = t.min(self.probe_rtt_end);
        } else {
            t = t.min(self.probe_rtt_due);
        }
        if self.params.uses_bound_windows()
            && matches!(self.phase, Phase::ProbeBwDown | Phase::ProbeBwCruise)
        {
            t = t.min(self.cycle_start + self.params.probe_wait);
        }
        t
    }

    /// State guard for the current phase. The guard fires when the returned
    /// value is non-negative; the engine locates the crossing.
    pub fn guard(&self, obs: &PathSample) -> Option<f64> {
        let v = obs.inflight();
        match self.phase {
            Phase::Drain => Some(self.w_bar - v),
            Phase::ProbeBwDown if self.params.uses_bound_windows() => Some(self.w_bar - v),
            Phase::ProbeBwUp if self.params.uses_bound_windows() && self.rounds_in_phase >= 1 => {
                Some(v - self.params.g_probe_up * self.w_bar)
            }
            _ => None,
        }
    }

    /// Folds the RTT seen at the end of an integration step into the round.
    pub fn observe_rtt(&mut self, rtt: f64) {
        self.round_rtt_min = self.round_rtt_min.min(rtt);
    }

    /// Round-level loss fraction of the last completed round.
    pub fn last_round_loss(&self) -> f64 {
        self.last_round_loss
    }

    fn enter(&mut self, phase: Phase, t: f64) {
        if phase == Phase::ProbeRtt {
            self.round_limited = true;
        }
        self.phase = phase;
        self.phase_start = t;
        self.rounds_in_phase = 0;
    }

    fn end_round(&mut self, t: f64, obs: &PathSample, cum: &Counters) {
        let elapsed = t - self.round_start;
        if elapsed > 0.0 {
            let rate = (cum.served - self.round_counters.served) / elapsed;
            if !self.round_limited || rate > self.btlbw {
                self.bw_samples.push_back(rate.max(0.0));
            }
            while self.bw_samples.len() > self.params.bw_filter_rounds as usize {
                self.bw_samples.pop_front();
            }
            let arrived = cum.arrived - self.round_counters.arrived;
            self.last_round_loss = if arrived > 0.0 {
                ((cum.dropped - self.round_counters.dropped) / arrived).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        self.round_rtt_min = self.round_rtt_min.min(obs.rtt);
        self.rtt_samples.push_back((t, self.round_rtt_min));
        let horizon = t - self.params.probe_rtt_interval;
        while self.rtt_samples.len() > 1 && self.rtt_samples[0].0 < horizon {
            self.rtt_samples.pop_front();
        }
        let best_bw = self.bw_samples.iter().copied().fold(0.0, f64::max);
        if best_bw > 0.0 {
            self.btlbw = best_bw;
        }
        self.tau_min = self
            .rtt_samples
            .iter()
            .map(|s| s.1)
            .fold(f64::INFINITY, f64::min);
        self.w_bar = self.btlbw * self.tau_min;
        self.rounds_in_phase += 1;
        self.round_start = t;
        self.round_end = t + obs.rtt;
        self.round_counters = *cum;
        self.round_rtt_min = obs.rtt;
        self.round_limited = self.phase == Phase::ProbeRtt;
    }

    fn enter_probe_bw(&mut self, t: f64, win: &mut BbrWindows) {
        if self.params.uses_bound_windows() {
            win.w_lo = self.w_bar;
            win.w_hi = (self.params.g_hi * self.w_bar).max(self.params.mss);
            win.m_crs = 1.0;
            self.enter(Phase::ProbeBwDown, t);
        } else {
            self.v1_cycle_index = 2;
            self.enter(Phase::ProbeBwCruise, t);
        }
        self.cycle_start = t;
    }

    fn v1_phase(&self) -> Phase {
        match self.v1_cycle_index {
            0 => Phase::ProbeBwUp,
            1 => Phase::ProbeBwDown,
            _ => Phase::ProbeBwCruise,
        }
    }

    /// Applies at most one round end and one transition at time `t`.
    /// Returns the new phase when it changed, and `true` in the second slot
    /// whenever any discrete state changed (the caller must then re-evaluate
    /// the path and call again).
    pub fn advance(
        &mut self,
        t: f64,
        obs: &PathSample,
        cum: &Counters,
        win: &mut BbrWindows,
    ) -> (Option<Phase>, bool) {
        let before = self.phase;
        let mut touched = false;

        if t >= self.round_end - EVENT_EPS {
            self.end_round(t, obs, cum);
            touched = true;
            match self.phase {
                Phase::Startup => {
                    if self.btlbw >= self.full_bw * (1.0 + self.params.startup_exit_growth) {
                        self.full_bw = self.btlbw;
                        self.full_bw_count = 0;
                    } else {
                        self.full_bw_count += 1;
                    }
                    let lossy = self
                        .params
                        .startup_exit_loss
                        .is_some_and(|th| self.last_round_loss >= th);
                    if self.full_bw_count >= self.params.startup_exit_rounds || lossy {
                        self.filled_pipe = true;
                        self.enter(Phase::Drain, t);
                    }
                }
                Phase::ProbeBwRefill if self.params.uses_bound_windows() => {
                    self.enter(Phase::ProbeBwUp, t);
                }
                Phase::ProbeBwUp
                    if self.params.uses_bound_windows()
                        && self.params.loss_response
                        && self.last_round_loss >= self.params.p_th =>
                {
                    self.cycle_start = t;
                    self.enter(Phase::ProbeBwDown, t);
                }
                p if p.is_probe_bw() && !self.params.uses_bound_windows() => {
                    self.v1_cycle_index = (self.v1_cycle_index + 1) % 8;
                    let next = self.v1_phase();
                    self.phase = next;
                    self.phase_start = t;
                }
                _ => {}
            }
            if self.phase != before {
                return (Some(self.phase), true);
            }
        }

        if self.phase == Phase::ProbeRtt {
            if t >= self.probe_rtt_end - EVENT_EPS {
                self.end_round(t, obs, cum);
                self.probe_rtt_end = f64::INFINITY;
                if self.filled_pipe {
                    if self.params.uses_bound_windows() {
                        win.w_lo = win.w_lo.max(self.w_bar);
                        self.enter(Phase::ProbeBwCruise, t);
                    } else {
                        self.v1_cycle_index = 2;
                        self.enter(Phase::ProbeBwCruise, t);
                    }
                    self.cycle_start = t;
                } else {
                    self.full_bw = 0.0;
                    self.full_bw_count = 0;
                    self.enter(Phase::Startup, t);
                }
                return (Some(self.phase), true);
            }
            return (None, touched);
        }

        if t >= self.probe_rtt_due - EVENT_EPS {
            self.probe_rtt_due = t + self.params.probe_rtt_interval;
            self.probe_rtt_end = t + obs.rtt.max(self.params.probe_rtt_duration);
            self.enter(Phase::ProbeRtt, t);
            return (Some(self.phase), true);
        }

        if self.params.uses_bound_windows()
            && matches!(self.phase, Phase::ProbeBwDown | Phase::ProbeBwCruise)
            && t >= self.cycle_start + self.params.probe_wait - EVENT_EPS
        {
            // Refill opens a fresh round so that it lasts exactly one.
            self.end_round(t, obs, cum);
            self.enter(Phase::ProbeBwRefill, t);
            return (Some(self.phase), true);
        }

        if let Some(g) = self.guard(obs) {
            if g >= 0.0 {
                match self.phase {
                    Phase::Drain => self.enter_probe_bw(t, win),
                    Phase::ProbeBwDown => self.enter(Phase::ProbeBwCruise, t),
                    Phase::ProbeBwUp => {
                        self.cycle_start = t;
                        self.enter(Phase::ProbeBwDown, t);
                    }
                    _ => unreachable!("guard defined only for Drain, Down and Up"),
                }
                return (Some(self.phase), true);
            }
        }
        (None, touched)
    }
}
