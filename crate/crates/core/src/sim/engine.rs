//! Fixed-step RK4 integration of the coupled queue/sender system.
//!
//! Steps are shortened to land exactly on output samples, flow start/stop
//! times and sender timers. Sender state guards (e.g. "inflight has drained
//! to the BDP") are located inside a step by bisection, so discrete events
//! happen at instants that do not depend on the step size.

use super::trace::{FlowInfo, PhaseEvent, ProbeRttStats, Sample, SimTrace};
use super::{effective_throughput, SimError};
use crate::aqm::{self, Discipline, QueueInput};
use crate::cca::{BbrFlow, BbrWindows, Competitor, Counters, PathSample, Phase};
use crate::mac::{MacConfig, MacRates};
use crate::scenario::{BottleneckMode, Direction, Scenario, DEFAULT_SHAPED_RATE};

/// State slots per flow: backlog, three sender slots, three counters.
const SLOTS: usize = 7;
const Q: usize = 0;
const A: usize = 1;
const B: usize = 2;
const C: usize = 3;
const ARR: usize = 4;
const SRV: usize = 5;
const DRP: usize = 6;

/// Width of the bracket when locating a guard crossing or an emptying queue (s).
const GUARD_TOL: f64 = 1e-10;
const TIME_EPS: f64 = 1e-9;
const MAX_TRANSITIONS: usize = 64;

const IDLE: &str = "Idle";
const AIMD: &str = "AIMD";

#[derive(Debug, Clone)]
enum Sender {
    Bbr(Box<BbrFlow>),
    Competitor(Competitor),
}

#[derive(Debug, Clone)]
struct FlowRt {
    id: String,
    direction: Direction,
    tau_prop: f64,
    start: f64,
    stop: f64,
    started: bool,
    sending: bool,
    sender: Option<Sender>,
    weight: f64,
}

#[derive(Debug, Clone, Default)]
struct Topology {
    capacity: f64,
    theta_nom: f64,
    f_i: f64,
    members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct FlowEval {
    x: f64,
    rtt: f64,
    served: f64,
    dropped: f64,
    dq: f64,
    p_pi: f64,
    theta_eff: f64,
    pacing: f64,
    cwnd: f64,
    sojourn: f64,
    theta_nom: f64,
}

impl FlowEval {
    fn path(&self) -> PathSample {
        PathSample {
            x: self.x,
            rtt: self.rtt,
            p_pi: self.p_pi,
        }
    }
}

pub struct Simulation {
    scenario: Scenario,
    flows: Vec<FlowRt>,
    topo: [Topology; 2],
    t: f64,
    y: Vec<f64>,
    dt: f64,
    next_sample: u64,
    n_samples: u64,
    trace: SimTrace,
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Uplink => 0,
        Direction::Downlink => 1,
    }
}

fn windows(y: &[f64], i: usize) -> BbrWindows {
    BbrWindows {
        w_hi: y[i * SLOTS + A],
        w_lo: y[i * SLOTS + B],
        m_crs: y[i * SLOTS + C],
    }
}

fn store_windows(y: &mut [f64], i: usize, w: &BbrWindows) {
    y[i * SLOTS + A] = w.w_hi;
    y[i * SLOTS + B] = w.w_lo;
    y[i * SLOTS + C] = w.m_crs;
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let cadence = scenario.integrator.output_cadence;
        let n_samples = (scenario.duration / cadence + 1e-9).floor() as u64;
        let flows: Vec<FlowRt> = scenario
            .flows
            .iter()
            .map(|f| FlowRt {
                id: f.id.clone(),
                direction: f.direction,
                tau_prop: f.tau_min,
                start: f.start,
                stop: f.stop_time(scenario.duration),
                started: false,
                sending: false,
                sender: None,
                weight: 1.0,
            })
            .collect();
        let infos = scenario
            .flows
            .iter()
            .map(|f| FlowInfo {
                id: f.id.clone(),
                direction: f.direction,
                cca: serde_json::to_value(f.cca)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                tau_min: f.tau_min,
                start: f.start,
                stop: f.stop_time(scenario.duration),
            })
            .collect();
        let n = flows.len();
        let mut sim = Simulation {
            trace: SimTrace {
                scenario: scenario.name.clone(),
                config_hash: scenario.config_hash(),
                dt: scenario.integrator.dt,
                output_cadence: cadence,
                duration: scenario.duration,
                flows: infos,
                times: Vec::with_capacity(n_samples as usize),
                samples: Vec::with_capacity(n_samples as usize),
                events: Vec::new(),
                probe_rtt: vec![ProbeRttStats::default(); n],
                steps: 0,
            },
            scenario: scenario.clone(),
            flows,
            topo: Default::default(),
            t: 0.0,
            y: vec![0.0; n * SLOTS],
            dt: scenario.integrator.dt,
            next_sample: 1,
            n_samples,
        };
        sim.refresh_topology()?;
        sim.commit()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.scenario.duration - TIME_EPS
    }

    fn sample_time(&self, k: u64) -> f64 {
        k as f64 * self.scenario.integrator.output_cadence
    }

    fn refresh_topology(&mut self) -> Result<(), SimError> {
        for d in [Direction::Uplink, Direction::Downlink] {
            let members: Vec<usize> = (0..self.flows.len())
                .filter(|&i| self.flows[i].started && self.flows[i].direction == d)
                .collect();
            let sending = members.iter().filter(|&&i| self.flows[i].sending).count().max(1);
            let (capacity, theta_nom, f_i) = match self.scenario.bottleneck.mode {
                BottleneckMode::Shaped => {
                    let c = self.scenario.bottleneck.rate_bps.unwrap_or(DEFAULT_SHAPED_RATE);
                    (c, c / sending as f64, 0.0)
                }
                BottleneckMode::MacModel => {
                    let mut mac: MacConfig = self.scenario.bottleneck.mac.clone().unwrap_or_default();
                    if mac.sta_classes.is_empty() {
                        mac.n_ra = sending as u32;
                    }
                    let r = MacRates::compute(&mac).map_err(|e| SimError::Domain(e.to_string()))?;
                    (r.theta_i * sending as f64, r.theta_i, r.f_i)
                }
            };
            // Scheduling weights over the flows present in this direction.
            let ids: Vec<&str> = members.iter().map(|&i| self.flows[i].id.as_str()).collect();
            let hosts: Vec<&str> = members
                .iter()
                .map(|&i| self.scenario.flows[i].host_id())
                .collect();
            let weights: Vec<f64> = match self.scenario.aqm.discipline {
                Discipline::Cake => aqm::cake_weights(&ids, &hosts, &self.scenario.aqm.cake),
                _ => ids
                    .iter()
                    .map(|id| self.scenario.aqm.fq_weights.get(*id).copied().unwrap_or(1.0))
                    .collect(),
            };
            for (&i, w) in members.iter().zip(weights) {
                self.flows[i].weight = w;
            }
            self.topo[dir_index(d)] = Topology {
                capacity,
                theta_nom,
                f_i,
                members,
            };
        }
        Ok(())
    }

    /// Evaluates observables and, when `dy` is given, the state derivative.
    fn evaluate(&self, y: &[f64], mut dy: Option<&mut [f64]>) -> Vec<FlowEval> {
        let mut evals = vec![FlowEval::default(); self.flows.len()];
        if let Some(d) = dy.as_deref_mut() {
            d.fill(0.0);
        }
        for (i, f) in self.flows.iter().enumerate() {
            let theta = self.topo[dir_index(f.direction)].theta_nom;
            evals[i].theta_nom = theta;
            evals[i].rtt = f.tau_prop + y[i * SLOTS + Q].max(0.0) / theta;
        }
        for topo in &self.topo {
            if topo.members.is_empty() {
                continue;
            }
            let mut inputs = Vec::with_capacity(topo.members.len());
            for &i in &topo.members {
                let f = &self.flows[i];
                let ev = &mut evals[i];
                match (&f.sender, f.sending) {
                    (Some(Sender::Bbr(b)), true) => {
                        let win = windows(y, i);
                        ev.pacing = b.pacing_rate(&win);
                        ev.cwnd = b.cwnd(&win);
                        ev.x = ev.pacing.min(ev.cwnd / ev.rtt);
                    }
                    (Some(Sender::Competitor(c)), true) => {
                        let w = y[i * SLOTS + A];
                        ev.cwnd = w;
                        ev.x = c.sending_rate(w, ev.rtt);
                        ev.pacing = ev.x;
                    }
                    _ => {}
                }
                inputs.push(QueueInput {
                    q: y[i * SLOTS + Q],
                    x: ev.x,
                    weight: f.weight,
                    theta: topo.theta_nom,
                });
            }
            let outs = aqm::evaluate(&self.scenario.aqm, topo.capacity, &inputs);
            for (&i, o) in topo.members.iter().zip(outs) {
                let ev = &mut evals[i];
                ev.served = o.served;
                ev.dropped = o.dropped;
                ev.dq = o.dq;
                ev.sojourn = o.sojourn;
                ev.p_pi = 1.0 - (1.0 - o.p) * (1.0 - topo.f_i);
                ev.theta_eff = effective_throughput(ev.p_pi, ev.x);
                if let Some(d) = dy.as_deref_mut() {
                    let s = &mut d[i * SLOTS..(i + 1) * SLOTS];
                    s[Q] = o.dq;
                    s[ARR] = ev.x;
                    s[SRV] = o.served;
                    s[DRP] = o.dropped;
                    let f = &self.flows[i];
                    if f.sending {
                        match &f.sender {
                            Some(Sender::Bbr(b)) => {
                                let dw = b.derivatives(&windows(y, i), &ev.path());
                                s[A] = dw.w_hi;
                                s[B] = dw.w_lo;
                                s[C] = dw.m_crs;
                            }
                            Some(Sender::Competitor(c)) => {
                                s[A] = c.derivative(y[i * SLOTS + A], ev.p_pi, ev.rtt);
                            }
                            None => {}
                        }
                    }
                }
            }
        }
        evals
    }

    fn project(&self, y: &mut [f64]) {
        for (i, f) in self.flows.iter().enumerate() {
            let q = &mut y[i * SLOTS + Q];
            *q = q.max(0.0);
            match &f.sender {
                Some(Sender::Bbr(b)) => {
                    let mut w = windows(y, i);
                    b.project(&mut w);
                    store_windows(y, i, &w);
                }
                Some(Sender::Competitor(c)) => c.project(&mut y[i * SLOTS + A]),
                None => {}
            }
        }
    }

    /// One RK4 step without projection.
    fn rk4(&self, y: &[f64], h: f64) -> Vec<f64> {
        let n = y.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        self.evaluate(y, Some(&mut k1));
        self.evaluate(&axpy(y, 0.5 * h, &k1), Some(&mut k2));
        self.evaluate(&axpy(y, 0.5 * h, &k2), Some(&mut k3));
        self.evaluate(&axpy(y, h, &k3), Some(&mut k4));
        (0..n)
            .map(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect()
    }

    fn projected(&self, mut y: Vec<f64>) -> Vec<f64> {
        self.project(&mut y);
        y
    }

    /// A backlog that was positive reaches zero within the step.
    fn queue_empties(&self, raw: &[f64]) -> bool {
        (0..self.flows.len()).any(|i| self.y[i * SLOTS + Q] > 0.0 && raw[i * SLOTS + Q] <= 0.0)
    }

    fn any_guard_fires(&self, y: &[f64]) -> bool {
        let evals = self.evaluate(y, None);
        self.flows.iter().enumerate().any(|(i, f)| match (&f.sender, f.sending) {
            (Some(Sender::Bbr(b)), true) => b.guard(&evals[i].path()).is_some_and(|g| g >= 0.0),
            _ => false,
        })
    }

    fn next_stop(&self) -> f64 {
        let mut t_next = (self.t + self.dt).min(self.scenario.duration);
        if self.next_sample <= self.n_samples {
            t_next = t_next.min(self.sample_time(self.next_sample));
        }
        for f in &self.flows {
            for edge in [f.start, f.stop] {
                if edge > self.t + TIME_EPS {
                    t_next = t_next.min(edge);
                }
            }
            if let (Some(Sender::Bbr(b)), true) = (&f.sender, f.sending) {
                let e = b.next_event();
                if e > self.t + TIME_EPS {
                    t_next = t_next.min(e);
                }
            }
        }
        t_next
    }

    /// Advances by one (possibly shortened) integration step.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t_next = self.next_stop();
        let h = t_next - self.t;
        if h <= 0.0 {
            self.t = t_next;
            return self.commit();
        }
        // Steps end where a queue empties or a guard fires, so no step
        // integrates across a kink of the right-hand side.
        let guard_at_start = self.any_guard_fires(&self.y);
        let event = |raw: &[f64]| {
            self.queue_empties(raw) || (!guard_at_start && self.any_guard_fires(&self.projected(raw.to_vec())))
        };
        let mut raw = self.rk4(&self.y, h);
        let mut t_new = t_next;
        if event(&raw) {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > GUARD_TOL {
                let mid = 0.5 * (lo + hi);
                if event(&self.rk4(&self.y, mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            if hi < h {
                raw = self.rk4(&self.y, hi);
                t_new = self.t + hi;
            }
        }
        self.y = self.projected(raw);
        self.t = t_new;
        self.trace.steps += 1;
        self.commit()
    }

    fn check_finite(&self) -> Result<(), SimError> {
        for (j, v) in self.y.iter().enumerate() {
            if !v.is_finite() {
                return Err(SimError::IntegratorPanic {
                    t: self.t,
                    flow: self.flows[j / SLOTS].id.clone(),
                    detail: format!("state slot {} is {v}", j % SLOTS),
                });
            }
        }
        Ok(())
    }

    fn counters(&self, i: usize) -> Counters {
        Counters {
            arrived: self.y[i * SLOTS + ARR],
            served: self.y[i * SLOTS + SRV],
            dropped: self.y[i * SLOTS + DRP],
        }
    }

    /// Applies discrete updates at the current instant.
    fn commit(&mut self) -> Result<(), SimError> {
        self.check_finite()?;
        let t = self.t;
        let duration = self.scenario.duration;
        let mut topology_changed = false;
        for f in &mut self.flows {
            if !f.started && t >= f.start - TIME_EPS {
                f.started = true;
                f.sending = true;
                topology_changed = true;
            }
            if f.sending && t >= f.stop - TIME_EPS && f.stop < duration - TIME_EPS {
                f.sending = false;
                topology_changed = true;
            }
        }
        if topology_changed {
            self.refresh_topology()?;
            for i in 0..self.flows.len() {
                if self.flows[i].sending && self.flows[i].sender.is_none() {
                    let spec = &self.scenario.flows[i];
                    let theta = self.topo[dir_index(spec.direction)].theta_nom;
                    let rtt0 = spec.tau_min + self.y[i * SLOTS + Q] / theta;
                    match (&spec.bbr, &spec.competitor) {
                        (Some(p), _) => {
                            let b = BbrFlow::new(p.clone(), t, rtt0);
                            store_windows(&mut self.y, i, &b.initial_windows());
                            self.record_event(i, IDLE, b.phase.label());
                            self.flows[i].sender = Some(Sender::Bbr(Box::new(b)));
                        }
                        (None, Some(p)) => {
                            let c = Competitor::new(p.clone());
                            self.y[i * SLOTS + A] = c.initial_window();
                            self.record_event(i, IDLE, AIMD);
                            self.flows[i].sender = Some(Sender::Competitor(c));
                        }
                        (None, None) => {
                            return Err(SimError::Domain(format!("flow {} has no sender parameters", spec.id)));
                        }
                    }
                }
            }
        }

        let evals = self.evaluate(&self.y, None);
        for (i, f) in self.flows.iter_mut().enumerate() {
            if let (Some(Sender::Bbr(b)), true) = (&mut f.sender, f.sending) {
                b.observe_rtt(evals[i].rtt);
            }
        }

        for _ in 0..MAX_TRANSITIONS {
            let evals = self.evaluate(&self.y, None);
            let mut touched = false;
            for i in 0..self.flows.len() {
                if !self.flows[i].sending {
                    continue;
                }
                let cum = self.counters(i);
                let mut win = windows(&self.y, i);
                let change = match &mut self.flows[i].sender {
                    Some(Sender::Bbr(b)) => {
                        let from = b.phase;
                        let (to, any) = b.advance(t, &evals[i].path(), &cum, &mut win);
                        b.project(&mut win);
                        touched |= any;
                        to.map(|p| (from, p))
                    }
                    _ => None,
                };
                store_windows(&mut self.y, i, &win);
                if let Some((from, to)) = change {
                    self.record_event(i, from.label(), to.label());
                    if to == Phase::ProbeRtt {
                        self.trace.probe_rtt[i].episodes += 1;
                    }
                }
            }
            if !touched {
                break;
            }
        }

        let evals = self.evaluate(&self.y, None);
        for (i, f) in self.flows.iter().enumerate() {
            if let (Some(Sender::Bbr(b)), true) = (&f.sender, f.sending) {
                if b.phase == Phase::ProbeRtt && b.w_bar > 0.0 {
                    let ratio = evals[i].x * evals[i].rtt / (0.5 * b.w_bar);
                    let stats = &mut self.trace.probe_rtt[i];
                    stats.max_inflight_ratio = stats.max_inflight_ratio.max(ratio);
                }
            }
        }

        if self.next_sample <= self.n_samples && t >= self.sample_time(self.next_sample) - TIME_EPS {
            let row = self.sample_row(&evals);
            self.trace.times.push(self.sample_time(self.next_sample));
            self.trace.samples.push(row);
            self.next_sample += 1;
        }
        Ok(())
    }

    fn record_event(&mut self, flow: usize, from: &'static str, to: &'static str) {
        self.trace.events.push(PhaseEvent {
            t: self.t,
            flow,
            from,
            to,
        });
    }

    fn sample_row(&self, evals: &[FlowEval]) -> Vec<Sample> {
        self.flows
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let ev = &evals[i];
                let y = &self.y[i * SLOTS..(i + 1) * SLOTS];
                let (phase, w_bar, m_crs) = match (&f.sender, f.sending) {
                    (Some(Sender::Bbr(b)), true) => (b.phase.label(), b.w_bar, y[C]),
                    (Some(Sender::Competitor(_)), true) => (AIMD, y[A], 0.0),
                    (Some(Sender::Bbr(b)), false) => (IDLE, b.w_bar, y[C]),
                    (Some(Sender::Competitor(_)), false) => (IDLE, y[A], 0.0),
                    (None, _) => (IDLE, 0.0, 0.0),
                };
                Sample {
                    phase,
                    x: ev.x,
                    theta_eff: ev.theta_eff,
                    rtt: ev.rtt,
                    q: y[Q],
                    drop_cum: y[DRP],
                    p_pi: if f.sending { ev.p_pi } else { 0.0 },
                    w_bar,
                    m_crs,
                    pacing: ev.pacing,
                    cwnd: ev.cwnd,
                    inflight: ev.x * ev.rtt,
                    theta_nom: ev.theta_nom,
                    sojourn: ev.sojourn,
                    arrived_cum: y[ARR],
                    served_cum: y[SRV],
                }
            })
            .collect()
    }

    /// Runs to the scenario duration.
    pub fn run(mut self) -> Result<SimTrace, SimError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.trace)
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }
}

/// Integrates a validated scenario from zero to its duration.
pub fn run_scenario(scenario: &Scenario) -> Result<SimTrace, SimError> {
    Simulation::new(scenario)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{parse_scenario_str, KeyPolicy};

    fn scenario(body: &str) -> Scenario {
        parse_scenario_str(body, KeyPolicy::Strict).unwrap().0
    }

    #[test]
    fn flows_not_started_leave_state_alone() {
        let s = scenario(
            r#"{"name": "late", "duration": 1.0,
                "bottleneck": {"mode": "shaped"}, "aqm": {"discipline": "pfifo"},
                "flows": [{"id": "a", "cca": "bbr_v3", "start": 0.5}]}"#,
        );
        let mut sim = Simulation::new(&s).unwrap();
        let y0 = sim.y.clone();
        sim.step().unwrap();
        assert!((sim.time() - s.integrator.dt).abs() < 1e-15);
        assert_eq!(sim.y, y0);
    }

    #[test]
    fn sample_count_follows_cadence() {
        let s = scenario(
            r#"{"name": "count", "duration": 2.0,
                "bottleneck": {"mode": "shaped"}, "aqm": {"discipline": "cake"},
                "flows": [{"id": "a", "cca": "bbr_v3"}, {"id": "b", "cca": "competitor"}]}"#,
        );
        let tr = run_scenario(&s).unwrap();
        assert_eq!(tr.times.len(), 20);
        assert!(tr.samples.iter().all(|r| r.len() == 2));
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mac_mode_runs() {
        let s = scenario(
            r#"{"name": "mac", "duration": 1.0,
                "bottleneck": {"mode": "mac_model"}, "aqm": {"discipline": "fq_codel"},
                "flows": [{"id": "a", "cca": "bbr_v3"}, {"id": "b", "cca": "bbr_v3"}]}"#,
        );
        let tr = run_scenario(&s).unwrap();
        let last = tr.samples.last().unwrap();
        let rates = MacRates::compute(&MacConfig::default()).unwrap();
        assert!((last[0].theta_nom - rates.theta_i).abs() <= 1e-9 * rates.theta_i, "{} vs {}", last[0].theta_nom, rates.theta_i);
        assert!(last.iter().all(|s| s.p_pi >= rates.f_i - 1e-12));
    }
}
