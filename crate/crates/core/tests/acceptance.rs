//! Exit criteria. Each test prints one `criterion N ... PASS|FAIL` line.

mod common;

use std::time::{Duration, Instant};

use bbr_fluid::aqm::{self, AqmConfig, CakeParams, Discipline};
use bbr_fluid::cca::{
    probe_bw_window, window_derivatives, BbrParams, BbrVersion, BbrWindows, Phase, WindowInputs,
};
use bbr_fluid::mac::{self, MacConfig, MacRates, StaClass};
use bbr_fluid::output::trace_csv;
use bbr_fluid::report::{self, correlation, summarize, sup_norm_relative, window_start};
use bbr_fluid::scenario::{parse_scenario, KeyPolicy};
use bbr_fluid::sim::{self, run_scenario, Sample, SimTrace};

const SHAPED_RATE: f64 = 10e6;
const MSS: f64 = 12_000.0;

fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} [{}] {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

// ---------------------------------------------------------------- 1

/// 100 homogeneous configurations spanning contention size, RA resource
/// count, backoff shape and PHY loss.
fn mac_sweep() -> Vec<MacConfig> {
    let n_ra = [1, 2, 3, 5, 8, 10, 16, 20, 32, 50];
    let r_a = [1.0, 2.0, 4.0, 9.0, 18.0];
    let cw = [8, 16];
    let mut out = Vec::new();
    for (i, &n) in n_ra.iter().enumerate() {
        for (j, &r) in r_a.iter().enumerate() {
            for (k, &w) in cw.iter().enumerate() {
                out.push(MacConfig {
                    n_ra: n,
                    r_a: r,
                    cw_min: w,
                    mbo: 2 + ((i + j + k) % 5) as u32,
                    p_phy: [0.0, 0.001, 0.01, 0.05][(i + 2 * j + k) % 4],
                    beta_ap: [0.0, 0.05][(i + k) % 2],
                    ..MacConfig::default()
                });
            }
        }
    }
    out
}

/// Root of `gamma - collision(attempt(gamma))` on [0, 1) by bisection.
fn bisection_fixed_point(cfg: &MacConfig) -> (f64, f64) {
    let h = |g: f64| g - mac::collision_probability(mac::attempt_probability(g, cfg), cfg).unwrap();
    let (mut lo, mut hi) = (0.0, 1.0 - 1e-15);
    if h(lo) >= 0.0 {
        return (mac::attempt_probability(0.0, cfg), 0.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    (mac::attempt_probability(g, cfg), g)
}

#[test]
fn criterion_1_mac_identities() {
    let configs = mac_sweep();
    assert_eq!(configs.len(), 100);
    let started = Instant::now();
    let rates: Vec<MacRates> = configs.iter().map(|c| MacRates::compute(c).unwrap()).collect();
    let elapsed = started.elapsed();

    let mut worst_sum = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut f_exact = true;
    let mut single_zero = true;
    for (c, r) in configs.iter().zip(&rates) {
        worst_sum = worst_sum.max((r.p0 + r.ps + r.pf - 1.0).abs());
        f_exact &= r.f_i == 1.0 - (1.0 - r.gamma) * (1.0 - c.p_phy);
        if c.n_ra == 1 {
            single_zero &= r.gamma == 0.0;
        }
        let (b, g) = bisection_fixed_point(c);
        worst_oracle = worst_oracle.max((r.beta - b).abs()).max((r.gamma - g).abs());
    }
    // Heterogeneous classes share the same slot identity.
    let mixed = MacConfig {
        sta_classes: vec![StaClass { count: 3, cw_min: Some(8) }, StaClass { count: 4, cw_min: Some(32) }],
        ..MacConfig::default()
    };
    let m = MacRates::compute(&mixed).unwrap();
    worst_sum = worst_sum.max((m.p0 + m.ps + m.pf - 1.0).abs());

    let pass = worst_sum < 1e-9
        && f_exact
        && single_zero
        && worst_oracle < 1e-6
        && elapsed < Duration::from_secs(1);
    verdict(
        1,
        "MAC identities",
        pass,
        &format!(
            "max|P0+Ps+Pf-1| = {worst_sum:.2e}, f identity exact = {f_exact}, n_ra=1 gives gamma=0 = {single_zero}, \
             max |fixed point - bisection| = {worst_oracle:.2e}, 100-config sweep {:.3} s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_formula_battery() {
    let tol = 1e-9;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let base = MacConfig::default();

    let short = MacConfig { d_ppdu: 100e-6, ..base.clone() };
    checks.push(("cycle, five 100 us frames", mac::tf_cycle_duration(&short), 564e-6));
    checks.push(("cycle, 1000 us PPDU", mac::tf_cycle_duration(&base), 1464e-6));
    checks.push(("aggregate throughput", mac::aggregate_throughput(&base, 1464e-6), 15.0 * 12_000.0 / 1464e-6));
    checks.push(("max aggregation", mac::max_aggregation(&base).unwrap() as f64, 15.0));
    checks.push(("attempt probability at gamma=0", mac::attempt_probability(0.0, &base), 2.0 / 15.0));
    let three = MacConfig { n_ra: 3, r_a: 2.0, ..base.clone() };
    checks.push(("collision probability", mac::collision_probability(0.2, &three).unwrap(), 0.19));
    checks.push(("failure probability", mac::failure_probability(0.1, 0.05), 0.145));
    checks.push(("per-STA rate", mac::per_sta_rate(0.1333, 0.145, 10e6), 0.1333 * 0.855 * 10e6));

    let v3 = BbrParams::preset(BbrVersion::V3);
    let probing = BbrWindows { w_hi: 300_000.0, w_lo: 100_000.0, m_crs: 0.0 };
    checks.push(("ProbeBW window", probe_bw_window(100_000.0, &probing, &v3), 225_000.0));
    let tau = 0.02;
    let inp = WindowInputs { w_bar: 200_000.0, tau_min: tau, t_pbw: 2.0 * tau, v: 500_000.0, p_pi: 0.0 };
    let s1 = 1.0 / (1.0 + (-50.0f64).exp());
    let grow_win = BbrWindows { w_hi: 300_000.0, w_lo: 200_000.0, m_crs: 0.0 };
    checks.push((
        "high-bound growth",
        window_derivatives(&inp, &grow_win, &v3).0,
        2.25 * 2.0 * s1 * s1 * MSS / tau,
    ));
    let mut flow = bbr_fluid::cca::BbrFlow::new(v3.clone(), 0.0, tau);
    flow.tau_min = tau;
    flow.w_bar = 200_000.0;
    flow.phase = Phase::ProbeBwCruise;
    let cruise = BbrWindows { w_hi: 450_000.0, w_lo: 200_000.0, m_crs: 1.0 };
    checks.push(("cruise pacing", flow.pacing_rate(&cruise), 10e6));
    flow.w_bar = 100_000.0;
    flow.phase = Phase::ProbeRtt;
    checks.push(("ProbeRTT pacing", flow.pacing_rate(&cruise), 2.5e6));

    checks.push(("RTT", sim::rtt(100_000.0, 10e6, 0.02).unwrap(), 0.03));
    checks.push(("effective throughput", sim::effective_throughput(0.1, 10e6), 9e6));
    checks.push(("queue derivative", sim::queue_derivative(1.0, 8e6, 5e6, 1e6), 2e6));

    let mut fifo = AqmConfig::new(Discipline::Pfifo);
    fifo.resolve();
    let shares = aqm::fifo_allocate(&[500_000.0, 250_000.0], &[2.0, 1.0], &fifo).unwrap();
    checks.push(("FIFO share 2/3", shares[0], 2.0 / 3.0 * 600_000.0));
    checks.push(("FIFO share 1/3", shares[1], 1.0 / 3.0 * 600_000.0));
    checks.push(("FIFO ramp midpoint", aqm::fifo_drop(450_000.0, 4e6, &fifo), 2e6));
    let fq = aqm::fq_allocate(&[3.0, 1.0], 10e6);
    checks.push(("FQ share 3/4", fq[0], 7.5e6));
    checks.push(("FQ share 1/4", fq[1], 2.5e6));
    let mut codel = AqmConfig::new(Discipline::FqCodel);
    codel.resolve();
    let (soj, drop) = aqm::fq_sojourn_drop(100_000.0, 5e6, &codel);
    checks.push(("CoDel sojourn", soj, 0.02));
    checks.push(("CoDel drop intensity", drop, codel.kappa_codel));
    let cake = CakeParams::default();
    let a = aqm::cake_allocate(&["a1", "a2", "b1"], &["A", "A", "B"], &cake, 10e6);
    checks.push(("CAKE host A flow", a[0], 2.5e6));
    checks.push(("CAKE host B flow", a[2], 5e6));
    let mut ck = AqmConfig::new(Discipline::Cake);
    ck.resolve();
    checks.push(("CAKE mark midpoint", aqm::cake_mark(ck.codel_target, 300_000.0, &ck), 0.25));
    checks.push(("CAKE queue derivative", aqm::cake_queue_derivative(10e6, 0.1, 5e6), 4e6));
    checks.push(("Jain one idle of two", report::jain_index(&[3e6, 0.0]), 0.5));

    let failed: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| rel(*got, *want) >= tol)
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    verdict(
        2,
        "hand-evaluated formula battery",
        failed.is_empty(),
        &if failed.is_empty() {
            format!("{} values within 1e-9 relative", checks.len())
        } else {
            failed.join("; ")
        },
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_bbrv3_steady_state() {
    let scenario = common::load("bbrv3-steady");
    let started = Instant::now();
    let trace = run_scenario(&scenario).unwrap();
    let elapsed = started.elapsed();
    let n = trace.times.len();
    let pacing = trace.series(0, |s| s.pacing);
    let mean_pacing = report::mean(&pacing[window_start(n, 0.2)..]);
    let pacing_ok = rel(mean_pacing, SHAPED_RATE) <= 0.05;

    let dt = scenario.integrator.dt;
    let entries = trace.entries(0, "ProbeRTT");
    let mut gaps = vec![entries.first().copied().unwrap_or(f64::NAN) - scenario.flows[0].start];
    gaps.extend(entries.windows(2).map(|w| w[1] - w[0]));
    let recurs = entries.len() >= 11 && gaps.iter().all(|g| (g - 5.0).abs() <= dt);
    let ratio = trace.probe_rtt[0].max_inflight_ratio;
    let capped = ratio <= 1.0 + 1e-9;
    let fast = elapsed < Duration::from_secs(10);

    verdict(
        3,
        "BBRv3 steady state",
        pacing_ok && recurs && capped && fast,
        &format!(
            "mean pacing {:.4} Mb/s, {} ProbeRTT entries, gaps in [{:.6}, {:.6}] s, \
             max inflight/(w_bar/2) = {ratio:.9}, runtime {:.2} s",
            mean_pacing / 1e6,
            entries.len(),
            gaps.iter().copied().fold(f64::INFINITY, f64::min),
            gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 4-6

const MIXED: [&str; 2] = ["uplink-2flow", "downlink-2flow"];

fn mixed_name(set: &str, disc: &str) -> String {
    format!("{set}-{disc}")
}

/// Mean over all flows and all steady-window samples.
fn scenario_mean_rtt(trace: &SimTrace, fraction: f64) -> f64 {
    let r = summarize(trace, fraction).unwrap();
    report::mean(&r.flows.iter().map(|f| f.rtt_mean_ms).collect::<Vec<_>>())
}

fn bbr_flows(trace: &SimTrace) -> Vec<usize> {
    (0..trace.flows.len())
        .filter(|&i| trace.flows[i].cca.starts_with("bbr"))
        .collect()
}

#[test]
fn criterion_4_aqm_rtt_ordering() {
    let mut pass = true;
    let mut detail = Vec::new();
    for set in MIXED {
        let [fifo, fq, cake] = ["pfifo", "fqcodel", "cake"].map(|d| {
            let name = mixed_name(set, d);
            let fraction = common::load(&name).report.steady_fraction;
            scenario_mean_rtt(&common::trace(&name), fraction)
        });
        let ok = fifo > fq && fq >= cake && fifo >= 1.5 * cake;
        pass &= ok;
        detail.push(format!(
            "{set}: PFIFO {fifo:.3} ms, FQ-CoDel {fq:.3} ms, CAKE {cake:.3} ms, PFIFO/CAKE {:.2}",
            fifo / cake
        ));
    }
    verdict(4, "AQM RTT ordering", pass, &detail.join("; "));
}

#[test]
fn criterion_5_pacing_delivery_alignment() {
    let mut pass = true;
    let mut detail = Vec::new();
    for set in MIXED {
        let [fifo, cake] = ["pfifo", "cake"].map(|d| {
            let name = mixed_name(set, d);
            let trace = common::trace(&name);
            let r = summarize(&trace, common::load(&name).report.steady_fraction).unwrap();
            report::mean(&bbr_flows(&trace).iter().map(|&i| r.flows[i].alignment).collect::<Vec<_>>())
        });
        pass &= cake < fifo;
        detail.push(format!("{set}: CAKE {cake:.3e} vs PFIFO {fifo:.3e}"));
    }
    verdict(5, "pacing-delivery alignment", pass, &detail.join("; "));
}

#[test]
fn criterion_6_fifo_oscillation() {
    let mut pass = true;
    let mut detail = Vec::new();
    for set in MIXED {
        let name = mixed_name(set, "pfifo");
        let trace = common::trace(&name);
        let start = window_start(trace.times.len(), common::load(&name).report.steady_fraction);
        let a = report::window_series(&trace, 0, start, |s| s.theta_eff);
        let b = report::window_series(&trace, 1, start, |s| s.theta_eff);
        let rho = correlation(&a, &b);
        pass &= rho < 0.0;
        detail.push(format!("{set}: lag-0 correlation {rho:.4}"));
    }
    verdict(6, "FIFO anti-phase oscillation", pass, &detail.join("; "));
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_fairness() {
    let mut pass = true;
    let mut detail = Vec::new();
    for name in ["bbrv3-pair-fqcodel", "bbrv3-pair-cake"] {
        let trace = common::trace(name);
        let j = summarize(&trace, common::load(name).report.steady_fraction).unwrap().jain_index;
        pass &= j >= 0.95;
        detail.push(format!("{name}: Jain {j:.6}"));
    }
    verdict(7, "two-BBRv3 fairness", pass, &detail.join("; "));
}

// ---------------------------------------------------------------- 8

fn q_series(t: &SimTrace, i: usize) -> Vec<f64> {
    t.series(i, |s: &Sample| s.q)
}

fn x_series(t: &SimTrace, i: usize) -> Vec<f64> {
    t.series(i, |s: &Sample| s.x)
}

#[test]
fn criterion_8_numerical_hygiene() {
    let started = Instant::now();
    let mut worst_conservation = (0.0f64, String::new());
    let mut worst_halving = (0.0f64, String::new());
    let mut identical = true;
    let files = common::catalog_files();
    for path in &files {
        let scenario = parse_scenario(path, KeyPolicy::Strict).unwrap();
        let a = run_scenario(&scenario).unwrap();
        let b = run_scenario(&scenario).unwrap();
        identical &= trace_csv(&a).unwrap() == trace_csv(&b).unwrap();

        let c = report::conservation_residual(&a);
        if c >= worst_conservation.0 {
            worst_conservation = (c, scenario.name.clone());
        }

        let mut half = scenario.clone();
        half.integrator.dt /= 2.0;
        let h = run_scenario(&half).unwrap();
        for i in 0..a.flows.len() {
            let dq = sup_norm_relative(&q_series(&a, i), &q_series(&h, i), MSS);
            let dx = sup_norm_relative(&x_series(&a, i), &x_series(&h, i), 1.0);
            let d = dq.max(dx);
            if d >= worst_halving.0 {
                worst_halving = (d, format!("{} flow {}", scenario.name, a.flows[i].id));
            }
        }
    }
    let elapsed = started.elapsed();
    // The catalog budget covers one pass; this test runs four passes.
    let one_pass = elapsed / 4;
    let pass = worst_conservation.0 < 0.005
        && worst_halving.0 < 0.01
        && identical
        && files.len() >= 12
        && one_pass < Duration::from_secs(300);
    verdict(
        8,
        "numerical hygiene",
        pass,
        &format!(
            "conservation max {:.2e} ({}), step-halving max {:.3e} ({}), identical CSV = {identical}, \
             {} scenarios, one catalog pass {:.1} s",
            worst_conservation.0,
            worst_conservation.1,
            worst_halving.0,
            worst_halving.1,
            files.len(),
            one_pass.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_loss_response() {
    let p = BbrParams::preset(BbrVersion::V3);
    let tau = 0.02;
    let w_bar = 200_000.0;
    let mut win = BbrWindows { w_hi: 450_000.0, w_lo: w_bar, m_crs: 1.0 };
    let p_pi = 2.0 * p.p_th;
    let h = 1e-4;
    let mut strictly = true;
    let mut steps = 0;
    let start = win.w_lo;
    let lo_rate = |w: &BbrWindows| {
        let inp = WindowInputs { w_bar, tau_min: tau, t_pbw: tau, v: w.w_lo, p_pi };
        window_derivatives(&inp, w, &p).1
    };
    // RK4 on w_lo alone; m_crs and w_bar are held.
    for _ in 0..5_000 {
        let k1 = lo_rate(&win);
        let k2 = lo_rate(&BbrWindows { w_lo: win.w_lo + 0.5 * h * k1, ..win });
        let k3 = lo_rate(&BbrWindows { w_lo: win.w_lo + 0.5 * h * k2, ..win });
        let k4 = lo_rate(&BbrWindows { w_lo: win.w_lo + h * k3, ..win });
        let next = win.w_lo + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        strictly &= next < win.w_lo && k1 < 0.0;
        win.w_lo = next;
        steps += 1;
    }
    verdict(
        9,
        "loss response",
        strictly,
        &format!(
            "p = 2 p_th, m_crs = 1: w_lo {start:.0} -> {:.3} bits over {steps} steps, strictly decreasing = {strictly}",
            win.w_lo
        ),
    );
}
