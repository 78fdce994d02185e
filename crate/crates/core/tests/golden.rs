mod common;

use std::fs;

use bbr_fluid::output::{format_sig9, trace_csv, CSV_HEADER};
use bbr_fluid::report::{self, summarize};

/// Set to regenerate the golden files after an intentional model change.
const BLESS_VAR: &str = "BBRSIM_BLESS";

#[test]
fn shipped_scenarios_match_golden_csv() {
    let bless = std::env::var_os(BLESS_VAR).is_some();
    fs::create_dir_all(common::golden_dir()).unwrap();
    let mut mismatched = Vec::new();
    for path in common::catalog_files() {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let bytes = trace_csv(&common::trace(&name)).unwrap();
        let golden = common::golden_dir().join(format!("{name}.csv"));
        if bless {
            fs::write(&golden, &bytes).unwrap();
            continue;
        }
        let expected = fs::read(&golden).unwrap_or_else(|e| panic!("{}: {e} (run with {BLESS_VAR}=1)", golden.display()));
        if expected != bytes {
            mismatched.push(name);
        }
    }
    assert!(mismatched.is_empty(), "trace CSV differs from golden for {mismatched:?}");
}

#[test]
fn csv_has_one_row_per_flow_and_sample() {
    let mut s = common::load("uplink-2flow-pfifo");
    s.duration = 10.0;
    for f in &mut s.flows {
        f.stop = Some(10.0);
    }
    let trace = bbr_fluid::sim::run_scenario(&s).unwrap();
    let text = String::from_utf8(trace_csv(&trace).unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.count(), 200);
    assert!(text.ends_with('\n') && !text.contains('\r'));
}

/// The summary is reproducible from the CSV columns alone.
#[test]
fn summary_recomputes_from_csv() {
    for name in ["uplink-2flow-pfifo", "bidirectional-4flow-cake", "bbr-versions-staggered-fqcodel"] {
        let trace = common::trace(name);
        let frac = common::load(name).report.steady_fraction;
        let summary = summarize(&trace, frac).unwrap();
        let bytes = trace_csv(&trace).unwrap();
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        let mut rows: Vec<(f64, String, f64, f64, f64)> = Vec::new();
        for rec in reader.records() {
            let rec = rec.unwrap();
            let num = |k: usize| rec[k].parse::<f64>().unwrap();
            rows.push((num(0), rec[1].to_string(), num(3), num(4), num(5)));
        }
        let n = trace.times.len();
        let start = report::window_start(n, frac);
        let t_start: f64 = format_sig9(trace.times[start]).parse().unwrap();
        for f in &summary.flows {
            let mine: Vec<_> = rows.iter().filter(|r| r.1 == f.id && r.0 >= t_start).collect();
            assert_eq!(mine.len(), summary.window_samples, "{name}/{}", f.id);
            let thr: Vec<f64> = mine.iter().map(|r| r.3 / 1e6).collect();
            let rtt: Vec<f64> = mine.iter().map(|r| r.4 * 1e3).collect();
            let x: Vec<f64> = mine.iter().map(|r| r.2).collect();
            let eff: Vec<f64> = mine.iter().map(|r| r.3).collect();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
            assert!(close(report::mean(&thr), f.throughput_mean_mbps), "{name}/{} throughput", f.id);
            assert!(close(report::percentile(&thr, 95.0), f.throughput_p95_mbps), "{name}/{} p95", f.id);
            assert!(close(report::mean(&rtt), f.rtt_mean_ms), "{name}/{} rtt", f.id);
            assert!(close(report::std_dev(&rtt), f.jitter_ms) || (report::std_dev(&rtt) - f.jitter_ms).abs() < 1e-9, "{name}/{} jitter", f.id);
            assert!(close(report::alignment(&x, &eff), f.alignment) || (report::alignment(&x, &eff) - f.alignment).abs() < 1e-12, "{name}/{} alignment", f.id);
        }
    }
}
