//! Trace CSV, plot data files and their manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::report::{percentile, window_start, SummaryReport};
use crate::sim::SimTrace;

pub const CSV_HEADER: [&str; 11] = [
    "t_s",
    "flow_id",
    "phase",
    "x_bps",
    "theta_eff_bps",
    "rtt_s",
    "q_bits",
    "drop_bits_cum",
    "mark_prob",
    "w_bar_bits",
    "m_crs",
];

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Decimal notation with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (_, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    let rounded: f64 = sci.parse().expect("round trip of {:e} output");
    let decimals = (8 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    fs::write(path, bytes).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| OutputError::Csv(e.into_error().into()))
}

/// Renders the trace CSV. Fails on an empty trace.
pub fn trace_csv(trace: &SimTrace) -> Result<Vec<u8>, OutputError> {
    if trace.is_empty() {
        return Err(OutputError::EmptyTrace);
    }
    let rows = trace.times.iter().zip(&trace.samples).flat_map(|(t, row)| {
        row.iter().zip(&trace.flows).map(move |(s, f)| {
            vec![
                format_sig9(*t),
                f.id.clone(),
                s.phase.to_string(),
                format_sig9(s.x),
                format_sig9(s.theta_eff),
                format_sig9(s.rtt),
                format_sig9(s.q),
                format_sig9(s.drop_cum),
                format_sig9(s.p_pi),
                format_sig9(s.w_bar),
                format_sig9(s.m_crs),
            ]
        })
    });
    csv_bytes(&CSV_HEADER, rows)
}

/// Writes the trace CSV; nothing is created when the trace is empty.
pub fn emit_csv(trace: &SimTrace, path: &Path) -> Result<(), OutputError> {
    let bytes = trace_csv(trace)?;
    write_file(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelEntry {
    pub file: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_hash: String,
    pub files: Vec<PanelEntry>,
}

struct Panel {
    file: &'static str,
    title: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn time_series_panel(
    trace: &SimTrace,
    file: &'static str,
    title: &'static str,
    y_label: &'static str,
    columns: &[&str],
    values: impl Fn(&crate::sim::Sample) -> Vec<f64>,
) -> Panel {
    let mut header = vec!["t_s".to_string(), "flow_id".to_string()];
    header.extend(columns.iter().map(|c| c.to_string()));
    let mut rows = Vec::new();
    for (t, row) in trace.times.iter().zip(&trace.samples) {
        for (s, f) in row.iter().zip(&trace.flows) {
            let mut r = vec![format_sig9(*t), f.id.clone()];
            r.extend(values(s).into_iter().map(format_sig9));
            rows.push(r);
        }
    }
    Panel {
        file,
        title,
        x_label: "time (s)",
        y_label,
        header,
        rows,
    }
}

/// RTT quantile levels: 5 %, 10 %, ..., 95 %.
pub fn quantile_levels() -> Vec<u32> {
    (1..=19).map(|k| 5 * k).collect()
}

fn rtt_quantile_panel(trace: &SimTrace, steady_fraction: f64) -> Panel {
    let levels = quantile_levels();
    let mut header = vec!["flow_id".to_string()];
    header.extend(levels.iter().map(|l| format!("q{l:02}")));
    let start = window_start(trace.times.len(), steady_fraction);
    let rows = trace
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let rtt = crate::report::window_series(trace, i, start, |s| s.rtt);
            let mut r = vec![f.id.clone()];
            r.extend(levels.iter().map(|&l| format_sig9(percentile(&rtt, l as f64))));
            r
        })
        .collect();
    Panel {
        file: "rtt_quantiles.csv",
        title: "RTT distribution over the steady window",
        x_label: "quantile",
        y_label: "RTT (s)",
        header,
        rows,
    }
}

/// Writes one CSV per panel plus `manifest.json`; returns the files written.
pub fn emit_plot_data(trace: &SimTrace, report: &SummaryReport, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    if trace.is_empty() {
        return Err(OutputError::EmptyTrace);
    }
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let panels = [
        time_series_panel(trace, "throughput.csv", "Throughput", "rate (bit/s)", &["x_bps", "theta_eff_bps"], |s| {
            vec![s.x, s.theta_eff]
        }),
        time_series_panel(
            trace,
            "pacing_delivery.csv",
            "Pacing rate and delivered rate",
            "rate (bit/s)",
            &["pacing_bps", "delivered_bps"],
            |s| vec![s.pacing, s.theta_eff],
        ),
        rtt_quantile_panel(trace, report.steady_fraction),
        time_series_panel(
            trace,
            "drops.csv",
            "Cumulative dropped or marked bits",
            "bits",
            &["drop_bits_cum"],
            |s| vec![s.drop_cum],
        ),
    ];
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for p in panels {
        let header: Vec<&str> = p.header.iter().map(String::as_str).collect();
        let path = dir.join(p.file);
        write_file(&path, &csv_bytes(&header, p.rows)?)?;
        written.push(path);
        entries.push(PanelEntry {
            file: p.file.to_string(),
            title: p.title.to_string(),
            x_label: p.x_label.to_string(),
            y_label: p.y_label.to_string(),
            columns: p.header,
        });
    }
    let manifest = Manifest {
        scenario: trace.scenario.clone(),
        config_hash: trace.config_hash.clone(),
        files: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_file(&path, &json)?;
    written.push(path);
    Ok(written)
}

/// Writes the summary report as pretty JSON.
pub fn emit_summary(report: &SummaryReport, path: &Path) -> Result<(), OutputError> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write_file(path, &json)
}
