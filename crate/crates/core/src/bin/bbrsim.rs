use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use bbr_fluid::output::{self, SUMMARY_FILE, TRACE_FILE};
use bbr_fluid::report::{summarize, SummaryReport};
use bbr_fluid::scenario::{parse_scenario_str, KeyPolicy, Scenario, ScenarioError};
use bbr_fluid::sim::{run_scenario, SimError};

const EXIT_OTHER: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_INTEGRATOR: u8 = 3;

#[derive(Parser)]
#[command(name = "bbrsim", version, about = "Fluid-model BBR / AQM / 802.11ax simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        /// Override the integration step (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Override the simulated duration (s).
        #[arg(long)]
        duration: Option<f64>,
        /// Write trace.csv.
        #[arg(long)]
        csv: bool,
        /// Write plot data files and manifest.json.
        #[arg(long)]
        plots: bool,
        /// Write summary.json and print the summary.
        #[arg(long)]
        summary: bool,
        #[arg(long)]
        lenient: bool,
    },
    /// Run every *.json scenario in a directory.
    Sweep {
        dir: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        lenient: bool,
    },
    /// Parse and validate a scenario, then print its canonical form.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Output root; each scenario writes to <out>/<name>/.
    #[arg(long, env = "BBRSIM_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Integrator(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Integrator(_) => EXIT_INTEGRATOR,
            Failure::Other(_) => EXIT_OTHER,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Integrator(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Other(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Integrator(e.to_string())
    }
}

impl From<output::OutputError> for Failure {
    fn from(e: output::OutputError) -> Self {
        Failure::Other(e.to_string())
    }
}

fn policy(lenient: bool) -> KeyPolicy {
    if lenient {
        KeyPolicy::Lenient
    } else {
        KeyPolicy::Strict
    }
}

fn load(path: &Path, lenient: bool) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Other(format!("cannot read {}: {e}", path.display())))?;
    let (scenario, unknown) = parse_scenario_str(&text, policy(lenient))
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    for key in unknown {
        eprintln!("warning: {}: ignoring unknown key `{key}`", path.display());
    }
    Ok(scenario)
}

#[derive(Clone, Copy)]
struct Outputs {
    csv: bool,
    plots: bool,
    summary: bool,
}

fn run_one(scenario: &Scenario, out_root: &Path, outputs: Outputs) -> Result<SummaryReport, Failure> {
    let trace = run_scenario(scenario)?;
    let report = summarize(&trace, scenario.report.steady_fraction).map_err(|e| Failure::Other(e.to_string()))?;
    let dir = out_root.join(&scenario.name);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Other(format!("cannot create {}: {e}", dir.display())))?;
    if outputs.csv {
        output::emit_csv(&trace, &dir.join(TRACE_FILE))?;
    }
    if outputs.plots {
        output::emit_plot_data(&trace, &report, &dir.join("plots"))?;
    }
    if outputs.summary {
        output::emit_summary(&report, &dir.join(SUMMARY_FILE))?;
    }
    Ok(report)
}

fn print_summary(r: &SummaryReport) {
    println!("scenario {} ({}), steady window from {:.3} s", r.scenario, &r.config_hash[..12], r.window_start_s);
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>14} {:>10}",
        "flow", "mean Mb/s", "p50 Mb/s", "p95 Mb/s", "RTT ms", "p50 ms", "jitter ms", "drop bits", "align"
    );
    for f in &r.flows {
        println!(
            "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.2} {:>10.2} {:>10.3} {:>14.0} {:>10.4}",
            f.id,
            f.throughput_mean_mbps,
            f.throughput_median_mbps,
            f.throughput_p95_mbps,
            f.rtt_mean_ms,
            f.rtt_median_ms,
            f.jitter_ms,
            f.drop_bits,
            f.alignment
        );
    }
    println!("Jain index {:.4}", r.jain_index);
}

fn simulate(
    path: &Path,
    out: &Path,
    dt: Option<f64>,
    duration: Option<f64>,
    mut outputs: Outputs,
    lenient: bool,
) -> Result<(), Failure> {
    let mut scenario = load(path, lenient)?;
    if let Some(dt) = dt {
        scenario.integrator.dt = dt;
    }
    if let Some(d) = duration {
        scenario.duration = d;
    }
    scenario.validate()?;
    if !(outputs.csv || outputs.plots || outputs.summary) {
        outputs = Outputs {
            csv: true,
            plots: true,
            summary: true,
        };
    }
    let report = run_one(&scenario, out, outputs)?;
    if outputs.summary {
        print_summary(&report);
    }
    println!("wrote {}", out.join(&scenario.name).display());
    Ok(())
}

fn sweep(dir: &Path, out: &Path, jobs: Option<usize>, lenient: bool) -> Result<(), Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Other(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Other(format!("no *.json scenarios in {}", dir.display())));
    }
    let workers = jobs
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .clamp(1, files.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SummaryReport, Failure>>>> = Mutex::new((0..files.len()).map(|_| None).collect());
    let all = Outputs {
        csv: true,
        plots: true,
        summary: true,
    };
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = files.get(k) else { break };
                let r = load(path, lenient).and_then(|sc| run_one(&sc, out, all));
                results.lock().expect("results lock")[k] = Some(r);
            });
        }
    });
    let mut worst: Option<Failure> = None;
    for (path, r) in files.iter().zip(results.into_inner().expect("results lock")) {
        match r.expect("every scenario ran") {
            Ok(rep) => println!("ok    {:<28} Jain {:.4}", rep.scenario, rep.jain_index),
            Err(f) => {
                println!("FAIL  {}: {}", path.display(), f.message());
                if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                    worst = Some(f);
                }
            }
        }
    }
    match worst {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn validate(path: &Path, lenient: bool) -> Result<(), Failure> {
    let scenario = load(path, lenient)?;
    println!("{}", scenario.to_canonical_json());
    eprintln!("valid: {} (sha256 {})", scenario.name, scenario.config_hash());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            out,
            dt,
            duration,
            csv,
            plots,
            summary,
            lenient,
        } => simulate(&scenario, &out.out, dt, duration, Outputs { csv, plots, summary }, lenient),
        Command::Sweep { dir, out, jobs, lenient } => sweep(&dir, &out.out, jobs, lenient),
        Command::Validate { scenario, lenient } => validate(&scenario, lenient),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
