//! `contention`: run, sweep, lower-bound, verify and replay experiments.

mod settings;
mod tracefile;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contention_core::experiments::{
    blocking_experiment, energy_bound, energy_of, latency_bound, max_latency, run_trials, scaling_check,
    summarize, summary_csv_row, write_ndjson, BlockingExperiment, SUMMARY_CSV_HEADER,
};
use contention_core::invariants::run_suite;
use contention_core::stats::median;
use contention_core::{Error, Result};

use settings::Settings;

#[derive(Parser)]
#[command(name = "contention", version, about = "Contention resolution on a shared channel without collision detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one batch of trials and emit NDJSON trial records.
    Run(Flags),
    /// Run a protocol over a grid of k and compare with its asymptotic bound.
    Sweep(Flags),
    /// Blocking experiment against SublinearDecrease(b).
    Lowerbound(Flags),
    /// Run the invariant suite.
    Verify,
    /// Re-execute a stored trace file and compare it byte by byte.
    Replay { trace: PathBuf },
}

/// Every flag mirrors a config-file key of the same name.
#[derive(Args, Default)]
struct Flags {
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// nak | sublinear | decrease-slowly | sawtooth | adaptive
    #[arg(long)]
    protocol: Option<String>,
    /// batch | trickle:GAP | uniform:HORIZON | blocking:frontloaded,GAMMA |
    /// blocking:twophase,GAMMA,T1,T2 | wake-on-success:BURST
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Round cap per trial, or `auto`.
    #[arg(long)]
    max_rounds: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    b: Option<String>,
    /// on | off
    #[arg(long)]
    ack: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    sawtooth_initial_phase: Option<String>,
    #[arg(long)]
    control_exponent: Option<String>,
    /// Output path, `-` for standard output.
    #[arg(long)]
    output: Option<String>,
    /// Write the trace file of one trial here.
    #[arg(long)]
    trace_output: Option<String>,
    #[arg(long)]
    trace_trial: Option<String>,
    /// Exit 1 unless the success fraction reaches this threshold.
    #[arg(long)]
    assert: Option<String>,
    /// Comma-separated k values, e.g. 16,64,256.
    #[arg(long)]
    k_grid: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// frontloaded | twophase
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    t1: Option<String>,
    #[arg(long)]
    t2: Option<String>,
}

impl Flags {
    fn settings(&self) -> Result<Settings> {
        let base = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let mut over = Settings::default();
        let pairs = [
            ("protocol", &self.protocol),
            ("adversary", &self.adversary),
            ("k", &self.k),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("max-rounds", &self.max_rounds),
            ("eta", &self.eta),
            ("c", &self.c),
            ("b", &self.b),
            ("ack", &self.ack),
            ("q", &self.q),
            ("sawtooth-initial-phase", &self.sawtooth_initial_phase),
            ("control-exponent", &self.control_exponent),
            ("output", &self.output),
            ("trace-output", &self.trace_output),
            ("trace-trial", &self.trace_trial),
            ("assert", &self.assert),
            ("k-grid", &self.k_grid),
            ("gamma", &self.gamma),
            ("variant", &self.variant),
            ("t1", &self.t1),
            ("t2", &self.t2),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                over.set(key, v)?;
            }
        }
        Ok(base.merge(over))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Precondition(_) | Error::BlockingBudget(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn open_output(path: &str) -> Result<Box<dyn Write>> {
    Ok(if path == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(File::create(path)?))
    })
}

fn experiment_keys(s: &Settings, extra: &[&'static str]) -> Vec<&'static str> {
    let mut keys = vec!["protocol", "adversary", "k", "trials", "seed", "max-rounds", "eta"];
    keys.extend(s.protocol_keys());
    keys.extend_from_slice(extra);
    keys
}

fn cmd_run(flags: &Flags) -> Result<ExitCode> {
    let s = flags.settings()?;
    let cfg = s.experiment()?;
    let threshold: Option<f64> = s.get("assert")?;
    eprint!("{}", s.banner(&experiment_keys(&s, &["output", "trace-output", "trace-trial", "assert"])));

    let records = run_trials(&cfg)?;
    let mut out = open_output(s.raw("output").unwrap_or("-"))?;
    write_ndjson(&records, &mut out)?;
    out.flush()?;

    if let Some(path) = s.raw("trace-output") {
        let trial: u64 = s.require("trace-trial")?;
        let bytes = tracefile::render(&s, &experiment_keys(&s, &[]), trial)?;
        std::fs::write(path, bytes)?;
    }

    let summary = summarize(&records, cfg.k, cfg.eta);
    let (p, a) = (cfg.protocol.name(), cfg.adversary.to_string());
    eprintln!("{SUMMARY_CSV_HEADER}");
    eprintln!("{}", summary_csv_row(cfg.k, p, &a, "latency", &summary.latency, summary.success_fraction, None));
    eprintln!("{}", summary_csv_row(cfg.k, p, &a, "energy", &summary.energy, summary.success_fraction, None));
    eprintln!(
        "# success fraction {:.4} (95% interval {:.4}..{:.4}), whp target {:.4}",
        summary.success_fraction, summary.success_interval.0, summary.success_interval.1, summary.whp_target
    );
    match threshold {
        Some(t) if summary.success_fraction < t => {
            eprintln!("# assertion failed: success fraction below {t}");
            Ok(ExitCode::from(1))
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn cmd_sweep(flags: &Flags) -> Result<ExitCode> {
    let mut s = flags.settings()?;
    let grid = s.k_grid()?;
    if grid.len() < 3 {
        return Err(Error::Config(format!("k-grid needs at least 3 points, got {}", grid.len())));
    }
    // Reject a malformed grid before spending time on trials.
    scaling_check(&grid.iter().map(|&k| (k, 1.0)).collect::<Vec<_>>(), |_| 1.0, 2.0)?;
    let mut keys = experiment_keys(&s, &["k-grid", "output"]);
    keys.retain(|k| *k != "k");
    eprint!("{}", s.banner(&keys));

    let mut lat = Vec::new();
    let mut energy = Vec::new();
    let mut rows = Vec::new();
    for &k in &grid {
        s.set("k", &k.to_string())?;
        let cfg = s.experiment()?;
        let records = run_trials(&cfg)?;
        let summary = summarize(&records, k, cfg.eta);
        lat.push((k, median(&records.iter().map(max_latency).collect::<Vec<_>>())));
        energy.push((k, median(&records.iter().map(|r| energy_of(r) as f64).collect::<Vec<_>>())));
        rows.push((cfg, summary));
    }
    let protocol = rows[0].0.protocol.clone();
    let lat_report = scaling_check(&lat, latency_bound(&protocol), 2.0)?;
    let energy_report = scaling_check(&energy, energy_bound(&protocol), 2.0)?;

    let mut out = open_output(s.raw("output").unwrap_or("-"))?;
    writeln!(out, "{SUMMARY_CSV_HEADER}")?;
    for (cfg, summary) in &rows {
        let a = cfg.adversary.to_string();
        let p = cfg.protocol.name();
        let f = summary.success_fraction;
        writeln!(out, "{}", summary_csv_row(cfg.k, p, &a, "latency", &summary.latency, f, Some(lat_report.fitted_c)))?;
        writeln!(out, "{}", summary_csv_row(cfg.k, p, &a, "energy", &summary.energy, f, Some(energy_report.fitted_c)))?;
    }
    out.flush()?;

    for (name, report) in [("latency", &lat_report), ("energy", &energy_report)] {
        eprintln!("# {name}: k, median, bound, ratio");
        for r in &report.rows {
            eprintln!("# {:>8} {:>12.1} {:>14.1} {:>8.4}", r.k, r.metric, r.bound, r.ratio);
        }
        eprintln!(
            "# {name}: fitted C {:.4}, spread {:.3} ({})",
            report.fitted_c,
            report.spread,
            if report.pass { "stable" } else { "unstable" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_lowerbound(flags: &Flags) -> Result<ExitCode> {
    let s = flags.settings()?;
    let exp = BlockingExperiment {
        k: s.require("k")?,
        gamma: s.require("gamma")?,
        b: s.require("b")?,
        trials: s.require("trials")?,
        master_seed: s.require("seed")?,
        variant: s.variant()?,
        t1: s.get("t1")?,
        t2: s.require("t2")?,
    };
    eprint!("{}", s.banner(&["k", "gamma", "b", "trials", "seed", "variant", "t1", "t2"]));
    let report = blocking_experiment(&exp)?;
    println!("{}", serde_json::to_string(&report)?);
    eprintln!(
        "# window [1, {}], min σ̂ {:.4} at t = {} (threshold {:.4}), zero-success fraction {:.4}",
        report.window_end, report.sigma_hat_min, report.sigma_hat_argmin, report.threshold, report.zero_success_fraction
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify() -> Result<ExitCode> {
    let checks = run_suite()?;
    let mut failed = 0;
    for c in &checks {
        if c.ok {
            println!("PASS {}", c.name);
        } else {
            failed += 1;
            println!("FAIL {}: {}", c.name, c.detail);
        }
    }
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_replay(path: &PathBuf) -> Result<ExitCode> {
    let stored = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let fresh = tracefile::regenerate(&stored)?;
    match tracefile::first_difference(&stored, &fresh) {
        None => {
            eprintln!("# replay identical ({} bytes)", stored.len());
            Ok(ExitCode::SUCCESS)
        }
        Some(line) => {
            eprintln!("# replay mismatch at line {line}");
            Ok(ExitCode::from(4))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(f) => cmd_run(f),
        Command::Sweep(f) => cmd_sweep(f),
        Command::Lowerbound(f) => cmd_lowerbound(f),
        Command::Verify => cmd_verify(),
        Command::Replay { trace } => cmd_replay(trace),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
