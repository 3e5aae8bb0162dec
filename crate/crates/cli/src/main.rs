mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use pattern_qkd::audit::run_audit;
use pattern_qkd::finite_key::{rate_sweep, write_sweep_csv};
use pattern_qkd::model::parse_types;
use pattern_qkd::pipeline::{run_monte_carlo, MonteCarloConfig};
use pattern_qkd::source::sample_pulse_types;
use pattern_qkd::trace::{
    analyze_with_reference, optical_trace, pattern_statistics, pulse_area, read_trace_csv, synthesize_drive,
    write_trace_csv, PatternStats,
};
use pattern_qkd::SystemParams;
use serde::Serialize;

use config::{parse_grid, Mode, RunConfig};

const EXIT_INVALID: u8 = 1;
const EXIT_AUDIT: u8 = 2;

/// Decoy-state QKD simulator with pattern sifting.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fiber lengths in km: `a,b,c` or `start:stop:step`.
    #[arg(long)]
    distance_grid: Option<String>,
    /// Window factors: `a,b,c` or `start:stop:step`.
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long)]
    pulses: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fiber length of a Monte-Carlo run.
    #[arg(long)]
    length_km: Option<f64>,
    /// Output directory.
    #[arg(long, env = "PATTERN_QKD_OUT")]
    out: Option<PathBuf>,
}

impl Cli {
    fn effective_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(g) = &self.distance_grid {
            c.distance_grid = parse_grid(g).context("--distance-grid")?;
        }
        if let Some(g) = &self.t_grid {
            c.t_grid = parse_grid(g).context("--t-grid")?;
        }
        if let Some(n) = self.pulses {
            c.pulses = n;
            c.trace.pulses = n;
        }
        if let Some(s) = self.seed {
            c.seed = s;
            c.trace.model.seed = s;
        }
        if let Some(l) = self.length_km {
            c.length_km = l;
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        c.out.get_or_insert_with(|| PathBuf::from("."));
        Ok(c)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn sweep(c: &RunConfig, out: &Path) -> Result<()> {
    let rows = rate_sweep(&c.distance_grid, &c.t_grid, &c.system, &c.table, c.method)?;
    let path = out.join("sweep.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    write_json(&out.join("sweep.json"), &rows)?;
    println!("{} cells -> {}", rows.len(), path.display());
    Ok(())
}

fn monte_carlo(c: &RunConfig, out: &Path) -> Result<()> {
    let mc = MonteCarloConfig {
        pulses: c.pulses,
        length_km: c.length_km,
        seed: c.seed,
        sift: c.sift,
        fluctuation: None,
        method: c.method,
    };
    let report = run_monte_carlo(&mc, &c.system, &c.table)?;
    write_json(&out.join("monte_carlo.json"), &report)?;
    println!(
        "{} pulses at {} km: PS kept {}, IS kept {}, key {} + {} bits",
        report.pulses, report.length_km, report.sift.n_ps, report.sift.n_is, report.even.length, report.odd.length
    );
    Ok(())
}

fn audit(c: &RunConfig, out: &Path) -> Result<bool> {
    let report = run_audit(&c.audit, &c.system, &c.table)?;
    write_json(&out.join("audit.json"), &report)?;
    println!(
        "audit {}: PS residual {:.2e}, non-PS residual {:.2e}, budget {:e}",
        if report.pass { "passed" } else { "FAILED" },
        report.eq7_residual_ps,
        report.eq7_residual_non_ps,
        report.total_budget
    );
    Ok(report.pass)
}

#[derive(Serialize)]
struct TraceReport<'a> {
    band_limited: &'a PatternStats,
    ideal: Option<&'a PatternStats>,
}

fn trace(c: &RunConfig, out: &Path) -> Result<()> {
    let model = &c.trace.model;
    let (stats, ideal) = match (&c.trace.input, &c.trace.types) {
        (Some(input), Some(types)) => {
            let tr = read_trace_csv(BufReader::new(File::open(input)?), model.period_s)
                .with_context(|| format!("reading {}", input.display()))?;
            let text = fs::read_to_string(types)?;
            let symbols: String = text.chars().filter(|ch| !ch.is_whitespace()).collect();
            let types = parse_types(&symbols)?;
            (pattern_statistics(&pulse_area(&tr)?, &types)?, None)
        }
        _ => {
            // uniform pattern so every predecessor class is well populated
            let p = SystemParams { p_signal: 1.0 / 3.0, p_decoy: 1.0 / 3.0, p_vacuum: 1.0 / 3.0, ..c.system.clone() };
            let types = sample_pulse_types(c.trace.pulses, &p, c.seed);
            let head = &types[..c.trace.dump_slots.min(types.len())];
            let (d1, d2) = synthesize_drive(head, model)?;
            let mut w = BufWriter::new(File::create(out.join("trace.csv"))?);
            write_trace_csv(&mut w, &optical_trace(&d1, &d2, model)?)?;
            w.flush()?;
            let symbols: String = head.iter().map(|a| a.symbol()).collect();
            fs::write(out.join("trace_types.txt"), symbols + "\n")?;
            let (band, ideal) = analyze_with_reference(&types, model)?;
            (band, Some(ideal))
        }
    };
    write_json(&out.join("trace_stats.json"), &TraceReport { band_limited: &stats, ideal: ideal.as_ref() })?;
    let table = stats.format_table();
    fs::write(out.join("trace_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<u8> {
    let c = cli.effective_config()?;
    c.validate()?;
    let out = c.out.clone().expect("set by effective_config");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let echo = c.to_toml()?;
    debug_assert_eq!(RunConfig::from_toml(&echo)?, c);
    fs::write(out.join("config.toml"), &echo)?;
    match c.mode {
        Mode::Sweep => sweep(&c, &out)?,
        Mode::MonteCarlo => monte_carlo(&c, &out)?,
        Mode::Audit => {
            if !audit(&c, &out)? {
                return Ok(EXIT_AUDIT);
            }
        }
        Mode::Trace => trace(&c, &out)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
