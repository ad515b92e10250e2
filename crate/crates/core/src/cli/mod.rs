//! Command-line runner: `tblab <subcommand> --config <path> [--out <dir>]`.
//!
//! Exit codes: 0 when every verdict passes, 1 when any verdict fails (files
//! are still written), 2 on a configuration or runtime error (nothing is
//! written).

pub mod commands;
pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};

use crate::error::{LabError, Result};
use crate::harness::{Verdict, CSV_HEADER};
use commands::{execute, Artifacts, Context, Outcome};
use config::ExperimentConfig;

pub const THREADS_VAR: &str = "TBLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tblab", version, about = "Numerical experiments for T(1) and T(b) theorems")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Flat key = value experiment file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    CheckKernel,
    Bmo,
    ParaAccretive,
    UkBuild,
    Stein,
    Wbp,
    SweepBmo,
    FarField,
    BilinearDecomp,
    Report,
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match try_run(cli) {
        Ok(arts) => {
            print!("{}", summary(&arts.outcomes));
            if arts.failed() {
                1
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn try_run(cli: &Cli) -> Result<Artifacts> {
    let cfg = ExperimentConfig::from_path(&cli.config)?;
    let out_dir = match &cli.out {
        Some(p) => p.clone(),
        None => cfg.resolve(&cfg.output_dir),
    };
    let threads = thread_count()?;
    let mut arts = if cli.command == Command::Report {
        report(&out_dir)?
    } else {
        let ctx = Context::new(cfg)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.unwrap_or(0))
            .build()
            .map_err(|e| LabError::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| execute(cli.command, &ctx))?
    };
    let name = if cli.command == Command::Report { "report.txt" } else { "summary.txt" };
    arts.files.push((name.into(), summary(&arts.outcomes)));
    std::fs::create_dir_all(&out_dir)?;
    for (file, body) in &arts.files {
        std::fs::write(out_dir.join(file), body)?;
    }
    Ok(arts)
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(LabError::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn summary(outcomes: &[Outcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let _ = writeln!(s, "{}: {} ({})", o.name, o.verdict, o.detail);
    }
    let overall = if outcomes.iter().any(|o| o.verdict == Verdict::Fail) { "FAIL" } else { "PASS" };
    let _ = writeln!(s, "overall: {overall}");
    s
}

/// One scaling experiment as read back from a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub target: f64,
    pub constant: f64,
    pub verdict: Verdict,
    /// (R, value) rows in file order.
    pub points: Vec<(f64, f64)>,
}

fn parse_verdict(s: &str) -> Option<Verdict> {
    match s {
        "PASS" => Some(Verdict::Pass),
        "FAIL" => Some(Verdict::Fail),
        "PASS-degenerate" => Some(Verdict::PassDegenerate),
        _ => None,
    }
}

/// Groups the rows of a scaling CSV by experiment, kernel and weights.
pub fn read_series(text: &str, origin: &Path) -> Result<Vec<Series>> {
    let err = |line: usize, msg: &str| LabError::Csv { path: origin.to_path_buf(), msg: format!("line {line}: {msg}") };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(err(1, "not a scaling report"));
    }
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    let mut out: Vec<Series> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(err(i + 2, "expected 13 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 2, &format!("bad number `{s}`")));
        let label = format!("{} {} b0={} b1={} b2={}", f[0], f[1], f[2], f[3], f[4]);
        let (r, value, target, constant) = (num(f[7])?, num(f[8])?, num(f[9])?, num(f[11])?);
        let verdict = parse_verdict(f[12]).ok_or_else(|| err(i + 2, &format!("bad verdict `{}`", f[12])))?;
        let idx = *groups.entry(label.clone()).or_insert_with(|| {
            out.push(Series { label, target, constant, verdict, points: Vec::new() });
            out.len() - 1
        });
        let s = &mut out[idx];
        if s.verdict != verdict || s.target != target {
            return Err(err(i + 2, "verdict or target differs within one experiment"));
        }
        s.points.push((r, value));
    }
    Ok(out)
}

fn slug(label: &str) -> String {
    let mut s: String = label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

/// Rebuilds verdicts and plots from the scaling CSVs already in `dir`.
fn report(dir: &Path) -> Result<Artifacts> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| LabError::Config(format!("cannot read output directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();
    let mut arts = Artifacts::default();
    for path in csvs {
        let text = std::fs::read_to_string(&path)?;
        if !text.starts_with(CSV_HEADER) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
        for s in read_series(&text, &path)? {
            let svg_name = format!("{stem}_{}.svg", slug(&s.label));
            arts.files.push((svg_name.clone(), svg::scaling_plot(&s)));
            arts.outcomes.push(Outcome {
                name: s.label.clone(),
                verdict: s.verdict,
                detail: format!(
                    "{} rows, target {}, constant {:.6}, plot {svg_name}",
                    s.points.len(),
                    s.target,
                    s.constant
                ),
            });
        }
    }
    if arts.outcomes.is_empty() {
        return Err(LabError::Config(format!("no scaling CSV in {}", dir.display())));
    }
    Ok(arts)
}
