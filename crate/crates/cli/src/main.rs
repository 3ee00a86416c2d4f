use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use hierarchia_cli::config::{parse_seed, Config, EXPERIMENTS};
use hierarchia_cli::experiments::{resolve_seed, run};
use hierarchia_cli::{CliError, SEED_ENV};

/// Runs one experiment and writes its data files, report.json, checks.csv
/// and the fully resolved run.cfg into the output directory.
///
/// Exit status: 0 when every check passes, 1 when a check fails, 2 on a
/// validation or resource error.
#[derive(Parser, Debug)]
#[command(name = "hierarchia", version)]
struct Args {
    /// One of walk, feller, twolevel, cascade, genealogy, spatial, verify-all.
    /// Overrides `experiment` in the config file.
    experiment: Option<String>,
    /// Config file (`key = value` lines with `[section]` headers).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed, decimal or 0x-hex. Beats the environment and the config.
    #[arg(long, value_parser = parse_seed_arg)]
    seed: Option<u64>,
    /// Output directory (default: `out` from the config, else `results`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot data format, csv or json.
    #[arg(long)]
    format: Option<String>,
}

fn parse_seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("hierarchia: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(args: Args) -> Result<bool, CliError> {
    let mut config = match &args.config {
        Some(p) => Config::parse(&std::fs::read_to_string(p)?)?,
        None => Config::default(),
    };
    if let Some(e) = &args.experiment {
        if !EXPERIMENTS.contains(&e.as_str()) {
            return Err(CliError::Validation(format!("unknown experiment `{e}`; expected one of {}", EXPERIMENTS.join(", "))));
        }
        config.global.insert("experiment".into(), e.clone());
    }
    if let Some(f) = &args.format {
        f.parse::<hierarchia_cli::config::Format>()?;
        config.global.insert("format".into(), f.clone());
    }
    let out = args.out.or_else(|| config.global.get("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("results"));
    config.global.insert("out".into(), out.display().to_string());
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(args.seed, env.as_deref(), &config)?;

    let start = Instant::now();
    let mut output = run(&mut config, seed)?;
    output.report.wall_clock_seconds = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&out)?;
    for (name, contents) in &output.files {
        std::fs::write(out.join(name), contents)?;
    }
    let report = &output.report;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(report).expect("report serializes"))?;
    std::fs::write(out.join("checks.csv"), report.checks_csv())?;
    std::fs::write(out.join("run.cfg"), &report.config)?;

    for c in &report.checks {
        println!("{}", c.line());
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} files to {} in {:.1}s (seed {seed})", output.files.len() + 3, out.display(), report.wall_clock_seconds);
    Ok(report.all_pass())
}
