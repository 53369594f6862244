use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use viscokern::config::{load_config, parse_layered, RunConfig, ScenarioKind};
use viscokern::scenarios;

/// Studies for 1-D viscoelasticity with weakly regular relaxation kernels.
#[derive(Debug, Parser)]
#[command(name = "viscokern", version)]
struct Cli {
    /// solve, wave-limit, mollify-study, convergence or energy-audit
    scenario: ScenarioKind,

    /// Configuration file (`section.key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.directory`.
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Start from the scenario's preset; a config file is applied on top.
    #[arg(long)]
    default: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig, String> {
    let preset = if cli.default { cli.scenario.defaults() } else { "" };
    let cfg = match &cli.config {
        Some(path) => load_config(path, preset),
        None if cli.default => parse_layered(preset, "", None),
        None => return Err("either --config <path> or --default is required".into()),
    }
    .map_err(|e| format!("invalid configuration:\n{e}"))?;
    if let Some(name) = cfg.scenario.name {
        if name != cli.scenario {
            return Err(format!(
                "config is for scenario '{name}' but '{}' was requested",
                cli.scenario
            ));
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let out = match scenarios::run(cli.scenario, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cli.scenario);
            return ExitCode::from(2);
        }
    };
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output_directory.clone());
    match out.write(&dir, &cfg.echo()) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: writing to {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    for v in &out.verdicts {
        println!("{}", v.line());
    }
    if out.passed() {
        ExitCode::SUCCESS
    } else {
        eprintln!("{}: {} of {} verdicts failed", cli.scenario, out.verdicts.iter().filter(|v| !v.passed).count(), out.verdicts.len());
        for v in out.verdicts.iter().filter(|v| !v.passed) {
            eprintln!("  {}", v.line());
        }
        ExitCode::from(1)
    }
}
