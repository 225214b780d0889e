use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_growth_cli::acceptance;
use robust_growth_cli::commands;
use robust_growth_cli::report::Report;
use robust_growth_cli::scenario::Scenario;
use robust_growth_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "robust-growth", version, about = "Robust long-term growth rates in a factor market")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the number of simulated paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Growth rate, value function and feedback maps.
    Solve,
    /// Monte Carlo growth estimates per risk aversion, strategy and control.
    Simulate,
    /// Decay rates of outperformance probabilities and nearly optimal strategies.
    Outperform,
    /// Runs the acceptance suite.
    Verify,
}

fn load(cli: &Cli) -> Result<Scenario, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let src = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = robust_growth_cli::config::ScenarioConfig::parse(&src)
        .map_err(|e| prefix(e, path))?;
    config.override_simulation(cli.seed, cli.paths);
    let scn = Scenario::from_config(config, &src).map_err(|e| prefix(e, path))?;
    scn.require_lambdas(&src).map_err(|e| prefix(e, path))?;
    Ok(scn)
}

fn prefix(e: CliError, path: &std::path::Path) -> CliError {
    match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn emit(cli: &Cli, report: &Report, hash: &str) -> Result<(), CliError> {
    let io_err = |context: String| move |source| CliError::Io { context, source };
    match &cli.out {
        Some(path) => fs::write(path, report.to_csv(hash)).map_err(io_err(format!("writing {}", path.display()))),
        None => match report.write_to(hash, io::stdout().lock()) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            other => other.map_err(io_err("writing standard output".into())),
        },
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Verify => {
            let quiet = cli.quiet;
            let results = acceptance::run_all(|r| {
                if !quiet {
                    eprintln!("{r}");
                }
            });
            let mut report = Report::new(&["id", "name", "passed", "detail"]);
            for r in &results {
                report.push(vec![r.id.to_string(), r.name.to_string(), r.passed.to_string(), r.detail.clone()]);
            }
            if cli.out.is_some() {
                emit(cli, &report, "none")?;
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::Acceptance(failed));
            }
            Ok(())
        }
        ref cmd => {
            let scn = load(cli)?;
            if !cli.quiet {
                eprintln!("scenario {} ({} risk aversion values)", scn.config.hash(), scn.lambdas.len());
            }
            let report = match cmd {
                Command::Solve => commands::solve(&scn)?,
                Command::Simulate => commands::simulate(&scn)?,
                Command::Outperform => commands::outperform(&scn)?,
                Command::Verify => unreachable!(),
            };
            emit(cli, &report, &scn.config.hash())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
