use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyson_cascade_cli::commands;
use dyson_cascade_cli::config::{parse_suites, OUT_ENV};
use dyson_cascade_cli::error::{CliError, EXIT_PASS, EXIT_STATISTICAL, EXIT_USAGE};
use dyson_cascade_cli::render::report_line;
use dyson_cascade_cli::RunConfig;

/// Grow, measure and verify hierarchical cascade measures.
///
/// Settings come from defaults, then `--config FILE` (key = value lines),
/// then flags. Every output is a function of the settings and the seed.
#[derive(Debug, Parser)]
#[command(name = "dyson-cascade", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow one realization and write it as JSON.
    Grow {
        #[command(flatten)]
        common: Common,
        /// Continue growing a stored realization instead of starting a new one.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
    },
    /// Run verification suites; exit 0 iff all pass.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated suites, or "all".
        #[arg(long)]
        suite: Option<String>,
        /// Stored realization to re-check in the coarse-fine suite.
        #[arg(long, value_name = "FILE")]
        realization: Option<PathBuf>,
    },
    /// Write the density table (and plot) of a stored realization.
    Measure {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        realization: PathBuf,
        /// Depth to tabulate; defaults to the deepest stored level.
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long)]
        no_svg: bool,
    },
    /// Fractional-moment curve and singularity diagnostic.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Run the singularity probe on this realization instead of a fresh one.
        #[arg(long, value_name = "FILE")]
        realization: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    wbar: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Ward identity exponent.
    #[arg(long)]
    ward_s: Option<f64>,
    /// Fractional moment exponent, in (0, 1/2).
    #[arg(long)]
    moment_s: Option<f64>,
    #[arg(long)]
    singularity_depth: Option<u32>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => { $( if let Some(v) = self.$field.clone() { cfg.$field = v; } )* };
        }
        apply!(wbar, rho, level, replicates, seed, threads, ward_s, moment_s, singularity_depth, out);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Grow { common, resume } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            let (path, summary) = commands::grow(&cfg, resume.as_deref())?;
            for line in summary {
                println!("{line}");
            }
            println!("wrote {}", path.display());
            Ok(EXIT_PASS)
        }
        Command::Verify { common, suite, realization } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = suite {
                cfg.suites = parse_suites(&s)?;
            }
            if realization.is_some() {
                cfg.realization = realization;
            }
            cfg.validate()?;
            let outcome = commands::verify(&cfg)?;
            for r in &outcome.reports {
                println!("{}", report_line(r));
                if let Some(e) = r.metadata.get("error") {
                    println!("     error: {e}");
                }
            }
            let failed = outcome.reports.iter().filter(|r| !r.passed).count();
            println!("{} of {} checks passed; reports in {}", outcome.reports.len() - failed, outcome.reports.len(), cfg.out.display());
            Ok(outcome.exit_code)
        }
        Command::Measure { common, realization, depth, no_svg } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            for path in commands::measure(&cfg, &realization, depth, !no_svg)? {
                println!("wrote {}", path.display());
            }
            Ok(EXIT_PASS)
        }
        Command::Stats { common, realization } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            let outcome = commands::stats(&cfg, realization.as_deref())?;
            println!("{}", report_line(&outcome.decay));
            println!("singularity diagnostic: {}", outcome.singularity_label);
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            Ok(if outcome.decay.passed { EXIT_PASS } else { EXIT_STATISTICAL })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_PASS as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
