use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbm_proxy::app::{self, Overrides, RunPaths};

#[derive(Parser)]
#[command(
    name = "sbm-proxy",
    version,
    about = "Spectral-bin collision-coalescence proxy mini-app"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the initial state and print mask statistics.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Snapshot path (default: output.initial from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step one variant and write the final snapshot and a JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: String,
        #[arg(long, env = "SBMPROXY_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Start from this snapshot instead of generating the case.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Final snapshot path (default: output.snapshot).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report path (default: output.report).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare two snapshots; exit 0 if identical, 1 if not, 2 on shape mismatch.
    Diff { a: PathBuf, b: PathBuf },
    /// Time every configured variant and print speedup ledgers and roofline points.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SBMPROXY_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Report path (default: output.report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let result = match &cli.command {
        Command::Gen { config, out } => app::cmd_gen(config, out.as_deref(), &mut stdout).map(|_| 0),
        Command::Run {
            config,
            variant,
            threads,
            steps,
            input,
            out,
            report,
        } => app::cmd_run(
            config,
            variant,
            Overrides {
                threads: *threads,
                steps: *steps,
            },
            RunPaths {
                input: input.as_deref(),
                snapshot: out.as_deref(),
                report: report.as_deref(),
            },
            &mut stdout,
        )
        .map(|_| 0),
        Command::Diff { a, b } => app::cmd_diff(a, b, &mut stdout).map(|same| if same { 0 } else { 1 }),
        Command::Bench {
            config,
            threads,
            steps,
            out,
        } => app::cmd_bench(
            config,
            Overrides {
                threads: *threads,
                steps: *steps,
            },
            out.as_deref(),
            &mut stdout,
        )
        .map(|_| 0),
    };
    let _ = stdout.flush();
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
