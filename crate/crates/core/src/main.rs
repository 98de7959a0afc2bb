use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use yamabe_lab::cli::{cmd_report, cmd_run, cmd_verify, Overrides, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "yamabe", version, about = "Discrete Yamabe-type flows with eigenvalue tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value text).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed summation order and a single worker thread.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow and write the trace CSV and plots.
    Run(Common),
    /// Run the flow and the configured checks; write a verdict report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Debug aid: demand that every inequality fails (negation harness).
        #[arg(long)]
        reversed: bool,
    },
    /// Render plots and a summary from an existing trace.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn overrides(c: &Common, reversed: bool) -> Overrides {
    Overrides {
        out: c.out.clone(),
        deterministic: c.deterministic,
        seed: c.seed,
        threads: c.threads,
        reversed,
    }
}

fn init_threads(ov: &Overrides) -> bool {
    let threads = ov.threads.or(ov.deterministic.then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return false;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return false;
        }
    }
    true
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(c) => {
            let ov = overrides(&c, false);
            if init_threads(&ov) { cmd_run(&c.config, &ov) } else { EXIT_CONFIG }
        }
        Command::Verify { common, reversed } => {
            let ov = overrides(&common, reversed);
            if init_threads(&ov) { cmd_verify(&common.config, &ov) } else { EXIT_CONFIG }
        }
        Command::Report { trace, out } => cmd_report(&trace, out.as_deref()),
    };
    ExitCode::from(code as u8)
}
