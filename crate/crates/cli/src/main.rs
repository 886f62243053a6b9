use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trimlstat_cli::{execute, Command, Options};

#[derive(Parser)]
#[command(name = "trimlstat", version, about = "Trimmed L-statistic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify the decomposition identity over a batch of replicates.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Also write the first sample and its full report.
        #[arg(long)]
        sample: bool,
    },
    /// Centering and variance constants by quadrature.
    Constants(Common),
    /// Tail-ratio tables of the normalized statistic.
    Tails(Common),
    /// n·Var/σ² along the n ladder.
    VarianceRatio(Common),
    /// Scaling of the remainder terms along the n ladder.
    Remainder(Common),
    /// Bound calculators against simulated frequencies.
    Bounds(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Tsv,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    replicates: Option<u64>,
    /// Sample size, or a comma-separated ladder.
    #[arg(long, value_name = "N")]
    n: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Common {
    fn options(self, sample: bool) -> Options {
        Options {
            config: self.config,
            seed: self.seed,
            workers: self.workers,
            out: self.out,
            replicates: self.replicates,
            n: self.n,
            tsv: matches!(self.format, Format::Tsv),
            sample,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, opts) = match cli.command {
        Cmd::Decompose { common, sample } => (Command::Decompose, common.options(sample)),
        Cmd::Constants(c) => (Command::Constants, c.options(false)),
        Cmd::Tails(c) => (Command::Tails, c.options(false)),
        Cmd::VarianceRatio(c) => (Command::VarianceRatio, c.options(false)),
        Cmd::Remainder(c) => (Command::Remainder, c.options(false)),
        Cmd::Bounds(c) => (Command::Bounds, c.options(false)),
    };
    match execute(cmd, &opts, std::env::vars()) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("{}: {}", cmd.name(), if outcome.pass { "PASS" } else { "FAIL" });
            ExitCode::from(u8::from(!outcome.pass))
        }
        Err(e) => {
            eprintln!("trimlstat {}: {e}", cmd.name());
            ExitCode::from(e.exit_code())
        }
    }
}
