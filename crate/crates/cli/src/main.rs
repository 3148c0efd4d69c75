use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kerrcat::gates::GateMode;
use kerrcat_cli::{estimate_resources, load_spec, resources::gib, run, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "kerrcat", version, about = "Kerr-cat MS gate experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Effective,
}

impl From<ModeArg> for GateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => GateMode::Full,
            ModeArg::Effective => GateMode::Effective,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every grid point and write `<output>.csv` and a manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: $KERRCAT_WORKERS, else all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Print the memory and step estimate without running.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, workers, seed, mode } => {
            let options = RunOptions { workers, seed, mode: mode.map(Into::into) };
            run(&config, &out, &options).map(|r| {
                println!("wrote {} rows to {}", r.rows, r.csv.display());
                println!("manifest {}", r.manifest.display());
            })
        }
        Command::Estimate { config, mode } => estimate(&config, mode.map(Into::into)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kerrcat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn estimate(config: &std::path::Path, mode: Option<GateMode>) -> Result<(), CliError> {
    let spec = load_spec(config)?;
    let est = estimate_resources(&spec, mode)?;
    println!("points       {}", est.points);
    println!("peak dims    {:?}", est.peak_dims);
    println!("peak bytes   {} ({:.3} GiB)", est.peak_bytes, gib(est.peak_bytes));
    println!("ceiling      {} ({:.3} GiB)", est.ceiling_bytes, gib(est.ceiling_bytes));
    println!("total steps  ~{}", est.total_steps);
    est.check()
}
