use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use paircal::cli::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "paircal",
    about = "Pair-prediction calibration experiments: data generation, training, \
             evaluation, distribution-free bounds, and confidence-gated decoding",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's dotted path, e.g. --set train.iterations=100
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
    /// Task name: sin1d, pi, or lake.
    #[arg(long)]
    task: Option<String>,
    /// Random seed (mandatory for reproducibility; defaults to the config's).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, cli::CliError> {
        cli::load_config(
            self.config.as_deref(),
            &self.sets,
            self.task.as_deref(),
            self.seed,
            self.out.as_deref(),
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired dataset as JSONL.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of examples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the pair-prediction MLP (sin1d task).
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Compute calibration metrics and ranking curves.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Run the conservative variance adjustment and emit intervals.
    Bound {
        #[command(flatten)]
        common: Common,
    },
    /// Run a confidence-gated decoder over sampled queries.
    Decode {
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG plots from the result CSVs in the output directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn run() -> Result<(), cli::CliError> {
    // PAIRCAL_THREADS caps every worker pool, including the GEMM pool
    // (which reads MATMUL_NUM_THREADS once, before first use).
    if let Ok(v) = std::env::var("PAIRCAL_THREADS") {
        if std::env::var_os("MATMUL_NUM_THREADS").is_none() {
            std::env::set_var("MATMUL_NUM_THREADS", v);
        }
    }
    let parsed = Cli::parse();
    match parsed.command {
        Command::GenData { common, n } => {
            let mut config = common.load()?;
            if let Some(n) = n {
                config.data.n = n;
            }
            let path = cli::gen_data(&config)?;
            println!("wrote {}", path.display());
        }
        Command::Train { common } => {
            let config = common.load()?;
            let path = cli::train_cmd(&config)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { common } => {
            let config = common.load()?;
            cli::eval_cmd(&config)?;
            println!("wrote eval artifacts to {}", config.out.display());
        }
        Command::Bound { common } => {
            let config = common.load()?;
            let report = cli::bound_cmd(&config)?;
            println!(
                "gamma_plus = {:.6} (mean_s = {:.6}, n = {})",
                report.gamma_plus, report.mean_s, report.n
            );
        }
        Command::Decode { common } => {
            let config = common.load()?;
            cli::decode_cmd(&config)?;
            println!("wrote decisions to {}", config.out.join("decisions.jsonl").display());
        }
        Command::Report { common } => {
            let config = common.load()?;
            let written = cli::report_cmd(&config)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
