use std::path::PathBuf;
use std::process::ExitCode;

use asgl::cli::{self, config::env_overrides, Command, Invocation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "asgl", version, about = "Adaptive sparse group lasso quantile regression")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit one penalized model.
    Fit(RunArgs),
    /// Select hyperparameters on a validation split.
    GridSearch(RunArgs),
    /// Run a Monte Carlo experiment.
    Simulate(RunArgs),
    /// Filter and standardize a gene expression table.
    Preprocess(RunArgs),
    /// Group covariates by their dominant principal component.
    Cluster(RunArgs),
    /// Selection probabilities over repeated splits.
    Stability(RunArgs),
    /// Print a JSON Schema (config or an output artifact).
    Schema {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(cli::SCHEMAS))]
        name: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--set simulate.repetitions=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn main() -> ExitCode {
    let (command, args) = match Cli::parse().cmd {
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::GridSearch(a) => (Command::GridSearch, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Preprocess(a) => (Command::Preprocess, a),
        Cmd::Cluster(a) => (Command::Cluster, a),
        Cmd::Stability(a) => (Command::Stability, a),
        Cmd::Schema { name } => {
            let s = cli::schema(&name).expect("name checked by clap");
            println!("{}", serde_json::to_string_pretty(&s).expect("schema serializes"));
            return ExitCode::SUCCESS;
        }
    };
    let inv = Invocation {
        command,
        config: args.config,
        out: args.out,
        seed: args.seed,
        threads: args.threads,
        sets: args.sets,
        env: env_overrides(std::env::vars()),
    };
    match cli::run(&inv) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code() as u8)
        }
    }
}
