//! `kplsvm` command-line tool.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 data or
//! model-file error, 4 solver failure, 5 verification failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "kplsvm", version, about = "Kernel SVMs with k-piece piecewise-linear losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it to a file.
    Train(TrainArgs),
    /// Write one predicted label (+1 or -1) per input row.
    Predict(PredictArgs),
    /// Print the accuracy of a model on labelled data.
    Eval(EvalArgs),
    /// Staged grid search on one dataset.
    Grid(GridArgs),
    /// Run every dataset of a manifest and write reports.
    Bench(BenchArgs),
    /// Tabulate a loss function as `u,loss` CSV.
    LossCurve(LossCurveArgs),
    /// Recheck the optimality conditions of a model on its training data.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Data file (label column plus numeric features).
    #[arg(long)]
    pub data: std::path::PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: kplsvm::Format,
    /// Zero-based label column for CSV input.
    #[arg(long, default_value_t = 0)]
    pub label_col: usize,
    /// Use only the first part of the file for training: the first
    /// `n_train` rows with `--seed predefined`, otherwise a seeded shuffle.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Split seed or `predefined`. Defaults to $KPLSVM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<kplsvm::data::SplitSeed>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Linear,
    /// exp(-||x-y||^2 / (2 q^2))
    Rbf,
    /// exp(-||x-y|| / (2 q^2))
    RbfUnsquared,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Separate test file, reported after training.
    #[arg(long)]
    pub test: Option<std::path::PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    pub kernel: KernelArg,
    /// RBF width.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub c0: f64,
    /// Comma-separated tau_1..tau_{k-1}.
    #[arg(long, allow_hyphen_values = true)]
    pub taus: String,
    /// Comma-separated eps_1..eps_{k-1}.
    #[arg(long, allow_hyphen_values = true)]
    pub epsilons: String,
    /// Weight the negative class by p = #positive / #negative (default).
    #[arg(long, overrides_with = "no_balance")]
    pub balance: bool,
    #[arg(long)]
    pub no_balance: bool,
    #[arg(long, default_value_t = 1e-8)]
    pub qp_tol: f64,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate on the test part of the split instead of the training part.
    #[arg(long)]
    pub on_test: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long, value_enum, default_value = "linear")]
    pub kernel: KernelArg,
    /// Tune on test accuracy instead of cross-validation. Optimistic;
    /// useful only to reproduce published tables.
    #[arg(long)]
    pub tune_on_test: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// tau step 0.4 and eps step 1 instead of 0.2 and 0.5.
    #[arg(long)]
    pub reduced: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub no_balance: bool,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Directory for report files.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    /// Leave timings out of the reports.
    #[arg(long)]
    pub no_time: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Train with the published parameter tuples instead of searching.
    #[arg(long)]
    pub replay: bool,
    #[arg(long, default_value = "bench-out")]
    pub out: std::path::PathBuf,
    /// Leave timings out of the reports, making them reproducible.
    #[arg(long)]
    pub no_time: bool,
}

#[derive(Args, Debug)]
pub struct LossCurveArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub taus: String,
    #[arg(long, allow_hyphen_values = true)]
    pub epsilons: String,
    /// `lo,hi`
    #[arg(long, allow_hyphen_values = true, default_value = "-3,3")]
    pub range: String,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    /// The training data, split as it was for training.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Grid(a) => commands::grid(a),
        Command::Bench(a) => commands::bench(a),
        Command::LossCurve(a) => commands::loss_curve(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
