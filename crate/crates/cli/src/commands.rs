use std::fmt::Write as _;
use std::io::Write as _;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use kplsvm::data::{self, LabelMap, SplitSeed};
use kplsvm::model_file;
use kplsvm::modelsel::{self, BenchMode, BenchOptions, BenchmarkReport, Criterion, GridSpec, KernelKind, SearchOptions};
use kplsvm::{Dataset, Kernel, LoadOptions, LossSpec, ModelFileError, ModelSelError, RbfForm, TrainError, TrainParams};
use thiserror::Error;

use crate::{
    BenchArgs, DataArgs, EvalArgs, GridArgs, KernelArg, LossCurveArgs, PredictArgs, SearchArgs, TrainArgs, VerifyArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("KKT residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    VerifyFailed { residual: f64, tol: f64 },
}

fn train_error_code(e: &TrainError) -> u8 {
    match e {
        TrainError::InvalidParams(_) => 2,
        TrainError::InvalidData(_) | TrainError::SingleClass { .. } | TrainError::DimensionMismatch { .. } => 3,
        TrainError::Qp(_) | TrainError::SolverFailed { .. } => 4,
        TrainError::Kernel(_) => 2,
        TrainError::NoDualRecord => 3,
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 2,
                CliError::VerifyFailed { .. } => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train_error_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelSelError>() {
            return match e {
                ModelSelError::Train(t) => train_error_code(t),
                ModelSelError::InvalidGrid(_) | ModelSelError::InvalidOptions(_) | ModelSelError::Kernel(_) => 2,
                ModelSelError::Data(_) | ModelSelError::NoSplit(_) | ModelSelError::EmptyTestSet | ModelSelError::Io { .. } => 3,
            };
        }
        if cause.is::<data::DataError>() || cause.is::<ModelFileError>() || cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    CliError::Usage(message.into()).into()
}

pub fn parse_list(text: &str, name: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|v| {
            let v = v.trim();
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(usage(format!("--{name}: {v:?} is not a finite number"))),
            }
        })
        .collect()
}

fn loss_from(taus: &str, epsilons: &str) -> Result<LossSpec> {
    let taus = parse_list(taus, "taus")?;
    let eps = parse_list(epsilons, "epsilons")?;
    LossSpec::new(taus, eps).map_err(|e| usage(e.to_string()))
}

fn kernel_kind(arg: KernelArg) -> KernelKind {
    match arg {
        KernelArg::Linear => KernelKind::Linear,
        KernelArg::Rbf => KernelKind::Rbf(RbfForm::SquaredDistance),
        KernelArg::RbfUnsquared => KernelKind::Rbf(RbfForm::UnsquaredDistance),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("KPLSVM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("KPLSVM_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn split_seed(args: &DataArgs) -> Result<SplitSeed> {
    if let Some(seed) = args.seed {
        return Ok(seed);
    }
    Ok(SplitSeed::Seed(env_seed()?.unwrap_or(0)))
}

/// Loads `--data` and applies `--n-train` when given.
fn load(args: &DataArgs, label_map: Option<LabelMap>) -> Result<Dataset> {
    let opts = LoadOptions { format: args.format, label_col: args.label_col, label_map, ..LoadOptions::default() };
    let dataset = data::load(&args.data, &opts).with_context(|| format!("loading {}", args.data.display()))?;
    if dataset.rejected_rows > 0 {
        eprintln!("note: skipped {} rows with missing values", dataset.rejected_rows);
    }
    let Some(n_train) = args.n_train else { return Ok(dataset) };
    let split = match split_seed(args)? {
        SplitSeed::Predefined => data::predefined_split(&dataset, n_train)?,
        SplitSeed::Seed(seed) => data::split(&dataset, n_train, seed)?,
    };
    Ok(split)
}

/// Training rows: the training part of a split, otherwise every row.
fn training_rows(d: &Dataset) -> (nalgebra::DMatrix<f64>, Vec<f64>) {
    if d.split.is_some() {
        d.train()
    } else {
        (d.x.clone(), d.y.clone())
    }
}

fn write_output(path: Option<&std::path::Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => modelsel::write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let loss = loss_from(&args.taus, &args.epsilons)?;
    let kernel = match (args.kernel, args.q) {
        (KernelArg::Linear, _) => Kernel::Linear,
        (_, None) => return Err(usage("--q is required for RBF kernels")),
        (k, Some(q)) => kernel_kind(k).kernel(Some(q)).map_err(|e| usage(e.to_string()))?,
    };
    let mut params = TrainParams::new(loss, args.c0, kernel);
    params.balance_classes = !args.no_balance;
    params.qp_tol = args.qp_tol;
    params.validate()?;

    let dataset = load(&args.data, None)?;
    let (x, y) = training_rows(&dataset);
    let caps = kplsvm::trainer::sample_weights(&y, params.c0, params.balance_classes)?;
    let start = Instant::now();
    let run = kplsvm::fit_normalized(&x, &y, &params)?;
    let elapsed = start.elapsed().as_secs_f64();
    model_file::save(&run.model, Some(&dataset.label_map), &args.out)?;

    let positives = y.iter().filter(|v| **v > 0.0).count();
    let c_pos = caps.iter().zip(&y).find(|(_, y)| **y > 0.0).map(|(c, _)| *c).unwrap_or(params.c0);
    let c_neg = caps.iter().zip(&y).find(|(_, y)| **y < 0.0).map(|(c, _)| *c).unwrap_or(params.c0);
    let train_acc = modelsel::accuracy(&run.model.predict_raw(&x)?, &y)?;
    let mut summary = String::new();
    writeln!(summary, "loss: {}", run.model.loss)?;
    writeln!(summary, "kernel: {}  C0: {}", run.model.kernel, params.c0)?;
    writeln!(
        summary,
        "classes: {positives} positive ({}), {} negative ({})",
        dataset.label_map.positive,
        y.len() - positives,
        dataset.label_map.negative
    )?;
    if params.balance_classes {
        writeln!(summary, "class ratio p: {:.6}  C+: {c_pos}  C-: {c_neg}", run.model.diagnostics.class_ratio)?;
    }
    writeln!(summary, "training accuracy: {train_acc:.3}")?;
    let test = match (&args.test, dataset.split.is_some()) {
        (Some(path), _) => {
            let opts = LoadOptions {
                format: args.data.format,
                label_col: args.data.label_col,
                label_map: Some(dataset.label_map.clone()),
                ..LoadOptions::default()
            };
            let t = data::load(path, &opts).with_context(|| format!("loading {}", path.display()))?;
            Some((t.x, t.y))
        }
        (None, true) => Some(dataset.test()),
        (None, false) => None,
    };
    if let Some((xt, yt)) = test {
        writeln!(summary, "test accuracy: {:.3}", modelsel::evaluate(&run.model, &xt, &yt)?)?;
    }
    writeln!(summary, "support points: {} of {}", run.model.support_count(), y.len())?;
    writeln!(summary, "KKT max residual: {:.3e}", run.model.diagnostics.kkt_max_residual)?;
    writeln!(summary, "duality gap: {:.3e}", run.model.diagnostics.duality_gap)?;
    writeln!(summary, "wall time: {elapsed:.3} s")?;
    writeln!(summary, "model: {}", args.out.display())?;
    print!("{summary}");
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let (model, labels) = model_file::load(&args.model)?;
    let dataset = load(&args.data, labels)?;
    let (x, _) = training_rows(&dataset);
    let predictions = model.predict_raw(&x)?;
    let mut text = String::with_capacity(predictions.len() * 3);
    for p in predictions {
        text.push_str(if p > 0.0 { "1\n" } else { "-1\n" });
    }
    write_output(args.out.as_deref(), &text)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (model, labels) = model_file::load(&args.model)?;
    let dataset = load(&args.data, labels)?;
    let (x, y) = if args.on_test {
        if dataset.split.is_none() {
            return Err(usage("--on-test needs --n-train"));
        }
        dataset.test()
    } else {
        training_rows(&dataset)
    };
    println!("{:.3}", modelsel::evaluate(&model, &x, &y)?);
    Ok(())
}

fn search_options(args: &SearchArgs) -> SearchOptions {
    SearchOptions {
        criterion: if args.tune_on_test {
            Criterion::TestAccuracy
        } else {
            Criterion::CrossValidation { folds: args.folds }
        },
        balance_classes: !args.no_balance,
        jobs: args.jobs,
        ..SearchOptions::default()
    }
}

fn grids(args: &SearchArgs) -> GridSpec {
    if args.reduced {
        GridSpec::reduced()
    } else {
        GridSpec::full()
    }
}

fn print_best(report: &BenchmarkReport) {
    for row in &report.rows {
        match (row.family, &row.params) {
            (Some(f), Some(p)) => println!(
                "{:<12} {:<4} accuracy {:>8}  {}",
                row.dataset,
                f.label(),
                row.accuracy.map(|a| format!("{a:.3}")).unwrap_or_default(),
                p.tuple(f)
            ),
            _ => println!("{:<12} {}", row.dataset, row.criterion),
        }
    }
}

pub fn grid(args: GridArgs) -> Result<()> {
    if args.data.n_train.is_none() {
        return Err(usage("grid needs --n-train to hold out a test part"));
    }
    let dataset = load(&args.data, None)?;
    let kernel = kernel_kind(args.search.kernel);
    let search = modelsel::staged_search(&dataset, kernel, &grids(&args.search), &search_options(&args.search))?;
    let report = BenchmarkReport::from_searches(kernel, vec![search]);
    print_best(&report);
    if let Some(dir) = &args.out {
        for path in report.write(dir, !args.no_time)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let entries = data::load_manifest(&args.manifest)?;
    let kernel = kernel_kind(args.search.kernel);
    let mode = if args.replay {
        BenchMode::Replay { balance_classes: !args.search.no_balance, jobs: args.search.jobs }
    } else {
        BenchMode::Search { grids: grids(&args.search), options: search_options(&args.search) }
    };
    let opts = BenchOptions { kernel, mode, seed_override: env_seed()? };
    let report = modelsel::benchmark_run(&entries, &opts)?;
    for row in report.rows.iter().filter(|r| r.family.is_none()) {
        eprintln!("warning: {}: {}", row.dataset, row.criterion);
    }
    print_best(&report);
    for path in report.write(&args.out, !args.no_time)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

/// `(u, L(u))` rows for `u = lo, lo + step, ..., hi`.
pub fn loss_curve_csv(loss: &LossSpec, lo: f64, hi: f64, step: f64) -> Result<String> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(usage(format!("--step must be positive, got {step}")));
    }
    if !(lo <= hi) {
        return Err(usage(format!("--range needs lo <= hi, got {lo},{hi}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut out = String::from("u,loss\n");
    for i in 0..=n {
        // Rounding hides float steps like 0.30000000000000004.
        let u = ((lo + i as f64 * step) * 1e12).round() / 1e12;
        writeln!(out, "{u},{}", loss.value(u))?;
    }
    Ok(out)
}

pub fn loss_curve(args: LossCurveArgs) -> Result<()> {
    let loss = loss_from(&args.taus, &args.epsilons)?;
    let bounds = parse_list(&args.range, "range")?;
    let [lo, hi] = bounds[..] else { bail!(usage("--range must be two numbers, lo,hi")) };
    write_output(args.out.as_deref(), &loss_curve_csv(&loss, lo, hi, args.step)?)
}

pub fn verify(args: VerifyArgs) -> Result<()> {
    let (model, labels) = model_file::load(&args.model)?;
    let dataset = load(&args.data, labels)?;
    let (x_raw, y) = training_rows(&dataset);
    let x = match &model.normalizer {
        Some(n) => n.apply(&x_raw)?,
        None => x_raw,
    };
    let report = model.verify(&x, &y)?;
    println!("stationarity w: {:.3e}", report.stationarity_w);
    println!("stationarity b: {:.3e}", report.stationarity_b);
    println!("stationarity xi: {:.3e}", report.stationarity_xi);
    println!("complementarity: {:.3e}", report.complementarity_max);
    println!("primal feasibility: {:.3e}", report.primal_feasibility_max);
    let residual = report.max_residual();
    println!("max residual: {residual:.3e}");
    if residual > args.tol {
        return Err(CliError::VerifyFailed { residual, tol: args.tol }.into());
    }
    Ok(())
}
