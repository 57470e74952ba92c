//! Staged grid search, accuracy evaluation and benchmark reports.
//!
//! Stage 1 tunes `C0` (and the RBF width `q`) with the hinge loss. Stage 2
//! keeps them fixed and tunes the loss shape for the pinball, two-piece and
//! three-piece families. Cells whose losses are the same function share one
//! evaluation, keyed by the canonical form of the loss.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, ManifestEntry, NormalizationTransform};
use crate::kernel::{Kernel, KernelError, RbfForm};
use crate::loss::LossSpec;
use crate::trainer::{fit, fit_normalized, TrainError, TrainParams, TrainedModel};

pub mod reference;

#[derive(Debug, Error)]
pub enum ModelSelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dataset {0:?} has no train/test split")]
    NoSplit(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("{0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Loss families compared in the search, from the smallest to the largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Hinge,
    Pinball,
    TwoPiece,
    ThreePiece,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Hinge, Family::Pinball, Family::TwoPiece, Family::ThreePiece];

    pub fn label(self) -> &'static str {
        match self {
            Family::Hinge => "svm",
            Family::Pinball => "pin",
            Family::TwoPiece => "2pl",
            Family::ThreePiece => "3pl",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Linear,
    Rbf(RbfForm),
}

impl KernelKind {
    pub fn uses_width(self) -> bool {
        matches!(self, KernelKind::Rbf(_))
    }

    pub fn kernel(self, q: Option<f64>) -> Result<Kernel, KernelError> {
        match (self, q) {
            (KernelKind::Linear, _) => Ok(Kernel::Linear),
            (KernelKind::Rbf(form), Some(q)) => Kernel::rbf_with_form(q, form),
            (KernelKind::Rbf(_), None) => Err(KernelError::InvalidWidth(f64::NAN)),
        }
    }
}

/// Parameter grids. Every grid is ascending and is walked in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c0: Vec<f64>,
    pub q: Vec<f64>,
    pub tau: Vec<f64>,
    pub eps: Vec<f64>,
}

fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

/// `i / denom` for `i` in `lo..=hi`; dividing integers avoids the drift
/// of repeated float steps.
fn ratios(lo: i32, hi: i32, denom: f64) -> Vec<f64> {
    (lo..=hi).map(|i| i as f64 / denom).collect()
}

impl GridSpec {
    /// `C0, q` in `2^-7 .. 2^7`, `tau` in `-1 .. 1` step 0.2, `eps` in
    /// `-5 .. 5` step 0.5.
    pub fn full() -> Self {
        Self { c0: powers_of_two(-7, 7), q: powers_of_two(-7, 7), tau: ratios(-5, 5, 5.0), eps: ratios(-10, 10, 2.0) }
    }

    /// Same `C0, q` grids with `tau` in `-0.8 .. 0.8` step 0.4 and `eps` in
    /// `-5 .. 5` step 1. Both shape grids contain 0.
    pub fn reduced() -> Self {
        Self {
            tau: (-2..=2).map(|i| (2 * i) as f64 / 5.0).collect(),
            eps: ratios(-5, 5, 1.0),
            ..Self::full()
        }
    }

    pub fn validate(&self, kernel: KernelKind) -> Result<(), ModelSelError> {
        let mut grids = vec![("c0", &self.c0), ("tau", &self.tau), ("eps", &self.eps)];
        if kernel.uses_width() {
            grids.push(("q", &self.q));
        }
        for (name, grid) in grids {
            if grid.is_empty() {
                return Err(ModelSelError::InvalidGrid(format!("{name} grid is empty")));
            }
            if grid.iter().any(|v| !v.is_finite()) {
                return Err(ModelSelError::InvalidGrid(format!("{name} grid has a non-finite value")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ModelSelError::InvalidGrid(format!("{name} grid is not strictly increasing")));
            }
        }
        if self.c0.iter().any(|v| *v <= 0.0) || (kernel.uses_width() && self.q.iter().any(|v| *v <= 0.0)) {
            return Err(ModelSelError::InvalidGrid("c0 and q must be positive".into()));
        }
        Ok(())
    }

    /// Number of stage-2 cells for a family.
    pub fn shape_cells(&self, family: Family) -> usize {
        let (t, e) = (self.tau.len(), self.eps.len());
        match family {
            Family::Hinge => 1,
            Family::Pinball => t,
            Family::TwoPiece => t * e,
            Family::ThreePiece => t * t * e * e,
        }
    }

    /// Loss shapes of a family in grid order: `tau1, tau2` outer, then
    /// `eps1, eps2`.
    pub fn shapes(&self, family: Family) -> Vec<(Vec<f64>, Vec<f64>)> {
        match family {
            Family::Hinge => vec![(vec![0.0], vec![0.0])],
            Family::Pinball => self.tau.iter().map(|&t| (vec![t], vec![0.0])).collect(),
            Family::TwoPiece => {
                let mut out = Vec::new();
                for &t in &self.tau {
                    for &e in &self.eps {
                        out.push((vec![t], vec![e]));
                    }
                }
                out
            }
            Family::ThreePiece => {
                let mut out = Vec::new();
                for &t1 in &self.tau {
                    for &t2 in &self.tau {
                        for &e1 in &self.eps {
                            for &e2 in &self.eps {
                                out.push((vec![t1, t2], vec![e1, e2]));
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    /// Mean validation accuracy over stratified folds of the training part.
    CrossValidation { folds: usize },
    /// Accuracy on the held-out test part. Optimistic: the test part is
    /// then used for tuning.
    TestAccuracy,
}

impl Criterion {
    pub fn label(&self) -> String {
        match self {
            Criterion::CrossValidation { folds } => format!("cv{folds}"),
            Criterion::TestAccuracy => "test".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub criterion: Criterion,
    pub balance_classes: bool,
    /// Worker threads; `None` uses the available parallelism.
    pub jobs: Option<usize>,
    /// Seed of the fold assignment.
    pub fold_seed: u64,
    pub qp_tol: f64,
    pub max_iter: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::CrossValidation { folds: 5 },
            balance_classes: true,
            jobs: None,
            fold_seed: 0,
            qp_tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub c0: f64,
    pub q: Option<f64>,
    pub taus: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl CellParams {
    pub fn loss(&self) -> Result<LossSpec, TrainError> {
        LossSpec::new(self.taus.clone(), self.epsilons.clone()).map_err(|e| TrainError::InvalidParams(e.to_string()))
    }

    pub fn train_params(&self, kernel: KernelKind, opts: &SearchOptions) -> Result<TrainParams, ModelSelError> {
        let mut params = TrainParams::new(self.loss()?, self.c0, kernel.kernel(self.q)?);
        params.balance_classes = opts.balance_classes;
        params.qp_tol = opts.qp_tol;
        params.max_iter = opts.max_iter;
        Ok(params)
    }

    /// Tuple as printed in result tables, e.g. `(0.125,-0.4,1,0.5,-3.5)`.
    pub fn tuple(&self, family: Family) -> String {
        let mut parts = Vec::new();
        if let Some(q) = self.q {
            parts.push(q);
        }
        parts.push(self.c0);
        match family {
            Family::Hinge => {}
            Family::Pinball => parts.push(self.taus[0]),
            Family::TwoPiece => parts.extend([self.taus[0], self.epsilons[0]]),
            Family::ThreePiece => {
                parts.extend(self.taus.iter().copied());
                parts.extend(self.epsilons.iter().copied());
            }
        }
        let text: Vec<String> = parts.iter().map(|v| format!("{v}")).collect();
        format!("({})", text.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub family: Family,
    pub params: CellParams,
    /// Criterion value in percent; `None` when training failed.
    pub score: Option<f64>,
    pub time_s: f64,
    pub error: Option<String>,
}

/// Best cell of a family, retrained on the whole training part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyBest {
    pub family: Family,
    pub params: CellParams,
    pub score: f64,
    pub test_accuracy: f64,
    pub train_time_s: f64,
    pub kkt_max_residual: f64,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchReport {
    pub dataset: String,
    pub criterion: Criterion,
    pub records: Vec<CellRecord>,
    pub best: Vec<FamilyBest>,
    /// `C0` and `q` chosen by the hinge stage.
    pub stage1: Option<(f64, Option<f64>)>,
}

impl GridSearchReport {
    pub fn best_of(&self, family: Family) -> Option<&FamilyBest> {
        self.best.iter().find(|b| b.family == family)
    }

    /// Criterion value of the best cell of each family.
    pub fn family_scores(&self) -> Vec<(Family, f64)> {
        self.best.iter().map(|b| (b.family, b.score)).collect()
    }
}

/// Percentage of matching labels.
pub fn accuracy(predicted: &[f64], truth: &[f64]) -> Result<f64, ModelSelError> {
    if truth.is_empty() {
        return Err(ModelSelError::EmptyTestSet);
    }
    if predicted.len() != truth.len() {
        return Err(ModelSelError::InvalidOptions(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / truth.len() as f64)
}

/// Accuracy of `model` on raw (unnormalized) features, in percent.
pub fn evaluate(model: &TrainedModel, x_raw: &DMatrix<f64>, y: &[f64]) -> Result<f64, ModelSelError> {
    if y.is_empty() {
        return Err(ModelSelError::EmptyTestSet);
    }
    accuracy(&model.predict_raw(x_raw)?, y)
}

struct Fold {
    x_train: DMatrix<f64>,
    y_train: Vec<f64>,
    x_val: DMatrix<f64>,
    y_val: Vec<f64>,
}

/// Normalized data shared by all cells of one search.
struct Prepared {
    folds: Vec<Fold>,
    x_train: DMatrix<f64>,
    y_train: Vec<f64>,
    x_test: DMatrix<f64>,
    y_test: Vec<f64>,
}

impl Prepared {
    fn new(dataset: &Dataset, opts: &SearchOptions) -> Result<Self, ModelSelError> {
        if dataset.split.is_none() {
            return Err(ModelSelError::NoSplit(dataset.name.clone()));
        }
        let (x_raw, y_train) = dataset.train();
        let (xt_raw, y_test) = dataset.test();
        let normalizer = NormalizationTransform::fit(&x_raw)?;
        let x_train = normalizer.apply(&x_raw)?;
        let x_test = normalizer.apply(&xt_raw)?;
        let folds = match opts.criterion {
            Criterion::TestAccuracy => Vec::new(),
            Criterion::CrossValidation { folds } => make_folds(&x_raw, &y_train, folds, opts.fold_seed)?,
        };
        Ok(Self { folds, x_train, y_train, x_test, y_test })
    }
}

/// Stratified folds: each class is shuffled and dealt round-robin. Each
/// fold is normalized with its own training rows.
fn make_folds(x: &DMatrix<f64>, y: &[f64], k: usize, seed: u64) -> Result<Vec<Fold>, ModelSelError> {
    if k < 2 {
        return Err(ModelSelError::InvalidOptions(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; y.len()];
    let mut next = 0;
    for class in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % k;
            next += 1;
        }
    }
    (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != f).collect();
            let val: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == f).collect();
            if val.is_empty() {
                return Err(ModelSelError::InvalidOptions(format!("{k} folds but only {} rows", y.len())));
            }
            let norm = NormalizationTransform::fit(&x.select_rows(&train))?;
            Ok(Fold {
                x_train: norm.apply(&x.select_rows(&train))?,
                y_train: train.iter().map(|&i| y[i]).collect(),
                x_val: norm.apply(&x.select_rows(&val))?,
                y_val: val.iter().map(|&i| y[i]).collect(),
            })
        })
        .collect()
}

type CellKey = (u64, u64, Vec<(u64, u64)>);

#[derive(Debug, Clone)]
struct Outcome {
    score: Option<f64>,
    time_s: f64,
    error: Option<String>,
}

/// Trains the canonical form of the loss: the same function, possibly
/// with fewer pieces. Every spec with the same canonical key gets
/// bit-identical results.
fn canonical_params(params: &CellParams, kernel: KernelKind, opts: &SearchOptions) -> Result<TrainParams, ModelSelError> {
    let mut train = params.train_params(kernel, opts)?;
    let canon = train.loss.canonical();
    train.loss = if canon.k() < 2 { canon.padded(2) } else { canon };
    Ok(train)
}

fn score_cell(prep: &Prepared, params: &TrainParams, criterion: Criterion) -> Result<f64, ModelSelError> {
    match criterion {
        Criterion::TestAccuracy => {
            let run = fit(&prep.x_train, &prep.y_train, params)?;
            accuracy(&run.model.predict(&prep.x_test)?, &prep.y_test)
        }
        Criterion::CrossValidation { .. } => {
            let mut total = 0.0;
            for fold in &prep.folds {
                let run = fit(&fold.x_train, &fold.y_train, params)?;
                total += accuracy(&run.model.predict(&fold.x_val)?, &fold.y_val)?;
            }
            Ok(total / prep.folds.len() as f64)
        }
    }
}

fn cell_key(params: &TrainParams, q: Option<f64>) -> CellKey {
    (params.c0.to_bits(), q.unwrap_or(0.0).to_bits(), params.loss.canonical_key())
}

struct Evaluator<'a> {
    prep: &'a Prepared,
    kernel: KernelKind,
    opts: &'a SearchOptions,
    cache: HashMap<CellKey, Outcome>,
}

impl Evaluator<'_> {
    /// Scores the cells in parallel, one evaluation per distinct loss, and
    /// returns records in the order of `cells`.
    fn run(&mut self, cells: Vec<(Family, CellParams)>) -> Result<Vec<CellRecord>, ModelSelError> {
        let mut keyed = Vec::with_capacity(cells.len());
        let mut pending: Vec<(CellKey, TrainParams)> = Vec::new();
        for (family, params) in cells {
            let train = canonical_params(&params, self.kernel, self.opts)?;
            let key = cell_key(&train, params.q);
            if !self.cache.contains_key(&key) && !pending.iter().any(|(k, _)| *k == key) {
                pending.push((key.clone(), train));
            }
            keyed.push((family, params, key));
        }
        let prep = self.prep;
        let criterion = self.opts.criterion;
        let outcomes: Vec<Outcome> = pending
            .par_iter()
            .map(|(_, train)| {
                let start = Instant::now();
                let result = score_cell(prep, train, criterion);
                let time_s = start.elapsed().as_secs_f64();
                match result {
                    Ok(score) => Outcome { score: Some(score), time_s, error: None },
                    Err(e) => Outcome { score: None, time_s, error: Some(e.to_string()) },
                }
            })
            .collect();
        for ((key, _), outcome) in pending.into_iter().zip(outcomes) {
            self.cache.insert(key, outcome);
        }
        Ok(keyed
            .into_iter()
            .map(|(family, params, key)| {
                let o = &self.cache[&key];
                CellRecord { family, params, score: o.score, time_s: o.time_s, error: o.error.clone() }
            })
            .collect())
    }
}

/// Index of the first record with the highest score.
fn first_best(records: &[CellRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(s) = r.score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ModelSelError> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(ModelSelError::InvalidOptions("jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ModelSelError::InvalidOptions(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Two-stage search. Stage 1 walks `C0` (outer) and `q` with the hinge
/// loss; stage 2 walks the loss shapes at the chosen `(C0, q)`. Ties go
/// to the first cell in grid order. Failed cells are recorded and skipped.
pub fn staged_search(
    dataset: &Dataset,
    kernel: KernelKind,
    grids: &GridSpec,
    opts: &SearchOptions,
) -> Result<GridSearchReport, ModelSelError> {
    grids.validate(kernel)?;
    let prep = Prepared::new(dataset, opts)?;
    with_pool(opts.jobs, || search_prepared(&dataset.name, &prep, kernel, grids, opts))?
}

fn search_prepared(
    name: &str,
    prep: &Prepared,
    kernel: KernelKind,
    grids: &GridSpec,
    opts: &SearchOptions,
) -> Result<GridSearchReport, ModelSelError> {
    let mut eval = Evaluator { prep, kernel, opts, cache: HashMap::new() };
    let widths: Vec<Option<f64>> = if kernel.uses_width() { grids.q.iter().map(|&q| Some(q)).collect() } else { vec![None] };
    let mut stage1 = Vec::new();
    for &c0 in &grids.c0 {
        for &q in &widths {
            stage1.push((Family::Hinge, CellParams { c0, q, taus: vec![0.0], epsilons: vec![0.0] }));
        }
    }
    let mut records = eval.run(stage1)?;
    let mut report = GridSearchReport {
        dataset: name.to_string(),
        criterion: opts.criterion,
        records: Vec::new(),
        best: Vec::new(),
        stage1: None,
    };
    let Some(i) = first_best(&records) else {
        report.records = records;
        return Ok(report);
    };
    let (c0, q) = (records[i].params.c0, records[i].params.q);
    report.stage1 = Some((c0, q));
    let mut winners = vec![(Family::Hinge, i)];

    for family in [Family::Pinball, Family::TwoPiece, Family::ThreePiece] {
        let cells = grids
            .shapes(family)
            .into_iter()
            .map(|(taus, epsilons)| (family, CellParams { c0, q, taus, epsilons }))
            .collect();
        let family_records = eval.run(cells)?;
        let offset = records.len();
        if let Some(j) = first_best(&family_records) {
            winners.push((family, offset + j));
        }
        records.extend(family_records);
    }

    for (family, idx) in winners {
        let record = &records[idx];
        let params = record.params.train_params(kernel, opts)?;
        let start = Instant::now();
        let run = fit(&prep.x_train, &prep.y_train, &params)?;
        let train_time_s = start.elapsed().as_secs_f64();
        let test_accuracy = accuracy(&run.model.predict(&prep.x_test)?, &prep.y_test)?;
        report.best.push(FamilyBest {
            family,
            params: record.params.clone(),
            score: record.score.expect("winner has a score"),
            test_accuracy,
            train_time_s,
            kkt_max_residual: run.model.diagnostics.kkt_max_residual,
            duality_gap: run.model.diagnostics.duality_gap,
        });
    }
    report.records = records;
    Ok(report)
}

/// How `benchmark_run` picks parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchMode {
    Search { grids: GridSpec, options: SearchOptions },
    /// Train directly with the published parameter tuples.
    Replay { balance_classes: bool, jobs: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub kernel: KernelKind,
    pub mode: BenchMode,
    /// Replaces the seed of randomly split manifest entries.
    pub seed_override: Option<u64>,
}

/// One line of the consolidated report. A row without a family is a
/// warning for a dataset that could not be run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub dataset: String,
    pub family: Option<Family>,
    pub accuracy: Option<f64>,
    pub time_s: Option<f64>,
    pub params: Option<CellParams>,
    pub criterion: String,
    pub kkt_max_residual: Option<f64>,
    pub duality_gap: Option<f64>,
    pub reference_accuracy: Option<f64>,
}

impl ReportRow {
    fn warning(dataset: &str, message: String) -> Self {
        Self {
            dataset: dataset.to_string(),
            family: None,
            accuracy: None,
            time_s: None,
            params: None,
            criterion: format!("skipped: {message}"),
            kkt_max_residual: None,
            duality_gap: None,
            reference_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub kernel: KernelKind,
    pub rows: Vec<ReportRow>,
    /// Full search records per dataset (search mode only).
    pub searches: Vec<GridSearchReport>,
}

pub const REPORT_COLUMNS: [&str; 11] =
    ["dataset", "family", "accuracy", "time_s", "c0", "q", "tau1", "tau2", "eps1", "eps2", "criterion"];

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Parameter columns `c0, q, tau1, tau2, eps1, eps2`, blank where a family
/// has no such parameter.
fn param_fields(params: Option<&CellParams>, family: Option<Family>) -> Vec<String> {
    let Some(p) = params else { return vec![String::new(); 6] };
    let family = family.unwrap_or(Family::ThreePiece);
    let tau = |i: usize| if family == Family::Hinge { String::new() } else { opt(p.taus.get(i).copied()) };
    let eps = |i: usize| match family {
        Family::Hinge | Family::Pinball => String::new(),
        _ => opt(p.epsilons.get(i).copied()),
    };
    vec![format!("{}", p.c0), opt(p.q), tau(0), tau(1), eps(0), eps(1)]
}

impl BenchmarkReport {
    pub fn from_searches(kernel: KernelKind, searches: Vec<GridSearchReport>) -> Self {
        let mut report = Self { kernel, rows: Vec::new(), searches: Vec::new() };
        for s in searches {
            report.push_search(s);
        }
        report
    }

    fn push_search(&mut self, search: GridSearchReport) {
        let published = reference::lookup(&search.dataset);
        if search.best.is_empty() {
            self.rows.push(ReportRow::warning(&search.dataset, "every stage-1 cell failed".into()));
        }
        for b in &search.best {
            self.rows.push(ReportRow {
                dataset: search.dataset.clone(),
                family: Some(b.family),
                accuracy: Some(b.test_accuracy),
                time_s: Some(b.train_time_s),
                params: Some(b.params.clone()),
                criterion: search.criterion.label(),
                kkt_max_residual: Some(b.kkt_max_residual),
                duality_gap: Some(b.duality_gap),
                reference_accuracy: published.and_then(|p| reference::accuracy(p, self.kernel, b.family)),
            });
        }
        self.searches.push(search);
    }

    /// The consolidated CSV. With `include_time == false` the time column
    /// is left blank, which makes the output reproducible byte for byte.
    pub fn to_csv(&self, include_time: bool) -> String {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut fields = vec![
                    r.dataset.clone(),
                    r.family.map(|f| f.label().to_string()).unwrap_or_default(),
                    r.accuracy.map(|a| format!("{a:.3}")).unwrap_or_default(),
                    if include_time { r.time_s.map(|t| format!("{t:.3}")).unwrap_or_default() } else { String::new() },
                ];
                fields.extend(param_fields(r.params.as_ref(), r.family));
                fields.push(r.criterion.clone());
                fields
            })
            .collect();
        csv_text(&REPORT_COLUMNS, rows)
    }

    /// Rows of one dataset with solver diagnostics, plus every search cell
    /// when a search was run.
    pub fn dataset_csv(&self, dataset: &str, include_time: bool) -> String {
        let header = [
            "kind", "family", "score", "accuracy", "time_s", "c0", "q", "tau1", "tau2", "eps1", "eps2", "kkt_max",
            "gap", "note",
        ];
        let time = |t: Option<f64>| if include_time { t.map(|t| format!("{t:.3}")).unwrap_or_default() } else { String::new() };
        let mut rows = Vec::new();
        for r in self.rows.iter().filter(|r| r.dataset == dataset) {
            let mut f = vec![
                "final".to_string(),
                r.family.map(|f| f.label().to_string()).unwrap_or_default(),
                String::new(),
                r.accuracy.map(|a| format!("{a:.3}")).unwrap_or_default(),
                time(r.time_s),
            ];
            f.extend(param_fields(r.params.as_ref(), r.family));
            f.extend([
                r.kkt_max_residual.map(|v| format!("{v:.3e}")).unwrap_or_default(),
                r.duality_gap.map(|v| format!("{v:.3e}")).unwrap_or_default(),
                r.criterion.clone(),
            ]);
            rows.push(f);
        }
        for s in self.searches.iter().filter(|s| s.dataset == dataset) {
            for c in &s.records {
                let mut f = vec![
                    "cell".to_string(),
                    c.family.label().to_string(),
                    c.score.map(|a| format!("{a:.3}")).unwrap_or_default(),
                    String::new(),
                    time(Some(c.time_s)),
                ];
                f.extend(param_fields(Some(&c.params), Some(c.family)));
                f.extend([String::new(), String::new(), c.error.clone().unwrap_or_default()]);
                rows.push(f);
            }
        }
        csv_text(&header, rows)
    }

    /// Plain-text table with one block per dataset: accuracy, time and the
    /// parameter tuple per family. The LS-SVM column carries published
    /// reference accuracies only; that model is not trained here.
    pub fn table(&self, include_time: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:<6} {:>9} {:>9} {:>9}  params", "dataset", "family", "acc", "ref_acc", "time_s");
        let mut datasets: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
        for name in datasets {
            for r in self.rows.iter().filter(|r| r.dataset == name) {
                let Some(family) = r.family else {
                    let _ = writeln!(out, "{:<16} {}", name, r.criterion);
                    continue;
                };
                let time = if include_time { r.time_s.map(|t| format!("{t:.3}")).unwrap_or_default() } else { "-".into() };
                let _ = writeln!(
                    out,
                    "{:<16} {:<6} {:>9} {:>9} {:>9}  {}",
                    name,
                    family.label(),
                    r.accuracy.map(|a| format!("{a:.3}")).unwrap_or_default(),
                    r.reference_accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
                    time,
                    r.params.as_ref().map(|p| p.tuple(family)).unwrap_or_default()
                );
            }
            if let Some(ls) = reference::lookup(name).and_then(|e| reference::ls_svm_accuracy(e, self.kernel)) {
                let _ = writeln!(out, "{:<16} {:<6} {:>9} {:>9} {:>9}", name, "ls-svm", "-", format!("{ls:.3}"), "-");
            }
        }
        out
    }

    /// Writes `report.csv`, `table.txt` and one `<dataset>.csv` per dataset
    /// into `dir`, each through a temporary file and a rename.
    pub fn write(&self, dir: &Path, include_time: bool) -> Result<Vec<PathBuf>, ModelSelError> {
        std::fs::create_dir_all(dir).map_err(|source| ModelSelError::Io { path: dir.to_path_buf(), source })?;
        let mut files = vec![
            (dir.join("report.csv"), self.to_csv(include_time)),
            (dir.join("table.txt"), self.table(include_time)),
        ];
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.dataset.as_str()) {
                seen.push(&r.dataset);
                files.push((dir.join(format!("{}.csv", r.dataset)), self.dataset_csv(&r.dataset, include_time)));
            }
        }
        for (path, text) in &files {
            write_atomic(path, text.as_bytes())?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ModelSelError> {
    let io = |source| ModelSelError::Io { path: path.to_path_buf(), source };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

/// Runs every manifest entry. Datasets that fail to load, or have no
/// published tuple in replay mode, produce a warning row instead.
pub fn benchmark_run(entries: &[ManifestEntry], opts: &BenchOptions) -> Result<BenchmarkReport, ModelSelError> {
    let mut report = BenchmarkReport { kernel: opts.kernel, rows: Vec::new(), searches: Vec::new() };
    if let BenchMode::Search { grids, .. } = &opts.mode {
        grids.validate(opts.kernel)?;
    }
    for entry in entries {
        let dataset = match entry.load_split(opts.seed_override) {
            Ok(d) => d,
            Err(e) => {
                report.rows.push(ReportRow::warning(&entry.name, e.to_string()));
                continue;
            }
        };
        let published = reference::lookup(&entry.name);
        let reference_acc = |family: Family| published.and_then(|p| reference::accuracy(p, opts.kernel, family));
        match &opts.mode {
            BenchMode::Search { grids, options } => match staged_search(&dataset, opts.kernel, grids, options) {
                Ok(search) => report.push_search(search),
                Err(e) => report.rows.push(ReportRow::warning(&entry.name, e.to_string())),
            },
            BenchMode::Replay { balance_classes, jobs } => {
                let Some(tuples) = published.and_then(|p| reference::parameters(p, opts.kernel)) else {
                    report.rows.push(ReportRow::warning(&entry.name, "no published parameters for this kernel".into()));
                    continue;
                };
                let rows = with_pool(*jobs, || {
                    tuples
                        .par_iter()
                        .map(|(family, params)| replay_one(&dataset, opts.kernel, *family, params, *balance_classes))
                        .collect::<Vec<_>>()
                })?;
                for ((family, _), row) in tuples.iter().zip(rows) {
                    let mut row = row.unwrap_or_else(|e| {
                        let mut w = ReportRow::warning(&entry.name, e.to_string());
                        w.family = Some(*family);
                        w.criterion = format!("failed: {e}");
                        w
                    });
                    row.reference_accuracy = reference_acc(*family);
                    report.rows.push(row);
                }
            }
        }
    }
    Ok(report)
}

fn replay_one(
    dataset: &Dataset,
    kernel: KernelKind,
    family: Family,
    params: &CellParams,
    balance_classes: bool,
) -> Result<ReportRow, ModelSelError> {
    let opts = SearchOptions { balance_classes, ..SearchOptions::default() };
    let train_params = params.train_params(kernel, &opts)?;
    let (x, y) = dataset.train();
    let (xt, yt) = dataset.test();
    let start = Instant::now();
    let run = fit_normalized(&x, &y, &train_params)?;
    let time_s = start.elapsed().as_secs_f64();
    let acc = evaluate(&run.model, &xt, &yt)?;
    Ok(ReportRow {
        dataset: dataset.name.clone(),
        family: Some(family),
        accuracy: Some(acc),
        time_s: Some(time_s),
        params: Some(params.clone()),
        criterion: "replay".into(),
        kkt_max_residual: Some(run.model.diagnostics.kkt_max_residual),
        duality_gap: Some(run.model.diagnostics.duality_gap),
        reference_accuracy: None,
    })
}
