//! End-to-end training: dual assembly, bias recovery, pruning, KKT checks.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::NormalizationTransform;
use crate::kernel::{Kernel, KernelError};
use crate::loss::LossSpec;
use crate::qp::{self, QpError, QpProblem, QpSolution, SolveStatus, SolverOptions};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training data: {0}")]
    InvalidData(String),
    #[error("training set needs both classes (found {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("dual QP: {0}")]
    Qp(#[from] QpError),
    #[error("dual QP solver stopped ({status:?}) with KKT residual {residual:.3e}")]
    SolverFailed { status: SolveStatus, residual: f64 },
    #[error("model has no stored dual solution")]
    NoDualRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub loss: LossSpec,
    pub c0: f64,
    pub kernel: Kernel,
    /// Weight the negative class by `p = #(+1) / #(-1)`.
    pub balance_classes: bool,
    pub qp_tol: f64,
    pub max_iter: usize,
    /// Multipliers below `active_threshold * C_i` count as zero.
    pub active_threshold: f64,
}

impl TrainParams {
    pub fn new(loss: LossSpec, c0: f64, kernel: Kernel) -> Self {
        Self {
            loss,
            c0,
            kernel,
            balance_classes: true,
            qp_tol: 1e-8,
            max_iter: 200,
            active_threshold: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(TrainError::InvalidParams(format!("c0 must be positive, got {}", self.c0)));
        }
        if !(self.qp_tol > 0.0) {
            return Err(TrainError::InvalidParams(format!("qp_tol must be positive, got {}", self.qp_tol)));
        }
        if !(self.active_threshold > 0.0 && self.active_threshold < 1.0) {
            return Err(TrainError::InvalidParams(format!(
                "active_threshold must lie in (0, 1), got {}",
                self.active_threshold
            )));
        }
        if self.loss.k() < 2 {
            return Err(TrainError::InvalidParams("the loss needs k >= 2 pieces".into()));
        }
        self.kernel.validate()?;
        Ok(())
    }
}

/// Per-sample weights: `C_0` for the positive class and `p C_0` for the
/// negative class when balancing, `C_0` everywhere otherwise.
pub fn sample_weights(y: &[f64], c0: f64, balance: bool) -> Result<Vec<f64>, TrainError> {
    let positives = y.iter().filter(|v| **v > 0.0).count();
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::SingleClass { positives, negatives });
    }
    let p = positives as f64 / negatives as f64;
    Ok(y.iter()
        .map(|v| if *v > 0.0 || !balance { c0 } else { p * c0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub bias_candidates_used: usize,
    /// Bias came from minimizing the primal in `b` (no candidate).
    pub bias_fallback: bool,
    /// Bias implied by the solver's multiplier of the global row.
    pub bias_from_multiplier: f64,
    pub kkt_max_residual: f64,
    pub duality_gap: f64,
    pub qp_iterations: usize,
    pub qp_fallback_solver: bool,
    pub pruned_points: usize,
    /// Pruning would have moved `w` or a training score and was undone.
    pub pruning_reverted: bool,
    pub class_ratio: f64,
}

/// Dual multipliers of every training point, kept for later KKT checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRecord {
    /// Block-major: `z[m * l + i]`.
    pub z: Vec<f64>,
    pub caps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kernel: Kernel,
    pub loss: LossSpec,
    pub c0: f64,
    pub balance_classes: bool,
    pub normalizer: Option<NormalizationTransform>,
    pub support_x: DMatrix<f64>,
    pub beta: Vec<f64>,
    pub bias: f64,
    pub diagnostics: Diagnostics,
    pub dual: Option<DualRecord>,
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.support_x.ncols()
    }

    pub fn support_count(&self) -> usize {
        self.beta.len()
    }

    /// `sum_i beta_i k(sv_i, x) + b` for each row of `x`.
    pub fn decision_scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TrainError> {
        if x.ncols() != self.n_features() {
            return Err(TrainError::DimensionMismatch { expected: self.n_features(), found: x.ncols() });
        }
        let k = self.kernel.cross(x, &self.support_x)?;
        let beta = DVector::from_column_slice(&self.beta);
        Ok((k * beta).iter().map(|s| s + self.bias).collect())
    }

    /// Labels in {-1, +1}. Scores within [`TIE_TOL`] of zero count as ties
    /// and predict +1.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TrainError> {
        Ok(self.decision_scores(x)?.into_iter().map(|s| sign(if s.abs() <= TIE_TOL { 0.0 } else { s })).collect())
    }

    /// Applies the stored normalizer (if any) before predicting.
    pub fn predict_raw(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TrainError> {
        match &self.normalizer {
            Some(n) => {
                let z = n.apply(x).map_err(|e| TrainError::InvalidData(e.to_string()))?;
                self.predict(&z)
            }
            None => self.predict(x),
        }
    }

    /// Recomputes the KKT report from the stored dual multipliers and the
    /// (already normalized) training data.
    pub fn verify(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<KktReport, TrainError> {
        let dual = self.dual.as_ref().ok_or(TrainError::NoDualRecord)?;
        if dual.z.len() != y.len() * self.loss.k() || dual.caps.len() != y.len() {
            return Err(TrainError::InvalidData(format!(
                "stored multipliers cover {} samples, data has {}",
                dual.caps.len(),
                y.len()
            )));
        }
        verify_kkt(self, x, y, &dual.caps, &DVector::from_column_slice(&dual.z))
    }
}

/// Points on the decision boundary get a score of zero only up to solver
/// accuracy (the default QP tolerance is 1e-8, scores are O(1)), so their
/// sign is noise. Treating `|score| <= TIE_TOL` as zero makes equivalent
/// models predict alike on such points.
pub const TIE_TOL: f64 = 1e-6;

pub fn sign(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: TrainedModel,
    pub solution: QpSolution,
    pub caps: Vec<f64>,
    pub kkt: KktReport,
    /// `1/2 ||w||^2 + sum_i C_i xi_i`.
    pub primal_objective: f64,
    /// Minimum of the dual QP (the negated dual function).
    pub dual_objective: f64,
    pub train_scores: Vec<f64>,
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<(), TrainError> {
    if x.nrows() != y.len() {
        return Err(TrainError::InvalidData(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(TrainError::InvalidData("at least two samples are needed".into()));
    }
    if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(TrainError::InvalidData("labels must be +1 or -1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::InvalidData("non-finite feature value".into()));
    }
    Ok(())
}

pub fn train(x: &DMatrix<f64>, y: &[f64], params: &TrainParams) -> Result<TrainedModel, TrainError> {
    fit(x, y, params).map(|run| run.model)
}

/// Fits a normalizer on raw training features, trains on the normalized
/// data and stores the normalizer in the model, so that
/// [`TrainedModel::predict_raw`] accepts raw features.
pub fn fit_normalized(x_raw: &DMatrix<f64>, y: &[f64], params: &TrainParams) -> Result<TrainingRun, TrainError> {
    let normalizer = NormalizationTransform::fit(x_raw).map_err(|e| TrainError::InvalidData(e.to_string()))?;
    let x = normalizer.apply(x_raw).map_err(|e| TrainError::InvalidData(e.to_string()))?;
    let mut run = fit(&x, y, params)?;
    run.model.normalizer = Some(normalizer);
    Ok(run)
}

pub fn fit(x: &DMatrix<f64>, y: &[f64], params: &TrainParams) -> Result<TrainingRun, TrainError> {
    params.validate()?;
    check_inputs(x, y)?;
    let caps = sample_weights(y, params.c0, params.balance_classes)?;
    let positives = y.iter().filter(|v| **v > 0.0).count();
    let class_ratio = positives as f64 / (y.len() - positives) as f64;

    let gram = params.kernel.gram(x);
    let l = y.len();
    let h = DMatrix::from_fn(l, l, |i, j| y[i] * y[j] * gram[(i, j)]);
    let problem = QpProblem::structured(h, &params.loss, &caps, y)?;
    let opts = SolverOptions { tol: params.qp_tol, max_iter: params.max_iter };
    let solution = qp::solve(&problem, &opts)?;
    let residual = solution.kkt_residuals.max();
    if solution.status != SolveStatus::Optimal && !(residual <= 100.0 * params.qp_tol) {
        return Err(TrainError::SolverFailed { status: solution.status, residual });
    }

    let dual = problem.structured_form().expect("structured problem");
    let s = dual.combined(&solution.z);
    let beta_full: Vec<f64> = s.iter().zip(y).map(|(s, y)| s * y).collect();
    let beta_vec = DVector::from_column_slice(&beta_full);
    let raw_scores: Vec<f64> = (&gram * &beta_vec).iter().copied().collect();

    let estimate = recover_bias(
        &solution.z,
        Some(&solution.mu),
        &raw_scores,
        &params.loss,
        y,
        &caps,
        params.active_threshold,
    );

    // Drop points whose combined coefficient is negligible, unless that
    // moves w or a training score noticeably.
    let keep: Vec<usize> =
        (0..l).filter(|&i| s[i].abs() >= params.active_threshold * params.c0).collect();
    let mut pruning_reverted = false;
    let support: Vec<usize> = if keep.len() < l {
        let dropped: Vec<usize> = (0..l).filter(|i| !keep.contains(i)).collect();
        let beta_dropped = DVector::from_iterator(dropped.len(), dropped.iter().map(|&i| beta_full[i]));
        let shifts = &gram.select_columns(&dropped) * &beta_dropped;
        let w_shift = beta_dropped.dot(&shifts.select_rows(&dropped)).max(0.0).sqrt();
        let w_norm = beta_vec.dot(&DVector::from_column_slice(&raw_scores)).max(0.0).sqrt();
        if w_shift <= PRUNE_TOL * (1.0 + w_norm) && shifts.amax() <= 1e-6 {
            keep
        } else {
            pruning_reverted = true;
            (0..l).collect()
        }
    } else {
        keep
    };

    let mut model = TrainedModel {
        kernel: params.kernel,
        loss: params.loss.clone(),
        c0: params.c0,
        balance_classes: params.balance_classes,
        normalizer: None,
        support_x: x.select_rows(&support),
        beta: support.iter().map(|&i| beta_full[i]).collect(),
        bias: estimate.bias,
        diagnostics: Diagnostics {
            bias_candidates_used: estimate.candidates,
            bias_fallback: estimate.fallback,
            bias_from_multiplier: -solution.nu[l],
            kkt_max_residual: 0.0,
            duality_gap: 0.0,
            qp_iterations: solution.iterations,
            qp_fallback_solver: solution.used_fallback,
            pruned_points: l - support.len(),
            pruning_reverted,
            class_ratio,
        },
        dual: Some(DualRecord { z: solution.z.iter().copied().collect(), caps: caps.clone() }),
    };

    let kkt = verify_kkt(&model, x, y, &caps, &solution.z)?;
    let train_scores = model.decision_scores(x)?;
    let primal_objective = 0.5 * kkt.w_norm_sq
        + caps.iter().zip(&kkt.xi).map(|(c, xi)| c * xi).sum::<f64>();
    let dual_objective = solution.objective;
    let duality_gap = (primal_objective + dual_objective).abs() / (1.0 + dual_objective.abs());
    model.diagnostics.kkt_max_residual = kkt.max_residual();
    model.diagnostics.duality_gap = duality_gap;

    Ok(TrainingRun {
        model,
        solution,
        caps,
        kkt,
        primal_objective,
        dual_objective,
        train_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEstimate {
    pub bias: f64,
    pub candidates: usize,
    pub fallback: bool,
}

/// Bias from samples with two positive multipliers: both pieces are then
/// active, which pins `u_j` to their crossing. `scores` are the kernel
/// expansions without bias, `sum_i beta_i k(x_i, x_j)`.
///
/// A multiplier counts as positive when it exceeds `threshold * C_j` and,
/// if bound multipliers are given, also dominates its own bound multiplier
/// (both scaled to unit size). Without any candidate the bias minimizes the
/// primal objective in `b`.
const ACTIVE_RATIO: f64 = 1e3;
/// Largest relative change of `w` that pruning may cause.
const PRUNE_TOL: f64 = 1e-9;

pub fn recover_bias(
    z: &DVector<f64>,
    mu: Option<&DVector<f64>>,
    scores: &[f64],
    loss: &LossSpec,
    y: &[f64],
    caps: &[f64],
    threshold: f64,
) -> BiasEstimate {
    let l = y.len();
    let k = loss.k();
    let slopes = loss.slopes();
    let intercepts = loss.intercepts();
    let c_scale = 1.0
        + slopes
            .iter()
            .zip(&intercepts)
            .map(|(d, e)| (d + e).abs())
            .fold(0.0, f64::max);
    let active = |m: usize, j: usize| {
        let v = z[m * l + j];
        let above = v > threshold * caps[j];
        match mu {
            // Near-degenerate points have both z and mu small; only a
            // multiplier that clearly dominates its dual counts.
            Some(mu) => above && v / caps[j] > ACTIVE_RATIO * mu[m * l + j] / c_scale,
            None => above,
        }
    };

    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..l {
        let mut push = |u: f64| {
            sum += y[j] * (1.0 - u) - scores[j];
            count += 1;
        };
        // Identity piece paired with piece m: u = eps_m / (1 + tau_m).
        if active(0, j) {
            for m in 1..k {
                let tau = -slopes[m];
                if (1.0 + tau).abs() >= 1e-9 && active(m, j) {
                    push(intercepts[m] / (1.0 + tau));
                }
            }
        }
        // Two non-identity pieces: u = (eps_2 - eps_1) / (tau_2 - tau_1).
        for m1 in 1..k {
            for m2 in (m1 + 1)..k {
                let (t1, t2) = (-slopes[m1], -slopes[m2]);
                if (t2 - t1).abs() >= 1e-9 && active(m1, j) && active(m2, j) {
                    push((intercepts[m2] - intercepts[m1]) / (t2 - t1));
                }
            }
        }
    }
    if count > 0 {
        return BiasEstimate { bias: sum / count as f64, candidates: count, fallback: false };
    }
    BiasEstimate { bias: minimize_primal_in_bias(scores, loss, y, caps), candidates: 0, fallback: true }
}

/// Exact minimizer of `sum_i C_i L(1 - y_i (F_i + b))` over `b`.
///
/// The function is convex piecewise linear, so its minimum is attained at a
/// breakpoint unless it is flat towards infinity. A bounded minimizing
/// interval yields its midpoint; an unbounded one the point closest to 0.
pub fn minimize_primal_in_bias(scores: &[f64], loss: &LossSpec, y: &[f64], caps: &[f64]) -> f64 {
    let objective = |b: f64| -> f64 {
        scores
            .iter()
            .zip(y)
            .zip(caps)
            .map(|((f, y), c)| c * loss.value(1.0 - y * (f + b)))
            .sum()
    };
    let envelope = loss.envelope();
    let s_lo = envelope.first().map_or(1.0, |p| p.slope);
    let s_hi = envelope.last().map_or(1.0, |p| p.slope);
    let total: f64 = caps.iter().sum();
    let (mut slope_plus, mut slope_minus) = (0.0, 0.0);
    for (y, c) in y.iter().zip(caps) {
        if *y > 0.0 {
            slope_plus -= c * s_lo;
            slope_minus -= c * s_hi;
        } else {
            slope_plus += c * s_hi;
            slope_minus += c * s_lo;
        }
    }
    let flat_tol = 1e-12 * total;
    let open_right = slope_plus <= flat_tol;
    let open_left = slope_minus >= -flat_tol;

    let mut points: Vec<f64> = Vec::new();
    for u in loss.breakpoints() {
        for (f, y) in scores.iter().zip(y) {
            points.push(y * (1.0 - u) - f);
        }
    }
    points.retain(|b| b.is_finite());
    points.sort_by(f64::total_cmp);
    points.dedup();

    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    if !points.is_empty() {
        let values: Vec<f64> = points.iter().map(|&b| objective(b)).collect();
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-10 * (1.0 + best.abs());
        let first = values.iter().position(|v| *v - best <= tol).expect("minimum exists");
        let last = values.iter().rposition(|v| *v - best <= tol).expect("minimum exists");
        if !(open_left && first == 0) {
            lo = points[first];
        }
        if !(open_right && last == points.len() - 1) {
            hi = points[last];
        }
    }
    if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else {
        0.0_f64.clamp(lo, hi)
    }
}

/// KKT residuals of a trained model against its dual multipliers.
///
/// Quantities measured in units of the weights are divided by them:
/// * `stationarity_w`: `||w_dual - w_model|| / (1 + ||w_dual||)`, nonzero
///   only through pruning;
/// * `stationarity_b`: `|sum_i s_i y_i| / max_i C_i`;
/// * `stationarity_xi`: `max_i |C_i - sum_m z_mi| / C_i`;
/// * `complementarity_max`: `max_{i,m} z_mi (xi_i - piece_m(u_i)) / C_i`;
/// * `primal_feasibility_max`: the largest negative multiplier over `C_i`
///   (`xi_i` is the loss value, so `xi_i >= piece_m(u_i)` holds exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity_w: f64,
    pub stationarity_b: f64,
    pub stationarity_xi: f64,
    pub complementarity_max: f64,
    pub primal_feasibility_max: f64,
    pub xi: Vec<f64>,
    /// `||w||^2` of the model's expansion.
    pub w_norm_sq: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.stationarity_w,
            self.stationarity_b,
            self.stationarity_xi,
            self.complementarity_max,
            self.primal_feasibility_max,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn verify_kkt(
    model: &TrainedModel,
    x: &DMatrix<f64>,
    y: &[f64],
    caps: &[f64],
    z: &DVector<f64>,
) -> Result<KktReport, TrainError> {
    check_inputs(x, y)?;
    let l = y.len();
    let k = model.loss.k();
    if z.len() != l * k || caps.len() != l {
        return Err(TrainError::InvalidData(format!(
            "{} multipliers and {} weights for {l} samples and k = {k}",
            z.len(),
            caps.len()
        )));
    }
    let slopes = model.loss.slopes();
    let pieces = model.loss.pieces();

    let s: Vec<f64> = (0..l).map(|i| (0..k).map(|m| slopes[m] * z[m * l + i]).sum()).collect();
    let beta_dual = DVector::from_iterator(l, s.iter().zip(y).map(|(s, y)| s * y));
    let beta_model = DVector::from_column_slice(&model.beta);

    let cross = model.kernel.cross(x, &model.support_x)?;
    let gram = model.kernel.gram(x);
    let dual_sq = beta_dual.dot(&(&gram * &beta_dual));
    let model_sq = if model.support_x.nrows() == 0 {
        0.0
    } else {
        beta_model.dot(&(model.kernel.gram(&model.support_x) * &beta_model))
    };
    // w_dual - w_model as one expansion. Support points that are training
    // rows are merged first so the difference is formed coefficient-wise;
    // expanding the squared norm instead cancels catastrophically.
    let mut row_index: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for i in (0..l).rev() {
        row_index.entry(x.row(i).iter().map(|v| v.to_bits()).collect()).or_default().push(i);
    }
    let mut coeff: Vec<f64> = beta_dual.iter().copied().collect();
    let mut extra_rows = Vec::new();
    let mut extra_coeff = Vec::new();
    for (j, b) in model.beta.iter().enumerate() {
        let key: Vec<u64> = model.support_x.row(j).iter().map(|v| v.to_bits()).collect();
        match row_index.get_mut(&key).and_then(|v| v.pop()) {
            Some(i) => coeff[i] -= b,
            None => {
                extra_rows.push(j);
                extra_coeff.push(-b);
            }
        }
    }
    let points = if extra_rows.is_empty() {
        x.clone()
    } else {
        let extra = model.support_x.select_rows(&extra_rows);
        let mut all = DMatrix::zeros(l + extra.nrows(), x.ncols());
        all.rows_mut(0, l).copy_from(x);
        all.rows_mut(l, extra.nrows()).copy_from(&extra);
        all
    };
    coeff.extend(extra_coeff);
    let active: Vec<usize> = (0..coeff.len()).filter(|&i| coeff[i] != 0.0).collect();
    let diff_sq = if active.is_empty() {
        0.0
    } else {
        let c = DVector::from_iterator(active.len(), active.iter().map(|&i| coeff[i]));
        c.dot(&(model.kernel.gram(&points.select_rows(&active)) * &c)).max(0.0)
    };
    let stationarity_w = diff_sq.sqrt() / (1.0 + dual_sq.max(0.0).sqrt());

    let cap_max = caps.iter().copied().fold(0.0, f64::max);
    let stationarity_b = s.iter().zip(y).map(|(s, y)| s * y).sum::<f64>().abs() / cap_max;

    let scores: Vec<f64> = (&cross * &beta_model).iter().map(|v| v + model.bias).collect();
    let mut xi = Vec::with_capacity(l);
    let mut stationarity_xi: f64 = 0.0;
    let mut complementarity_max: f64 = 0.0;
    let mut primal_feasibility_max: f64 = 0.0;
    for i in 0..l {
        let u = 1.0 - y[i] * scores[i];
        let xi_i = model.loss.value(u);
        xi.push(xi_i);
        let total: f64 = (0..k).map(|m| z[m * l + i]).sum();
        stationarity_xi = stationarity_xi.max((caps[i] - total).abs() / caps[i]);
        for (m, piece) in pieces.iter().enumerate() {
            let zm = z[m * l + i];
            let slack = xi_i - piece.eval(u);
            complementarity_max = complementarity_max.max(zm.max(0.0) * slack / caps[i]);
            primal_feasibility_max = primal_feasibility_max.max(-zm / caps[i]);
        }
    }
    Ok(KktReport {
        stationarity_w,
        stationarity_b,
        stationarity_xi,
        complementarity_max,
        primal_feasibility_max,
        xi,
        w_norm_sq: model_sq.max(0.0),
    })
}

/// Outcome of training one loss and an equivalent rewriting of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingComparison {
    pub base: LossSpec,
    pub embedded: LossSpec,
    /// Points where the two models predict differently.
    pub mismatches: usize,
    pub evaluated: usize,
    pub objective_base: f64,
    pub objective_embedded: f64,
    pub objective_rel_diff: f64,
}

impl EmbeddingComparison {
    pub fn predictions_identical(&self) -> bool {
        self.mismatches == 0
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.predictions_identical() && self.objective_rel_diff <= tol
    }
}

/// Trains `base` and `embedded` on the same data and compares predictions
/// on the training rows followed by `eval_x`, and the dual objectives.
#[allow(clippy::too_many_arguments)]
pub fn compare_losses(
    x: &DMatrix<f64>,
    y: &[f64],
    eval_x: &DMatrix<f64>,
    base: &LossSpec,
    embedded: &LossSpec,
    c0: f64,
    kernel: Kernel,
) -> Result<EmbeddingComparison, TrainError> {
    let run = |loss: &LossSpec| fit(x, y, &TrainParams::new(loss.clone(), c0, kernel));
    let a = run(base)?;
    let b = run(embedded)?;
    let mut mismatches = 0;
    let mut evaluated = 0;
    for points in [x, eval_x] {
        if points.nrows() == 0 {
            continue;
        }
        let pa = a.model.predict(points)?;
        let pb = b.model.predict(points)?;
        mismatches += pa.iter().zip(&pb).filter(|(p, q)| p != q).count();
        evaluated += pa.len();
    }
    let rel = (a.dual_objective - b.dual_objective).abs() / (1.0 + a.dual_objective.abs());
    Ok(EmbeddingComparison {
        base: base.clone(),
        embedded: embedded.clone(),
        mismatches,
        evaluated,
        objective_base: a.dual_objective,
        objective_embedded: b.dual_objective,
        objective_rel_diff: rel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    /// Hinge with two pieces against the all-zero three-piece spec.
    pub hinge: EmbeddingComparison,
    /// Pinball with two pieces against its three-piece rewriting.
    pub pinball: EmbeddingComparison,
}

impl ReductionReport {
    pub fn passed(&self) -> bool {
        self.hinge.passed(1e-6) && self.pinball.passed(1e-6)
    }
}

/// Checks that three-piece rewritings of the hinge and pinball losses
/// train to the same models as the two-piece originals.
pub fn reduction_equivalence(
    x: &DMatrix<f64>,
    y: &[f64],
    eval_x: &DMatrix<f64>,
    c0: f64,
    kernel: Kernel,
    tau: f64,
) -> Result<ReductionReport, TrainError> {
    let hinge = compare_losses(x, y, eval_x, &LossSpec::hinge(2), &LossSpec::hinge(3), c0, kernel)?;
    let pin = LossSpec::pinball(tau).map_err(|e| TrainError::InvalidParams(e.to_string()))?;
    let pinball = compare_losses(x, y, eval_x, &pin, &pin.padded(3), c0, kernel)?;
    Ok(ReductionReport { hinge, pinball })
}
