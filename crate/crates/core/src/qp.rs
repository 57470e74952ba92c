//! Convex quadratic programs `min 1/2 z'Qz + c'z  s.t.  Az = b, z >= 0`.
//!
//! Two problem forms share one primal-dual interior-point solver
//! (Mehrotra predictor-corrector):
//!
//! * [`QpProblem::dense`] stores `Q` and `A` explicitly and factors the full
//!   KKT matrix each iteration. Meant for small, generic problems.
//! * [`QpProblem::structured`] is the k-PL-SVM dual. Variables are laid out
//!   block-major, `z[m * l + i]` being multiplier `m` of sample `i` (block 0
//!   is the identity piece). With `s = Dz` the combined coefficients
//!   `s_i = sum_m d_m z[m*l+i]`, `d = (1, -tau_1, ..., -tau_{k-1})`, the
//!   objective is `1/2 s'Hs - sum_m sum_i (d_m + eps_m) z[m*l+i]` where
//!   `H[i][j] = y_i y_j k(x_i, x_j)`. The equality rows are the per-sample
//!   simplex rows `sum_m z[m*l+i] = C_i` followed by the global row `y's = 0`.
//!   The Newton system reduces exactly to one SPD `l x l` factorization.
//!
//! Dual variables follow the convention `Qz + c - A'nu - mu = 0`, `mu >= 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::loss::LossSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("problem is infeasible (certificate margin {margin:.3e}, certificate norm {norm:.3e})")]
    Infeasible { margin: f64, norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

/// Scale-free optimality measures of a primal-dual point.
///
/// * `primal_eq = ||Az - b||_inf / (1 + ||b||_inf)`
/// * `dual_stationarity = ||Qz + c - A'nu - mu||_inf / (1 + ||c||_inf + ||Qz||_inf)`
/// * `complementarity = z'mu / (N ||z||_inf (1 + ||c||_inf))`
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub primal_eq: f64,
    pub dual_stationarity: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq.max(self.dual_stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of the equality rows.
    pub nu: DVector<f64>,
    /// Multipliers of `z >= 0`.
    pub mu: DVector<f64>,
    pub objective: f64,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    pub status: SolveStatus,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// The k-PL-SVM dual in factored form.
#[derive(Debug, Clone)]
pub struct StructuredDual {
    h: DMatrix<f64>,
    y: Vec<f64>,
    coeffs: Vec<f64>,
    caps: Vec<f64>,
    ridge: f64,
}

impl StructuredDual {
    pub fn samples(&self) -> usize {
        self.y.len()
    }

    pub fn blocks(&self) -> usize {
        self.coeffs.len()
    }

    /// `d = (1, -tau_1, ..., -tau_{k-1})`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn caps(&self) -> &[f64] {
        &self.caps
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn label_weighted_gram(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// `s = Dz`.
    pub fn combined(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.samples();
        DVector::from_fn(l, |i, _| {
            self.coeffs.iter().enumerate().map(|(m, d)| d * z[m * l + i]).sum()
        })
    }

    fn q_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.samples();
        let hs = &self.h * self.combined(z);
        DVector::from_fn(z.len(), |idx, _| self.coeffs[idx / l] * hs[idx % l])
    }

    fn a_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.samples();
        let k = self.blocks();
        let s = self.combined(z);
        let mut out = DVector::zeros(l + 1);
        for i in 0..l {
            out[i] = (0..k).map(|m| z[m * l + i]).sum();
        }
        out[l] = s.iter().zip(&self.y).map(|(s, y)| s * y).sum();
        out
    }

    fn at_mul(&self, nu: &DVector<f64>) -> DVector<f64> {
        let l = self.samples();
        let k = self.blocks();
        let global = nu[l];
        DVector::from_fn(l * k, |idx, _| {
            let (m, i) = (idx / l, idx % l);
            nu[i] + global * self.y[i] * self.coeffs[m]
        })
    }

    /// Achievable range of `y's` given the simplex rows; the problem is
    /// feasible exactly when it contains zero.
    fn global_row_range(&self) -> (f64, f64) {
        let lo_d = self.coeffs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_d = self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (c, y) in self.caps.iter().zip(&self.y) {
            let (a, b) = (y * c * lo_d, y * c * hi_d);
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone)]
enum Form {
    Dense { q: DMatrix<f64>, a: DMatrix<f64> },
    Structured(StructuredDual),
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    form: Form,
    c: DVector<f64>,
    b: DVector<f64>,
}

impl QpProblem {
    pub fn dense(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(QpError::InvalidProblem(format!(
                "Q is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(QpError::InvalidProblem(format!(
                "A is {}x{}, expected {}x{n}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let all_finite = q.iter().chain(c.iter()).chain(a.iter()).chain(b.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(QpError::InvalidProblem("non-finite entry".into()));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-10 * scale {
            return Err(QpError::InvalidProblem("Q is not symmetric".into()));
        }
        Ok(Self { form: Form::Dense { q, a }, c, b })
    }

    /// Assembles the k-PL-SVM dual from the label-weighted Gram matrix
    /// `H[i][j] = y_i y_j k(x_i, x_j)`, the loss, the per-sample weights `C_i`
    /// and the labels.
    pub fn structured(
        h: DMatrix<f64>,
        loss: &LossSpec,
        caps: &[f64],
        y: &[f64],
    ) -> Result<Self, QpError> {
        let l = y.len();
        if loss.k() < 2 {
            return Err(QpError::InvalidProblem(format!(
                "the dual needs k >= 2 pieces, got k = {}",
                loss.k()
            )));
        }
        if h.nrows() != l || h.ncols() != l || caps.len() != l {
            return Err(QpError::InvalidProblem(format!(
                "H is {}x{}, {} weights, {l} labels",
                h.nrows(),
                h.ncols(),
                caps.len()
            )));
        }
        if l == 0 {
            return Err(QpError::InvalidProblem("no samples".into()));
        }
        if let Some(c) = caps.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(QpError::InvalidProblem(format!("weight C_i = {c} is not positive")));
        }
        if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(QpError::InvalidProblem("labels must be +1 or -1".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(QpError::InvalidProblem("non-finite Gram entry".into()));
        }
        let scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-10 * scale {
            return Err(QpError::InvalidProblem("H is not symmetric".into()));
        }

        let coeffs = loss.slopes();
        let k = coeffs.len();
        let intercepts = loss.intercepts();
        let c = DVector::from_fn(k * l, |idx, _| {
            let m = idx / l;
            -coeffs[m] - intercepts[m]
        });
        let mut b = DVector::zeros(l + 1);
        for (i, cap) in caps.iter().enumerate() {
            b[i] = *cap;
        }
        let ridge = 1e-10 * h.trace().abs() / l as f64;
        let dual = StructuredDual { h, y: y.to_vec(), coeffs, caps: caps.to_vec(), ridge };
        Ok(Self { form: Form::Structured(dual), c, b })
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn structured_form(&self) -> Option<&StructuredDual> {
        match &self.form {
            Form::Structured(s) => Some(s),
            Form::Dense { .. } => None,
        }
    }

    /// Lengths of the variable blocks (`k` blocks of `l` for the dual).
    pub fn block_sizes(&self) -> Vec<usize> {
        match &self.form {
            Form::Dense { .. } => vec![self.n_vars()],
            Form::Structured(s) => vec![s.samples(); s.blocks()],
        }
    }

    pub fn q_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.form {
            Form::Dense { q, .. } => q * z,
            Form::Structured(s) => s.q_mul(z),
        }
    }

    pub fn a_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.form {
            Form::Dense { a, .. } => a * z,
            Form::Structured(s) => s.a_mul(z),
        }
    }

    pub fn at_mul(&self, nu: &DVector<f64>) -> DVector<f64> {
        match &self.form {
            Form::Dense { a, .. } => a.tr_mul(nu),
            Form::Structured(s) => s.at_mul(nu),
        }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        match &self.form {
            Form::Dense { q, .. } => 0.5 * z.dot(&(q * z)) + self.c.dot(z),
            Form::Structured(s) => {
                let sv = s.combined(z);
                0.5 * sv.dot(&(&s.h * &sv)) + self.c.dot(z)
            }
        }
    }

    /// Materializes `Q`.
    pub fn dense_q(&self) -> DMatrix<f64> {
        match &self.form {
            Form::Dense { q, .. } => q.clone(),
            Form::Structured(s) => {
                let l = s.samples();
                let n = self.n_vars();
                DMatrix::from_fn(n, n, |r, c| {
                    s.coeffs[r / l] * s.coeffs[c / l] * s.h[(r % l, c % l)]
                })
            }
        }
    }

    /// Materializes `A`.
    pub fn dense_a(&self) -> DMatrix<f64> {
        match &self.form {
            Form::Dense { a, .. } => a.clone(),
            Form::Structured(s) => {
                let l = s.samples();
                let n = self.n_vars();
                DMatrix::from_fn(l + 1, n, |r, c| {
                    let (m, i) = (c / l, c % l);
                    if r < l {
                        if r == i { 1.0 } else { 0.0 }
                    } else {
                        s.y[i] * s.coeffs[m]
                    }
                })
            }
        }
    }

    /// Residual measures of an arbitrary primal-dual point.
    pub fn residuals(
        &self,
        z: &DVector<f64>,
        nu: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> KktResiduals {
        let qz = self.q_mul(z);
        let rd = &qz + &self.c - self.at_mul(nu) - mu;
        let rp = self.a_mul(z) - &self.b;
        measure(&rp, &rd, z, mu, &self.b, &self.c, &qz)
    }
}

/// Builds the dual QP for the given label-weighted Gram matrix and loss.
pub fn assemble_structured(
    h: DMatrix<f64>,
    loss: &LossSpec,
    caps: &[f64],
    y: &[f64],
) -> Result<QpProblem, QpError> {
    QpProblem::structured(h, loss, caps, y)
}

fn measure(
    rp: &DVector<f64>,
    rd: &DVector<f64>,
    z: &DVector<f64>,
    mu: &DVector<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    qz: &DVector<f64>,
) -> KktResiduals {
    let n = z.len().max(1) as f64;
    let c_norm = c.amax();
    let z_norm = z.amax().max(f64::MIN_POSITIVE);
    KktResiduals {
        primal_eq: rp.amax() / (1.0 + b.amax()),
        dual_stationarity: rd.amax() / (1.0 + c_norm + qz.amax()),
        complementarity: z.dot(mu).abs() / (n * z_norm * (1.0 + c_norm)),
    }
}

/// Solves with the interior-point method, falling back to projected
/// gradient on numerical breakdown of the structured dual.
pub fn solve(problem: &QpProblem, opts: &SolverOptions) -> Result<QpSolution, QpError> {
    if !(opts.tol > 0.0) {
        return Err(QpError::InvalidProblem(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if let Form::Structured(s) = &problem.form {
        let (lo, hi) = s.global_row_range();
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if lo > slack || hi < -slack {
            let margin = if lo > 0.0 { lo } else { -hi };
            return Err(QpError::Infeasible { margin, norm: 1.0 });
        }
    }

    let ipm = interior_point(problem, opts);
    match (&problem.form, ipm) {
        (_, Ok(sol)) if sol.status == SolveStatus::Optimal => Ok(sol),
        (Form::Structured(_), result) => {
            let mut fallback = projected_gradient(problem, opts);
            if let Ok(ipm_sol) = result {
                if fallback.status != SolveStatus::Optimal
                    && ipm_sol.kkt_residuals.max() <= fallback.kkt_residuals.max()
                {
                    return Ok(ipm_sol);
                }
            }
            if fallback.status != SolveStatus::Optimal {
                fallback.status = SolveStatus::NumericalFailure;
            }
            Ok(fallback)
        }
        (Form::Dense { .. }, result) => {
            let unfinished = match &result {
                Ok(sol) => sol.kkt_residuals.primal_eq > opts.tol,
                Err(_) => true,
            };
            if unfinished {
                check_feasibility(problem, opts)?;
            }
            result.or_else(|_| {
                let z = DVector::from_element(problem.n_vars(), f64::NAN);
                Ok(QpSolution {
                    objective: f64::NAN,
                    nu: DVector::from_element(problem.n_eq(), f64::NAN),
                    mu: z.clone(),
                    z,
                    kkt_residuals: KktResiduals {
                        primal_eq: f64::INFINITY,
                        dual_stationarity: f64::INFINITY,
                        complementarity: f64::INFINITY,
                    },
                    iterations: 0,
                    status: SolveStatus::NumericalFailure,
                    used_fallback: false,
                })
            })
        }
    }
}

/// Phase-one LP `min 1't+ + 1't-  s.t.  Az + t+ - t- = b`; a positive optimum
/// proves infeasibility and its row multipliers form a Farkas certificate.
fn check_feasibility(problem: &QpProblem, opts: &SolverOptions) -> Result<(), QpError> {
    let a = problem.dense_a();
    let (m, n) = (a.nrows(), a.ncols());
    let mut big = DMatrix::zeros(m, n + 2 * m);
    big.view_mut((0, 0), (m, n)).copy_from(&a);
    for r in 0..m {
        big[(r, n + r)] = 1.0;
        big[(r, n + m + r)] = -1.0;
    }
    let c = DVector::from_fn(n + 2 * m, |i, _| if i < n { 0.0 } else { 1.0 });
    let phase_one = QpProblem::dense(DMatrix::zeros(n + 2 * m, n + 2 * m), c, big, problem.b.clone())?;
    let sol = match interior_point(&phase_one, opts) {
        Ok(sol) => sol,
        Err(_) => return Ok(()),
    };
    let scale = 1.0 + problem.b.amax();
    if sol.objective > 1e3 * opts.tol * scale {
        let norm = sol.nu.norm();
        let margin = problem.b.dot(&sol.nu) / norm.max(f64::MIN_POSITIVE);
        return Err(QpError::Infeasible { margin, norm });
    }
    Ok(())
}

trait NewtonSystem {
    /// Prepares for solves with `(Q + diag(lambda)) dz - A' dnu = r1, A dz = r2`.
    fn factor(&mut self, lambda: &[f64]) -> bool;
    fn solve(&self, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)>;
    /// The factored operator applied to `(dz, dnu)`.
    fn apply(&self, dz: &[f64], dnu: &[f64]) -> (Vec<f64>, Vec<f64>);
}

/// Solve followed by iterative refinement against the unfactored operator.
/// Near the optimum `diag(lambda)` spans many orders of magnitude and a
/// single solve loses digits to cancellation.
fn refined_solve(system: &dyn NewtonSystem, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let norm = |a: &[f64], b: &[f64]| a.iter().chain(b).fold(0.0_f64, |m, v| m.max(v.abs()));
    let (mut dz, mut dnu) = system.solve(r1, r2)?;
    let residual = |dz: &[f64], dnu: &[f64]| {
        let (a1, a2) = system.apply(dz, dnu);
        let e1: Vec<f64> = r1.iter().zip(&a1).map(|(r, a)| r - a).collect();
        let e2: Vec<f64> = r2.iter().zip(&a2).map(|(r, a)| r - a).collect();
        (e1, e2)
    };
    let (mut e1, mut e2) = residual(&dz, &dnu);
    let mut err = norm(&e1, &e2);
    let target = 1e-14 * norm(r1, r2);
    for _ in 0..REFINEMENT_STEPS {
        if !(err > target) {
            break;
        }
        let Some((c1, c2)) = system.solve(&e1, &e2) else { break };
        let trial_z: Vec<f64> = dz.iter().zip(&c1).map(|(a, b)| a + b).collect();
        let trial_nu: Vec<f64> = dnu.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let (t1, t2) = residual(&trial_z, &trial_nu);
        let trial_err = norm(&t1, &t2);
        if !(trial_err < err) {
            break;
        }
        (dz, dnu, e1, e2, err) = (trial_z, trial_nu, t1, t2, trial_err);
    }
    Some((dz, dnu))
}

const REFINEMENT_STEPS: usize = 3;

struct DenseNewton<'a> {
    q: &'a DMatrix<f64>,
    a: &'a DMatrix<f64>,
    ridge: f64,
    lambda: Vec<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl NewtonSystem for DenseNewton<'_> {
    fn factor(&mut self, lambda: &[f64]) -> bool {
        let (m, n) = (self.a.nrows(), self.a.ncols());
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.q);
        for (i, l) in lambda.iter().enumerate() {
            kkt[(i, i)] += l + self.ridge;
        }
        kkt.view_mut((0, n), (n, m)).copy_from(&(-self.a.transpose()));
        kkt.view_mut((n, 0), (m, n)).copy_from(self.a);
        for r in 0..m {
            kkt[(n + r, n + r)] = -self.ridge;
        }
        self.lu = Some(kkt.lu());
        self.lambda = lambda.to_vec();
        true
    }

    fn apply(&self, dz: &[f64], dnu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = DVector::from_column_slice(dz);
        let y = DVector::from_column_slice(dnu);
        let mut top = self.q * &x - self.a.tr_mul(&y);
        for (i, v) in top.iter_mut().enumerate() {
            *v += (self.lambda[i] + self.ridge) * dz[i];
        }
        let bottom = self.a * &x - &y * self.ridge;
        (top.iter().copied().collect(), bottom.iter().copied().collect())
    }

    fn solve(&self, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = r1.len();
        let rhs = DVector::from_iterator(n + r2.len(), r1.iter().chain(r2).copied());
        let sol = self.lu.as_ref()?.solve(&rhs)?;
        Some((sol.rows(0, n).iter().copied().collect(), sol.rows(n, r2.len()).iter().copied().collect()))
    }
}

/// Newton solves for the structured dual.
///
/// Eliminating the per-sample simplex multipliers leaves, with
/// `v = D dz` and `Gamma_i` the Schur complement of sample `i`'s block,
/// `(I + Gamma H) v = a + t Gamma y` and `y'v = r_global`. Writing
/// `Gamma = G^2`, the solve goes through the SPD matrix `I + G H G`.
/// Newton solves for the structured dual. Eliminating `z` per sample leaves
/// `(I + Gamma H) v = r` in `v = D dz`. Samples with large `Gamma` (those
/// sitting on a kink of the loss) are scaled by `Gamma^-1` instead of
/// `sqrt(Gamma)`, which keeps the reduced matrix bounded:
/// `M = diag(Gamma_S^-1, I_T) + E H E`, `E = diag(1_S, sqrt(Gamma_T))`.
/// Differences of coefficients are formed directly so no quantity of
/// size `1/lambda` is ever subtracted from another.
struct StructuredNewton<'a> {
    dual: &'a StructuredDual,
    inv_lambda: Vec<f64>,
    n_sum: Vec<f64>,
    /// Weighted mean of the block coefficients per sample.
    c_mean: Vec<f64>,
    /// `coeffs[m] - c_mean[i]`, block-major.
    dev: Vec<f64>,
    gamma: Vec<f64>,
    large: Vec<bool>,
    e: DVector<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    v_y: DVector<f64>,
    y_vy: f64,
    large_cut: f64,
}

impl<'a> StructuredNewton<'a> {
    fn new(dual: &'a StructuredDual) -> Self {
        let l = dual.samples();
        let h_scale = dual.h.trace().abs() / l.max(1) as f64;
        Self {
            dual,
            inv_lambda: Vec::new(),
            n_sum: vec![0.0; l],
            c_mean: vec![0.0; l],
            dev: vec![0.0; l * dual.blocks()],
            gamma: vec![0.0; l],
            large: vec![false; l],
            e: DVector::zeros(l),
            chol: None,
            v_y: DVector::zeros(l),
            y_vy: 0.0,
            large_cut: 1.0 / h_scale.max(f64::MIN_POSITIVE),
        }
    }

    /// Solves `(I + Gamma H) v = r`. `r_scaled[i]` must hold
    /// `r[i] / Gamma[i]` for the large samples; it is unused elsewhere.
    fn solve_core(&self, r: &DVector<f64>, r_scaled: &DVector<f64>) -> DVector<f64> {
        let chol = self.chol.as_ref().expect("factored");
        let l = r.len();
        let r_small = DVector::from_fn(l, |i, _| if self.large[i] { 0.0 } else { r[i] });
        let hr = &self.dual.h * &r_small;
        let rhs = DVector::from_fn(l, |i, _| {
            if self.large[i] {
                r_scaled[i] - hr[i]
            } else {
                -self.e[i] * hr[i]
            }
        });
        let s = chol.solve(&rhs);
        DVector::from_fn(l, |i, _| if self.large[i] { s[i] } else { r[i] + self.e[i] * s[i] })
    }
}

impl NewtonSystem for StructuredNewton<'_> {
    fn factor(&mut self, lambda: &[f64]) -> bool {
        let d = self.dual;
        let l = d.samples();
        let k = d.blocks();
        self.inv_lambda = lambda.iter().map(|v| 1.0 / (v + d.ridge)).collect();
        for i in 0..l {
            let n: f64 = (0..k).map(|m| self.inv_lambda[m * l + i]).sum();
            let mut mean = 0.0;
            for m in 0..k {
                mean += d.coeffs[m] * (self.inv_lambda[m * l + i] / n);
            }
            let mut gamma = 0.0;
            for m in 0..k {
                let mut dev = 0.0;
                for j in 0..k {
                    dev += (self.inv_lambda[j * l + i] / n) * (d.coeffs[m] - d.coeffs[j]);
                }
                self.dev[m * l + i] = dev;
                gamma += self.inv_lambda[m * l + i] * dev * dev;
            }
            self.n_sum[i] = n;
            self.c_mean[i] = mean;
            self.gamma[i] = gamma;
            self.large[i] = gamma > self.large_cut;
            self.e[i] = if self.large[i] { 1.0 } else { gamma.sqrt() };
        }
        let mut kmat = d.h.clone();
        for i in 0..l {
            for j in 0..l {
                kmat[(i, j)] *= self.e[i] * self.e[j];
            }
            kmat[(i, i)] += if self.large[i] { 1.0 / self.gamma[i] } else { 1.0 };
        }
        self.chol = nalgebra::Cholesky::new(kmat);
        if self.chol.is_none() {
            return false;
        }
        let r = DVector::from_fn(l, |i, _| self.gamma[i] * d.y[i]);
        let r_scaled = DVector::from_column_slice(&d.y);
        self.v_y = self.solve_core(&r, &r_scaled);
        self.y_vy = d.y.iter().zip(self.v_y.iter()).map(|(y, v)| y * v).sum();
        self.y_vy.is_finite()
    }

    fn solve(&self, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dual;
        let l = d.samples();
        let k = d.blocks();
        let w = |m: usize, i: usize| self.inv_lambda[m * l + i];
        let mut p_mean = vec![0.0; l];
        let mut a = DVector::zeros(l);
        for i in 0..l {
            let n = self.n_sum[i];
            let (mut pm, mut ai) = (0.0, 0.0);
            for m in 0..k {
                let idx = m * l + i;
                pm += (w(m, i) / n) * r1[idx];
                ai += w(m, i) * self.dev[idx] * r1[idx];
            }
            p_mean[i] = pm;
            a[i] = ai + self.c_mean[i] * r2[i];
        }
        let a_scaled = DVector::from_fn(l, |i, _| if self.large[i] { a[i] / self.gamma[i] } else { 0.0 });
        let v_a = self.solve_core(&a, &a_scaled);
        let y_va: f64 = d.y.iter().zip(v_a.iter()).map(|(y, v)| y * v).sum();
        let t = if self.y_vy > 0.0 {
            (r2[l] - y_va) / self.y_vy
        } else {
            // Every block is parallel to the simplex row: y's is fixed.
            0.0
        };
        let v = v_a + &self.v_y * t;
        let hv = &d.h * &v;
        let mut dz = vec![0.0; l * k];
        let mut dnu = vec![0.0; l + 1];
        for i in 0..l {
            let n = self.n_sum[i];
            // `Gamma h = v - a - t Gamma y`, exact for the large samples.
            let h_i = if self.large[i] {
                (v[i] - a[i]) / self.gamma[i]
            } else {
                t * d.y[i] - hv[i]
            };
            dnu[i] = r2[i] / n - p_mean[i] - self.c_mean[i] * h_i;
            for m in 0..k {
                let idx = m * l + i;
                let mut spread = 0.0;
                for j in 0..k {
                    spread += (w(j, i) / n) * (r1[idx] - r1[j * l + i]);
                }
                dz[idx] = w(m, i) * (spread + r2[i] / n + self.dev[idx] * h_i);
            }
        }
        dnu[l] = t;
        if dz.iter().chain(&dnu).all(|v| v.is_finite()) {
            Some((dz, dnu))
        } else {
            None
        }
    }

    fn apply(&self, dz: &[f64], dnu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = DVector::from_column_slice(dz);
        let y = DVector::from_column_slice(dnu);
        let mut top = self.dual.q_mul(&x) - self.dual.at_mul(&y);
        for (i, v) in top.iter_mut().enumerate() {
            *v += dz[i] / self.inv_lambda[i];
        }
        (top.iter().copied().collect(), self.dual.a_mul(&x).iter().copied().collect())
    }
}

const TIGHTENING: f64 = 1e-3;

/// `(z, nu, mu)`.
type Iterate = (DVector<f64>, DVector<f64>, DVector<f64>);

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn interior_point(problem: &QpProblem, opts: &SolverOptions) -> Result<QpSolution, ()> {
    let n = problem.n_vars();
    let m = problem.n_eq();
    let c = &problem.c;
    let c_scale = 1.0 + c.amax();

    let (mut z, mut system): (DVector<f64>, Box<dyn NewtonSystem>) = match &problem.form {
        Form::Dense { q, a } => {
            let ridge = 1e-12 * (1.0 + q.amax());
            (DVector::from_element(n, 1.0), Box::new(DenseNewton { q, a, ridge, lambda: Vec::new(), lu: None }))
        }
        Form::Structured(s) => {
            let l = s.samples();
            let k = s.blocks() as f64;
            let z0 = DVector::from_fn(n, |idx, _| s.caps[idx % l] / k);
            (z0, Box::new(StructuredNewton::new(s)))
        }
    };
    let mut mu = DVector::from_element(n, c_scale);
    let mut nu = DVector::zeros(m);

    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut residuals;
    let mut accepted: Option<(Iterate, KktResiduals)> = None;
    loop {
        let qz = problem.q_mul(&z);
        let rd = &qz + c - problem.at_mul(&nu) - &mu;
        let rp = problem.a_mul(&z) - &problem.b;
        residuals = measure(&rp, &rd, &z, &mu, &problem.b, c, &qz);
        // Complementarity is pushed well below the tolerance so that free
        // multipliers are resolved accurately. Past that point the Newton
        // systems degrade, so an iterate that loses the tolerance again is
        // discarded in favour of the last one that met it.
        let converged = residuals.max() <= opts.tol;
        if !converged {
            if let Some(((z0, nu0, mu0), r0)) = accepted.take() {
                (z, nu, mu, residuals) = (z0, nu0, mu0, r0);
                status = SolveStatus::Optimal;
                break;
            }
        }
        if !residuals.max().is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if converged && residuals.complementarity <= TIGHTENING * opts.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if converged {
            accepted = Some(((z.clone(), nu.clone(), mu.clone()), residuals));
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let gap = z.dot(&mu) / n as f64;
        let lambda: Vec<f64> = z.iter().zip(mu.iter()).map(|(z, mu)| mu / z).collect();
        if !system.factor(&lambda) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        let r2: Vec<f64> = rp.iter().map(|v| -v).collect();

        // Predictor.
        let rc_aff: Vec<f64> = z.iter().zip(mu.iter()).map(|(z, mu)| -z * mu).collect();
        let direction = |rc: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let r1: Vec<f64> = (0..n).map(|i| -rd[i] + rc[i] / z[i]).collect();
            let (dz, dnu) = refined_solve(system.as_ref(), &r1, &r2)?;
            let dmu: Vec<f64> = (0..n).map(|i| (rc[i] - mu[i] * dz[i]) / z[i]).collect();
            Some((dz, dnu, dmu))
        };
        let Some((dz_aff, _, dmu_aff)) = direction(&rc_aff) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let step_aff = max_step(z.as_slice(), &dz_aff).min(max_step(mu.as_slice(), &dmu_aff)).min(1.0);
        let gap_aff = (0..n)
            .map(|i| (z[i] + step_aff * dz_aff[i]) * (mu[i] + step_aff * dmu_aff[i]))
            .sum::<f64>()
            / n as f64;
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc: Vec<f64> = (0..n)
            .map(|i| -z[i] * mu[i] - dz_aff[i] * dmu_aff[i] + sigma * gap)
            .collect();
        let Some((dz, dnu, dmu)) = direction(&rc) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let step = (0.995 * max_step(z.as_slice(), &dz).min(max_step(mu.as_slice(), &dmu))).min(1.0);
        if !(step > 1e-14) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        for i in 0..n {
            z[i] += step * dz[i];
            mu[i] += step * dmu[i];
        }
        for (v, d) in nu.iter_mut().zip(&dnu) {
            *v += step * d;
        }
    }

    if status == SolveStatus::NumericalFailure && !residuals.max().is_finite() {
        return Err(());
    }
    if residuals.max() <= opts.tol {
        status = SolveStatus::Optimal;
    }
    let objective = problem.objective(&z);
    Ok(QpSolution {
        z,
        nu,
        mu,
        objective,
        kkt_residuals: residuals,
        iterations,
        status,
        used_fallback: false,
    })
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = cap}`.
fn project_simplex(v: &mut [f64], cap: f64) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - cap) / (j + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Augmented-Lagrangian handling of the global row with accelerated
/// projected gradient over the per-sample simplices.
fn projected_gradient(problem: &QpProblem, opts: &SolverOptions) -> QpSolution {
    let Form::Structured(s) = &problem.form else {
        unreachable!("projected gradient runs on the structured dual only")
    };
    let l = s.samples();
    let k = s.blocks();
    let n = l * k;
    let y = DVector::from_column_slice(&s.y);
    // g(z) = y's = sum_i y_i sum_m d_m z_mi; its gradient is fixed.
    let grad_g = DVector::from_fn(n, |idx, _| s.y[idx % l] * s.coeffs[idx / l]);

    // Largest eigenvalue of H by power iteration bounds ||Q||.
    let mut v = DVector::from_element(l, 1.0 / (l as f64).sqrt());
    let mut h_norm = 0.0;
    for _ in 0..100 {
        let w = &s.h * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        h_norm = norm;
        v = w / norm;
    }
    let d_sq: f64 = s.coeffs.iter().map(|d| d * d).sum();
    let q_norm = h_norm * d_sq;
    let rho = q_norm.max(1.0);

    let mut z = DVector::from_fn(n, |idx, _| s.caps[idx % l] / k as f64);
    let mut lambda = 0.0;
    let mut iterations = 0;
    let max_outer = 50;
    let max_inner = 2000;
    let lipschitz = q_norm + rho * grad_g.norm_squared();
    let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);

    let project = |x: &mut DVector<f64>| {
        let mut block = vec![0.0; k];
        for i in 0..l {
            for m in 0..k {
                block[m] = x[m * l + i];
            }
            project_simplex(&mut block, s.caps[i]);
            for m in 0..k {
                x[m * l + i] = block[m];
            }
        }
    };

    let mut best = None;
    for _ in 0..max_outer {
        let mut x = z.clone();
        let mut prev = z.clone();
        let mut t_acc = 1.0_f64;
        for _ in 0..max_inner {
            iterations += 1;
            let t_next = (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt()) / 2.0;
            let momentum = (t_acc - 1.0) / t_next;
            let point = &x + (&x - &prev) * momentum;
            let gval = grad_g.dot(&point);
            let grad = s.q_mul(&point) + &problem.c + &grad_g * (lambda + rho * gval);
            let mut next = &point - grad * step;
            project(&mut next);
            let moved = (&next - &x).amax();
            prev = x;
            x = next;
            t_acc = t_next;
            if moved <= 1e-3 * opts.tol * (1.0 + x.amax()) {
                break;
            }
        }
        z = x;
        let gval = y.dot(&s.combined(&z));
        lambda += rho * gval;

        let (nu, mu) = recover_multipliers(problem, s, &z, lambda);
        let residuals = problem.residuals(&z, &nu, &mu);
        let done = residuals.max() <= opts.tol;
        best = Some((z.clone(), nu, mu, residuals));
        if done {
            break;
        }
    }
    let (z, nu, mu, residuals) = best.expect("at least one outer iteration");
    let status = if residuals.max() <= opts.tol { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    QpSolution {
        objective: problem.objective(&z),
        z,
        nu,
        mu,
        kkt_residuals: residuals,
        iterations,
        status,
        used_fallback: true,
    }
}

/// Row and bound multipliers consistent with `z` and the global multiplier.
fn recover_multipliers(
    problem: &QpProblem,
    s: &StructuredDual,
    z: &DVector<f64>,
    lambda: f64,
) -> (DVector<f64>, DVector<f64>) {
    let l = s.samples();
    let k = s.blocks();
    let global = -lambda;
    let grad = s.q_mul(z) + &problem.c;
    let mut nu = DVector::zeros(l + 1);
    nu[l] = global;
    let mut mu = DVector::zeros(l * k);
    for i in 0..l {
        let reduced: Vec<f64> =
            (0..k).map(|m| grad[m * l + i] - global * s.y[i] * s.coeffs[m]).collect();
        let floor = reduced.iter().copied().fold(f64::INFINITY, f64::min);
        nu[i] = floor;
        for m in 0..k {
            mu[m * l + i] = reduced[m] - floor;
        }
    }
    (nu, mu)
}

/// Forces the fallback solver; for tests and diagnostics.
#[doc(hidden)]
pub fn solve_projected_gradient(problem: &QpProblem, opts: &SolverOptions) -> QpSolution {
    projected_gradient(problem, opts)
}
