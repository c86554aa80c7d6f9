//! Penalized functional quantile regression.
//!
//! The objective is
//!
//! ```text
//! Σ c_i ρ_τ(y_i − B_iᵀθ) + (λ/2) θᵀ D_q θ
//! ```
//!
//! with case weights `c_i` (all ones for the full-data fit, `R_i / (r π_i)`
//! for a subsample). It is solved by PIRLS; a plain subgradient method is
//! kept alongside as a slow, independent reference.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BSplineBasis, PenaltyMatrix};
use crate::design::{compute_scores, DesignMatrix, FunctionalDataset};
use crate::error::{Error, Result};
use crate::numeric::{cholesky_with_jitter, max_abs_diff, weighted_cross_product};
use crate::sampling::SubsamplePlan;

const RIDGE_JITTER: f64 = 1e-10;

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Tau(f64);

impl Tau {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::domain(format!(
                "quantile level {tau} outside (0, 1)"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Check loss `u (τ − 1{u < 0})`.
pub fn rho_tau(u: f64, tau: Tau) -> f64 {
    if u < 0.0 {
        u * (tau.0 - 1.0)
    } else {
        u * tau.0
    }
}

/// Subgradient `τ − 1{u < 0}`; right-subgradient `τ` at zero.
pub fn psi_tau(u: f64, tau: Tau) -> f64 {
    if u < 0.0 {
        tau.0 - 1.0
    } else {
        tau.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PirlsOptions {
    /// Convergence threshold on `max |θ_new − θ_old|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Residuals smaller than this in magnitude are replaced by `±δ` in the weights.
    pub residual_guard: f64,
}

impl Default for PirlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            residual_guard: 1e-6,
        }
    }
}

/// Raw solver output on a bare score matrix.
#[derive(Debug, Clone)]
pub struct PirlsFit {
    pub theta: DVector<f64>,
    /// Diagonal of `W` used in the final weighted ridge solve (case weights included).
    pub weights: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// True objective after every iterate, starting with the initial fit.
    pub objective_trace: Vec<f64>,
}

/// A fitted coefficient function `β̂(t) = B(t)ᵀ θ̂`.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub theta: DVector<f64>,
    pub tau: Tau,
    pub lambda: f64,
    pub basis: BSplineBasis,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

impl FittedModel {
    fn from_fit(fit: PirlsFit, tau: Tau, lambda: f64, basis: BSplineBasis) -> Self {
        Self {
            theta: fit.theta,
            tau,
            lambda,
            basis,
            iterations: fit.iterations,
            converged: fit.converged,
            objective: fit.objective,
        }
    }
}

fn check_problem(
    rows: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    penalty: &PenaltyMatrix,
    case_weights: Option<&[f64]>,
) -> Result<()> {
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::Degenerate("no observations to fit".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} rows",
            y.len()
        )));
    }
    if penalty.dim() != rows.ncols() {
        return Err(Error::Dimension(format!(
            "penalty dimension {} for {} columns",
            penalty.dim(),
            rows.ncols()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!(
            "lambda {lambda} must be finite and >= 0"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("responses must be finite"));
    }
    if let Some(c) = case_weights {
        if c.len() != n {
            return Err(Error::Dimension(format!(
                "{} case weights for {n} rows",
                c.len()
            )));
        }
        if let Some(bad) = c.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::domain(format!("case weight {bad} must be positive")));
        }
    }
    Ok(())
}

/// `Σ c_i ρ_τ(y_i − B_iᵀθ) + (λ/2) θᵀ D θ`.
pub fn objective(
    rows: &DMatrix<f64>,
    y: &[f64],
    theta: &DVector<f64>,
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    case_weights: Option<&[f64]>,
) -> f64 {
    check_loss(rows, y, theta, tau, case_weights) + 0.5 * lambda * penalty_value(penalty, theta)
}

/// Weighted check-loss part of the objective.
pub fn check_loss(
    rows: &DMatrix<f64>,
    y: &[f64],
    theta: &DVector<f64>,
    tau: Tau,
    case_weights: Option<&[f64]>,
) -> f64 {
    let fitted = rows * theta;
    let mut s = 0.0;
    for i in 0..y.len() {
        let c = case_weights.map_or(1.0, |c| c[i]);
        s += c * rho_tau(y[i] - fitted[i], tau);
    }
    s
}

fn penalty_value(penalty: &PenaltyMatrix, theta: &DVector<f64>) -> f64 {
    if penalty.dim() == 0 {
        return 0.0;
    }
    theta.dot(&(penalty.matrix() * theta))
}

/// Solves `(Bᵀ W B + penalty_scale · D) θ = Bᵀ W y`.
fn weighted_ridge(
    rows: &DMatrix<f64>,
    y: &[f64],
    weights: &DVector<f64>,
    penalty: &PenaltyMatrix,
    penalty_scale: f64,
) -> Result<DVector<f64>> {
    let mut normal = weighted_cross_product(rows, Some(weights.as_slice()));
    if penalty_scale != 0.0 {
        normal += penalty.matrix() * penalty_scale;
    }
    let wy = DVector::from_iterator(y.len(), y.iter().zip(weights.iter()).map(|(v, w)| v * w));
    let rhs = rows.tr_mul(&wy);
    let chol = cholesky_with_jitter(&normal, RIDGE_JITTER)
        .ok_or_else(|| Error::Solver("normal matrix is singular after ridge jitter".into()))?;
    Ok(chol.solve(&rhs))
}

/// PIRLS weights `c_i (τ − 1{r_i < 0}) / (2 r_i)`, with `|r_i| < δ` replaced by `±δ`.
pub fn pirls_weights(
    residuals: &DVector<f64>,
    tau: Tau,
    guard: f64,
    case_weights: Option<&[f64]>,
) -> DVector<f64> {
    DVector::from_iterator(
        residuals.len(),
        residuals.iter().enumerate().map(|(i, &r)| {
            let clamped = if r.abs() < guard {
                if r < 0.0 {
                    -guard
                } else {
                    guard
                }
            } else {
                r
            };
            let c = case_weights.map_or(1.0, |c| c[i]);
            c * psi_tau(r, tau) / (2.0 * clamped)
        }),
    )
}

/// Penalty multiplier that pairs with [`pirls_weights`].
///
/// Those weights satisfy `w_i r_i = c_i ψ_τ(r_i) / 2`, so a fixed point of
/// `(BᵀWB + (λ/2) D) θ = BᵀWy` solves `Σ c_i ψ_τ(r_i) B_i = λ D θ`, the
/// stationarity condition of the `(λ/2)`-penalized objective.
pub fn pirls_penalty_scale(lambda: f64) -> f64 {
    0.5 * lambda
}

/// Penalized iteratively reweighted least squares on a bare score matrix.
///
/// Starts from the case-weighted penalized least-squares fit and iterates
/// until `max |Δθ| <= tol` or `max_iter` is reached. Without convergence the
/// best iterate by true objective is returned with `converged = false`.
pub fn pirls(
    rows: &DMatrix<f64>,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    case_weights: Option<&[f64]>,
    opts: &PirlsOptions,
) -> Result<PirlsFit> {
    check_problem(rows, y, lambda, penalty, case_weights)?;
    if !(opts.residual_guard > 0.0) {
        return Err(Error::domain("residual guard must be positive"));
    }
    let n = rows.nrows();
    let init_w = DVector::from_iterator(n, (0..n).map(|i| case_weights.map_or(1.0, |c| c[i])));
    let mut theta = weighted_ridge(rows, y, &init_w, penalty, 0.5 * lambda)?;
    // residuals are shared between the objective and the next weights
    let yv = DVector::from_column_slice(y);
    let mut residuals = &yv - rows * &theta;
    let obj = |th: &DVector<f64>, res: &DVector<f64>| {
        let mut s = 0.0;
        for (i, &r) in res.iter().enumerate() {
            s += case_weights.map_or(1.0, |c| c[i]) * rho_tau(r, tau);
        }
        s + 0.5 * lambda * penalty_value(penalty, th)
    };
    let mut current_obj = obj(&theta, &residuals);
    let mut trace = vec![current_obj];
    let mut best = (theta.clone(), init_w.clone(), current_obj);
    let mut weights = init_w;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        weights = pirls_weights(&residuals, tau, opts.residual_guard, case_weights);
        let next = weighted_ridge(rows, y, &weights, penalty, pirls_penalty_scale(lambda))?;
        let step = max_abs_diff(&next, &theta);
        theta = next;
        residuals = &yv - rows * &theta;
        current_obj = obj(&theta, &residuals);
        trace.push(current_obj);
        if current_obj < best.2 {
            best = (theta.clone(), weights.clone(), current_obj);
        }
        if step <= opts.tol {
            converged = true;
            break;
        }
    }

    let (theta, weights, objective) = if converged {
        (theta, weights, current_obj)
    } else {
        best
    };
    Ok(PirlsFit {
        theta,
        weights,
        iterations,
        converged,
        objective,
        objective_trace: trace,
    })
}

/// PIRLS on a design matrix.
pub fn fit_pirls(
    design: &DesignMatrix,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    case_weights: Option<&[f64]>,
    opts: &PirlsOptions,
) -> Result<FittedModel> {
    let fit = pirls(design.scores(), y, tau, lambda, penalty, case_weights, opts)?;
    Ok(FittedModel::from_fit(
        fit,
        tau,
        lambda,
        design.basis().clone(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientOptions {
    pub steps: usize,
    /// Step length at iteration `k` is `step_scale / √k` along the normalized
    /// subgradient. `None` picks a scale from the data.
    pub step_scale: Option<f64>,
}

impl Default for SubgradientOptions {
    fn default() -> Self {
        Self {
            steps: 100_000,
            step_scale: None,
        }
    }
}

/// Reference solver: subgradient descent with `c/√k` steps from the origin,
/// returning the best iterate seen. The step budget is split into four stages;
/// each restarts from the best iterate with `c` divided by ten. Slow; meant for small problems
/// (`d <= 10`, `n <= 500`).
const ORACLE_STAGES: usize = 4;

pub fn fit_oracle_subgradient(
    rows: &DMatrix<f64>,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    case_weights: Option<&[f64]>,
    opts: &SubgradientOptions,
) -> Result<PirlsFit> {
    check_problem(rows, y, lambda, penalty, case_weights)?;
    let n = rows.nrows();
    let d = rows.ncols();
    let c: Vec<f64> = (0..n).map(|i| case_weights.map_or(1.0, |c| c[i])).collect();
    let scale = opts.step_scale.unwrap_or_else(|| {
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let bmin = rows
            .row_iter()
            .map(|r| r.norm())
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        if bmin.is_finite() {
            (ymax / bmin).max(1.0)
        } else {
            1.0
        }
    });

    let objective_of =
        |th: &DVector<f64>| objective(rows, y, th, tau, lambda, penalty, case_weights);
    let mut theta = DVector::zeros(d);
    let mut best_theta = theta.clone();
    let mut best_obj = objective_of(&theta);
    let mut trace = Vec::new();
    let mut grad = DVector::zeros(d);
    let mut fitted = DVector::zeros(n);
    let mut slope = DVector::zeros(n);
    let stage_len = opts.steps.div_ceil(ORACLE_STAGES).max(1);
    let mut stage_scale = scale;
    let mut k_local = 0usize;
    for k in 1..=opts.steps {
        k_local += 1;
        if k_local > stage_len {
            // restart from the best iterate with a shorter step
            k_local = 1;
            stage_scale /= 10.0;
            theta.copy_from(&best_theta);
        }
        fitted.gemv(1.0, rows, &theta, 0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let r = y[i] - fitted[i];
            loss += c[i] * rho_tau(r, tau);
            slope[i] = -c[i] * psi_tau(r, tau);
        }
        grad.gemv_tr(1.0, rows, &slope, 0.0);
        let obj = if lambda > 0.0 {
            let dt = penalty.matrix() * &theta;
            grad.axpy(lambda, &dt, 1.0);
            loss + 0.5 * lambda * theta.dot(&dt)
        } else {
            loss
        };
        if obj < best_obj {
            best_obj = obj;
            best_theta.copy_from(&theta);
        }
        if k % 1000 == 0 {
            trace.push(best_obj);
        }
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            break;
        }
        theta.axpy(-stage_scale / (k_local as f64).sqrt() / gnorm, &grad, 1.0);
    }
    let final_obj = objective_of(&theta);
    if final_obj < best_obj {
        best_obj = final_obj;
        best_theta = theta;
    }
    Ok(PirlsFit {
        theta: best_theta,
        weights: DVector::from_vec(c),
        iterations: opts.steps,
        converged: true,
        objective: best_obj,
        objective_trace: trace,
    })
}

/// Full-data fit: scores, penalty of order `q`, then PIRLS with unit case weights.
pub fn fit_full(
    dataset: &FunctionalDataset,
    basis: &BSplineBasis,
    tau: Tau,
    lambda: f64,
    q: usize,
) -> Result<FittedModel> {
    let y = dataset.require_responses()?;
    if dataset.n() == 0 {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    let design = compute_scores(dataset, basis)?;
    let penalty = basis.penalty_matrix(q)?;
    fit_pirls(
        &design,
        y,
        tau,
        lambda,
        &penalty,
        None,
        &PirlsOptions::default(),
    )
}

/// Subsample fit on precomputed scores: the rows of `plan` with case weights
/// `R_i / (r π_i)` and the penalty left unscaled.
pub fn fit_subsample_design(
    design: &DesignMatrix,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    plan: &SubsamplePlan,
    opts: &PirlsOptions,
) -> Result<FittedModel> {
    if y.len() != design.n() {
        return Err(Error::Dimension(format!(
            "{} responses for {} rows",
            y.len(),
            design.n()
        )));
    }
    if plan.probs().len() != design.n() {
        return Err(Error::Dimension(format!(
            "plan covers {} rows, design has {}",
            plan.probs().len(),
            design.n()
        )));
    }
    let rows = design.select_rows(plan.indices());
    let ys = plan.select(y);
    let weights = plan.case_weights();
    let fit = pirls(&rows, &ys, tau, lambda, penalty, Some(&weights), opts)?;
    Ok(FittedModel::from_fit(
        fit,
        tau,
        lambda,
        design.basis().clone(),
    ))
}

/// Subsample fit from raw curves.
pub fn fit_subsample(
    dataset: &FunctionalDataset,
    basis: &BSplineBasis,
    tau: Tau,
    lambda: f64,
    q: usize,
    plan: &SubsamplePlan,
) -> Result<FittedModel> {
    let y = dataset.require_responses()?;
    let design = compute_scores(dataset, basis)?;
    let penalty = basis.penalty_matrix(q)?;
    fit_subsample_design(
        &design,
        y,
        tau,
        lambda,
        &penalty,
        plan,
        &PirlsOptions::default(),
    )
}

/// Fitted conditional quantiles `B_iᵀ θ̂`.
pub fn predict(model: &FittedModel, design: &DesignMatrix) -> Result<Vec<f64>> {
    if design.dim() != model.theta.len() {
        return Err(Error::Dimension(format!(
            "model has {} coefficients, design has {} columns",
            model.theta.len(),
            design.dim()
        )));
    }
    Ok((design.scores() * &model.theta).iter().copied().collect())
}

/// `β̂(t) = Σ θ̂_k B_k(t)` at each point.
pub fn eval_beta(model: &FittedModel, t_grid: &[f64]) -> Result<Vec<f64>> {
    eval_coefficients(&model.basis, &model.theta, t_grid)
}

pub fn eval_coefficients(
    basis: &BSplineBasis,
    theta: &DVector<f64>,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    if basis.dim() != theta.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for basis of dimension {}",
            theta.len(),
            basis.dim()
        )));
    }
    t_grid
        .iter()
        .map(|&t| {
            let (first, vals) = basis.eval_local(t)?;
            Ok(vals
                .iter()
                .enumerate()
                .map(|(k, v)| v * theta[first + k])
                .sum())
        })
        .collect()
}
