//! Seeded experiment loop: plans, fits, metrics and CSV output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{BSplineBasis, PenaltyMatrix};
use crate::design::{compute_scores, DesignMatrix};
use crate::error::{Error, Result};
use crate::metrics::{imse, prediction_efficiency, relative_efficiency, Timer};
use crate::numeric::{mix_seed, uniform_grid};
use crate::sampling::{draw_with_replacement, probabilities, SamplingMethod, SubsamplePlan};
use crate::simulate::{signal, true_beta};
use crate::solver::{eval_coefficients, fit_pirls, fit_subsample_design, PirlsOptions, Tau};
use crate::tuning::{select_lambda, LambdaGrid};

use super::config::{ExperimentSpec, GacvScope, LambdaSpec, Method, EVAL_POINTS};
use super::data::{load_data, ExperimentData};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    pub tau: f64,
    pub r: usize,
    pub metric: &'static str,
    pub value: f64,
    pub reps: usize,
    pub seed: u64,
}

/// One β estimate on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub method: Method,
    pub tau: f64,
    pub r: usize,
    pub rep: usize,
    pub beta: Vec<f64>,
    pub seconds: f64,
    pub converged: bool,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub method: Method,
    pub tau: f64,
    pub r: usize,
    pub rep: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for CellFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} tau={} r={}", self.method, self.tau, self.r)?;
        if let Some(rep) = self.rep {
            write!(f, " rep={rep}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceFit {
    pub tau: f64,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub eval_grid: Vec<f64>,
    pub n: usize,
    pub knots: usize,
    /// True slope on the evaluation grid for simulated data.
    pub truth: Option<Vec<f64>>,
    /// Full-data fit per τ, in the order of `spec.taus`.
    pub references: Vec<ReferenceFit>,
    /// Sorted by (τ index, method order, r order, rep).
    pub curves: Vec<CurveRow>,
    pub metrics: Vec<MetricRow>,
    pub plans: Vec<(String, SubsamplePlan)>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentOutput {
    /// β curves of one cell, in repetition order.
    pub fn cell(&self, method: Method, tau: f64, r: usize) -> Vec<&CurveRow> {
        self.curves
            .iter()
            .filter(|c| c.method == method && c.tau == tau && c.r == r)
            .collect()
    }

    pub fn metric(&self, method: Method, tau: f64, r: usize, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.method == method && m.tau == tau && m.r == r && m.metric == metric)
            .map(|m| m.value)
    }
}

/// Shared, read-only state for every repetition.
struct Context<'a> {
    spec: &'a ExperimentSpec,
    design: DesignMatrix,
    y: &'a [f64],
    penalty: PenaltyMatrix,
    grid: Option<LambdaGrid>,
    eval_grid: Vec<f64>,
    eval_design: DesignMatrix,
    truth_pred: Option<Vec<f64>>,
    opts: PirlsOptions,
}

struct Reference {
    lambda: f64,
    beta: Vec<f64>,
    pred: Vec<f64>,
}

struct RepOutcome {
    curve: CurveRow,
    pred: Vec<f64>,
    plan: SubsamplePlan,
}

/// Seed of repetition `rep` in cell (τ index, method, r).
pub fn rep_seed(seed: u64, tau_index: usize, method: Method, r: usize, rep: usize) -> u64 {
    let s = mix_seed(seed, 0x7A00 + tau_index as u64);
    let s = mix_seed(s, method.salt());
    let s = mix_seed(s, r as u64);
    mix_seed(s, rep as u64)
}

/// Runs the experiment on already-loaded data without touching the filesystem.
pub fn run_on_data(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutput> {
    let train = &data.train;
    let y = train.require_responses()?;
    let n = train.n();
    spec.check_sizes(n)?;
    let knots = spec.resolved_knots(n);
    let basis = BSplineBasis::new(knots, spec.degree)?;
    let penalty = basis.penalty_matrix(spec.penalty_order)?;
    let design = compute_scores(train, &basis)?;
    let eval_set = data.evaluation_set();
    let eval_design = compute_scores(eval_set, &basis)?;
    let eval_grid = uniform_grid(EVAL_POINTS);
    let truth = data.simulated.then(|| true_beta(&eval_grid));
    let truth_pred = (data.simulated && data.test.is_some()).then(|| signal(eval_set));
    let grid = match spec.lambda {
        LambdaSpec::Gacv => Some(spec.lambda_grid.resolve()?),
        LambdaSpec::Fixed(_) => None,
    };
    let ctx = Context {
        spec,
        design,
        y,
        penalty,
        grid,
        eval_grid,
        eval_design,
        truth_pred,
        opts: PirlsOptions::default(),
    };
    info!("n = {n}, K = {knots}, d = {}", basis.dim());

    let mut out = ExperimentOutput {
        eval_grid: ctx.eval_grid.clone(),
        n,
        knots,
        truth,
        references: Vec::new(),
        curves: Vec::new(),
        metrics: Vec::new(),
        plans: Vec::new(),
        failures: Vec::new(),
    };

    for (ti, &tau_value) in spec.taus.iter().enumerate() {
        let tau = Tau::new(tau_value).map_err(|e| Error::Config(e.to_string()))?;
        let timer = Timer::start();
        let reference = match full_fit(&ctx, ti, tau) {
            Ok((reference, fit_info)) => {
                out.references.push(fit_info);
                Some(reference)
            }
            Err(e) => {
                warn!("full-data fit failed at tau={tau_value}: {e}");
                out.failures.push(CellFailure {
                    method: Method::Full,
                    tau: tau_value,
                    r: n,
                    rep: None,
                    message: e.to_string(),
                });
                None
            }
        };
        let full_seconds = timer.seconds();

        for &method in &spec.methods {
            let Some(sampling) = method.sampling() else {
                if let (Some(reference), Some(info)) = (&reference, out.references.last()) {
                    let curve = CurveRow {
                        method,
                        tau: tau_value,
                        r: n,
                        rep: 0,
                        beta: reference.beta.clone(),
                        seconds: full_seconds,
                        converged: info.converged,
                        lambda: reference.lambda,
                    };
                    push_cell_metrics(
                        &ctx,
                        &mut out,
                        method,
                        tau_value,
                        n,
                        &[curve],
                        std::slice::from_ref(&reference.pred),
                        Some(reference),
                    );
                }
                continue;
            };
            let Some(reference) = &reference else {
                for &r in &spec.r {
                    out.failures.push(CellFailure {
                        method,
                        tau: tau_value,
                        r,
                        rep: None,
                        message: "no full-data reference fit".into(),
                    });
                }
                continue;
            };
            for &r in &spec.r {
                let results: Vec<(usize, Result<RepOutcome>)> = (0..spec.repetitions)
                    .into_par_iter()
                    .map(|rep| {
                        let seed = rep_seed(spec.seed, ti, method, r, rep);
                        (
                            rep,
                            run_rep(&ctx, sampling, tau, r, rep, seed, reference.lambda),
                        )
                    })
                    .collect();
                let mut curves = Vec::new();
                let mut preds = Vec::new();
                for (rep, res) in results {
                    match res {
                        Ok(o) => {
                            if spec.write_plans {
                                out.plans
                                    .push((plan_name(method, tau_value, r, rep), o.plan));
                            }
                            curves.push(o.curve);
                            preds.push(o.pred);
                        }
                        Err(e) => {
                            warn!("{method} tau={tau_value} r={r} rep={rep} failed: {e}");
                            out.failures.push(CellFailure {
                                method,
                                tau: tau_value,
                                r,
                                rep: Some(rep),
                                message: e.to_string(),
                            });
                        }
                    }
                }
                let unconverged = curves.iter().filter(|c| !c.converged).count();
                if unconverged > 0 {
                    info!("{method} tau={tau_value} r={r}: {unconverged} fit(s) hit the iteration cap");
                }
                push_cell_metrics(
                    &ctx,
                    &mut out,
                    method,
                    tau_value,
                    r,
                    &curves,
                    &preds,
                    Some(reference),
                );
            }
        }
    }
    Ok(out)
}

fn plan_name(method: Method, tau: f64, r: usize, rep: usize) -> String {
    format!("{method}_tau{tau}_r{r}_rep{rep}.csv")
}

fn resolve_lambda(
    ctx: &Context<'_>,
    rows: &nalgebra::DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    tau: Tau,
) -> Result<f64> {
    match (ctx.spec.lambda, &ctx.grid) {
        (LambdaSpec::Fixed(v), _) => Ok(v),
        (LambdaSpec::Gacv, Some(grid)) => {
            let sel = select_lambda(rows, y, weights, tau, &ctx.penalty, grid, &ctx.opts)?;
            for (lam, why) in &sel.failures {
                warn!("GACV at lambda={lam} failed: {why}");
            }
            Ok(sel.lambda)
        }
        (LambdaSpec::Gacv, None) => Err(Error::Config("GACV requested without a grid".into())),
    }
}

/// λ shared by every fit at one τ: the fixed value, or GACV on an FLopt
/// subsample of the largest r (the full data when no r is configured).
pub fn shared_lambda(
    spec: &ExperimentSpec,
    design: &DesignMatrix,
    y: &[f64],
    penalty: &PenaltyMatrix,
    tau_index: usize,
    tau: Tau,
    opts: &PirlsOptions,
) -> Result<f64> {
    let grid = match spec.lambda {
        LambdaSpec::Fixed(v) => return Ok(v),
        LambdaSpec::Gacv => spec.lambda_grid.resolve()?,
    };
    let sel = match spec.r.iter().max() {
        Some(&r) => {
            let probs = probabilities(
                SamplingMethod::FLopt,
                design,
                y,
                tau,
                0.0,
                penalty,
                spec.pilot_size,
                0,
            )?;
            let seed = mix_seed(spec.seed, 0x6AC0 + tau_index as u64);
            let plan = draw_with_replacement(Arc::from(probs), SamplingMethod::FLopt, r, seed)?;
            let rows = design.select_rows(plan.indices());
            let weights = plan.case_weights();
            select_lambda(
                &rows,
                &plan.select(y),
                Some(&weights),
                tau,
                penalty,
                &grid,
                opts,
            )?
        }
        None => select_lambda(design.scores(), y, None, tau, penalty, &grid, opts)?,
    };
    for (lam, why) in &sel.failures {
        warn!("GACV at lambda={lam} failed: {why}");
    }
    Ok(sel.lambda)
}

fn full_fit(ctx: &Context<'_>, tau_index: usize, tau: Tau) -> Result<(Reference, ReferenceFit)> {
    let lambda = match ctx.spec.gacv_scope {
        GacvScope::Shared => shared_lambda(
            ctx.spec,
            &ctx.design,
            ctx.y,
            &ctx.penalty,
            tau_index,
            tau,
            &ctx.opts,
        )?,
        GacvScope::Repetition => resolve_lambda(ctx, ctx.design.scores(), ctx.y, None, tau)?,
    };
    let model = fit_pirls(
        &ctx.design,
        ctx.y,
        tau,
        lambda,
        &ctx.penalty,
        None,
        &ctx.opts,
    )?;
    let beta = eval_coefficients(&model.basis, &model.theta, &ctx.eval_grid)?;
    let pred = (ctx.eval_design.scores() * &model.theta)
        .iter()
        .copied()
        .collect();
    Ok((
        Reference { lambda, beta, pred },
        ReferenceFit {
            tau: tau.value(),
            lambda,
            converged: model.converged,
            iterations: model.iterations,
        },
    ))
}

fn run_rep(
    ctx: &Context<'_>,
    method: SamplingMethod,
    tau: Tau,
    r: usize,
    rep: usize,
    seed: u64,
    reference_lambda: f64,
) -> Result<RepOutcome> {
    let timer = Timer::start();
    let probs = probabilities(
        method,
        &ctx.design,
        ctx.y,
        tau,
        reference_lambda,
        &ctx.penalty,
        ctx.spec.pilot_size,
        mix_seed(seed, 0x9170),
    )?;
    let plan = draw_with_replacement(Arc::from(probs), method, r, seed)?;
    let lambda = match (ctx.spec.lambda, ctx.spec.gacv_scope) {
        (LambdaSpec::Fixed(v), _) => v,
        (LambdaSpec::Gacv, GacvScope::Shared) => reference_lambda,
        (LambdaSpec::Gacv, GacvScope::Repetition) => {
            let rows = ctx.design.select_rows(plan.indices());
            let weights = plan.case_weights();
            resolve_lambda(ctx, &rows, &plan.select(ctx.y), Some(&weights), tau)?
        }
    };
    let model = fit_subsample_design(
        &ctx.design,
        ctx.y,
        tau,
        lambda,
        &ctx.penalty,
        &plan,
        &ctx.opts,
    )?;
    let seconds = timer.seconds();
    let beta = eval_coefficients(&model.basis, &model.theta, &ctx.eval_grid)?;
    let pred = (ctx.eval_design.scores() * &model.theta)
        .iter()
        .copied()
        .collect();
    Ok(RepOutcome {
        curve: CurveRow {
            method: method.into(),
            tau: tau.value(),
            r,
            rep,
            beta,
            seconds,
            converged: model.converged,
            lambda,
        },
        pred,
        plan,
    })
}

#[allow(clippy::too_many_arguments)]
fn push_cell_metrics(
    ctx: &Context<'_>,
    out: &mut ExperimentOutput,
    method: Method,
    tau: f64,
    r: usize,
    curves: &[CurveRow],
    preds: &[Vec<f64>],
    reference: Option<&Reference>,
) {
    let reps = curves.len();
    if reps > 0 {
        let seed = ctx.spec.seed;
        let mut push = |metric: &'static str, value: Result<f64>| match value {
            Ok(value) => out.metrics.push(MetricRow {
                method,
                tau,
                r,
                metric,
                value,
                reps,
                seed,
            }),
            Err(e) => warn!("{method} tau={tau} r={r}: {metric} unavailable: {e}"),
        };
        let betas: Vec<Vec<f64>> = curves.iter().map(|c| c.beta.clone()).collect();
        if let Some(truth) = &out.truth {
            push("imse", imse(&betas, truth, &ctx.eval_grid));
        }
        if let Some(reference) = reference.filter(|_| method != Method::Full) {
            push("eimse", imse(&betas, &reference.beta, &ctx.eval_grid));
            if let Some(truth_pred) = &ctx.truth_pred {
                push(
                    "log_pe",
                    mean(preds.iter().map(|p| {
                        prediction_efficiency(truth_pred, p, &reference.pred).map(f64::ln)
                    })),
                );
            }
            push(
                "re",
                mean(
                    preds
                        .iter()
                        .map(|p| relative_efficiency(p, &reference.pred)),
                ),
            );
        }
    }
    out.curves.extend_from_slice(curves);
}

fn mean(values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let v = values.collect::<Result<Vec<f64>>>()?;
    if v.is_empty() {
        return Err(Error::Degenerate("no values to average".into()));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Serialize)]
struct Manifest<'a> {
    created_unix: u64,
    version: &'static str,
    seed: u64,
    n_train: usize,
    n_eval: usize,
    knots: usize,
    failed_cells: usize,
    references: &'a [ReferenceFit],
    failures: Vec<String>,
    spec: &'a ExperimentSpec,
}

/// Loads the data, runs the experiment and writes every output file into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutput> {
    spec.validate()?;
    let data = load_data(spec)?;
    let output = run_on_data(spec, &data)?;
    write_outputs(spec, &data, &output, out_dir)?;
    Ok(output)
}

pub fn write_outputs(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    output: &ExperimentOutput,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_metrics(&output.metrics, File::create(out_dir.join("metrics.csv"))?)?;
    write_curves(output, File::create(out_dir.join("beta_curves.csv"))?)?;
    write_timings(&output.curves, File::create(out_dir.join("timings.csv"))?)?;
    if spec.write_plans {
        let dir = out_dir.join("plans");
        fs::create_dir_all(&dir)?;
        for (name, plan) in &output.plans {
            plan.write_csv(BufWriter::new(File::create(dir.join(name))?))?;
        }
    }
    let mut resolved = spec.clone();
    resolved.knots = Some(output.knots);
    let manifest = Manifest {
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        version: env!("CARGO_PKG_VERSION"),
        seed: spec.seed,
        n_train: output.n,
        n_eval: data.evaluation_set().n(),
        knots: output.knots,
        failed_cells: output.failures.len(),
        references: &output.references,
        failures: output.failures.iter().map(|f| f.to_string()).collect(),
        spec: &resolved,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out_dir.join("manifest.toml"), text)?;
    Ok(())
}

pub fn write_metrics<W: Write>(rows: &[MetricRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "tau", "r", "metric", "value", "reps", "seed"])?;
    for m in rows {
        wtr.write_record([
            m.method.to_string(),
            m.tau.to_string(),
            m.r.to_string(),
            m.metric.to_string(),
            m.value.to_string(),
            m.reps.to_string(),
            m.seed.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Wide layout: `method,tau,r,rep,lambda` then one column per evaluation point.
/// Simulated runs add a `truth` row first.
pub fn write_curves<W: Write>(output: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![
        "method".to_string(),
        "tau".into(),
        "r".into(),
        "rep".into(),
        "lambda".into(),
    ];
    header.extend(output.eval_grid.iter().map(|t| t.to_string()));
    wtr.write_record(&header)?;
    if let Some(truth) = &output.truth {
        let mut row = vec![
            "truth".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ];
        row.extend(truth.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    for c in &output.curves {
        let mut row = vec![
            c.method.to_string(),
            c.tau.to_string(),
            c.r.to_string(),
            c.rep.to_string(),
            c.lambda.to_string(),
        ];
        row.extend(c.beta.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_timings<W: Write>(curves: &[CurveRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "tau", "r", "rep", "seconds", "converged"])?;
    for c in curves {
        wtr.write_record([
            c.method.to_string(),
            c.tau.to_string(),
            c.r.to_string(),
            c.rep.to_string(),
            c.seconds.to_string(),
            c.converged.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
