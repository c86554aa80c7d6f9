use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use funcqr::harness::{
    self, load_data, load_simulation_config, shared_lambda, ExperimentData, ExperimentSpec,
    LambdaSpec, Method,
};
use funcqr::io::{write_curves, write_responses};
use funcqr::numeric::mix_seed;
use funcqr::sampling::{draw_with_replacement, probabilities};
use funcqr::simulate::simulate;
use funcqr::solver::{eval_beta, fit_pirls, fit_subsample_design, predict, PirlsOptions, Tau};
use funcqr::tuning::select_lambda;
use funcqr::{compute_scores, BSplineBasis, DesignMatrix, PenaltyMatrix, SamplingMethod};

#[derive(Parser)]
#[command(
    name = "funcqr",
    version,
    about = "Optimal subsampling for functional quantile regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct Target {
    /// Quantile level; defaults to the first entry of `taus`.
    #[arg(long)]
    tau: Option<f64>,
    /// Smoothing parameter or "gacv"; defaults to the configured value.
    #[arg(long)]
    lambda: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset from a simulation config.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Full-data fit.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Export a subsampling probability vector.
    Probs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "flopt")]
        method: SamplingMethod,
    },
    /// Draw one plan and fit it.
    SubsampleFit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "flopt")]
        method: SamplingMethod,
        /// Subsample size; defaults to the first entry of `r`.
        #[arg(long)]
        r: Option<usize>,
    },
    /// GACV table over the lambda grid.
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        /// Tune on a subsample drawn with this method instead of the full data.
        #[arg(long)]
        method: Option<SamplingMethod>,
        #[arg(long)]
        r: Option<usize>,
    },
    /// Timing protocol: per-method seconds over repetitions.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Full experiment driver.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

/// Fit-ready state built from an experiment config.
struct Prepared {
    spec: ExperimentSpec,
    data: ExperimentData,
    design: DesignMatrix,
    penalty: PenaltyMatrix,
    tau: Tau,
    tau_index: usize,
}

impl Prepared {
    fn y(&self) -> &[f64] {
        self.data.train.responses().unwrap_or(&[])
    }

    fn lambda(&self) -> funcqr::Result<f64> {
        shared_lambda(
            &self.spec,
            &self.design,
            self.y(),
            &self.penalty,
            self.tau_index,
            self.tau,
            &PirlsOptions::default(),
        )
    }
}

fn load_spec(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn prepare(common: &Common, target: &Target) -> Result<Prepared> {
    let mut spec = load_spec(common)?;
    if let Some(l) = &target.lambda {
        spec.lambda = l.parse::<LambdaSpec>()?;
    }
    let tau_value = target.tau.unwrap_or(spec.taus[0]);
    let tau = Tau::new(tau_value).map_err(|e| funcqr::Error::Config(e.to_string()))?;
    let tau_index = spec.taus.iter().position(|t| *t == tau_value).unwrap_or(0);
    let data = load_data(&spec)?;
    data.train.require_responses()?;
    let knots = spec.resolved_knots(data.train.n());
    let basis = BSplineBasis::new(knots, spec.degree)?;
    let penalty = basis.penalty_matrix(spec.penalty_order)?;
    let design = compute_scores(&data.train, &basis)?;
    info!("n = {}, K = {knots}, d = {}", data.train.n(), basis.dim());
    Ok(Prepared {
        spec,
        data,
        design,
        penalty,
        tau,
        tau_index,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_beta(dir: &Path, name: &str, grid: &[f64], beta: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut w = create(dir, name)?;
    writeln!(w, "t,beta")?;
    for (t, b) in grid.iter().zip(beta) {
        writeln!(w, "{t},{b}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(common: &Common) -> Result<ExitCode> {
    let mut cfg = load_simulation_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let data = simulate(&cfg)?;
    write_curves(create(&common.out, "curves.csv")?, &data.train)?;
    write_responses(create(&common.out, "responses.csv")?, &data.train)?;
    if data.test.n() > 0 {
        write_curves(create(&common.out, "test_curves.csv")?, &data.test)?;
        write_responses(create(&common.out, "test_responses.csv")?, &data.test)?;
    }
    println!(
        "wrote {} training and {} test curves to {}",
        data.train.n(),
        data.test.n(),
        common.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(common: &Common, target: &Target) -> Result<ExitCode> {
    let p = prepare(common, target)?;
    let lambda = p.lambda()?;
    let model = fit_pirls(
        &p.design,
        p.y(),
        p.tau,
        lambda,
        &p.penalty,
        None,
        &PirlsOptions::default(),
    )?;
    let fitted = predict(&model, &p.design)?;
    let below = p
        .y()
        .iter()
        .zip(&fitted)
        .filter(|(y, f)| *y - *f < 0.0)
        .count();
    let calibration = below as f64 / p.y().len() as f64;
    let theta: Vec<String> = model.theta.iter().map(|v| v.to_string()).collect();
    println!("tau = {}", p.tau.value());
    println!("lambda = {lambda}");
    println!("theta = [{}]", theta.join(", "));
    println!("objective = {}", model.objective);
    println!(
        "iterations = {} (converged: {})",
        model.iterations, model.converged
    );
    println!("negative residual fraction = {calibration}");
    let grid = funcqr::numeric::uniform_grid(harness::EVAL_POINTS);
    write_beta(&common.out, "beta.csv", &grid, &eval_beta(&model, &grid)?)?;
    Ok(ExitCode::SUCCESS)
}

fn method_probs(p: &Prepared, method: SamplingMethod, lambda: f64, seed: u64) -> Result<Vec<f64>> {
    Ok(probabilities(
        method,
        &p.design,
        p.y(),
        p.tau,
        lambda,
        &p.penalty,
        p.spec.pilot_size,
        mix_seed(seed, 0x9170),
    )?)
}

fn cmd_probs(common: &Common, target: &Target, method: SamplingMethod) -> Result<ExitCode> {
    use std::io::Write;
    let p = prepare(common, target)?;
    let lambda = if method == SamplingMethod::FAopt {
        p.lambda()?
    } else {
        0.0
    };
    let probs = method_probs(&p, method, lambda, p.spec.seed)?;
    let mut w = create(&common.out, "probs.csv")?;
    writeln!(w, "id,prob")?;
    for (id, v) in p.data.train.ids().iter().zip(&probs) {
        writeln!(w, "{id},{v}")?;
    }
    w.flush()?;
    println!("wrote {} {method} probabilities", probs.len());
    Ok(ExitCode::SUCCESS)
}

fn subsample_size(spec: &ExperimentSpec, r: Option<usize>) -> Result<usize> {
    match r.or_else(|| spec.r.first().copied()) {
        Some(r) => Ok(r),
        None => Err(funcqr::Error::Config("no subsample size given".into()).into()),
    }
}

fn cmd_subsample_fit(
    common: &Common,
    target: &Target,
    method: SamplingMethod,
    r: Option<usize>,
) -> Result<ExitCode> {
    let p = prepare(common, target)?;
    let r = subsample_size(&p.spec, r)?;
    if r > p.design.n() {
        return Err(funcqr::Error::Config(format!("r = {r} exceeds n = {}", p.design.n())).into());
    }
    let lambda = p.lambda()?;
    let seed = harness::rep_seed(p.spec.seed, p.tau_index, Method::from(method), r, 0);
    let probs = method_probs(&p, method, lambda, seed)?;
    let plan = draw_with_replacement(Arc::from(probs), method, r, seed)?;
    let model = fit_subsample_design(
        &p.design,
        p.y(),
        p.tau,
        lambda,
        &p.penalty,
        &plan,
        &PirlsOptions::default(),
    )?;
    plan.write_csv(create(&common.out, "plan.csv")?)?;
    let grid = funcqr::numeric::uniform_grid(harness::EVAL_POINTS);
    write_beta(&common.out, "beta.csv", &grid, &eval_beta(&model, &grid)?)?;
    println!(
        "{method}: r = {r}, {} distinct rows, lambda = {lambda}, objective = {}, converged: {}",
        plan.indices().len(),
        model.objective,
        model.converged
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_tune(
    common: &Common,
    target: &Target,
    method: Option<SamplingMethod>,
    r: Option<usize>,
) -> Result<ExitCode> {
    let p = prepare(common, target)?;
    let grid = p.spec.lambda_grid.resolve()?;
    let opts = PirlsOptions::default();
    let selection = match method {
        None => select_lambda(
            p.design.scores(),
            p.y(),
            None,
            p.tau,
            &p.penalty,
            &grid,
            &opts,
        )?,
        Some(method) => {
            let r = subsample_size(&p.spec, r)?;
            let seed = harness::rep_seed(p.spec.seed, p.tau_index, Method::from(method), r, 0);
            let lambda = match (method, p.spec.lambda) {
                (SamplingMethod::FAopt, LambdaSpec::Fixed(v)) => v,
                (SamplingMethod::FAopt, LambdaSpec::Gacv) => {
                    bail!("tuning on an FAopt subsample needs a fixed pilot lambda")
                }
                _ => 0.0,
            };
            let probs = method_probs(&p, method, lambda, seed)?;
            let plan = draw_with_replacement(Arc::from(probs), method, r, seed)?;
            let rows = p.design.select_rows(plan.indices());
            let weights = plan.case_weights();
            select_lambda(
                &rows,
                &plan.select(p.y()),
                Some(&weights),
                p.tau,
                &p.penalty,
                &grid,
                &opts,
            )?
        }
    };
    selection.write_csv(create(&common.out, "gacv.csv")?)?;
    for (lam, why) in &selection.failures {
        error!("lambda = {lam}: {why}");
    }
    println!("selected lambda = {}", selection.lambda);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(common: &Common) -> Result<ExitCode> {
    let spec = load_spec(common)?;
    let data = load_data(&spec)?;
    let rows = harness::bench(&spec, &data)?;
    let summary = harness::summarize(&rows);
    harness::bench::write_timing_rows(&rows, create(&common.out, "bench_timings.csv")?)?;
    harness::bench::write_timing_summary(&summary, create(&common.out, "bench_summary.csv")?)?;
    for s in &summary {
        println!(
            "{} tau={} r={} K={}: median {:.6} s over {} reps",
            s.method, s.tau, s.r, s.knots, s.median_seconds, s.reps
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(common: &Common) -> Result<ExitCode> {
    let spec = load_spec(common)?;
    let output = harness::run_experiment(&spec, &common.out)?;
    println!(
        "{} metric rows, {} curves written to {}",
        output.metrics.len(),
        output.curves.len(),
        common.out.display()
    );
    if output.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &output.failures {
            error!("{f}");
        }
        eprintln!("{} cell(s) failed", output.failures.len());
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common } => cmd_simulate(common),
        Command::Fit { common, target } => cmd_fit(common, target),
        Command::Probs {
            common,
            target,
            method,
        } => cmd_probs(common, target, *method),
        Command::SubsampleFit {
            common,
            target,
            method,
            r,
        } => cmd_subsample_fit(common, target, *method, *r),
        Command::Tune {
            common,
            target,
            method,
            r,
        } => cmd_tune(common, target, *method, *r),
        Command::Bench { common } => cmd_bench(common),
        Command::Run { common } => cmd_run(common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = matches!(
                e.downcast_ref::<funcqr::Error>(),
                Some(funcqr::Error::Config(_))
            );
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
