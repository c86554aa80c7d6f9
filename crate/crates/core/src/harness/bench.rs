//! Timing protocol: per-method seconds for probabilities, draw and fit.
//!
//! Score computation is shared by every method and left out of the clock.
//! Repetitions run one after another on a single-thread pool so that
//! methods are compared on equal footing.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::basis::BSplineBasis;
use crate::design::compute_scores;
use crate::error::{Error, Result};
use crate::metrics::Timer;
use crate::numeric::mix_seed;
use crate::sampling::{draw_with_replacement, probabilities};
use crate::solver::{fit_pirls, fit_subsample_design, PirlsOptions, Tau};

use super::config::{ExperimentSpec, Method};
use super::data::ExperimentData;
use super::run::{rep_seed, shared_lambda};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: Method,
    pub tau: f64,
    pub r: usize,
    pub knots: usize,
    pub rep: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub method: Method,
    pub tau: f64,
    pub r: usize,
    pub knots: usize,
    pub median_seconds: f64,
    pub reps: usize,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Times `spec.repetitions` runs of every method at every τ and r.
///
/// With `lambda = "gacv"` the smoothing level is tuned once per τ as in a
/// shared-scope run, outside the clock, and held fixed. The full-data fit is timed
/// once per repetition with `r = n`.
pub fn bench(spec: &ExperimentSpec, data: &ExperimentData) -> Result<Vec<TimingRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Solver(format!("cannot build thread pool: {e}")))?;
    pool.install(|| bench_inner(spec, data))
}

fn bench_inner(spec: &ExperimentSpec, data: &ExperimentData) -> Result<Vec<TimingRow>> {
    let train = &data.train;
    let y = train.require_responses()?;
    let n = train.n();
    spec.check_sizes(n)?;
    let knots = spec.resolved_knots(n);
    let basis = BSplineBasis::new(knots, spec.degree)?;
    let penalty = basis.penalty_matrix(spec.penalty_order)?;
    let design = compute_scores(train, &basis)?;
    let opts = PirlsOptions::default();
    let mut rows = Vec::new();
    for (ti, &tau_value) in spec.taus.iter().enumerate() {
        let tau = Tau::new(tau_value).map_err(|e| Error::Config(e.to_string()))?;
        let lambda = shared_lambda(spec, &design, y, &penalty, ti, tau, &opts)?;
        for &method in &spec.methods {
            let sizes: Vec<usize> = match method {
                Method::Full => vec![n],
                _ => spec.r.clone(),
            };
            for r in sizes {
                for rep in 0..spec.repetitions {
                    let seed = rep_seed(spec.seed, ti, method, r, rep);
                    let timer = Timer::start();
                    match method.sampling() {
                        None => {
                            fit_pirls(&design, y, tau, lambda, &penalty, None, &opts)?;
                        }
                        Some(sampling) => {
                            let probs = probabilities(
                                sampling,
                                &design,
                                y,
                                tau,
                                lambda,
                                &penalty,
                                spec.pilot_size,
                                mix_seed(seed, 0x9170),
                            )?;
                            let plan = draw_with_replacement(Arc::from(probs), sampling, r, seed)?;
                            fit_subsample_design(&design, y, tau, lambda, &penalty, &plan, &opts)?;
                        }
                    }
                    rows.push(TimingRow {
                        method,
                        tau: tau_value,
                        r,
                        knots,
                        rep,
                        seconds: timer.seconds(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Median seconds per (method, τ, r, K), in first-appearance order.
pub fn summarize(rows: &[TimingRow]) -> Vec<TimingSummary> {
    let mut keys: Vec<(Method, f64, usize, usize)> = Vec::new();
    for row in rows {
        let key = (row.method, row.tau, row.r, row.knots);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, tau, r, knots)| {
            let secs: Vec<f64> = rows
                .iter()
                .filter(|x| x.method == method && x.tau == tau && x.r == r && x.knots == knots)
                .map(|x| x.seconds)
                .collect();
            TimingSummary {
                method,
                tau,
                r,
                knots,
                median_seconds: median(&secs).unwrap_or(f64::NAN),
                reps: secs.len(),
            }
        })
        .collect()
}

pub fn write_timing_rows<W: Write>(rows: &[TimingRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "tau", "r", "knots", "rep", "seconds"])?;
    for t in rows {
        wtr.write_record([
            t.method.to_string(),
            t.tau.to_string(),
            t.r.to_string(),
            t.knots.to_string(),
            t.rep.to_string(),
            t.seconds.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_timing_summary<W: Write>(rows: &[TimingSummary], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "tau", "r", "knots", "median_seconds", "reps"])?;
    for t in rows {
        wtr.write_record([
            t.method.to_string(),
            t.tau.to_string(),
            t.r.to_string(),
            t.knots.to_string(),
            t.median_seconds.to_string(),
            t.reps.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
