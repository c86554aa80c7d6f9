//! Evaluation quantities: (empirical) IMSE, prediction and relative
//! efficiency, the asymptotic variance of the subsample estimator, timing.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::design::{gram_g, DesignMatrix};
use crate::error::{Error, Result};
use crate::numeric::{trapezoid, weighted_cross_product};
use crate::sampling::SamplingMethod;

/// One repetition of one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionResult {
    pub method: SamplingMethod,
    pub r: usize,
    pub rep: usize,
    pub beta: Vec<f64>,
    pub seconds: f64,
    pub converged: bool,
}

/// Mean over repetitions of `√∫(β̃_k − β_ref)²`, trapezoid on `grid`.
pub fn imse(estimates: &[Vec<f64>], reference: &[f64], grid: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::domain("IMSE needs at least one repetition"));
    }
    if reference.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "reference has {} points, grid has {}",
            reference.len(),
            grid.len()
        )));
    }
    let mut total = 0.0;
    for (k, est) in estimates.iter().enumerate() {
        if est.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "estimate {k} has {} points, grid has {}",
                est.len(),
                grid.len()
            )));
        }
        let sq: Vec<f64> = est
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).powi(2))
            .collect();
        total += trapezoid(grid, &sq).sqrt();
    }
    Ok(total / estimates.len() as f64)
}

/// IMSE against the full-data estimate instead of the truth.
pub fn eimse(estimates: &[Vec<f64>], full_estimate: &[f64], grid: &[f64]) -> Result<f64> {
    imse(estimates, full_estimate, grid)
}

fn check_lengths(a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::Dimension(format!(
            "prediction vectors have lengths {}, {}, {}",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    Ok(())
}

/// `Σ(truth − sub)² / Σ(truth − full)²` over a test set, given predictions
/// `∫x_iβ`, `∫x_iβ̃` and `∫x_iβ̂`.
pub fn prediction_efficiency(truth: &[f64], sub: &[f64], full: &[f64]) -> Result<f64> {
    check_lengths(truth, sub, full)?;
    let num: f64 = truth.iter().zip(sub).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().zip(full).map(|(a, b)| (a - b).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::Degenerate(
            "full-data prediction error is zero".into(),
        ));
    }
    Ok(num / den)
}

/// `Σ(sub − full)² / Σ full²` over a test set.
pub fn relative_efficiency(sub: &[f64], full: &[f64]) -> Result<f64> {
    check_lengths(sub, full, full)?;
    let num: f64 = sub.iter().zip(full).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = full.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Err(Error::Degenerate(
            "full-data predictions are all zero".into(),
        ));
    }
    Ok(num / den)
}

/// `V_π = (1/n²) Σ B_i B_iᵀ / π_i`.
pub fn v_pi(design: &DesignMatrix, probs: &[f64]) -> Result<DMatrix<f64>> {
    let n = design.n();
    if probs.len() != n {
        return Err(Error::Dimension(format!(
            "{} probabilities for {n} rows",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::domain(format!("probability {p} must be positive")));
    }
    let inv: Vec<f64> = probs.iter().map(|p| 1.0 / p).collect();
    let v = weighted_cross_product(design.scores(), Some(&inv));
    Ok(v / (n as f64 * n as f64))
}

/// Asymptotic variance `V = τ(1−τ)/K · H⁻¹ (V_π + η G) H⁻¹` with `η = r/n`.
#[derive(Debug, Clone)]
pub struct AsymptoticVariance {
    pub v: DMatrix<f64>,
    pub v_pi: DMatrix<f64>,
    pub trace_v: f64,
    pub trace_v_pi: f64,
}

pub fn asymptotic_variance(
    design: &DesignMatrix,
    probs: &[f64],
    h_tau: &DMatrix<f64>,
    r: usize,
    tau: f64,
) -> Result<AsymptoticVariance> {
    let n = design.n();
    let d = design.dim();
    if h_tau.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "H_tau is {:?}, expected {d}x{d}",
            h_tau.shape()
        )));
    }
    let v_pi = v_pi(design, probs)?;
    let g = gram_g(design)?;
    let h_inv = h_tau
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })?;
    let eta = r as f64 / n as f64;
    let k = design.basis().interior_knots() as f64;
    let middle = &v_pi + g * eta;
    let v = (&h_inv * middle * &h_inv) * (tau * (1.0 - tau) / k);
    Ok(AsymptoticVariance {
        trace_v: v.trace(),
        trace_v_pi: v_pi.trace(),
        v,
        v_pi,
    })
}

/// Monotonic wall-clock stopwatch.
#[derive(Debug, Clone, Copy)]
pub struct Timer {
    start: Instant,
}

impl Timer {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    pub fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Runs `f` and returns its output with the elapsed seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Timer::start();
    let out = f();
    (out, t.seconds())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BSplineBasis;
    use crate::numeric::uniform_grid;

    #[test]
    fn imse_cases() {
        let grid = uniform_grid(11);
        let truth: Vec<f64> = grid.iter().map(|t| t * t).collect();
        assert_eq!(
            imse(&[truth.clone(), truth.clone()], &truth, &grid).unwrap(),
            0.0
        );
        let up: Vec<f64> = truth.iter().map(|v| v + 1.0).collect();
        let down: Vec<f64> = truth.iter().map(|v| v - 1.0).collect();
        assert!((imse(std::slice::from_ref(&up), &truth, &grid).unwrap() - 1.0).abs() < 1e-12);
        assert!((imse(&[up, down], &truth, &grid).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<f64> = truth.iter().map(|v| v + 0.3).collect();
        assert!((eimse(&[c], &truth, &grid).unwrap() - 0.3).abs() < 1e-12);
        assert!(imse(&[], &truth, &grid).is_err());
        assert!(imse(&[vec![0.0; 3]], &truth, &grid).is_err());
    }

    #[test]
    fn efficiency_cases() {
        let truth = [1.0, 2.0];
        let full = [1.5, 1.0];
        assert_eq!(prediction_efficiency(&truth, &full, &full).unwrap(), 1.0);
        assert_eq!(prediction_efficiency(&truth, &truth, &full).unwrap(), 0.0);
        let sub = [0.0, 3.0];
        let expected = (1.0 + 1.0) / (0.25 + 1.0);
        assert!((prediction_efficiency(&truth, &sub, &full).unwrap() - expected).abs() < 1e-12);
        assert!(prediction_efficiency(&truth, &sub, &truth).is_err());

        assert_eq!(relative_efficiency(&full, &full).unwrap(), 0.0);
        assert_eq!(relative_efficiency(&[3.0, 2.0], &full).unwrap(), 1.0);
        let re = relative_efficiency(&[1.0, 2.0], &full).unwrap();
        assert!((re - (0.25 + 1.0) / (2.25 + 1.0)).abs() < 1e-12);
        assert!(relative_efficiency(&[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn v_pi_two_rows() {
        let basis = BSplineBasis::new(1, 0).unwrap();
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let design = DesignMatrix::from_scores(rows.clone(), basis).unwrap();
        let v = v_pi(&design, &[0.5, 0.5]).unwrap();
        let b1 = rows.row(0).transpose();
        let b2 = rows.row(1).transpose();
        let expected = (&b1 * b1.transpose() + &b2 * b2.transpose()) / 2.0;
        assert!((v - expected).amax() < 1e-14);
    }

    #[test]
    fn timer_is_non_negative_and_nests() {
        let outer = Timer::start();
        let (_, inner) = timed(|| (0..1000).sum::<u64>());
        assert!(inner >= 0.0);
        assert!(outer.seconds() >= inner);
    }
}
