//! Subsampling probabilities and with-replacement draws.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::basis::PenaltyMatrix;
use crate::design::{assemble_htau, gram_g, DesignMatrix};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, mix_seed, row_norms, symmetric_eigen_range};
use crate::solver::{fit_subsample_design, PirlsOptions, Tau};

/// Relative floor applied to every probability before renormalization.
pub const PROB_FLOOR: f64 = 1e-12;
/// Largest accepted condition number of `H_τ`.
pub const MAX_CONDITION: f64 = 1e12;
/// Lower bound on the error-density estimate.
pub const DENSITY_FLOOR: f64 = 1e-6;
pub const MIN_PILOT_SIZE: usize = 200;
pub const MIN_KDE_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SamplingMethod {
    #[serde(rename = "unif")]
    Unif,
    #[serde(rename = "flopt")]
    FLopt,
    #[serde(rename = "faopt")]
    FAopt,
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMethod::Unif => "Unif",
            SamplingMethod::FLopt => "FLopt",
            SamplingMethod::FAopt => "FAopt",
        })
    }
}

impl FromStr for SamplingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unif" | "uniform" => Ok(SamplingMethod::Unif),
            "flopt" => Ok(SamplingMethod::FLopt),
            "faopt" => Ok(SamplingMethod::FAopt),
            other => Err(Error::Config(format!("unknown sampling method {other:?}"))),
        }
    }
}

/// Normalizes non-negative scores onto the simplex with the [`PROB_FLOOR`] guard.
fn normalize_scores(raw: Vec<f64>) -> Result<Vec<f64>> {
    let n = raw.len();
    let total = compensated_sum(&raw);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate(
            "sampling scores are all zero or not finite".into(),
        ));
    }
    let floor = PROB_FLOOR / n as f64;
    let mut p: Vec<f64> = raw.into_iter().map(|v| (v / total).max(floor)).collect();
    let s = compensated_sum(&p);
    for v in &mut p {
        *v /= s;
    }
    Ok(p)
}

/// Uniform probabilities `1/n`.
pub fn prob_uniform(n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::domain("uniform probabilities need n >= 1"));
    }
    Ok(vec![1.0 / n as f64; n])
}

/// L-optimal probabilities `‖B_i‖₂ / Σ_j ‖B_j‖₂`.
pub fn prob_flopt(design: &DesignMatrix) -> Result<Vec<f64>> {
    normalize_scores(design.row_norms())
}

/// A-optimal probabilities `‖H_τ⁻¹ B_i‖₂ / Σ_j ‖H_τ⁻¹ B_j‖₂`.
///
/// `H_τ` is inverted once through its Cholesky factor and applied to all
/// rows with a single matrix product. `H_τ` is rejected when its condition number exceeds [`MAX_CONDITION`].
pub fn prob_faopt(design: &DesignMatrix, h_tau: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = design.dim();
    if h_tau.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "H_tau is {:?}, design has {d} columns",
            h_tau.shape()
        )));
    }
    let (lo, hi) = symmetric_eigen_range(h_tau);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let chol = nalgebra::Cholesky::new(h_tau.clone()).ok_or(Error::IllConditioned { condition })?;
    let solved = design.scores() * chol.inverse();
    normalize_scores(row_norms(&solved))
}

/// Gaussian-kernel density estimate at zero with Silverman's bandwidth,
/// floored at [`DENSITY_FLOOR`].
pub fn estimate_density_at_zero(residuals: &[f64]) -> Result<f64> {
    let m = residuals.len();
    if m < MIN_KDE_SAMPLES {
        return Err(Error::domain(format!(
            "density estimate needs at least {MIN_KDE_SAMPLES} residuals, got {m}"
        )));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("residuals must be finite"));
    }
    let mean = residuals.iter().sum::<f64>() / m as f64;
    let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 1.06 * spread * (m as f64).powf(-0.2);
    if !(h > 0.0) {
        return Ok(DENSITY_FLOOR);
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * m as f64);
    let f = residuals
        .iter()
        .map(|r| (-0.5 * (r / h).powi(2)).exp())
        .sum::<f64>()
        * norm;
    Ok(f.max(DENSITY_FLOOR))
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Practical A-optimal probabilities under i.i.d. errors.
///
/// Draws a uniform pilot of `pilot_size` rows, fits it, estimates the error
/// density at zero from the pilot residuals, forms
/// `H_τ = f̂(0) G + (λ/n) D_q` and returns [`prob_faopt`].
pub fn make_faopt_pipeline(
    design: &DesignMatrix,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    pilot_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if pilot_size < MIN_PILOT_SIZE {
        return Err(Error::domain(format!(
            "pilot size must be at least {MIN_PILOT_SIZE}, got {pilot_size}"
        )));
    }
    let n = design.n();
    let pilot = draw_with_replacement(
        Arc::from(prob_uniform(n)?),
        SamplingMethod::Unif,
        pilot_size,
        mix_seed(seed, 0x0050_494c_4f54),
    )?;
    let fit = fit_subsample_design(
        design,
        y,
        tau,
        lambda,
        penalty,
        &pilot,
        &PirlsOptions::default(),
    )?;
    let rows = design.select_rows(pilot.indices());
    let fitted = rows * &fit.theta;
    let residuals: Vec<f64> = pilot
        .indices()
        .iter()
        .zip(fitted.iter())
        .map(|(&i, f)| y[i] - f)
        .collect();
    let f0 = estimate_density_at_zero(&residuals)?;
    let g_tau = gram_g(design)? * f0;
    let h_tau = assemble_htau(&g_tau, lambda, n, penalty)?;
    prob_faopt(design, &h_tau)
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::domain("probability vector is empty"));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::domain(format!("invalid probability {p}")));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-8 {
        return Err(Error::domain(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// Drawn subsample: distinct indices with multiplicities, plus the
/// probabilities they were drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsamplePlan {
    method: SamplingMethod,
    probs: Arc<[f64]>,
    indices: Vec<usize>,
    counts: Vec<usize>,
    r: usize,
    seed: u64,
}

/// `r` i.i.d. categorical draws from `probs`, aggregated into counts.
pub fn draw_with_replacement(
    probs: Arc<[f64]>,
    method: SamplingMethod,
    r: usize,
    seed: u64,
) -> Result<SubsamplePlan> {
    if r < 1 {
        return Err(Error::domain("subsample size must be at least 1"));
    }
    validate_probs(&probs)?;
    let table = WeightedAliasIndex::new(probs.to_vec())
        .map_err(|e| Error::domain(format!("cannot build alias table: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<usize> = (0..r).map(|_| table.sample(&mut rng)).collect();
    draws.sort_unstable();
    let mut indices = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for i in draws {
        if indices.last() == Some(&i) {
            *counts.last_mut().unwrap() += 1;
        } else {
            indices.push(i);
            counts.push(1);
        }
    }
    Ok(SubsamplePlan {
        method,
        probs,
        indices,
        counts,
        r,
        seed,
    })
}

impl SubsamplePlan {
    /// Builds a plan from explicit counts, e.g. when replaying an audit file.
    pub fn from_parts(
        method: SamplingMethod,
        probs: Arc<[f64]>,
        indices: Vec<usize>,
        counts: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        validate_probs(&probs)?;
        if indices.len() != counts.len() {
            return Err(Error::Dimension(
                "indices and counts differ in length".into(),
            ));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= probs.len()) {
            return Err(Error::domain(format!("index {i} out of range")));
        }
        if counts.contains(&0) {
            return Err(Error::domain("counts must be positive"));
        }
        if let Some(&i) = indices.iter().find(|&&i| probs[i] <= 0.0) {
            return Err(Error::domain(format!("row {i} has zero probability")));
        }
        let r = counts.iter().sum();
        Ok(Self {
            method,
            probs,
            indices,
            counts,
            r,
            seed,
        })
    }

    pub fn method(&self) -> SamplingMethod {
        self.method
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Inverse-probability case weights `R_i / (r π_i)` for the selected rows.
    pub fn case_weights(&self) -> Vec<f64> {
        self.indices
            .iter()
            .zip(&self.counts)
            .map(|(&i, &c)| c as f64 / (self.r as f64 * self.probs[i]))
            .collect()
    }

    /// Values of `v` at the selected rows.
    pub fn select(&self, v: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| v[i]).collect()
    }

    /// `max_i (n π_i)⁻¹` over all rows.
    pub fn max_inverse_weight(&self) -> f64 {
        let n = self.probs.len() as f64;
        self.probs.iter().map(|p| 1.0 / (n * p)).fold(0.0, f64::max)
    }

    /// Writes `index,count,prob` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "count", "prob"])?;
        for (&i, &c) in self.indices.iter().zip(&self.counts) {
            wtr.write_record([i.to_string(), c.to_string(), self.probs[i].to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads an audit file back against the full probability vector.
    pub fn read_csv<R: Read>(
        r: R,
        method: SamplingMethod,
        probs: Arc<[f64]>,
        seed: u64,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut indices = Vec::new();
        let mut counts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line());
            let parse = |k: usize| -> Result<&str> {
                rec.get(k)
                    .ok_or_else(|| Error::ingestion(line, "missing field"))
            };
            indices.push(
                parse(0)?
                    .parse()
                    .map_err(|_| Error::ingestion(line, "bad index"))?,
            );
            counts.push(
                parse(1)?
                    .parse()
                    .map_err(|_| Error::ingestion(line, "bad count"))?,
            );
        }
        Self::from_parts(method, probs, indices, counts, seed)
    }
}

/// Probability vector for `method`; `FAopt` runs the pilot pipeline.
#[allow(clippy::too_many_arguments)]
pub fn probabilities(
    method: SamplingMethod,
    design: &DesignMatrix,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    pilot_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    match method {
        SamplingMethod::Unif => prob_uniform(design.n()),
        SamplingMethod::FLopt => prob_flopt(design),
        SamplingMethod::FAopt => {
            make_faopt_pipeline(design, y, tau, lambda, penalty, pilot_size, seed)
        }
    }
}
