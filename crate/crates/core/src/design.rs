//! Functional data, functional scores `B_i = ∫ x_i(t) B(t) dt` and the Gram
//! matrices built from them.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{BSplineBasis, PenaltyMatrix};
use crate::error::{Error, Result};
use crate::numeric::{
    cholesky_with_jitter, cross_product, row_norms, trapezoid_weights, weighted_cross_product,
};

/// Curves sampled on a common grid over [0, 1], with optional scalar responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    ids: Vec<String>,
    grid: Vec<f64>,
    /// Row-major `n x m`.
    curves: Vec<f64>,
    responses: Option<Vec<f64>>,
}

impl FunctionalDataset {
    /// `curves` is row-major with one row of `grid.len()` values per observation.
    pub fn new(grid: Vec<f64>, curves: Vec<f64>, responses: Option<Vec<f64>>) -> Result<Self> {
        let m = grid.len();
        validate_grid(&grid)?;
        if !curves.len().is_multiple_of(m) {
            return Err(Error::Dimension(format!(
                "curve buffer of length {} is not a multiple of grid size {m}",
                curves.len()
            )));
        }
        if let Some(pos) = curves.iter().position(|v| !v.is_finite()) {
            return Err(Error::ingestion(
                None,
                format!("non-finite curve value in row {}", pos / m),
            ));
        }
        let n = curves.len() / m;
        let ids = (0..n).map(|i| i.to_string()).collect();
        let ds = Self {
            ids,
            grid,
            curves,
            responses: None,
        };
        match responses {
            Some(y) => ds.with_responses(y),
            None => Ok(ds),
        }
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} ids for {} curves",
                ids.len(),
                self.n()
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn with_responses(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} responses for {} curves",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ingestion(None, "non-finite response value"));
        }
        self.responses = Some(y);
        Ok(self)
    }

    /// Attaches responses keyed by curve id; every curve must have one.
    pub fn with_keyed_responses(self, keyed: &[(String, f64)]) -> Result<Self> {
        let lookup: HashMap<&str, f64> = keyed.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let y =
            self.ids
                .iter()
                .map(|id| {
                    lookup.get(id.as_str()).copied().ok_or_else(|| {
                        Error::ingestion(None, format!("no response for curve id {id}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        self.with_responses(y)
    }

    pub fn n(&self) -> usize {
        self.curves.len() / self.grid.len()
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn curve(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.curves[i * m..(i + 1) * m]
    }

    pub fn curves(&self) -> &[f64] {
        &self.curves
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub fn require_responses(&self) -> Result<&[f64]> {
        self.responses()
            .ok_or_else(|| Error::ingestion(None, "dataset has no responses"))
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let m = self.m();
        let mut curves = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            curves.extend_from_slice(self.curve(i));
        }
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            grid: self.grid.clone(),
            curves,
            responses: self
                .responses
                .as_ref()
                .map(|y| indices.iter().map(|&i| y[i]).collect()),
        }
    }

    /// `∫ x_i(t) f(t) dt` for every curve by the trapezoid rule on the grid.
    pub fn integrate_against(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let w = trapezoid_weights(&self.grid);
        let fw: Vec<f64> = self.grid.iter().zip(&w).map(|(&t, wj)| f(t) * wj).collect();
        (0..self.n())
            .map(|i| self.curve(i).iter().zip(&fw).map(|(x, a)| x * a).sum())
            .collect()
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::ingestion(
            None,
            format!("grid needs at least 2 points, got {}", grid.len()),
        ));
    }
    if grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 {
        return Err(Error::ingestion(None, "grid must start at 0 and end at 1"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::ingestion(None, "grid must be strictly increasing"));
    }
    Ok(())
}

/// Functional scores, one row `B_iᵀ` per observation.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    scores: DMatrix<f64>,
    basis: BSplineBasis,
}

impl DesignMatrix {
    pub fn from_scores(scores: DMatrix<f64>, basis: BSplineBasis) -> Result<Self> {
        if scores.ncols() != basis.dim() {
            return Err(Error::Dimension(format!(
                "score matrix has {} columns, basis dimension is {}",
                scores.ncols(),
                basis.dim()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("score matrix contains non-finite values"));
        }
        Ok(Self { scores, basis })
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn dim(&self) -> usize {
        self.scores.ncols()
    }

    /// Rows at `indices` as a dense matrix.
    pub fn select_rows(&self, indices: &[usize]) -> DMatrix<f64> {
        self.scores.select_rows(indices)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        row_norms(&self.scores)
    }
}

/// Trapezoid approximation of `∫ x_i(t) B_k(t) dt` for every curve and basis function.
pub fn compute_scores(dataset: &FunctionalDataset, basis: &BSplineBasis) -> Result<DesignMatrix> {
    let grid = dataset.grid();
    validate_grid(grid)?;
    let w = trapezoid_weights(grid);
    let d = basis.dim();
    let p1 = basis.degree() + 1;
    // basis values at grid points pre-multiplied by the quadrature weight
    let mut local = Vec::with_capacity(grid.len());
    for (&t, &wj) in grid.iter().zip(&w) {
        let (first, vals) = basis.eval_local(t)?;
        local.push((first, vals.into_iter().map(|v| v * wj).collect::<Vec<_>>()));
    }
    let n = dataset.n();
    let mut rows = vec![0.0; n * d];
    rows.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        for (x, (first, vals)) in dataset.curve(i).iter().zip(&local) {
            if *x == 0.0 {
                continue;
            }
            for k in 0..p1 {
                out[first + k] += x * vals[k];
            }
        }
    });
    DesignMatrix::from_scores(DMatrix::from_row_slice(n, d, &rows), basis.clone())
}

/// `G = (1/n) Σ B_i B_iᵀ`.
pub fn gram_g(design: &DesignMatrix) -> Result<DMatrix<f64>> {
    let n = design.n();
    if n == 0 {
        return Err(Error::Degenerate("empty design".into()));
    }
    Ok(cross_product(design.scores()) / n as f64)
}

/// `G_τ = (1/n) Σ f_i B_i B_iᵀ` with conditional error densities `f_i` at zero.
pub fn gram_gtau(design: &DesignMatrix, densities: &[f64]) -> Result<DMatrix<f64>> {
    let n = design.n();
    if n == 0 {
        return Err(Error::Degenerate("empty design".into()));
    }
    if densities.len() != n {
        return Err(Error::Dimension(format!(
            "{} densities for {n} rows",
            densities.len()
        )));
    }
    if let Some(f) = densities.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::domain(format!(
            "density {f} must be positive and finite"
        )));
    }
    Ok(weighted_cross_product(design.scores(), Some(densities)) / n as f64)
}

/// `H_τ = G_τ + (λ/n) D_q`.
pub fn assemble_htau(
    g_tau: &DMatrix<f64>,
    lambda: f64,
    n: usize,
    penalty: &PenaltyMatrix,
) -> Result<DMatrix<f64>> {
    if g_tau.shape() != penalty.matrix().shape() {
        return Err(Error::Dimension(format!(
            "G_tau is {:?}, penalty is {:?}",
            g_tau.shape(),
            penalty.matrix().shape()
        )));
    }
    if !(lambda >= 0.0) || n == 0 {
        return Err(Error::domain(format!(
            "need lambda >= 0 and n >= 1, got {lambda}, {n}"
        )));
    }
    Ok(g_tau + penalty.matrix() * (lambda / n as f64))
}

/// The Gram family of a design at a fixed smoothing level.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    pub g: DMatrix<f64>,
    pub g_tau: Option<DMatrix<f64>>,
    pub h_tau: Option<DMatrix<f64>>,
    pub lambda: f64,
    pub n: usize,
}

impl GramMatrices {
    pub fn new(design: &DesignMatrix, lambda: f64) -> Result<Self> {
        Ok(Self {
            g: gram_g(design)?,
            g_tau: None,
            h_tau: None,
            lambda,
            n: design.n(),
        })
    }

    /// Fills `G_τ` and `H_τ` under i.i.d. errors with common density `f0` at zero.
    pub fn with_common_density(mut self, f0: f64, penalty: &PenaltyMatrix) -> Result<Self> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(Error::domain(format!(
                "density {f0} must be positive and finite"
            )));
        }
        let g_tau = &self.g * f0;
        self.h_tau = Some(assemble_htau(&g_tau, self.lambda, self.n, penalty)?);
        self.g_tau = Some(g_tau);
        Ok(self)
    }

    pub fn with_densities(
        mut self,
        design: &DesignMatrix,
        densities: &[f64],
        penalty: &PenaltyMatrix,
    ) -> Result<Self> {
        let g_tau = gram_gtau(design, densities)?;
        self.h_tau = Some(assemble_htau(&g_tau, self.lambda, self.n, penalty)?);
        self.g_tau = Some(g_tau);
        Ok(self)
    }
}

/// One irregularly observed raw record, e.g. a day of hourly readings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestionSummary {
    pub accepted: usize,
    /// `(record id, reason)` for every rejected record.
    pub rejected: Vec<(String, String)>,
}

/// Fourier design `[1, sin 2πt, cos 2πt, sin 4πt, cos 4πt, ...]` at `t`.
fn fourier_row(t: f64, n_basis: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n_basis);
    row.push(1.0);
    for k in 1..=(n_basis / 2) {
        let a = 2.0 * PI * k as f64 * t;
        row.push(a.sin());
        row.push(a.cos());
    }
    row
}

/// Least-squares Fourier smoothing of raw records onto `grid`.
///
/// Times are mapped affinely onto [0, 1] using `time_range`, or the overall
/// min/max of the observed times when `None`. Each record is fitted through
/// ridge-jittered normal equations; records with fewer observations than
/// coefficients are rejected and reported.
pub fn smooth_curves_fourier(
    records: &[RawRecord],
    n_basis: usize,
    grid: &[f64],
    time_range: Option<(f64, f64)>,
) -> Result<(FunctionalDataset, IngestionSummary)> {
    if n_basis == 0 || n_basis.is_multiple_of(2) {
        return Err(Error::domain(format!(
            "Fourier basis size must be odd and positive, got {n_basis}"
        )));
    }
    validate_grid(grid)?;
    let (t0, t1) = match time_range {
        Some(r) => r,
        None => records
            .iter()
            .flat_map(|r| r.times.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                (lo.min(t), hi.max(t))
            }),
    };
    if !(t1 > t0) {
        return Err(Error::domain("time range of raw records is empty"));
    }
    let eval: Vec<Vec<f64>> = grid.iter().map(|&t| fourier_row(t, n_basis)).collect();

    let mut summary = IngestionSummary::default();
    let mut ids = Vec::new();
    let mut curves = Vec::new();
    for rec in records {
        if rec.times.len() != rec.values.len() {
            summary
                .rejected
                .push((rec.id.clone(), "times and values differ in length".into()));
            continue;
        }
        if rec.times.len() < n_basis {
            summary.rejected.push((
                rec.id.clone(),
                format!(
                    "{} observations for {n_basis} coefficients",
                    rec.times.len()
                ),
            ));
            continue;
        }
        if rec.values.iter().chain(&rec.times).any(|v| !v.is_finite()) {
            summary
                .rejected
                .push((rec.id.clone(), "non-finite observation".into()));
            continue;
        }
        let mut ata = DMatrix::zeros(n_basis, n_basis);
        let mut atb = DVector::zeros(n_basis);
        for (&t, &v) in rec.times.iter().zip(&rec.values) {
            let row = DVector::from_vec(fourier_row((t - t0) / (t1 - t0), n_basis));
            ata.ger(1.0, &row, &row, 1.0);
            atb.axpy(v, &row, 1.0);
        }
        for k in 0..n_basis {
            ata[(k, k)] += 1e-10;
        }
        let Some(chol) = cholesky_with_jitter(&ata, 1e-10) else {
            summary
                .rejected
                .push((rec.id.clone(), "singular Fourier normal equations".into()));
            continue;
        };
        let coef = chol.solve(&atb);
        curves.extend(
            eval.iter()
                .map(|row| row.iter().zip(coef.iter()).map(|(a, c)| a * c).sum::<f64>()),
        );
        ids.push(rec.id.clone());
        summary.accepted += 1;
    }
    let ds = FunctionalDataset::new(grid.to_vec(), curves, None)?.with_ids(ids)?;
    Ok((ds, summary))
}
