//! Smoothing-parameter selection by generalized approximate cross-validation.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::PenaltyMatrix;
use crate::error::{Error, Result};
use crate::numeric::{cholesky_with_jitter, weighted_cross_product};
use crate::solver::{pirls, pirls_penalty_scale, rho_tau, PirlsFit, PirlsOptions, Tau};

/// Strictly increasing positive λ values.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("lambda grid is empty"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain(
                "lambda grid values must be positive and finite",
            ));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("lambda grid must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// `points` values log-spaced between `lo` and `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 1 {
            return Self::new(vec![lo]);
        }
        if !(lo > 0.0 && hi > lo) || points == 0 {
            return Err(Error::domain(format!(
                "invalid log grid [{lo}, {hi}] with {points} points"
            )));
        }
        let (a, b) = (lo.log10(), hi.log10());
        let step = (b - a) / (points - 1) as f64;
        Self::new(
            (0..points)
                .map(|k| 10f64.powf(a + step * k as f64))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for LambdaGrid {
    /// 17 points from 1e-6 to 1e2.
    fn default() -> Self {
        Self::log_spaced(1e-6, 1e2, 17).expect("default grid is valid")
    }
}

#[derive(Debug, Clone)]
pub struct GacvEvaluation {
    pub lambda: f64,
    pub gacv: f64,
    pub df: f64,
    pub fit: PirlsFit,
}

/// Effective degrees of freedom `tr((BᵀWB + sD)⁻¹ BᵀWB)` from the final PIRLS weights.
pub fn effective_df(
    rows: &DMatrix<f64>,
    weights: &[f64],
    lambda: f64,
    penalty: &PenaltyMatrix,
) -> Result<f64> {
    let btwb = weighted_cross_product(rows, Some(weights));
    let normal = &btwb + penalty.matrix() * pirls_penalty_scale(lambda);
    let chol = cholesky_with_jitter(&normal, 1e-10)
        .ok_or_else(|| Error::Solver("singular matrix in df computation".into()))?;
    Ok(chol.solve(&btwb).trace())
}

/// GACV score `Σ ρ_τ(y_i − B_iᵀθ̂) / (n − df_λ)` over the supplied rows.
///
/// The fit uses the case weights; the numerator does not.
pub fn gacv_score(
    rows: &DMatrix<f64>,
    y: &[f64],
    tau: Tau,
    lambda: f64,
    penalty: &PenaltyMatrix,
    case_weights: Option<&[f64]>,
    opts: &PirlsOptions,
) -> Result<GacvEvaluation> {
    let fit = pirls(rows, y, tau, lambda, penalty, case_weights, opts)?;
    let df = effective_df(rows, fit.weights.as_slice(), lambda, penalty)?;
    let n = rows.nrows() as f64;
    if df >= n {
        return Err(Error::Degenerate(format!(
            "effective df {df:.4} is not below n = {n}"
        )));
    }
    let fitted = rows * &fit.theta;
    let loss: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| rho_tau(yi - fi, tau))
        .sum();
    Ok(GacvEvaluation {
        lambda,
        gacv: loss / (n - df),
        df,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GacvRow {
    pub lambda: f64,
    pub gacv: f64,
    pub df: f64,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// One row per successfully evaluated grid point, in grid order.
    pub table: Vec<GacvRow>,
    /// `(λ, reason)` for grid points whose fit failed.
    pub failures: Vec<(f64, String)>,
}

impl LambdaSelection {
    /// `lambda,gacv,df` CSV.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["lambda", "gacv", "df"])?;
        for row in &self.table {
            wtr.write_record([
                row.lambda.to_string(),
                row.gacv.to_string(),
                row.df.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Grid search for the GACV minimizer; ties go to the larger λ.
pub fn select_lambda(
    rows: &DMatrix<f64>,
    y: &[f64],
    case_weights: Option<&[f64]>,
    tau: Tau,
    penalty: &PenaltyMatrix,
    grid: &LambdaGrid,
    opts: &PirlsOptions,
) -> Result<LambdaSelection> {
    let results: Vec<(f64, Result<GacvEvaluation>)> = grid
        .values()
        .par_iter()
        .map(|&lam| {
            (
                lam,
                gacv_score(rows, y, tau, lam, penalty, case_weights, opts),
            )
        })
        .collect();
    let mut table = Vec::new();
    let mut failures = Vec::new();
    for (lam, res) in results {
        match res {
            Ok(ev) if ev.gacv.is_finite() => table.push(GacvRow {
                lambda: ev.lambda,
                gacv: ev.gacv,
                df: ev.df,
            }),
            Ok(ev) => failures.push((lam, format!("non-finite score {}", ev.gacv))),
            Err(e) => failures.push((lam, e.to_string())),
        }
    }
    let best = table
        .iter()
        .fold(None::<&GacvRow>, |acc, row| match acc {
            Some(b) if b.gacv < row.gacv => Some(b),
            _ => Some(row),
        })
        .ok_or_else(|| {
            let detail: Vec<String> = failures
                .iter()
                .map(|(l, e)| format!("lambda={l}: {e}"))
                .collect();
            Error::Degenerate(format!("every grid point failed: {}", detail.join("; ")))
        })?;
    Ok(LambdaSelection {
        lambda: best.lambda,
        table,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = LambdaGrid::default();
        assert_eq!(g.values().len(), 17);
        assert!((g.values()[0] - 1e-6).abs() < 1e-18);
        assert!((g.values()[16] - 1e2).abs() < 1e-10);
        assert!((g.values()[8] - 1e-2).abs() < 1e-14);
    }

    #[test]
    fn grid_validation() {
        assert!(LambdaGrid::new(vec![]).is_err());
        assert!(LambdaGrid::new(vec![1.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![0.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![0.1]).is_ok());
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        // an all-zero penalty makes every λ produce the same fit and score
        let rows = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0 + 0.1);
        let y: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let pen = PenaltyMatrix::from_matrix(0, DMatrix::zeros(2, 2)).unwrap();
        let grid = LambdaGrid::new(vec![0.1, 1.0, 10.0]).unwrap();
        let sel = select_lambda(
            &rows,
            &y,
            None,
            Tau::new(0.5).unwrap(),
            &pen,
            &grid,
            &PirlsOptions::default(),
        )
        .unwrap();
        assert_eq!(sel.lambda, 10.0);
        assert_eq!(sel.table.len(), 3);
    }
}
