//! Normalized B-spline bases on equispaced knots over [0, 1].
//!
//! Values come from the Cox–de Boor triangle and derivatives from the
//! difference recursion on the same triangle. At interior knots the basis is
//! right-continuous; at `t = 1` the last non-degenerate span is used.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre, symmetrize_upper};

/// Clamped B-spline basis of degree `p` with `K` equispaced interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    interior_knots: usize,
    knots: Vec<f64>,
}

/// Integrated outer product of the `q`-th derivatives of the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    order: usize,
    matrix: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an arbitrary symmetric matrix. Used for tests and custom penalties.
    pub fn from_matrix(order: usize, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "penalty must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { order, matrix })
    }
}

impl BSplineBasis {
    /// Builds the basis with knots `j/(K+1)`, `j = 1..K`, and `p+1`-fold boundary knots.
    pub fn new(interior_knots: usize, degree: usize) -> Result<Self> {
        if interior_knots < 1 {
            return Err(Error::domain(format!(
                "interior knot count must be at least 1, got {interior_knots}"
            )));
        }
        let spans = interior_knots + 1;
        let mut knots = Vec::with_capacity(interior_knots + 2 * (degree + 1));
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        knots.extend((1..=interior_knots).map(|j| j as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            interior_knots,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `K + p + 1`.
    pub fn dim(&self) -> usize {
        self.interior_knots + self.degree + 1
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!(
                "evaluation point {t} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Knot span index `mu` with `knots[mu] <= t < knots[mu + 1]`.
    fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let last = p + self.interior_knots;
        if t >= 1.0 {
            return last;
        }
        let guess = (t * (self.interior_knots + 1) as f64).floor() as usize;
        let mut mu = (p + guess).clamp(p, last);
        while mu < last && self.knots[mu + 1] <= t {
            mu += 1;
        }
        while mu > p && self.knots[mu] > t {
            mu -= 1;
        }
        mu
    }

    /// Nonzero basis values at `t`: returns the index of the first function
    /// and the `p + 1` values of functions `first..=first + p`.
    pub fn eval_local(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        self.check_t(t)?;
        let mu = self.span(t);
        Ok((mu - self.degree, self.cox_de_boor(mu, t)))
    }

    /// All basis values at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (first, local) = self.eval_local(t)?;
        let mut out = vec![0.0; self.dim()];
        out[first..first + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Local values and derivatives up to order `q`; row `k` holds the `k`-th derivative.
    pub fn eval_local_derivs(&self, t: f64, q: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        self.check_t(t)?;
        if q > self.degree {
            return Err(Error::domain(format!(
                "derivative order {q} exceeds spline degree {}",
                self.degree
            )));
        }
        let mu = self.span(t);
        Ok((mu - self.degree, self.derivative_triangle(mu, t, q)))
    }

    /// `q`-th derivative of every basis function at `t`.
    pub fn eval_deriv(&self, t: f64, q: usize) -> Result<Vec<f64>> {
        if q == 0 {
            return self.eval(t);
        }
        let (first, ders) = self.eval_local_derivs(t, q)?;
        let mut out = vec![0.0; self.dim()];
        out[first..first + ders[q].len()].copy_from_slice(&ders[q]);
        Ok(out)
    }

    /// Dense `m x dim` matrix of basis values at the given points.
    pub fn eval_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.dim());
        for (i, &t) in points.iter().enumerate() {
            let (first, local) = self.eval_local(t)?;
            for (k, v) in local.into_iter().enumerate() {
                out[(i, first + k)] = v;
            }
        }
        Ok(out)
    }

    /// Roughness penalty `∫ B^(q)(t) B^(q)(t)ᵀ dt`, integrated exactly by
    /// Gauss–Legendre with `p - q + 1` nodes per knot span.
    pub fn penalty_matrix(&self, q: usize) -> Result<PenaltyMatrix> {
        if q > self.degree {
            return Err(Error::domain(format!(
                "penalty order {q} exceeds spline degree {}",
                self.degree
            )));
        }
        let p = self.degree;
        let d = self.dim();
        let (nodes, weights) = gauss_legendre(p - q + 1);
        let mut m = DMatrix::zeros(d, d);
        for mu in p..=(p + self.interior_knots) {
            let (a, b) = (self.knots[mu], self.knots[mu + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let ders = self.derivative_triangle(mu, t, q);
                let row = &ders[q];
                let first = mu - p;
                for (i, vi) in row.iter().enumerate() {
                    for (j, vj) in row.iter().enumerate().skip(i) {
                        m[(first + i, first + j)] += w * half * vi * vj;
                    }
                }
            }
        }
        symmetrize_upper(&mut m);
        Ok(PenaltyMatrix {
            order: q,
            matrix: m,
        })
    }

    /// Cox–de Boor values of the `p + 1` functions supported on span `mu`.
    fn cox_de_boor(&self, mu: usize, t: f64) -> Vec<f64> {
        let p = self.degree;
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Values and derivatives `0..=q` of the functions supported on span `mu`.
    fn derivative_triangle(&self, mu: usize, t: f64, q: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle stores knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; q + 1];
        for (j, v) in ders[0].iter_mut().enumerate() {
            *v = ndu[j][p];
        }

        let p_i = p as isize;
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p_i {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=(q as isize) {
                let mut d = 0.0;
                let rk = r - k;
                let pk = p_i - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { p_i - r };
                for j in j1..=j2 {
                    let (ju, rkj) = (j as usize, (rk + j) as usize);
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                    d += a[s2][ju] * ndu[rkj][pk as usize];
                }
                if r <= pk {
                    let ku = k as usize;
                    a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][ku] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }

        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= p.saturating_sub(k) as f64;
        }
        ders
    }

    /// Greville abscissae; coefficients equal to them reproduce `β(t) = t`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.dim())
                .map(|k| 0.5 * (self.knots[k] + self.knots[k + 1]))
                .collect();
        }
        (0..self.dim())
            .map(|k| self.knots[k + 1..=k + p].iter().sum::<f64>() / p as f64)
            .collect()
    }
}
