//! Quadrature rules and small dense linear-algebra helpers shared by the
//! basis, design, solver and metrics modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Gauss–Legendre nodes and weights on [-1, 1].
///
/// Nodes are found by Newton iteration on the Legendre polynomial started from
/// the Chebyshev-like approximation; accurate to machine precision for the
/// small orders used here.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite trapezoid weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut w = vec![0.0; m];
    for j in 0..m.saturating_sub(1) {
        let h = grid[j + 1] - grid[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// Composite trapezoid integral of `values` sampled on `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    assert_eq!(grid.len(), values.len());
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// `n` points equally spaced on [0, 1], endpoints included.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
    }
}

/// Copies the upper triangle onto the lower one so the result is exactly symmetric.
pub(crate) fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// `Xᵀ X` for a tall column-major matrix.
pub(crate) fn cross_product(x: &DMatrix<f64>) -> DMatrix<f64> {
    weighted_cross_product(x, None)
}

/// `Xᵀ diag(w) X`, or `Xᵀ X` without weights.
///
/// Rows are processed in blocks packed into contiguous buffers; each block
/// contributes 2×4 tiles of the upper triangle.
pub(crate) fn weighted_cross_product(x: &DMatrix<f64>, w: Option<&[f64]>) -> DMatrix<f64> {
    const BLOCK: usize = 256;
    let (n, d) = x.shape();
    if let Some(w) = w {
        assert_eq!(w.len(), n, "weight length must match rows");
    }
    let data = x.as_slice();
    let da = d + d % 2;
    let db = d.div_ceil(4) * 4;
    let mut pa = vec![0.0f64; BLOCK * da];
    let mut pb = vec![0.0f64; BLOCK * db];
    let mut acc = vec![0.0f64; da * db];
    let simd = has_fma();
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let m = end - start;
        for j in 0..d {
            let src = &data[j * n + start..j * n + end];
            pb[j * m..(j + 1) * m].copy_from_slice(src);
            let dst = &mut pa[j * m..(j + 1) * m];
            match w {
                Some(w) => {
                    for ((o, v), wi) in dst.iter_mut().zip(src).zip(&w[start..end]) {
                        *o = v * wi;
                    }
                }
                None => dst.copy_from_slice(src),
            }
        }
        pa[d * m..da * m].fill(0.0);
        pb[d * m..db * m].fill(0.0);
        let mut j = 0;
        while j < d {
            let a = &pa[j * m..(j + 2) * m];
            let mut k = j - j % 4;
            while k < d {
                let b = &pb[k * m..(k + 4) * m];
                let tile = if simd {
                    tile_2x4_fma(a, b, m)
                } else {
                    tile_2x4(a, b, m)
                };
                for q in 0..4 {
                    acc[j + (k + q) * da] += tile[q];
                    acc[j + 1 + (k + q) * da] += tile[4 + q];
                }
                k += 4;
            }
            j += 2;
        }
        start = end;
    }
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        for j in 0..=k {
            out[(j, k)] = acc[j + k * da];
        }
    }
    symmetrize_upper(&mut out);
    out
}

#[cfg(target_arch = "x86_64")]
fn has_fma() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

#[cfg(not(target_arch = "x86_64"))]
fn has_fma() -> bool {
    false
}

/// Dot products of the two length-`m` columns in `a` with the four in `b`;
/// slots `0..4` hold the first column of `a`, `4..8` the second.
fn tile_2x4(a: &[f64], b: &[f64], m: usize) -> [f64; 8] {
    let (a0, a1) = a.split_at(m);
    let mut out = [0.0; 8];
    for q in 0..4 {
        let bq = &b[q * m..(q + 1) * m];
        out[q] = dot(a0, bq);
        out[4 + q] = dot(a1, bq);
    }
    out
}

#[cfg(not(target_arch = "x86_64"))]
fn tile_2x4_fma(a: &[f64], b: &[f64], m: usize) -> [f64; 8] {
    tile_2x4(a, b, m)
}

#[cfg(target_arch = "x86_64")]
fn tile_2x4_fma(a: &[f64], b: &[f64], m: usize) -> [f64; 8] {
    assert!(a.len() >= 2 * m && b.len() >= 4 * m);
    // SAFETY: only called after runtime detection of avx2 and fma; the
    // slice lengths cover every offset read by the kernel.
    unsafe { tile_2x4_avx2(a.as_ptr(), b.as_ptr(), m) }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tile_2x4_avx2(a: *const f64, b: *const f64, m: usize) -> [f64; 8] {
    use std::arch::x86_64::*;
    let (a0, a1) = (a, a.add(m));
    let (b0, b1, b2, b3) = (b, b.add(m), b.add(2 * m), b.add(3 * m));
    let mut s00 = _mm256_setzero_pd();
    let mut s01 = _mm256_setzero_pd();
    let mut s02 = _mm256_setzero_pd();
    let mut s03 = _mm256_setzero_pd();
    let mut s10 = _mm256_setzero_pd();
    let mut s11 = _mm256_setzero_pd();
    let mut s12 = _mm256_setzero_pd();
    let mut s13 = _mm256_setzero_pd();
    let m4 = m - m % 4;
    let mut i = 0;
    while i < m4 {
        let x0 = _mm256_loadu_pd(a0.add(i));
        let x1 = _mm256_loadu_pd(a1.add(i));
        let y0 = _mm256_loadu_pd(b0.add(i));
        s00 = _mm256_fmadd_pd(x0, y0, s00);
        s10 = _mm256_fmadd_pd(x1, y0, s10);
        let y1 = _mm256_loadu_pd(b1.add(i));
        s01 = _mm256_fmadd_pd(x0, y1, s01);
        s11 = _mm256_fmadd_pd(x1, y1, s11);
        let y2 = _mm256_loadu_pd(b2.add(i));
        s02 = _mm256_fmadd_pd(x0, y2, s02);
        s12 = _mm256_fmadd_pd(x1, y2, s12);
        let y3 = _mm256_loadu_pd(b3.add(i));
        s03 = _mm256_fmadd_pd(x0, y3, s03);
        s13 = _mm256_fmadd_pd(x1, y3, s13);
        i += 4;
    }
    let mut out = [0.0f64; 8];
    let mut t = [0.0f64; 4];
    for (slot, v) in [s00, s01, s02, s03, s10, s11, s12, s13]
        .into_iter()
        .enumerate()
    {
        _mm256_storeu_pd(t.as_mut_ptr(), v);
        out[slot] = (t[0] + t[1]) + (t[2] + t[3]);
    }
    for i in m4..m {
        let (x0, x1) = (*a0.add(i), *a1.add(i));
        for q in 0..4 {
            let y = *b.add(q * m + i);
            out[q] += x0 * y;
            out[4 + q] += x1 * y;
        }
    }
    out
}

/// Euclidean norm of every row, accumulated column by column.
pub(crate) fn row_norms(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut sq = vec![0.0; n];
    for col in x.as_slice().chunks_exact(n.max(1)) {
        for (s, v) in sq.iter_mut().zip(col) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Dot product with four independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Cholesky factorization, retried once with a ridge of `jitter` times the
/// largest diagonal entry.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let mut ridged = m.clone();
    for i in 0..ridged.nrows() {
        ridged[(i, i)] += jitter * scale;
    }
    Cholesky::new(ridged)
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Extreme singular values of a matrix, `(min, max)`.
pub fn singular_value_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    (lo, hi)
}

pub(crate) fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Deterministic 64-bit mixing used to derive child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_cross_product_matches_dense() {
        for (n, d) in [(0, 3), (5, 1), (7, 2), (300, 5), (1601, 13), (600, 14)] {
            let x = DMatrix::from_fn(n, d, |i, j| ((i * 31 + j * 17) % 97) as f64 / 97.0 - 0.3);
            let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64).collect();
            let xw = DMatrix::from_fn(n, d, |i, j| x[(i, j)] * w[i]);
            let want = x.transpose() * xw;
            let scale = want.amax().max(1.0);
            assert!((weighted_cross_product(&x, Some(&w)) - &want).amax() < 1e-12 * scale);
            let plain = x.transpose() * &x;
            assert!((cross_product(&x) - plain).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn tile_paths_agree() {
        let m = 37;
        let a: Vec<f64> = (0..2 * m).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..4 * m).map(|i| (i as f64 * 0.11).cos()).collect();
        let slow = tile_2x4(&a, &b, m);
        if has_fma() {
            let fast = tile_2x4_fma(&a, &b, m);
            for (s, f) in slow.iter().zip(&fast) {
                assert!((s - f).abs() < 1e-12);
            }
        }
        let want: f64 = (0..m).map(|i| a[m + i] * b[3 * m + i]).sum();
        assert!((slow[7] - want).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..=8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let approx: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(xi, wi)| wi * xi.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!(
                    (approx - exact).abs() < 1e-13,
                    "n={n} deg={deg}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let g = [0.0, 0.1, 0.45, 1.0];
        let v: Vec<f64> = g.iter().map(|t| 3.0 * t - 1.0).collect();
        assert!((trapezoid(&g, &v) - 0.5).abs() < 1e-15);
        let w = trapezoid_weights(&g);
        let via_weights: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((via_weights - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
    }
}
