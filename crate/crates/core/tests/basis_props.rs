use funcqr::numeric::gauss_legendre;
use funcqr::BSplineBasis;
use nalgebra::DVector;
use proptest::prelude::*;

/// Textbook recursive definition over the full knot vector, 0/0 = 0.
fn naive_bspline(knots: &[f64], k: usize, p: usize, t: f64) -> f64 {
    if p == 0 {
        let last = knots[knots.len() - 1];
        let inside = knots[k] <= t && t < knots[k + 1];
        // right end belongs to the last non-empty span
        let at_end = t == last && knots[k + 1] == last && knots[k] < last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let den1 = knots[k + p] - knots[k];
    if den1 > 0.0 {
        v += (t - knots[k]) / den1 * naive_bspline(knots, k, p - 1, t);
    }
    let den2 = knots[k + p + 1] - knots[k + 1];
    if den2 > 0.0 {
        v += (knots[k + p + 1] - t) / den2 * naive_bspline(knots, k + 1, p - 1, t);
    }
    v
}

#[test]
fn dimension_and_domain() {
    assert_eq!(BSplineBasis::new(31, 3).unwrap().dim(), 35);
    assert_eq!(BSplineBasis::new(1, 1).unwrap().dim(), 3);
    assert!(BSplineBasis::new(0, 3).is_err());
}

#[test]
fn values_match_naive_recursion() {
    for (k, p) in [(4, 3), (1, 1), (7, 2), (10, 3)] {
        let basis = BSplineBasis::new(k, p).unwrap();
        let knots = basis.knots().to_vec();
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            let got = basis.eval(t).unwrap();
            for (j, g) in got.iter().enumerate() {
                let want = naive_bspline(&knots, j, p, t);
                assert!(
                    (g - want).abs() < 1e-12,
                    "K={k} p={p} t={t} j={j}: {g} vs {want}"
                );
            }
        }
    }
}

#[test]
fn cubic_at_037_has_four_nonzeros() {
    let b = BSplineBasis::new(4, 3).unwrap().eval(0.37).unwrap();
    assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 4);
    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn partition_of_unity_on_1000_points() {
    for (k, p) in [(1, 1), (4, 3), (18, 3), (50, 3), (9, 5)] {
        let basis = BSplineBasis::new(k, p).unwrap();
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            let s: f64 = basis.eval(t).unwrap().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12, "K={k} p={p} t={t}: {s}");
        }
    }
}

#[test]
fn local_support_matches_knot_spans() {
    let basis = BSplineBasis::new(6, 3).unwrap();
    let knots = basis.knots();
    for i in 0..500 {
        let t = (i as f64 + 0.5) / 500.0;
        for (j, v) in basis.eval(t).unwrap().iter().enumerate() {
            let inside = knots[j] <= t && t < knots[j + 4];
            assert_eq!(*v != 0.0, inside, "t={t} j={j}");
        }
    }
}

#[test]
fn unit_integral_via_gram() {
    // ∫ B_k summed over k, against composite Gauss–Legendre of the values
    for (k, p) in [(4, 3), (10, 2), (1, 1)] {
        let basis = BSplineBasis::new(k, p).unwrap();
        let gram = basis.penalty_matrix(0).unwrap();
        assert!((gram.matrix().sum() - 1.0).abs() < 1e-10);
        let (x, w) = gauss_legendre(8);
        let mut breaks = basis.knots().to_vec();
        breaks.dedup();
        let mut direct = vec![0.0; basis.dim()];
        for span in breaks.windows(2) {
            let (a, b) = (span[0], span[1]);
            for (xi, wi) in x.iter().zip(&w) {
                let t = 0.5 * (a + b) + 0.5 * (b - a) * xi;
                for (d, v) in direct.iter_mut().zip(basis.eval(t).unwrap()) {
                    *d += 0.5 * (b - a) * wi * v;
                }
            }
        }
        for (j, want) in direct.iter().enumerate() {
            let row: f64 = gram.matrix().row(j).sum();
            assert!((row - want).abs() < 1e-10, "row {j}: {row} vs {want}");
        }
    }
}

#[test]
fn derivative_penalty_matches_midpoint_integration() {
    // independent fine-grid integration of B^(q) B^(q)ᵀ
    let basis = BSplineBasis::new(5, 3).unwrap();
    let q = 2;
    let pen = basis.penalty_matrix(q).unwrap();
    let steps = 20_000;
    let d = basis.dim();
    let mut acc = nalgebra::DMatrix::zeros(d, d);
    for i in 0..steps {
        let t = (i as f64 + 0.5) / steps as f64;
        let v = DVector::from_vec(basis.eval_deriv(t, q).unwrap());
        acc += &v * v.transpose() / steps as f64;
    }
    let err = (pen.matrix() - &acc).amax();
    assert!(err < 1e-4 * acc.amax(), "max deviation {err}");
}

#[test]
fn penalty_null_space() {
    for (p, q) in [(3, 2), (2, 1), (1, 1)] {
        let basis = BSplineBasis::new(6, p).unwrap();
        let pen = basis.penalty_matrix(q).unwrap();
        let g = basis.greville();
        for deg in 0..q {
            // Greville abscissae reproduce polynomials up to degree 1 exactly
            let theta = DVector::from_iterator(g.len(), g.iter().map(|x| x.powi(deg as i32)));
            let out = pen.matrix() * theta;
            assert!(out.amax() < 1e-10, "p={p} q={q} deg={deg}: {}", out.amax());
        }
    }
}

proptest! {
    #[test]
    fn values_are_a_partition_of_unity(k in 1usize..40, p in 1usize..5, t in 0.0f64..=1.0) {
        let b = BSplineBasis::new(k, p).unwrap().eval(t).unwrap();
        prop_assert!(b.iter().all(|v| *v >= 0.0));
        prop_assert!(b.iter().filter(|v| **v != 0.0).count() <= p + 1);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn out_of_range_is_rejected(t in prop_oneof![-10.0f64..-1e-9, 1.0f64 + 1e-9..10.0]) {
        prop_assert!(BSplineBasis::new(4, 3).unwrap().eval(t).is_err());
    }
}
