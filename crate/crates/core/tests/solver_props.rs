use std::sync::Arc;

use funcqr::numeric::uniform_grid;
use funcqr::simulate::{simulate, true_beta, CoefficientDist, ErrorDist, SimulationConfig};
use funcqr::solver::{objective, pirls};
use funcqr::{
    compute_scores, eval_beta, fit_full, fit_pirls, fit_subsample_design, BSplineBasis,
    DesignMatrix, FunctionalDataset, PirlsOptions, SamplingMethod, SubsamplePlan, Tau,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn sim(n: usize, errors: ErrorDist, seed: u64) -> FunctionalDataset {
    let mut cfg = SimulationConfig::new(n, CoefficientDist::MvNormal, ErrorDist::Normal, seed);
    cfg.errors = errors;
    cfg.m_test = 0;
    simulate(&cfg).unwrap().train
}

fn tau(v: f64) -> Tau {
    Tau::new(v).unwrap()
}

/// Covariates with `y_i = ∫x_iβ + ε_i`, `ε_i ~ N(−Φ⁻¹(τ), 1)` so that `P(ε_i < 0) = τ`.
fn centered_at_quantile(n: usize, t: f64, seed: u64) -> FunctionalDataset {
    let mut cfg = SimulationConfig::new(n, CoefficientDist::MvNormal, ErrorDist::Normal, seed);
    cfg.m_test = 0;
    cfg.noise_scale = 0.0;
    let data = simulate(&cfg).unwrap().train;
    let shift = Normal::new(0.0, 1.0).unwrap().inverse_cdf(t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let y: Vec<f64> = data
        .responses()
        .unwrap()
        .iter()
        .map(|s| s + rng.sample::<f64, _>(StandardNormal) - shift)
        .collect();
    data.with_responses(y).unwrap()
}

#[test]
fn negative_residual_fraction_is_calibrated() {
    let basis = BSplineBasis::new(7, 3).unwrap();
    let penalty = basis.penalty_matrix(2).unwrap();
    for t in [0.25, 0.5, 0.75] {
        let data = centered_at_quantile(2000, t, 3);
        let design = compute_scores(&data, &basis).unwrap();
        let y = data.responses().unwrap();
        let fit = fit_pirls(
            &design,
            y,
            tau(t),
            1e-4,
            &penalty,
            None,
            &PirlsOptions::default(),
        )
        .unwrap();
        let fitted = design.scores() * &fit.theta;
        let neg = y
            .iter()
            .zip(fitted.iter())
            .filter(|(a, b)| *a - *b < 0.0)
            .count();
        let frac = neg as f64 / y.len() as f64;
        let band = 2.0 * (t * (1.0 - t) / y.len() as f64).sqrt();
        assert!((frac - t).abs() <= band, "τ={t}: fraction {frac}");
    }
}

#[test]
fn objective_descends_in_most_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let instances = 100;
    let mut monotone = 0;
    for _ in 0..instances {
        let n = rng.random_range(30..200);
        let d = rng.random_range(2..7);
        let rows = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = [0.25, 0.5, 0.75][rng.random_range(0..3)];
        let lambda = [0.0, 0.1, 1.0][rng.random_range(0..3)];
        let penalty = BSplineBasis::new(d.saturating_sub(2).max(1), 1)
            .unwrap()
            .penalty_matrix(1)
            .unwrap();
        let penalty = if penalty.dim() == d {
            penalty
        } else {
            funcqr::PenaltyMatrix::from_matrix(1, DMatrix::identity(d, d)).unwrap()
        };
        let fit = pirls(
            &rows,
            &y,
            tau(t),
            lambda,
            &penalty,
            None,
            &PirlsOptions::default(),
        )
        .unwrap();
        let trace = &fit.objective_trace;
        let ok = trace
            .windows(2)
            .skip(3)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        monotone += usize::from(ok);
    }
    assert!(
        monotone * 100 >= 95 * instances,
        "{monotone}/{instances} monotone"
    );
}

#[test]
fn noiseless_linear_beta_is_recovered() {
    let basis = BSplineBasis::new(6, 3).unwrap();
    let g = basis.greville();
    // a linear function has Greville-point coefficients
    let theta_star = DVector::from_iterator(g.len(), g.iter().map(|x| 0.5 + 2.0 * x));
    let data = sim(400, ErrorDist::Normal, 5);
    let design = compute_scores(&data, &basis).unwrap();
    let y: Vec<f64> = (design.scores() * &theta_star).iter().copied().collect();
    let penalty = basis.penalty_matrix(2).unwrap();
    let fit = fit_pirls(
        &design,
        &y,
        tau(0.5),
        1e-8,
        &penalty,
        None,
        &PirlsOptions::default(),
    )
    .unwrap();
    let grid = uniform_grid(100);
    let beta = eval_beta(&fit, &grid).unwrap();
    let sup = grid
        .iter()
        .zip(&beta)
        .map(|(t, b)| (b - (0.5 + 2.0 * t)).abs())
        .fold(0.0, f64::max);
    assert!(sup < 1e-3, "sup error {sup}");
}

#[test]
fn objective_is_monotone_in_lambda() {
    let data = sim(500, ErrorDist::Normal, 8);
    let basis = BSplineBasis::new(5, 3).unwrap();
    let design = compute_scores(&data, &basis).unwrap();
    let y = data.responses().unwrap();
    let penalty = basis.penalty_matrix(2).unwrap();
    let mut last = 0.0;
    let mut last_pen = f64::INFINITY;
    for lambda in [0.0, 1e-2, 1.0, 1e2, 1e4, 1e6] {
        let fit = fit_pirls(
            &design,
            y,
            tau(0.5),
            lambda,
            &penalty,
            None,
            &PirlsOptions::default(),
        )
        .unwrap();
        assert!(
            fit.objective >= last * (1.0 - 1e-6),
            "λ={lambda}: {} < {last} conv {} it {}",
            fit.objective,
            fit.converged,
            fit.iterations
        );
        let pen = fit.theta.dot(&(penalty.matrix() * &fit.theta));
        assert!(
            pen <= last_pen * (1.0 + 1e-6) + 1e-12,
            "λ={lambda}: penalty rose"
        );
        last = fit.objective;
        last_pen = pen;
    }
    assert!(last_pen < 1e-6, "penalty at λ=1e6 is {last_pen}");
}

#[test]
fn quantile_levels_give_different_fits() {
    let data = sim(600, ErrorDist::Normal, 21);
    let basis = BSplineBasis::new(5, 3).unwrap();
    let a = fit_full(&data, &basis, tau(0.5), 1e-3, 2).unwrap();
    let b = fit_full(&data, &basis, tau(0.75), 1e-3, 2).unwrap();
    assert!((a.theta - b.theta).amax() > 1e-6);
}

#[test]
fn empty_dataset_is_rejected() {
    let ds = FunctionalDataset::new(uniform_grid(11), vec![], Some(vec![])).unwrap();
    assert!(fit_full(&ds, &BSplineBasis::new(3, 3).unwrap(), tau(0.5), 0.1, 2).is_err());
}

fn design_and_y(n: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
    let data = sim(n, ErrorDist::Normal, seed);
    let basis = BSplineBasis::new(5, 3).unwrap();
    let design = compute_scores(&data, &basis).unwrap();
    (design, data.responses().unwrap().to_vec())
}

#[test]
fn census_plan_reproduces_full_fit() {
    let (design, y) = design_and_y(300, 4);
    let n = design.n();
    let penalty = design.basis().penalty_matrix(2).unwrap();
    let probs: Arc<[f64]> = Arc::from(vec![1.0 / n as f64; n]);
    let plan =
        SubsamplePlan::from_parts(SamplingMethod::Unif, probs, (0..n).collect(), vec![1; n], 0)
            .unwrap();
    assert!(plan.case_weights().iter().all(|w| (w - 1.0).abs() < 1e-12));
    let opts = PirlsOptions::default();
    for lambda in [0.0, 0.05] {
        let full = fit_pirls(&design, &y, tau(0.6), lambda, &penalty, None, &opts).unwrap();
        let sub =
            fit_subsample_design(&design, &y, tau(0.6), lambda, &penalty, &plan, &opts).unwrap();
        assert!((&full.theta - &sub.theta).amax() < 1e-8);
        let rows = design.scores();
        let a = objective(rows, &y, &sub.theta, tau(0.6), lambda, &penalty, None);
        let w = plan.case_weights();
        let b = objective(rows, &y, &sub.theta, tau(0.6), lambda, &penalty, Some(&w));
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
}

#[test]
fn repeated_single_index_fits_one_observation() {
    let (design, y) = design_and_y(200, 6);
    let n = design.n();
    let penalty = design.basis().penalty_matrix(2).unwrap();
    let probs: Arc<[f64]> = Arc::from(vec![1.0 / n as f64; n]);
    let plan =
        SubsamplePlan::from_parts(SamplingMethod::Unif, probs, vec![17], vec![50], 0).unwrap();
    let fit = fit_subsample_design(
        &design,
        &y,
        tau(0.5),
        1e-3,
        &penalty,
        &plan,
        &PirlsOptions::default(),
    )
    .unwrap();
    let fitted = design.scores().row(17).dot(&fit.theta.transpose());
    assert!((fitted - y[17]).abs() < 1e-4, "{fitted} vs {}", y[17]);
}

#[test]
fn truth_is_close_at_scale() {
    let data = sim(3000, ErrorDist::Normal, 12);
    let basis = BSplineBasis::new(8, 3).unwrap();
    let fit = fit_full(&data, &basis, tau(0.5), 1e-2, 2).unwrap();
    let grid = uniform_grid(200);
    let est = eval_beta(&fit, &grid).unwrap();
    let err = funcqr::metrics::imse(&[est], &true_beta(&grid), &grid).unwrap();
    assert!(err < 0.5, "integrated error {err}");
}
