use std::collections::HashMap;

use funcqr::harness::config::{ExperimentSpec, Method};
use funcqr::harness::data::load_data;
use funcqr::harness::run::{run_experiment, run_on_data, write_curves, write_metrics};

fn spec(body: &str) -> ExperimentSpec {
    ExperimentSpec::from_toml(body).unwrap()
}

const SMALL: &str = r#"
mode = "simulate"
seed = 11
taus = [0.3, 0.5]
r = [100]
methods = ["unif"]
repetitions = 1
lambda = 0.01

[simulation]
n = 1000
m_test = 200
coefficients = "mvNormal"
errors = "normal"
"#;

#[test]
fn one_metric_row_per_tau_and_r() {
    let spec = spec(SMALL);
    let out = run_on_data(&spec, &load_data(&spec).unwrap()).unwrap();
    assert!(out.failures.is_empty());
    let mut counts: HashMap<(String, String, usize, &str), usize> = HashMap::new();
    for m in &out.metrics {
        assert_eq!(m.method, Method::Unif);
        assert_eq!(m.reps, 1);
        *counts
            .entry((m.method.to_string(), m.tau.to_string(), m.r, m.metric))
            .or_default() += 1;
    }
    assert!(counts.values().all(|c| *c == 1));
    for tau in ["0.3", "0.5"] {
        for metric in ["imse", "eimse", "log_pe", "re"] {
            assert!(
                counts.contains_key(&("Unif".into(), tau.into(), 100, metric)),
                "{tau} {metric}"
            );
        }
    }
    assert_eq!(out.curves.len(), 2);
}

#[test]
fn full_reference_is_fitted_once_per_tau_and_reused() {
    let body = SMALL
        .replace(
            "methods = [\"unif\"]",
            "methods = [\"unif\", \"flopt\", \"full\"]",
        )
        .replace("repetitions = 1", "repetitions = 3");
    let spec = spec(&body);
    let out = run_on_data(&spec, &load_data(&spec).unwrap()).unwrap();
    assert_eq!(out.references.len(), 2);
    for (reference, tau) in out.references.iter().zip([0.3, 0.5]) {
        assert_eq!(reference.tau, tau);
        let full = out.cell(Method::Full, tau, out.n);
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].lambda, reference.lambda);
        // eIMSE against the reference, recomputed from the stored curves
        for method in [Method::Unif, Method::FLopt] {
            let betas: Vec<Vec<f64>> = out
                .cell(method, tau, 100)
                .iter()
                .map(|c| c.beta.clone())
                .collect();
            assert_eq!(betas.len(), 3);
            let expected = funcqr::metrics::eimse(&betas, &full[0].beta, &out.eval_grid).unwrap();
            let got = out.metric(method, tau, 100, "eimse").unwrap();
            assert_eq!(got.to_bits(), expected.to_bits());
        }
        assert!(out.metric(Method::Full, tau, out.n, "eimse").is_none());
    }
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let body = SMALL
        .replace("methods = [\"unif\"]", "methods = [\"unif\", \"faopt\"]")
        .replace("repetitions = 1", "repetitions = 4")
        .replace("lambda = 0.01", "lambda = \"gacv\"");
    let spec = spec(&body);
    let csv = |threads: usize| {
        let out = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_on_data(&spec, &load_data(&spec).unwrap()).unwrap());
        let mut metrics = Vec::new();
        write_metrics(&out.metrics, &mut metrics).unwrap();
        let mut curves = Vec::new();
        write_curves(&out, &mut curves).unwrap();
        (metrics, curves)
    };
    assert_eq!(csv(1), csv(3));
}

#[test]
fn run_writes_every_output_file() {
    let body = SMALL.replace("repetitions = 1", "repetitions = 2\nwrite_plans = true");
    let spec = spec(&body);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec, dir.path()).unwrap();
    for name in [
        "metrics.csv",
        "beta_curves.csv",
        "timings.csv",
        "manifest.toml",
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    assert_eq!(
        std::fs::read_dir(dir.path().join("plans")).unwrap().count(),
        4
    );
    let header = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(header.starts_with("method,tau,r,metric,value,reps,seed\n"));
}

#[test]
fn oversized_subsample_is_a_config_error() {
    let body = SMALL.replace("r = [100]", "r = [5000]");
    assert!(matches!(
        ExperimentSpec::from_toml(&body),
        Err(funcqr::Error::Config(_))
    ));
}
