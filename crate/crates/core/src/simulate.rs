//! Synthetic functional datasets with seeded, thread-count independent streams.
//!
//! Every observation `i` draws from its own ChaCha stream (`set_stream(i)`)
//! keyed by the seed, so the generated data do not depend on how work is split
//! across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::design::FunctionalDataset;
use crate::error::{Error, Result};
use crate::numeric::{mix_seed, trapezoid_weights, uniform_grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientDist {
    #[serde(rename = "mvNormal")]
    MvNormal,
    #[serde(rename = "mvT3")]
    MvT3,
    #[serde(rename = "mvT2")]
    MvT2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorDist {
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "t1")]
    T1,
    #[serde(rename = "hetero")]
    Hetero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    pub coefficients: CoefficientDist,
    pub errors: ErrorDist,
    #[serde(default = "default_generator_basis")]
    pub generator_basis_size: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Multiplier on the error term; 0 gives noiseless responses.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

fn default_m_test() -> usize {
    1000
}
fn default_generator_basis() -> usize {
    10
}
fn default_grid_size() -> usize {
    100
}
fn default_noise_scale() -> f64 {
    1.0
}

impl SimulationConfig {
    pub fn new(n: usize, coefficients: CoefficientDist, errors: ErrorDist, seed: u64) -> Self {
        Self {
            n,
            m_test: default_m_test(),
            coefficients,
            errors,
            generator_basis_size: default_generator_basis(),
            grid_size: default_grid_size(),
            seed,
            noise_scale: default_noise_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("simulation needs n >= 1".into()));
        }
        if self.generator_basis_size < 4 {
            return Err(Error::Config(format!(
                "generator basis size must be at least 4, got {}",
                self.generator_basis_size
            )));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid size must be at least 2".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// The fixed slope function `β(t) = 2t² + 0.25t + 1`.
pub fn true_beta(t: &[f64]) -> Vec<f64> {
    t.iter().map(|&t| 2.0 * t * t + 0.25 * t + 1.0).collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Cholesky factor of `Σ_ij = 0.5^|i−j|`.
fn ar1_factor(j: usize) -> DMatrix<f64> {
    let sigma = DMatrix::from_fn(j, j, |a, b| 0.5f64.powi((a as i32 - b as i32).abs()));
    nalgebra::Cholesky::new(sigma)
        .expect("AR(1) covariance is positive definite")
        .l()
}

/// Curves `x_i(t) = Σ_j a_ij B_j(t)` for `count` observations, streams starting at `offset`.
fn generate_curves(config: &SimulationConfig, offset: usize, count: usize) -> Result<Vec<f64>> {
    let j = config.generator_basis_size;
    let basis = BSplineBasis::new(j - 4, 3)?;
    let grid = uniform_grid(config.grid_size);
    let values = basis.eval_matrix(&grid)?;
    let chol = ar1_factor(j);
    let m = grid.len();
    let seed = mix_seed(config.seed, 0xC0);
    let dof = match config.coefficients {
        CoefficientDist::MvNormal => None,
        CoefficientDist::MvT3 => Some(3.0),
        CoefficientDist::MvT2 => Some(2.0),
    };
    let chi = dof.map(|v| ChiSquared::new(v).expect("positive degrees of freedom"));
    let mut curves = vec![0.0; count * m];
    curves.par_chunks_mut(m).enumerate().for_each(|(k, out)| {
        let mut rng = stream_rng(seed, (offset + k) as u64);
        let z = DVector::from_iterator(j, (0..j).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut a = &chol * z;
        if let (Some(v), Some(chi)) = (dof, chi.as_ref()) {
            let w: f64 = chi.sample(&mut rng);
            a /= (w / v).sqrt();
        }
        let x = &values * a;
        out.copy_from_slice(x.as_slice());
    });
    Ok(curves)
}

/// Covariates for `config.n` observations on the generation grid.
pub fn gen_covariates(config: &SimulationConfig) -> Result<FunctionalDataset> {
    config.validate()?;
    let curves = generate_curves(config, 0, config.n)?;
    FunctionalDataset::new(uniform_grid(config.grid_size), curves, None)
}

/// `∫ x_i(t) β(t) dt` by the trapezoid rule on the dataset grid.
pub fn signal(dataset: &FunctionalDataset) -> Vec<f64> {
    dataset.integrate_against(|t| 2.0 * t * t + 0.25 * t + 1.0)
}

/// Responses `y_i = ∫ x_i β + ε_i`, with per-observation error streams
/// numbered from `offset`.
pub fn gen_responses_from(
    dataset: &FunctionalDataset,
    error_dist: ErrorDist,
    seed: u64,
    noise_scale: f64,
    offset: usize,
) -> Vec<f64> {
    let s = signal(dataset);
    let seed = mix_seed(seed, 0xE0);
    let scales: Option<Vec<f64>> = match error_dist {
        ErrorDist::Hetero => {
            let w = trapezoid_weights(dataset.grid());
            Some(
                (0..dataset.n())
                    .map(|i| {
                        dataset
                            .curve(i)
                            .iter()
                            .zip(dataset.grid())
                            .zip(&w)
                            .map(|((x, t), wj)| (x * (t + 1.0)).abs() * wj)
                            .sum()
                    })
                    .collect(),
            )
        }
        _ => None,
    };
    let cauchy = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    (0..dataset.n())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, (offset + i) as u64);
            let e: f64 = match error_dist {
                ErrorDist::Normal => rng.sample(StandardNormal),
                ErrorDist::T1 => cauchy.sample(&mut rng),
                ErrorDist::Hetero => {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scales.as_ref().map_or(1.0, |s| s[i])
                }
            };
            s[i] + noise_scale * e
        })
        .collect()
}

pub fn gen_responses(dataset: &FunctionalDataset, error_dist: ErrorDist, seed: u64) -> Vec<f64> {
    gen_responses_from(dataset, error_dist, seed, 1.0, 0)
}

/// Disjoint train/test sets drawn from consecutive observation streams.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub train: FunctionalDataset,
    pub test: FunctionalDataset,
}

/// Generates `n + m_test` observations with responses; the first `n` form the
/// training set.
pub fn simulate(config: &SimulationConfig) -> Result<SimulatedData> {
    config.validate()?;
    let grid = uniform_grid(config.grid_size);
    let build = |offset: usize, count: usize| -> Result<FunctionalDataset> {
        let curves = generate_curves(config, offset, count)?;
        let ds = FunctionalDataset::new(grid.clone(), curves, None)?;
        let y = gen_responses_from(&ds, config.errors, config.seed, config.noise_scale, offset);
        let ids = (offset..offset + count).map(|i| i.to_string()).collect();
        ds.with_responses(y)?.with_ids(ids)
    };
    Ok(SimulatedData {
        train: build(0, config.n)?,
        test: build(config.n, config.m_test)?,
    })
}
