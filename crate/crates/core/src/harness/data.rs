//! Training and test data for an experiment.

use std::path::Path;

use log::{info, warn};

use crate::design::{smooth_curves_fourier, FunctionalDataset};
use crate::error::{Error, Result};
use crate::io::{read_curves_path, read_raw_records_path, read_responses_path};
use crate::numeric::{mix_seed, uniform_grid};
use crate::simulate::simulate;

use super::config::{DataSpec, ExperimentSpec, Mode};

/// Salt for the dataset seed derived from the experiment seed.
pub(crate) const DATA_SALT: u64 = 0xDA7A;

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: FunctionalDataset,
    /// Held-out curves for prediction metrics; the training set is used when absent.
    pub test: Option<FunctionalDataset>,
    /// Whether the generating slope is known, enabling IMSE and PE.
    pub simulated: bool,
}

impl ExperimentData {
    pub fn evaluation_set(&self) -> &FunctionalDataset {
        self.test.as_ref().unwrap_or(&self.train)
    }
}

pub fn load_data(spec: &ExperimentSpec) -> Result<ExperimentData> {
    match spec.mode {
        Mode::Simulate => {
            let sim = spec
                .simulation
                .as_ref()
                .ok_or_else(|| Error::Config("missing [simulation] table".into()))?;
            let data = simulate(&sim.to_config(mix_seed(spec.seed, DATA_SALT)))?;
            let test = (data.test.n() > 0).then_some(data.test);
            Ok(ExperimentData {
                train: data.train,
                test,
                simulated: true,
            })
        }
        Mode::Real => {
            let data = spec
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("missing [data] table".into()))?;
            load_real(data)
        }
    }
}

fn load_real(data: &DataSpec) -> Result<ExperimentData> {
    let train = match (&data.curves, &data.raw) {
        (Some(curves), None) => read_curves_path(curves)?,
        (None, Some(raw)) => {
            let records = read_raw_records_path(raw)?;
            let grid = uniform_grid(data.grid_points);
            let (ds, summary) =
                smooth_curves_fourier(&records, data.fourier_basis, &grid, data.time_range)?;
            for (id, reason) in &summary.rejected {
                warn!("record {id} rejected: {reason}");
            }
            info!(
                "{} records smoothed, {} rejected",
                summary.accepted,
                summary.rejected.len()
            );
            ds
        }
        _ => {
            return Err(Error::Config(
                "[data] needs exactly one of curves or raw".into(),
            ))
        }
    };
    let train = attach_responses(train, &data.responses)?;
    let test = match (&data.test_curves, &data.test_responses) {
        (Some(c), Some(r)) => Some(attach_responses(read_curves_path(c)?, r)?),
        _ => None,
    };
    Ok(ExperimentData {
        train,
        test,
        simulated: false,
    })
}

fn attach_responses(ds: FunctionalDataset, path: &Path) -> Result<FunctionalDataset> {
    let keyed = read_responses_path(path)?;
    ds.with_keyed_responses(&keyed)
}
