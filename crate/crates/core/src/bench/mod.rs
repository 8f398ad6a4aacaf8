//! Datasets, the NMSE metric, link simulation and sweep orchestration.

mod config;
mod dataset;
mod experiment;
mod sim;

pub use config::Config;
pub use dataset::{generate_dataset, Dataset, DatasetHeader, Sample, CEDS_MAGIC, CEDS_VERSION};
pub use experiment::{
    plot_script, run_experiment, Cell, Estimator, ExperimentConfig, ExperimentReport, ReportRow, CSV_HEADER,
};
pub use sim::{simulate, Physics, Realization, SweepAxes};

use crate::channel::ChannelTensor;
use crate::{Error, Result};

/// NMSE values are floored here instead of reaching −∞.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// `‖H − Ĥ‖²_F / ‖H‖²_F` as a linear ratio.
pub fn nmse_ratio(h: &ChannelTensor, h_hat: &ChannelTensor) -> Result<f64> {
    if h.dims != h_hat.dims {
        return Err(Error::Shape(format!("NMSE of {} against {}", h.dims, h_hat.dims)));
    }
    let den: f64 = h.data.iter().map(|v| v.norm_sqr()).sum();
    if !(den > 0.0) {
        return Err(Error::Invalid("NMSE is undefined for an all-zero channel".into()));
    }
    let num: f64 = h.data.iter().zip(&h_hat.data).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

/// Linear ratio to dB with the floor applied.
pub fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

/// `10·log10(‖H − Ĥ‖²_F / ‖H‖²_F)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse(h: &ChannelTensor, h_hat: &ChannelTensor) -> Result<f64> {
    nmse_ratio(h, h_hat).map(to_db)
}
