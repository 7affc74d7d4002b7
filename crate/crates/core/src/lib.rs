//! Retrieval and short-term forecasting of 3-D wind (u, v, w) on pressure
//! levels from dense-network GNSS zenith total delay (ZTD) time series.
//!
//! Pipeline: [`preprocess`] (gap filling, resampling, level mapping, sample
//! building) feeds a Transformer-encoder or MLP regressor ([`model`]) trained
//! with Adam and early stopping ([`trainer`]); outputs are calibrated with CDF
//! matching ([`calibrate`]) and scored with [`metrics`]. [`synth`] generates
//! coupled synthetic data and [`harness`] runs whole experiments.

pub mod calibrate;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod preprocess;
pub mod samples;
pub mod synth;
pub mod trainer;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use samples::{NormStats, SampleSet, Split};
pub use types::{Component, LevelKind, LevelSpec, Station, StationTable, TimeAxis, Violation, WindCube, ZtdPanel};
