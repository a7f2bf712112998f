//! Proof-of-work difficulty control laboratory.
//!
//! * [`sim`]: seeded block-production simulator driven by a hash-rate schedule.
//! * [`controller`]: the general recursion `D_k = D_{k−1}(1 − I_k f(T_previous))`
//!   with Ethereum, Bitcoin and neural-indicator arctan instances.
//! * [`update`]: update functions, `T_previous` densities and zero-drift calibration.
//! * [`features`], [`mlp`], [`train`]: variance features and the change-pattern classifier.
//! * [`estimators`]: nominal hash rate and per-period difficulty metrics.
//! * [`io`], [`replicate`]: file formats, experiment configs and the end-to-end pipeline.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod error;
pub mod estimators;
pub mod features;
pub mod io;
pub mod mlp;
pub mod numeric;
pub mod replicate;
pub mod sim;
pub mod train;
pub mod update;

pub use controller::{Controller, ControllerSpec, DifficultyController, IndicatorPolicy, NeuralIndicator, Step};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureState};
pub use mlp::{MlpModel, Pattern};
pub use sim::{run_simulation, sample_block_time, ChainRecord, HashRateScenario, RateEvent, SimulationConfig, Trace};
pub use update::{ArctanUpdate, TPreviousDistribution, UpdateFunction};

/// Mean block time at which the Ethereum rule has zero expected drift
/// (`9 / ln 2` up to the 900 s cap), found numerically.
pub fn ethereum_target_block_time() -> Result<f64> {
    update::zero_drift_mean(&UpdateFunction::Ethereum, &TPreviousDistribution::Exponential { beta: 1.0 })
}
