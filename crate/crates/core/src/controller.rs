//! The general difficulty recursion `D_k = D_{k−1}·(1 − I_k·f(T_previous))`
//! and its Ethereum, Bitcoin and neural-indicator instantiations.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureState};
use crate::mlp::{MlpModel, Pattern};
use crate::update::{ArctanUpdate, UpdateFunction};

pub const DEFAULT_MIN_DIFFICULTY: f64 = 1.0;

/// Result of observing one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Difficulty for the next block.
    pub difficulty: f64,
    /// `I_k` if it was evaluated at this height.
    pub indicator: Option<f64>,
}

/// Anything the simulator can drive.
pub trait DifficultyController {
    /// Forget all history and start from `difficulty`.
    fn reset(&mut self, difficulty: f64);

    /// Observes block `height` with produce time `block_time` and returns the
    /// difficulty for the following block.
    fn observe(&mut self, height: u64, block_time: f64) -> Result<Step>;
}

/// Neural indicator: `I_k = P(normal change)` from the variance features.
#[derive(Debug, Clone)]
pub struct NeuralIndicator {
    pub model: Arc<MlpModel>,
    pub features: FeatureConfig,
    /// Evaluate (and update difficulty) only at heights divisible by this.
    pub every: u64,
}

#[derive(Debug, Clone)]
pub enum IndicatorPolicy {
    ConstantOne,
    /// 1 when `height mod n == 0`, else 0.
    EveryN(u64),
    Neural(NeuralIndicator),
}

#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub indicator: IndicatorPolicy,
    pub update: UpdateFunction,
    /// Number of trailing block times summed into `T_previous`.
    pub t_previous_window: usize,
    pub min_difficulty: f64,
}

impl ControllerSpec {
    /// Eq.-5 transcription: `I_k = 1`, `T_previous = T_k`.
    pub fn ethereum() -> Self {
        Self {
            indicator: IndicatorPolicy::ConstantOne,
            update: UpdateFunction::Ethereum,
            t_previous_window: 1,
            min_difficulty: DEFAULT_MIN_DIFFICULTY,
        }
    }

    /// Retarget every `epoch` blocks on the sum of the epoch's block times.
    pub fn bitcoin(epoch: usize, spacing: f64) -> Self {
        Self {
            indicator: IndicatorPolicy::EveryN(epoch as u64),
            update: UpdateFunction::Bitcoin { epoch, spacing },
            t_previous_window: epoch,
            min_difficulty: DEFAULT_MIN_DIFFICULTY,
        }
    }

    /// Holds difficulty constant.
    pub fn identity() -> Self {
        Self {
            indicator: IndicatorPolicy::ConstantOne,
            update: UpdateFunction::Constant { value: 0.0 },
            t_previous_window: 1,
            min_difficulty: DEFAULT_MIN_DIFFICULTY,
        }
    }

    pub fn arctan(update: ArctanUpdate, indicator: IndicatorPolicy) -> Self {
        Self {
            indicator,
            update: UpdateFunction::Arctan(update),
            t_previous_window: 1,
            min_difficulty: DEFAULT_MIN_DIFFICULTY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_previous_window < 1 {
            return Err(Error::config("controller.t_previous_window", "must be ≥ 1"));
        }
        if !(self.min_difficulty > 0.0 && self.min_difficulty.is_finite()) {
            return Err(Error::config("controller.min_difficulty", "must be positive"));
        }
        match &self.indicator {
            IndicatorPolicy::EveryN(n) if *n as usize != self.t_previous_window || *n == 0 => Err(Error::config(
                "controller.t_previous_window",
                format!("must equal the every-N period {n}"),
            )),
            IndicatorPolicy::Neural(ni) => {
                ni.features.validate()?;
                if ni.every == 0 {
                    return Err(Error::config("controller.every", "must be ≥ 1"));
                }
                if ni.model.inputs() != ni.features.q {
                    return Err(Error::config(
                        "controller.model",
                        format!("model takes {} inputs but q = {}", ni.model.inputs(), ni.features.q),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Mutable controller state.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub recent: VecDeque<f64>,
    pub last_difficulty: f64,
    pub height: u64,
}

/// `prev − prev·indicator·f`, floored at `min_difficulty`.
#[inline]
pub fn apply_update(prev: f64, indicator: f64, f: f64, min_difficulty: f64) -> f64 {
    (prev - prev * indicator * f).max(min_difficulty)
}

#[derive(Debug, Clone)]
pub struct Controller {
    spec: ControllerSpec,
    state: ControllerState,
    features: Option<FeatureState>,
}

impl Controller {
    pub fn new(spec: ControllerSpec) -> Result<Self> {
        spec.validate()?;
        let features = match &spec.indicator {
            IndicatorPolicy::Neural(ni) => Some(FeatureState::new(ni.features)?),
            _ => None,
        };
        let state = ControllerState {
            recent: VecDeque::with_capacity(spec.t_previous_window + 1),
            last_difficulty: 1.0,
            height: 0,
        };
        Ok(Self { spec, state, features })
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    fn indicator(&self, height: u64) -> Result<Option<f64>> {
        match &self.spec.indicator {
            IndicatorPolicy::ConstantOne => Ok(Some(1.0)),
            IndicatorPolicy::EveryN(n) => Ok(Some(if height.is_multiple_of(*n) { 1.0 } else { 0.0 })),
            IndicatorPolicy::Neural(ni) => {
                if !height.is_multiple_of(ni.every) {
                    return Ok(None);
                }
                let fs = self.features.as_ref().expect("neural policy owns a feature state");
                match fs.feature_vector() {
                    Some(v) => Ok(Some(ni.model.classify(&v)?[Pattern::Normal.index()])),
                    None => Ok(None),
                }
            }
        }
    }

    /// Advances the state by one block and returns the next difficulty.
    /// While history is shorter than the `T_previous` window, or the
    /// features are not ready, difficulty is held.
    pub fn next_difficulty(&mut self, height: u64, block_time: f64) -> Result<Step> {
        if !(block_time >= 0.0 && block_time.is_finite()) {
            return Err(Error::Domain(format!("block time {block_time} at height {height}")));
        }
        let window = self.spec.t_previous_window;
        self.state.recent.push_back(block_time);
        if self.state.recent.len() > window {
            self.state.recent.pop_front();
        }
        self.state.height = height;
        if let Some(fs) = self.features.as_mut() {
            fs.push(block_time);
        }

        let prev = self.state.last_difficulty;
        let indicator = if self.state.recent.len() < window { None } else { self.indicator(height)? };
        let next = match indicator {
            Some(i) if i != 0.0 => {
                let t_previous: f64 = self.state.recent.iter().sum();
                // Zero-length intervals (whole-second timestamps) stay in the
                // lowest bucket of the piecewise rules.
                let f = self.spec.update.value(t_previous.max(f64::MIN_POSITIVE));
                apply_update(prev, i, f, self.spec.min_difficulty)
            }
            _ => prev,
        };
        self.state.last_difficulty = next;
        Ok(Step { difficulty: next, indicator })
    }
}

impl DifficultyController for Controller {
    fn reset(&mut self, difficulty: f64) {
        self.state.recent.clear();
        self.state.last_difficulty = difficulty;
        self.state.height = 0;
        if let Some(fs) = self.features.as_mut() {
            fs.clear();
        }
    }

    fn observe(&mut self, height: u64, block_time: f64) -> Result<Step> {
        self.next_difficulty(height, block_time)
    }
}
