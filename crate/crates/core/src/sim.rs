//! Stochastic block-production traces.
//!
//! Block `k` (heights start at 1, the genesis timestamp is `t_0 = 0`) is
//! produced at difficulty `D_k` under the scheduled nominal rate `H_k`; its
//! produce time is exponential with mean `D_k / H_k`, plus an optional
//! constant delay. After each block the controller sees the history and
//! sets `D_{k+1}`.
//!
//! Randomness comes from a ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Each block consumes one `u64` `x`,
//! mapped to `u = 1 − (x >> 11)·2⁻⁵³ ∈ (0, 1]` and inverted as
//! `T = −mean·ln(u)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::DifficultyController;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub height: u64,
    /// Seconds since genesis.
    pub timestamp: f64,
    /// `t_k − t_{k−1}`, seconds.
    pub block_time: f64,
    pub difficulty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEvent {
    /// Last block produced at the previous rate.
    pub height: u64,
    /// New absolute nominal rate, hash/s.
    pub rate: f64,
}

/// Piecewise-constant nominal hash-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashRateScenario {
    pub initial_rate: f64,
    #[serde(default)]
    pub events: Vec<RateEvent>,
    pub length: u64,
}

impl HashRateScenario {
    pub fn constant(rate: f64, length: u64) -> Self {
        Self { initial_rate: rate, events: Vec::new(), length }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rate > 0.0 && self.initial_rate.is_finite()) {
            return Err(Error::config("scenario.initial_rate", "must be a positive rate"));
        }
        let mut last = 0;
        for (i, ev) in self.events.iter().enumerate() {
            let field = format!("scenario.events[{i}]");
            if ev.height <= last {
                return Err(Error::config(field, "event heights must be strictly increasing and ≥ 1"));
            }
            if ev.height > self.length {
                return Err(Error::config(field, format!("height {} beyond length {}", ev.height, self.length)));
            }
            if !(ev.rate > 0.0 && ev.rate.is_finite()) {
                return Err(Error::config(field, "rate must be positive"));
            }
            last = ev.height;
        }
        Ok(())
    }

    /// Rate in force while producing block `height`; an event at `c` first
    /// applies to block `c + 1`.
    pub fn rate_at(&self, height: u64) -> f64 {
        let idx = self.events.partition_point(|ev| ev.height < height);
        if idx == 0 {
            self.initial_rate
        } else {
            self.events[idx - 1].rate
        }
    }

    /// Same schedule with every height divided by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            initial_rate: self.initial_rate,
            events: self
                .events
                .iter()
                .map(|ev| RateEvent { height: (ev.height / factor).max(1), rate: ev.rate })
                .collect(),
            length: self.length / factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Constant delay added to every block time, seconds.
    pub propagation_delay: f64,
    pub min_difficulty: f64,
    /// Quantize timestamps to whole seconds.
    pub integer_timestamps: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            propagation_delay: 0.0,
            min_difficulty: 1.0,
            integer_timestamps: false,
        }
    }
}

impl SimulationConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.propagation_delay >= 0.0 && self.propagation_delay.is_finite()) {
            return Err(Error::config("simulation.propagation_delay", "must be ≥ 0"));
        }
        if !(self.min_difficulty > 0.0 && self.min_difficulty.is_finite()) {
            return Err(Error::config("simulation.min_difficulty", "must be positive"));
        }
        Ok(())
    }
}

/// Simulator output: one record per block plus the schedule and the
/// controller's indicator at each height.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<ChainRecord>,
    pub scheduled_rates: Vec<f64>,
    /// `None` while the controller held difficulty without evaluating `I_k`.
    pub indicators: Vec<Option<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn block_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.block_time).collect()
    }

    pub fn difficulties(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.difficulty).collect()
    }

    pub fn mean_block_time(&self) -> f64 {
        if self.records.is_empty() {
            return f64::NAN;
        }
        self.records.iter().map(|r| r.block_time).sum::<f64>() / self.records.len() as f64
    }
}

/// Inverse-CDF exponential draw for a uniform `u ∈ (0, 1]`.
#[inline]
pub fn exponential_from_uniform(mean: f64, u: f64) -> f64 {
    -mean * u.ln()
}

/// Uniform on `(0, 1]` from one `u64` of the stream.
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Draws one block produce time: `Exp(mean = difficulty / rate) + delay`.
pub fn sample_block_time<R: Rng + ?Sized>(difficulty: f64, rate: f64, delay: f64, rng: &mut R) -> Result<f64> {
    if !(difficulty > 0.0) {
        return Err(Error::Domain(format!("difficulty must be positive, got {difficulty}")));
    }
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("hash rate must be positive, got {rate}")));
    }
    if !(delay >= 0.0) {
        return Err(Error::Domain(format!("delay must be non-negative, got {delay}")));
    }
    Ok(exponential_from_uniform(difficulty / rate, open_unit(rng)) + delay)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs `scenario.length` blocks. The controller is reset to
/// `initial_difficulty` first, so repeated runs are bit-identical.
pub fn run_simulation(
    scenario: &HashRateScenario,
    controller: &mut dyn DifficultyController,
    config: &SimulationConfig,
    initial_difficulty: f64,
) -> Result<Trace> {
    scenario.validate()?;
    config.validate()?;
    if !(initial_difficulty >= config.min_difficulty && initial_difficulty.is_finite()) {
        return Err(Error::config(
            "initial_difficulty",
            format!("{initial_difficulty} is below the floor {}", config.min_difficulty),
        ));
    }

    let n = scenario.length as usize;
    let mut records = Vec::with_capacity(n);
    let mut scheduled_rates = Vec::with_capacity(n);
    let mut indicators = Vec::with_capacity(n);
    let mut rng = rng_from_seed(config.seed);
    controller.reset(initial_difficulty);

    let mut difficulty = initial_difficulty;
    let mut clock = 0.0_f64;
    let mut last_stamp = 0.0_f64;
    for height in 1..=scenario.length {
        let rate = scenario.rate_at(height);
        let produce = sample_block_time(difficulty, rate, config.propagation_delay, &mut rng)?;
        clock += produce;
        let timestamp = if config.integer_timestamps { clock.floor() } else { clock };
        let block_time = timestamp - last_stamp;
        last_stamp = timestamp;

        records.push(ChainRecord { height, timestamp, block_time, difficulty });
        scheduled_rates.push(rate);

        let step = controller.observe(height, block_time)?;
        indicators.push(step.indicator);
        difficulty = step.difficulty.max(config.min_difficulty);
    }
    Ok(Trace { records, scheduled_rates, indicators })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{Controller, ControllerSpec};
    use rand::RngCore;

    /// Emits the same word forever so that `gen::<f64>()` is a fixed value.
    struct Fixed(u64);

    impl RngCore for Fixed {
        fn next_u32(&mut self) -> u32 {
            self.0 as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0)
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
            dest.fill(0);
            Ok(())
        }
    }

    #[test]
    fn inverse_transform_at_one_over_e() {
        let g = 1.0 - (-1f64).exp();
        let mut rng = Fixed(((g * (1u64 << 53) as f64) as u64) << 11);
        let t = sample_block_time(10.0, 10.0, 0.0, &mut rng).unwrap();
        assert!((t - 1.0).abs() < 1e-15, "{t}");
        assert_eq!(exponential_from_uniform(1.0, (-1f64).exp()), 1.0);
    }

    #[test]
    fn delay_is_a_lower_bound() {
        let mut rng = rng_from_seed(3);
        for _ in 0..10_000 {
            assert!(sample_block_time(1.0, 1.0, 5.0, &mut rng).unwrap() >= 5.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = rng_from_seed(0);
        assert!(sample_block_time(0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(sample_block_time(1.0, -1.0, 0.0, &mut rng).is_err());
        assert!(sample_block_time(1.0, 1.0, -0.5, &mut rng).is_err());
    }

    #[test]
    fn sample_mean_matches_table_magnitudes() {
        let mut rng = rng_from_seed(11);
        let n = 400_000;
        let mean: f64 = (0..n)
            .map(|_| sample_block_time(2.255e15, 1.455e14, 0.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected: f64 = 2.255e15 / 1.455e14;
        assert!((expected - 15.498).abs() < 1e-3);
        // 4 standard errors of an exponential mean.
        assert!((mean - expected).abs() < 4.0 * expected / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn rate_schedule_applies_after_event_height() {
        let s = HashRateScenario {
            initial_rate: 1.0,
            events: vec![RateEvent { height: 5, rate: 2.0 }, RateEvent { height: 8, rate: 3.0 }],
            length: 10,
        };
        let rates: Vec<f64> = (1..=10).map(|k| s.rate_at(k)).collect();
        assert_eq!(rates, vec![1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn scenario_validation() {
        let mut s = HashRateScenario::constant(1.0, 10);
        s.events = vec![RateEvent { height: 4, rate: 2.0 }, RateEvent { height: 4, rate: 3.0 }];
        assert!(s.validate().is_err());
        s.events = vec![RateEvent { height: 11, rate: 2.0 }];
        assert!(s.validate().is_err());
        s.events = vec![RateEvent { height: 0, rate: 2.0 }];
        assert!(s.validate().is_err());
        s.events = vec![RateEvent { height: 3, rate: 0.0 }];
        assert!(s.validate().is_err());
    }

    #[test]
    fn empty_scenario_gives_empty_trace() {
        let mut c = Controller::new(ControllerSpec::identity()).unwrap();
        let t = run_simulation(&HashRateScenario::constant(1.0, 0), &mut c, &SimulationConfig::default(), 10.0)
            .unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn integer_timestamps_are_whole_seconds() {
        let mut c = Controller::new(ControllerSpec::ethereum()).unwrap();
        let cfg = SimulationConfig { integer_timestamps: true, ..SimulationConfig::with_seed(5) };
        let t = run_simulation(&HashRateScenario::constant(100.0, 5_000), &mut c, &cfg, 1300.0).unwrap();
        let mut prev = 0.0;
        for r in &t.records {
            assert_eq!(r.timestamp.fract(), 0.0);
            assert_eq!(r.block_time, r.timestamp - prev);
            prev = r.timestamp;
        }
        assert!(t.records.iter().any(|r| r.block_time == 0.0));
    }

    #[test]
    fn initial_difficulty_below_floor_is_rejected() {
        let mut c = Controller::new(ControllerSpec::identity()).unwrap();
        let cfg = SimulationConfig { min_difficulty: 5.0, ..Default::default() };
        let err = run_simulation(&HashRateScenario::constant(1.0, 3), &mut c, &cfg, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
