//! Monte-Carlo training data for the change-pattern classifier, and its
//! training and evaluation.
//!
//! Each sample is a constant-difficulty chain at `base_rate` whose rate
//! jumps by a fraction `x` after block `c`. A no-change example is the
//! feature vector ending at block `c − 1`; a change example is the one
//! ending `elapsed` blocks after the jump, labelled normal when
//! `|x| ≤ anomaly_bound` and abnormal otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::controller::ControllerSpec;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureState};
use crate::mlp::{MlpModel, Params, Pattern, CLASSES, DEFAULT_HIDDEN};
use crate::sim::{run_simulation, HashRateScenario, RateEvent, SimulationConfig};

pub const BASE_RATE: f64 = 1.455e14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Hash rate before the change, hash/s.
    pub base_rate: f64,
    /// Mean block time before the change, seconds.
    pub target_block_time: f64,
    /// Changes are drawn from `[−max_change, +max_change]`.
    pub max_change: f64,
    /// Largest `|x|` still labelled a normal change (closed bound).
    pub anomaly_bound: f64,
    pub samples_per_class: usize,
    /// Post-change examples end this many blocks after the change, drawn
    /// uniformly from the closed range.
    pub elapsed_min: usize,
    pub elapsed_max: usize,
    /// Draw no-change examples from chains with `x = 0` instead of the
    /// pre-change window.
    pub zero_change_baseline: bool,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Early stopping: epochs without validation-loss improvement.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Blocks-since-change checkpoints for the held-out accuracy table.
    pub checkpoints: Vec<usize>,
    pub eval_samples_per_class: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            base_rate: BASE_RATE,
            target_block_time: 9.0 / std::f64::consts::LN_2,
            max_change: 0.60,
            anomaly_bound: 0.20,
            samples_per_class: 3000,
            elapsed_min: 500,
            elapsed_max: 5000,
            zero_change_baseline: false,
            hidden: DEFAULT_HIDDEN,
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 15_000,
            patience: 1000,
            validation_fraction: 0.2,
            checkpoints: vec![1000, 2000, 5000],
            eval_samples_per_class: 500,
            seed: 2020,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.base_rate) {
            return Err(Error::config("training.base_rate", "must be positive"));
        }
        if !pos(self.target_block_time) {
            return Err(Error::config("training.target_block_time", "must be positive"));
        }
        if !(self.max_change > 0.0 && self.max_change < 1.0) {
            return Err(Error::config("training.max_change", "must lie in (0, 1)"));
        }
        if !(self.anomaly_bound > 0.0 && self.anomaly_bound < self.max_change) {
            return Err(Error::config("training.anomaly_bound", "must lie in (0, max_change)"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("training.samples_per_class", "must be ≥ 1"));
        }
        if self.elapsed_min == 0 || self.elapsed_max < self.elapsed_min {
            return Err(Error::config("training.elapsed_min", "need 1 ≤ elapsed_min ≤ elapsed_max"));
        }
        if self.hidden == 0 {
            return Err(Error::config("training.hidden", "must be ≥ 1"));
        }
        if !pos(self.learning_rate) {
            return Err(Error::config("training.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("training.momentum", "must lie in [0, 1)"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("training.validation_fraction", "must lie in (0, 1)"));
        }
        if self.checkpoints.contains(&0) {
            return Err(Error::config("training.checkpoints", "must be ≥ 1"));
        }
        Ok(())
    }

    /// Label of a post-change example.
    pub fn label_for_change(&self, change: f64) -> Pattern {
        if change.abs() <= self.anomaly_bound {
            Pattern::Normal
        } else {
            Pattern::Abnormal
        }
    }
}

/// Where a sample's example is read relative to the change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub pattern: Pattern,
    /// Fractional rate change at the change height.
    pub change: f64,
    /// Blocks after the change at which the newest window ends.
    pub elapsed: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Pattern>,
    pub changes: Vec<f64>,
    pub elapsed: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut c = [0; CLASSES];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }
}

fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | index);
    rng
}

/// Simulates one sample and returns its feature vector.
pub fn sample_features(cfg: &TrainingConfig, fcfg: FeatureConfig, spec: &SampleSpec) -> Result<Vec<f64>> {
    let change_height = fcfg.history() as u64 + 1;
    let pre_window = spec.pattern == Pattern::NoChange && !cfg.zero_change_baseline;
    let (length, change) = if pre_window {
        (change_height - 1, 0.0)
    } else {
        (change_height + spec.elapsed as u64, spec.change)
    };
    let scenario = HashRateScenario {
        initial_rate: cfg.base_rate,
        events: vec![RateEvent { height: change_height, rate: cfg.base_rate * (1.0 + change) }],
        length: length.max(change_height),
    };
    let mut identity = Controller::new(ControllerSpec::identity())?;
    let sim = SimulationConfig::with_seed(spec.seed);
    let trace = run_simulation(&scenario, &mut identity, &sim, cfg.base_rate * cfg.target_block_time)?;
    let mut state = FeatureState::new(fcfg)?;
    for r in trace.records.iter().take(length as usize) {
        state.push(r.block_time);
    }
    state
        .feature_vector()
        .ok_or_else(|| Error::config("training", "sample too short for the feature window"))
}

fn draw_spec<R: Rng>(cfg: &TrainingConfig, pattern: Pattern, elapsed: Option<usize>, rng: &mut R) -> SampleSpec {
    let b = cfg.anomaly_bound;
    let change = match pattern {
        Pattern::NoChange => 0.0,
        Pattern::Normal => rng.gen_range(-b..=b),
        Pattern::Abnormal => {
            let mag = b + (cfg.max_change - b) * (1.0 - rng.gen::<f64>());
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        }
    };
    let elapsed = elapsed.unwrap_or_else(|| rng.gen_range(cfg.elapsed_min..=cfg.elapsed_max));
    SampleSpec { pattern, change, elapsed, seed: rng.next_u64() }
}

fn build_dataset(
    cfg: &TrainingConfig,
    fcfg: FeatureConfig,
    per_class: usize,
    purpose: u64,
    elapsed: Option<usize>,
) -> Result<Dataset> {
    let specs: Vec<SampleSpec> = (0..per_class * CLASSES)
        .map(|i| {
            let pattern = Pattern::from_index(i % CLASSES).expect("three classes");
            draw_spec(cfg, pattern, elapsed, &mut stream(cfg.seed, purpose, i as u64))
        })
        .collect();
    let features = specs
        .par_iter()
        .map(|s| sample_features(cfg, fcfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        features,
        labels: specs.iter().map(|s| s.pattern).collect(),
        changes: specs.iter().map(|s| s.change).collect(),
        elapsed: specs.iter().map(|s| s.elapsed).collect(),
    })
}

/// Balanced training set: `samples_per_class` examples of each pattern,
/// interleaved.
pub fn generate_training_set(cfg: &TrainingConfig, fcfg: FeatureConfig) -> Result<Dataset> {
    cfg.validate()?;
    fcfg.validate()?;
    build_dataset(cfg, fcfg, cfg.samples_per_class, 1, None)
}

/// Balanced held-out set with every change example read `elapsed` blocks
/// after the change.
pub fn generate_eval_set(cfg: &TrainingConfig, fcfg: FeatureConfig, elapsed: usize, per_class: usize) -> Result<Dataset> {
    cfg.validate()?;
    fcfg.validate()?;
    build_dataset(cfg, fcfg, per_class, 2 + elapsed as u64, Some(elapsed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    /// No change, normal, abnormal.
    pub per_class: [f64; CLASSES],
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAccuracy {
    pub blocks_since_change: usize,
    #[serde(flatten)]
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainingConfig,
    pub features: FeatureConfig,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: Accuracy,
    pub checkpoints: Vec<CheckpointAccuracy>,
}

impl TrainingReport {
    pub fn accuracy_at(&self, blocks: usize) -> Option<&Accuracy> {
        self.checkpoints
            .iter()
            .find(|c| c.blocks_since_change == blocks)
            .map(|c| &c.accuracy)
    }
}

pub fn accuracy(model: &MlpModel, data: &Dataset) -> Result<Accuracy> {
    let mut hits = [0usize; CLASSES];
    let counts = data.class_counts();
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let p = model.classify(x)?;
        let argmax = (0..CLASSES).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        if argmax == y.index() {
            hits[y.index()] += 1;
        }
    }
    let per_class = std::array::from_fn(|c| if counts[c] == 0 { f64::NAN } else { hits[c] as f64 / counts[c] as f64 });
    Ok(Accuracy {
        overall: hits.iter().sum::<usize>() as f64 / data.len().max(1) as f64,
        per_class,
        samples: data.len(),
    })
}

fn log_stats(rows: &[&Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r.iter()) {
            *m += x.max(f64::MIN_POSITIVE).ln() / n;
        }
    }
    let mut std = vec![0.0; dim];
    for r in rows {
        for ((s, &x), m) in std.iter_mut().zip(r.iter()).zip(&mean) {
            let d = x.max(f64::MIN_POSITIVE).ln() - m;
            *s += d * d / n;
        }
    }
    let std = std.into_iter().map(|v| v.sqrt().max(1e-12)).collect();
    (mean, std)
}

const CHUNK: usize = 256;

/// Full-batch loss and gradient; chunks are reduced in a fixed order so the
/// result does not depend on the worker count.
fn batch_gradient(model: &MlpModel, xs: &[Vec<f64>], ys: &[usize]) -> (f64, Params) {
    let parts: Vec<(f64, Params)> = xs
        .par_chunks(CHUNK)
        .zip(ys.par_chunks(CHUNK))
        .map(|(x, y)| model.loss_and_gradient(x, y))
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
    let n = xs.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Trains a fresh model by full-batch gradient descent with momentum and
/// early stopping on the validation split. Standardization statistics come
/// from the training split only.
pub fn train_model(data: &Dataset, cfg: &TrainingConfig, fcfg: FeatureConfig) -> Result<(MlpModel, TrainingReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training", "empty dataset"));
    }
    let q = data.features[0].len();
    let n_val = ((data.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, data.len() - 1);
    let n_train = data.len() - n_val;

    let mut rng = stream(cfg.seed, 0, 0);
    let mut model = MlpModel::random(q, cfg.hidden, &mut rng);
    let train_rows: Vec<&Vec<f64>> = data.features[..n_train].iter().collect();
    let (mean, std) = log_stats(&train_rows, q);
    model.set_standardization(mean, std)?;

    let standardize = |rows: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> { rows.iter().map(|r| model.standardize(r)).collect() };
    let xs_train = standardize(&data.features[..n_train])?;
    let xs_val = standardize(&data.features[n_train..])?;
    let ys: Vec<usize> = data.labels.iter().map(|l| l.index()).collect();
    let (ys_train, ys_val) = ys.split_at(n_train);

    let mut velocity = vec![0.0; model.parameter_count()];
    let mut best = (f64::INFINITY, 0usize, model.params.clone(), f64::NAN);
    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        epoch += 1;
        let (train_loss, grad) = batch_gradient(&model, &xs_train, ys_train);
        if !train_loss.is_finite() {
            return Err(Error::Training { epoch, loss: train_loss });
        }
        for ((w, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(grad.iter()) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *w += *v;
        }
        let val_loss = model.loss_and_gradient(&xs_val, ys_val).0 / xs_val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Training { epoch, loss: val_loss });
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone(), train_loss);
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
        if epoch % 500 == 0 {
            log::debug!("epoch {epoch}: train {train_loss:.5} validation {val_loss:.5}");
        }
    }
    let (validation_loss, best_epoch, params, train_loss) = best;
    model.params = params;

    let validation = Dataset {
        features: data.features[n_train..].to_vec(),
        labels: data.labels[n_train..].to_vec(),
        ..Default::default()
    };
    let validation_accuracy = accuracy(&model, &validation)?;

    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    for &blocks in &cfg.checkpoints {
        let eval = generate_eval_set(cfg, fcfg, blocks, cfg.eval_samples_per_class)?;
        checkpoints.push(CheckpointAccuracy { blocks_since_change: blocks, accuracy: accuracy(&model, &eval)? });
    }

    let report = TrainingReport {
        config: cfg.clone(),
        features: fcfg,
        train_samples: n_train,
        validation_samples: n_val,
        epochs_run: epoch,
        best_epoch,
        train_loss,
        validation_loss,
        validation_accuracy,
        checkpoints,
    };
    Ok((model, report))
}

/// Generates data and trains in one go.
pub fn train(cfg: &TrainingConfig, fcfg: FeatureConfig) -> Result<(MlpModel, TrainingReport)> {
    let data = generate_training_set(cfg, fcfg)?;
    log::info!("generated {} training examples {:?}", data.len(), data.class_counts());
    train_model(&data, cfg, fcfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_the_closed_bound() {
        let cfg = TrainingConfig::default();
        assert_eq!(cfg.label_for_change(0.15), Pattern::Normal);
        assert_eq!(cfg.label_for_change(0.45), Pattern::Abnormal);
        assert_eq!(cfg.label_for_change(0.20), Pattern::Normal);
        assert_eq!(cfg.label_for_change(-0.20), Pattern::Normal);
        assert_eq!(cfg.label_for_change(-0.2000001), Pattern::Abnormal);
    }

    #[test]
    fn generated_set_is_balanced_and_labelled() {
        let cfg = TrainingConfig { samples_per_class: 20, ..Default::default() };
        let fcfg = FeatureConfig { s: 20, q: 5, l: 100 };
        let data = generate_training_set(&cfg, fcfg).unwrap();
        assert_eq!(data.class_counts(), [20, 20, 20]);
        for (label, change) in data.labels.iter().zip(&data.changes) {
            match label {
                Pattern::NoChange => assert_eq!(*change, 0.0),
                Pattern::Normal => assert!(change.abs() <= 0.2),
                Pattern::Abnormal => assert!(change.abs() > 0.2 && change.abs() <= 0.6),
            }
        }
        assert!(data.features.iter().all(|f| f.len() == 5 && f.iter().all(|v| *v > 0.0)));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = TrainingConfig { samples_per_class: 5, ..Default::default() };
        let fcfg = FeatureConfig { s: 10, q: 3, l: 50 };
        let a = generate_training_set(&cfg, fcfg).unwrap();
        let b = generate_training_set(&cfg, fcfg).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainingConfig { anomaly_bound: 0.7, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainingConfig { elapsed_min: 10, elapsed_max: 5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn separable_toy_problem_is_learned() {
        // Two well-separated variance levels for two classes.
        let mut data = Dataset::default();
        let mut rng = stream(1, 9, 0);
        for i in 0..400 {
            let (label, level) = if i % 2 == 0 { (Pattern::NoChange, 1.0) } else { (Pattern::Abnormal, 50.0) };
            data.features.push((0..3).map(|_| level * rng.gen_range(0.8..1.25)).collect());
            data.labels.push(label);
        }
        let cfg = TrainingConfig { max_epochs: 300, checkpoints: vec![], hidden: 4, ..Default::default() };
        let (model, report) = train_model(&data, &cfg, FeatureConfig { s: 1, q: 3, l: 2 }).unwrap();
        let acc = accuracy(&model, &data).unwrap();
        assert!(acc.overall >= 0.99, "{acc:?} {report:?}");
    }
}
