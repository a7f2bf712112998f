//! Trace and chain CSV files, experiment configuration and JSON reports.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerSpec, IndicatorPolicy, NeuralIndicator};
use crate::error::{Error, Result};
use crate::estimators::Period;
use crate::features::FeatureConfig;
use crate::mlp::MlpModel;
use crate::sim::{ChainRecord, HashRateScenario, SimulationConfig, Trace};
use crate::train::TrainingConfig;
use crate::update::{solve_shift, ArctanUpdate, TPreviousDistribution, UpdateFunction};

pub const TRACE_HEADER: [&str; 5] = ["height", "timestamp", "block_time", "difficulty", "scheduled_rate"];

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { line, reason: format!("{other:?}") },
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (r, rate) in trace.records.iter().zip(&trace.scheduled_rates) {
        w.write_record([
            r.height.to_string(),
            fmt_f64(r.timestamp),
            fmt_f64(r.block_time),
            fmt_f64(r.difficulty),
            fmt_f64(*rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &Trace, path: &Path) -> Result<()> {
    write_trace_csv(trace, create(path)?).map_err(|e| csv_err(path, e))
}

/// Writes `height,<name>…` columns; `None` cells are left empty.
pub fn save_columns(path: &Path, heights: &[u64], columns: &[(&str, Vec<Option<f64>>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let run = |w: &mut csv::Writer<File>| -> std::result::Result<(), csv::Error> {
        let mut header = vec!["height".to_string()];
        header.extend(columns.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header)?;
        for (i, h) in heights.iter().enumerate() {
            let mut row = vec![h.to_string()];
            row.extend(columns.iter().map(|(_, c)| c[i].map(fmt_f64).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| csv_err(path, e))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse { line, reason: format!("bad {name} value {raw:?}") })
}

/// Loads `height,timestamp,difficulty[,block_time[,scheduled_rate]]`.
///
/// Without a `block_time` column the first row only anchors the clock and
/// is dropped. With one (simulator traces), every row is kept as written.
pub fn load_chain_csv(path: &Path) -> Result<Vec<ChainRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (hi, ti, di) = match (col("height"), col("timestamp"), col("difficulty")) {
        (Some(h), Some(t), Some(d)) => (h, t, d),
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: format!("header must contain height,timestamp,difficulty; got {:?}", headers),
            })
        }
    };
    let bi = col("block_time");

    let mut rows: Vec<(u64, f64, f64, Option<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let height: u64 = parse_field(&rec, hi, "height")?;
        let ts: f64 = parse_field(&rec, ti, "timestamp")?;
        let d: f64 = parse_field(&rec, di, "difficulty")?;
        let bt = bi.map(|i| parse_field::<f64>(&rec, i, "block_time")).transpose()?;
        rows.push((height, ts, d, bt));
    }

    let mut problems = Vec::new();
    for w in rows.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            problems.push(format!("height {} follows {}", w[1].0, w[0].0));
        }
        if w[1].1 < w[0].1 {
            problems.push(format!("timestamp decreases at height {}", w[1].0));
        }
    }
    for r in &rows {
        if !(r.2 > 0.0 && r.2.is_finite()) {
            problems.push(format!("non-positive difficulty at height {}", r.0));
        }
        if let Some(bt) = r.3 {
            if !(bt >= 0.0 && bt.is_finite()) {
                problems.push(format!("negative block time at height {}", r.0));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(format!("{}: {}", path.display(), problems.join("; "))));
    }

    if bi.is_some() {
        Ok(rows
            .into_iter()
            .map(|(height, timestamp, difficulty, bt)| ChainRecord {
                height,
                timestamp,
                block_time: bt.expect("column present"),
                difficulty,
            })
            .collect())
    } else {
        Ok(rows
            .windows(2)
            .map(|w| ChainRecord {
                height: w[1].0,
                timestamp: w[1].1,
                block_time: w[1].1 - w[0].1,
                difficulty: w[1].2,
            })
            .collect())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_config_error(&e))
}

fn json_config_error(e: &serde_json::Error) -> Error {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| format!("line {}", e.line()));
    Error::Config { field, reason: msg }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    #[default]
    One,
    Neural,
}

/// Controller section of an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Identity,
    Ethereum,
    Bitcoin {
        #[serde(default = "default_epoch")]
        epoch: usize,
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
    Arctan {
        a: f64,
        b: f64,
        c: f64,
        /// Solved from Condition 1 when absent.
        #[serde(default)]
        d: Option<f64>,
        #[serde(default)]
        indicator: IndicatorKind,
        /// Model file for the neural indicator.
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default = "default_every")]
        every: u64,
    },
}

fn default_epoch() -> usize {
    crate::update::BITCOIN_EPOCH
}
fn default_spacing() -> f64 {
    crate::update::BITCOIN_SPACING
}
fn default_every() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Sliding-window lengths for the nominal hash-rate analysis.
    pub windows: Vec<usize>,
    pub periods: Vec<Period>,
    /// Windows following abnormal rate changes.
    pub abnormal: Vec<Period>,
    /// Target block time; the Ethereum rule's zero-drift mean when absent.
    pub target_block_time: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            windows: vec![2000],
            periods: vec![Period::new("period1", 55_000, 100_000), Period::new("period2", 105_000, 150_000)],
            abnormal: vec![
                Period::new("period3", 150_000, 160_000),
                Period::new("period4", 200_000, 210_000),
                Period::new("period5", 250_000, 260_000),
            ],
            target_block_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: HashRateScenario,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    /// Starting difficulty; `initial_rate × target_block_time` when absent.
    #[serde(default)]
    pub initial_difficulty: Option<f64>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    /// Parses and validates; relative model paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        if let ControllerConfig::Arctan { model: Some(m), .. } = &mut cfg.controller {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new(".")).join(&*m);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.simulation.validate()?;
        self.features.validate()?;
        self.training.validate()?;
        if let Some(d) = self.initial_difficulty {
            if !(d >= self.simulation.min_difficulty && d.is_finite()) {
                return Err(Error::config("initial_difficulty", "must be finite and ≥ min_difficulty"));
            }
        }
        if let Some(t) = self.analysis.target_block_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("analysis.target_block_time", "must be positive"));
            }
        }
        if self.analysis.windows.contains(&0) {
            return Err(Error::config("analysis.windows", "must be ≥ 1"));
        }
        for p in self.analysis.periods.iter().chain(&self.analysis.abnormal) {
            if p.end <= p.start {
                return Err(Error::config("analysis.periods", format!("period {:?} is empty", p.name)));
            }
        }
        match &self.controller {
            ControllerConfig::Bitcoin { epoch, spacing } => {
                if *epoch == 0 || !(*spacing > 0.0) {
                    return Err(Error::config("controller", "epoch ≥ 1 and spacing > 0 required"));
                }
            }
            ControllerConfig::Arctan { a, b, c, d, indicator, model, every } => {
                ArctanUpdate::new(*a, *b, *c, d.unwrap_or(0.0))?;
                if *every == 0 {
                    return Err(Error::config("controller.every", "must be ≥ 1"));
                }
                match (indicator, model) {
                    (IndicatorKind::Neural, None) => {
                        return Err(Error::config("controller.model", "neural indicator needs a model file"))
                    }
                    (IndicatorKind::Neural, Some(m)) if !m.is_file() => {
                        return Err(Error::config("controller.model", format!("{} does not exist", m.display())))
                    }
                    (IndicatorKind::One, Some(_)) => {
                        return Err(Error::config("controller.model", "only used with the neural indicator"))
                    }
                    _ => {}
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn target_block_time(&self) -> Result<f64> {
        match self.analysis.target_block_time {
            Some(t) => Ok(t),
            None => crate::ethereum_target_block_time(),
        }
    }

    pub fn initial_difficulty(&self) -> Result<f64> {
        match self.initial_difficulty {
            Some(d) => Ok(d),
            None => Ok(self.scenario.initial_rate * self.target_block_time()?),
        }
    }

    /// Builds the controller, loading the model and solving `D` if needed.
    pub fn controller_spec(&self) -> Result<ControllerSpec> {
        let mut spec = match &self.controller {
            ControllerConfig::Identity => ControllerSpec::identity(),
            ControllerConfig::Ethereum => ControllerSpec::ethereum(),
            ControllerConfig::Bitcoin { epoch, spacing } => ControllerSpec::bitcoin(*epoch, *spacing),
            ControllerConfig::Arctan { a, b, c, d, indicator, model, every } => {
                let update = match d {
                    Some(d) => ArctanUpdate::new(*a, *b, *c, *d)?,
                    None => {
                        let dist = TPreviousDistribution::exponential(self.target_block_time()?)?;
                        solve_shift(*a, *b, *c, &dist)?.update
                    }
                };
                let policy = match (indicator, model) {
                    (IndicatorKind::Neural, Some(path)) => IndicatorPolicy::Neural(NeuralIndicator {
                        model: Arc::new(MlpModel::load(path)?),
                        features: self.features,
                        every: *every,
                    }),
                    _ => IndicatorPolicy::ConstantOne,
                };
                ControllerSpec::arctan(update, policy)
            }
        };
        spec.min_difficulty = self.simulation.min_difficulty;
        spec.validate()?;
        Ok(spec)
    }

    /// Resolved update function, for reports.
    pub fn update_function(&self) -> Result<UpdateFunction> {
        Ok(self.controller_spec()?.update)
    }
}
