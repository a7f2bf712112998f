//! End-to-end comparison of the Ethereum rule and the neural-indicator
//! arctan controller on the injection/withdrawal schedule.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerSpec, IndicatorPolicy, NeuralIndicator};
use crate::error::{Error, Result};
use crate::estimators::{
    mean_relative_change, nominal_hash_rate, period_metrics, periodic_hash_rate, reduction_percent, FiveNumber,
    Period, PeriodMetrics,
};
use crate::features::FeatureConfig;
use crate::io::{fmt_f64, save_columns, save_trace, write_json, AnalysisConfig};
use crate::mlp::MlpModel;
use crate::sim::{run_simulation, ChainRecord, HashRateScenario, RateEvent, SimulationConfig, Trace};
use crate::train::{self, TrainingConfig, TrainingReport, BASE_RATE};
use crate::update::{amplitude_ratio, solve_shift, ArctanUpdate, Calibration, TPreviousDistribution, UpdateFunction};

/// Injections of 20% at 50k and 40% at 150k and 200k; withdrawals at 100k,
/// 155k and 250k; 300k blocks.
pub fn injection_scenario(base_rate: f64) -> HashRateScenario {
    let ev = |height, factor: f64| RateEvent { height, rate: base_rate * factor };
    HashRateScenario {
        initial_rate: base_rate,
        events: vec![
            ev(50_000, 1.2),
            ev(100_000, 1.0),
            ev(150_000, 1.4),
            ev(155_000, 1.0),
            ev(200_000, 1.4),
            ev(250_000, 1.0),
        ],
        length: 300_000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicationConfig {
    pub scenario: HashRateScenario,
    pub simulation: SimulationConfig,
    pub analysis: AnalysisConfig,
    /// Arctan `A, B, C`; `D` is solved against the Ethereum rule's zero-drift mean.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub features: FeatureConfig,
    pub training: TrainingConfig,
    /// Neural indicator evaluation stride in blocks.
    pub every: u64,
    /// Divide every height (schedule and periods) by this factor.
    pub scale: u64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        let table = ArctanUpdate::ethereum_table();
        Self {
            scenario: injection_scenario(BASE_RATE),
            simulation: SimulationConfig::with_seed(42),
            analysis: AnalysisConfig::default(),
            a: table.a,
            b: table.b,
            c: table.c,
            features: FeatureConfig::default(),
            training: TrainingConfig::default(),
            every: 1,
            scale: 1,
        }
    }
}

impl ReplicationConfig {
    /// One-tenth heights and a small training run.
    pub fn quick() -> Self {
        let mut cfg = Self { scale: 10, ..Self::default() };
        cfg.training.samples_per_class = 150;
        cfg.training.max_epochs = 800;
        cfg.training.eval_samples_per_class = 100;
        cfg
    }

    fn scaled_period(&self, p: &Period) -> Period {
        Period::new(p.name.clone(), p.start / self.scale, p.end / self.scale)
    }

    pub fn effective_scenario(&self) -> HashRateScenario {
        if self.scale > 1 {
            self.scenario.scaled(self.scale)
        } else {
            self.scenario.clone()
        }
    }

    pub fn effective_periods(&self) -> (Vec<Period>, Vec<Period>) {
        (
            self.analysis.periods.iter().map(|p| self.scaled_period(p)).collect(),
            self.analysis.abnormal.iter().map(|p| self.scaled_period(p)).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_scenario().validate()?;
        self.simulation.validate()?;
        self.features.validate()?;
        self.training.validate()?;
        ArctanUpdate::new(self.a, self.b, self.c, 0.0)?;
        if self.scale == 0 {
            return Err(Error::config("scale", "must be ≥ 1"));
        }
        if self.every == 0 {
            return Err(Error::config("every", "must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodComparison {
    pub name: String,
    pub original: PeriodMetrics,
    pub proposed: PeriodMetrics,
    pub mse_reduction_percent: f64,
    /// `|mean_proposed / mean_original − 1|` in percent.
    pub mean_gap_percent: f64,
}

pub fn compare_period(original: &[ChainRecord], proposed: &[ChainRecord], period: &Period, target: f64) -> Result<PeriodComparison> {
    let o = period_metrics(original, period, target)?;
    let p = period_metrics(proposed, period, target)?;
    Ok(PeriodComparison {
        name: period.name.clone(),
        mse_reduction_percent: reduction_percent(o.mse, p.mse),
        mean_gap_percent: 100.0 * (p.mean_difficulty / o.mean_difficulty - 1.0).abs(),
        original: o,
        proposed: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowActivity {
    pub name: String,
    pub period: Period,
    /// Mean `|D_k/D_{k−1} − 1|`.
    pub original_mean_relative_change: f64,
    pub proposed_mean_relative_change: f64,
    /// Mean of the evaluated indicator values (warm-up excluded).
    pub proposed_mean_indicator: Option<f64>,
}

pub fn mean_indicator(trace: &Trace, period: &Period) -> Option<f64> {
    let vals: Vec<f64> = trace
        .records
        .iter()
        .zip(&trace.indicators)
        .filter(|(r, _)| period.contains(r.height))
        .filter_map(|(_, i)| *i)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeReport {
    pub ratio: f64,
    pub ratio_with_table_arctan: f64,
    /// The quoted approximation `99/π`, obtained by taking `2048·1e-3 ≈ 2`.
    pub rounded_99_over_pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub config: ReplicationConfig,
    pub seed: u64,
    pub target_block_time: f64,
    pub calibration: Calibration,
    pub amplitude: AmplitudeReport,
    pub original_mean_block_time: f64,
    pub proposed_mean_block_time: f64,
    pub periods: Vec<PeriodComparison>,
    pub abnormal: Vec<WindowActivity>,
    pub training: Option<TrainingReport>,
}

impl ReplicationReport {
    pub fn period(&self, name: &str) -> Option<&PeriodComparison> {
        self.periods.iter().find(|p| p.name == name)
    }
}

pub struct Replication {
    pub original: Trace,
    pub proposed: Trace,
    pub model: Arc<MlpModel>,
    pub report: ReplicationReport,
}

/// Proposed controller: calibrated arctan update gated by the classifier.
pub fn proposed_controller(update: ArctanUpdate, model: Arc<MlpModel>, features: FeatureConfig, every: u64, min_difficulty: f64) -> Result<Controller> {
    let mut spec = ControllerSpec::arctan(update, IndicatorPolicy::Neural(NeuralIndicator { model, features, every }));
    spec.min_difficulty = min_difficulty;
    Controller::new(spec)
}

/// Runs both controllers on the same seed. Trains a model first unless one
/// is supplied.
pub fn run_replication(cfg: &ReplicationConfig, model: Option<MlpModel>) -> Result<Replication> {
    cfg.validate()?;
    let target = match cfg.analysis.target_block_time {
        Some(t) => t,
        None => crate::ethereum_target_block_time()?,
    };
    let calibration = solve_shift(cfg.a, cfg.b, cfg.c, &TPreviousDistribution::exponential(target)?)?;

    let (model, training) = match model {
        Some(m) => (m, None),
        None => {
            let tcfg = TrainingConfig { target_block_time: target, ..cfg.training.clone() };
            let (m, r) = train::train(&tcfg, cfg.features)?;
            (m, Some(r))
        }
    };
    let model = Arc::new(model);

    let scenario = cfg.effective_scenario();
    let initial = scenario.initial_rate * target;
    let mut original_ctl = Controller::new(ControllerSpec {
        min_difficulty: cfg.simulation.min_difficulty,
        ..ControllerSpec::ethereum()
    })?;
    let original = run_simulation(&scenario, &mut original_ctl, &cfg.simulation, initial)?;
    let mut proposed_ctl = proposed_controller(
        calibration.update,
        model.clone(),
        cfg.features,
        cfg.every,
        cfg.simulation.min_difficulty,
    )?;
    let proposed = run_simulation(&scenario, &mut proposed_ctl, &cfg.simulation, initial)?;

    let (periods, abnormal) = cfg.effective_periods();
    let periods = periods
        .iter()
        .map(|p| compare_period(&original.records, &proposed.records, p, target))
        .collect::<Result<Vec<_>>>()?;
    let abnormal = abnormal
        .iter()
        .map(|p| WindowActivity {
            name: p.name.clone(),
            period: p.clone(),
            original_mean_relative_change: mean_relative_change(&original.records, p).unwrap_or(f64::NAN),
            proposed_mean_relative_change: mean_relative_change(&proposed.records, p).unwrap_or(f64::NAN),
            proposed_mean_indicator: mean_indicator(&proposed, p),
        })
        .collect();

    let eth = UpdateFunction::Ethereum;
    let amplitude = AmplitudeReport {
        ratio: amplitude_ratio(&eth, &UpdateFunction::Arctan(calibration.update))?,
        ratio_with_table_arctan: amplitude_ratio(&eth, &UpdateFunction::Arctan(ArctanUpdate::ethereum_table()))?,
        rounded_99_over_pi: 99.0 / std::f64::consts::PI,
    };

    let report = ReplicationReport {
        config: cfg.clone(),
        seed: cfg.simulation.seed,
        target_block_time: target,
        calibration,
        amplitude,
        original_mean_block_time: original.mean_block_time(),
        proposed_mean_block_time: proposed.mean_block_time(),
        periods,
        abnormal,
        training,
    };
    Ok(Replication { original, proposed, model, report })
}

impl Replication {
    /// Writes traces, plot-ready CSVs, the model and the JSON report.
    pub fn write(&self, dir: &Path) -> Result<()> {
        save_trace(&self.original, &dir.join("trace_original.csv"))?;
        save_trace(&self.proposed, &dir.join("trace_proposed.csv"))?;
        let heights: Vec<u64> = self.original.records.iter().map(|r| r.height).collect();
        save_columns(
            &dir.join("difficulty.csv"),
            &heights,
            &[
                ("original", self.original.records.iter().map(|r| Some(r.difficulty)).collect()),
                ("proposed", self.proposed.records.iter().map(|r| Some(r.difficulty)).collect()),
                ("scheduled_rate", self.original.scheduled_rates.iter().map(|&r| Some(r)).collect()),
            ],
        )?;
        save_columns(&dir.join("indicator.csv"), &heights, &[("indicator", self.proposed.indicators.clone())])?;
        if let Some(tr) = &self.report.training {
            write_accuracy_csv(&dir.join("accuracy.csv"), tr)?;
        }
        self.model.save(&dir.join("model.bin"))?;
        write_json(&dir.join("report.json"), &self.report)
    }
}

pub fn write_accuracy_csv(path: &Path, report: &TrainingReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut write = |row: Vec<String>| w.write_record(&row).map_err(|e| Error::Validation(format!("{}: {e}", path.display())));
    write(["blocks_since_change", "overall", "no_change", "normal", "abnormal"].map(String::from).to_vec())?;
    for c in &report.checkpoints {
        let a = &c.accuracy;
        let mut row = vec![c.blocks_since_change.to_string(), fmt_f64(a.overall)];
        row.extend(a.per_class.iter().map(|&v| fmt_f64(v)));
        write(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Change statistics of the nominal hash rate for one window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStatistics {
    pub window: usize,
    pub periods: usize,
    pub delta_summary: FiveNumber,
    pub max_abs_delta: f64,
}

pub fn hash_rate_statistics(records: &[ChainRecord], window: usize) -> Result<WindowStatistics> {
    let est = nominal_hash_rate(records, window)?;
    let periodic = periodic_hash_rate(&est.rates, window)?;
    Ok(WindowStatistics {
        window,
        periods: periodic.levels.len(),
        max_abs_delta: periodic.deltas.iter().fold(0.0, |m, d| m.max(d.abs())),
        delta_summary: periodic.delta_summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceComparison {
    pub target_block_time: f64,
    pub periods: Vec<PeriodComparison>,
    pub windows: Vec<Vec<WindowStatistics>>,
}

/// Period comparison of two traces plus hash-rate statistics of each.
pub fn compare_traces(a: &[ChainRecord], b: &[ChainRecord], periods: &[Period], windows: &[usize], target: f64) -> Result<TraceComparison> {
    Ok(TraceComparison {
        target_block_time: target,
        periods: periods.iter().map(|p| compare_period(a, b, p, target)).collect::<Result<_>>()?,
        windows: [a, b]
            .iter()
            .map(|recs| {
                windows
                    .iter()
                    .filter(|&&w| recs.len() >= 2 * w)
                    .map(|&w| hash_rate_statistics(recs, w))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?,
    })
}
