//! Nominal hash-rate estimation and per-period difficulty metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ChainRecord;

/// Sliding-window nominal hash rate: `rates[i]` belongs to `records[i + W − 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashRateEstimate {
    pub window: usize,
    pub first_height: u64,
    pub rates: Vec<f64>,
}

/// `H_k = Σ D / Σ T` over the `W` blocks ending at `k`, via prefix sums.
pub fn nominal_hash_rate(records: &[ChainRecord], window: usize) -> Result<HashRateEstimate> {
    if window == 0 {
        return Err(Error::config("window", "must be ≥ 1"));
    }
    if records.len() < window {
        return Err(Error::Validation(format!(
            "need at least {window} records for the window, got {}",
            records.len()
        )));
    }
    let mut d_prefix = Vec::with_capacity(records.len() + 1);
    let mut t_prefix = Vec::with_capacity(records.len() + 1);
    d_prefix.push(0.0);
    t_prefix.push(0.0);
    for r in records {
        d_prefix.push(d_prefix.last().unwrap() + r.difficulty);
        t_prefix.push(t_prefix.last().unwrap() + r.block_time);
    }
    let mut rates = Vec::with_capacity(records.len() + 1 - window);
    for end in window..=records.len() {
        let t = t_prefix[end] - t_prefix[end - window];
        if !(t > 0.0) {
            return Err(Error::Estimate {
                height: records[end - 1].height,
                reason: "window block times sum to zero".into(),
            });
        }
        rates.push((d_prefix[end] - d_prefix[end - window]) / t);
    }
    Ok(HashRateEstimate { window, first_height: records[window - 1].height, rates })
}

/// Min, lower quartile, median, upper quartile, max (linear interpolation
/// between order statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
            count: s.len(),
        })
    }
}

/// Periodically changing rate: per-period averages, their changes and the
/// change distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicRates {
    pub window: usize,
    /// One average per complete period.
    pub levels: Vec<f64>,
    /// `levels[n+1] − levels[n]`.
    pub deltas: Vec<f64>,
    pub delta_summary: FiveNumber,
}

impl PeriodicRates {
    /// The piecewise-constant series, one value per covered block.
    pub fn expanded(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|&v| std::iter::repeat_n(v, self.window)).collect()
    }
}

pub fn periodic_hash_rate(rates: &[f64], window: usize) -> Result<PeriodicRates> {
    if window == 0 {
        return Err(Error::config("window", "must be ≥ 1"));
    }
    let periods = rates.len() / window;
    if periods < 2 {
        return Err(Error::Estimate {
            height: rates.len() as u64,
            reason: format!("need two full periods of {window}, have {} rates", rates.len()),
        });
    }
    let levels: Vec<f64> = rates
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    let deltas: Vec<f64> = levels.windows(2).map(|w| w[1] - w[0]).collect();
    let delta_summary = FiveNumber::of(&deltas).expect("at least one delta");
    Ok(PeriodicRates { window, levels, deltas, delta_summary })
}

/// Half-open height interval `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    #[serde(default)]
    pub name: String,
    pub start: u64,
    pub end: u64,
}

impl Period {
    pub fn new(name: impl Into<String>, start: u64, end: u64) -> Self {
        Self { name: name.into(), start, end }
    }

    pub fn contains(&self, height: u64) -> bool {
        (self.start..self.end).contains(&height)
    }

    pub fn slice<'a>(&self, records: &'a [ChainRecord]) -> &'a [ChainRecord] {
        let lo = records.partition_point(|r| r.height < self.start);
        let hi = records.partition_point(|r| r.height < self.end);
        &records[lo..hi]
    }
}

/// Block-time moving-average window for convergence detection.
pub const CONVERGENCE_WINDOW: usize = 1000;
/// Relative band around the target block time.
pub const CONVERGENCE_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub period: Period,
    pub blocks: usize,
    pub mean_difficulty: f64,
    /// Mean squared deviation of difficulty from the period mean.
    pub mse: f64,
    pub mean_block_time: f64,
    /// Blocks from the period start until the trailing moving average of
    /// block time is inside the band; `None` if it never is.
    pub convergence_blocks: Option<u64>,
}

/// Blocks after `from_height` until the trailing `window`-block mean block
/// time first lies within `±band·target`.
pub fn convergence_time(records: &[ChainRecord], from_height: u64, target: f64, window: usize, band: f64) -> Option<u64> {
    let start = records.partition_point(|r| r.height <= from_height);
    let mut sum = 0.0;
    for i in start..records.len() {
        sum += records[i].block_time;
        if i >= start + window {
            sum -= records[i - window].block_time;
        }
        if i + 1 >= start + window {
            let avg = sum / window as f64;
            if (avg - target).abs() <= band * target {
                return Some(records[i].height - from_height);
            }
        }
    }
    None
}

pub fn period_metrics(records: &[ChainRecord], period: &Period, target_time: f64) -> Result<PeriodMetrics> {
    let slice = period.slice(records);
    if slice.is_empty() {
        return Err(Error::Domain(format!(
            "period [{}, {}) holds no blocks",
            period.start, period.end
        )));
    }
    let n = slice.len() as f64;
    let mean = slice.iter().map(|r| r.difficulty).sum::<f64>() / n;
    let mse = slice.iter().map(|r| (r.difficulty - mean).powi(2)).sum::<f64>() / n;
    Ok(PeriodMetrics {
        period: period.clone(),
        blocks: slice.len(),
        mean_difficulty: mean,
        mse,
        mean_block_time: slice.iter().map(|r| r.block_time).sum::<f64>() / n,
        convergence_blocks: convergence_time(
            records,
            period.start.saturating_sub(1),
            target_time,
            CONVERGENCE_WINDOW,
            CONVERGENCE_BAND,
        ),
    })
}

/// Percentage by which `proposed` lowers `baseline` (negative if it raises it).
pub fn reduction_percent(baseline: f64, proposed: f64) -> f64 {
    if baseline == 0.0 {
        return if proposed == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    100.0 * (baseline - proposed) / baseline
}

/// Mean `|D_k / D_{k−1} − 1|` over blocks in `period`.
pub fn mean_relative_change(records: &[ChainRecord], period: &Period) -> Option<f64> {
    let slice = period.slice(records);
    if slice.len() < 2 {
        return None;
    }
    let sum: f64 = slice.windows(2).map(|w| (w[1].difficulty / w[0].difficulty - 1.0).abs()).sum();
    Some(sum / (slice.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(d: &[f64], t: &[f64]) -> Vec<ChainRecord> {
        let mut ts = 0.0;
        d.iter()
            .zip(t)
            .enumerate()
            .map(|(i, (&difficulty, &block_time))| {
                ts += block_time;
                ChainRecord { height: i as u64 + 1, timestamp: ts, block_time, difficulty }
            })
            .collect()
    }

    #[test]
    fn hand_computed_rate() {
        let est = nominal_hash_rate(&recs(&[10.0, 10.0], &[5.0, 5.0]), 2).unwrap();
        assert_eq!(est.rates, vec![2.0]);
        assert_eq!(est.first_height, 2);
    }

    #[test]
    fn constant_chain_rate() {
        let est = nominal_hash_rate(&recs(&[26.0; 10], &[13.0; 10]), 3).unwrap();
        assert!(est.rates.iter().all(|&h| h == 2.0));
        assert_eq!(est.rates.len(), 8);
    }

    #[test]
    fn zero_time_window_is_an_error() {
        let err = nominal_hash_rate(&recs(&[1.0, 1.0, 1.0], &[1.0, 0.0, 0.0]), 2).unwrap_err();
        assert!(matches!(err, Error::Estimate { height: 3, .. }));
    }

    #[test]
    fn periodic_levels_and_deltas() {
        let p = periodic_hash_rate(&[2.0, 4.0, 6.0, 8.0], 2).unwrap();
        assert_eq!(p.expanded(), vec![3.0, 3.0, 7.0, 7.0]);
        assert_eq!(p.deltas, vec![4.0]);
        let flat = periodic_hash_rate(&[5.0; 9], 3).unwrap();
        assert!(flat.deltas.iter().all(|&d| d == 0.0));
        assert!(periodic_hash_rate(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn period_metrics_hand_values() {
        let r = recs(&[1.0, 3.0], &[1.0, 1.0]);
        let m = period_metrics(&r, &Period::new("p", 1, 3), 1.0).unwrap();
        assert_eq!(m.mean_difficulty, 2.0);
        assert_eq!(m.mse, 1.0);
        let c = recs(&[7.0; 5], &[1.0; 5]);
        assert_eq!(period_metrics(&c, &Period::new("p", 1, 6), 1.0).unwrap().mse, 0.0);
        assert!(period_metrics(&c, &Period::new("empty", 10, 20), 1.0).is_err());
    }

    #[test]
    fn convergence_counts_from_change() {
        let mut t = vec![20.0; 10];
        t.extend(vec![10.0; 10]);
        let r = recs(&[1.0; 20], &t);
        // Trailing 2-block mean within 5% of 10 s first at height 12.
        assert_eq!(convergence_time(&r, 10, 10.0, 2, 0.05), Some(2));
        assert_eq!(convergence_time(&r, 0, 5.0, 2, 0.05), None);
    }

    #[test]
    fn five_number_summary() {
        let s = FiveNumber::of(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(FiveNumber::of(&[]).is_none());
    }

    #[test]
    fn reduction() {
        assert_eq!(reduction_percent(2.0, 1.0), 50.0);
        assert_eq!(reduction_percent(3.0, 3.0), 0.0);
    }
}
