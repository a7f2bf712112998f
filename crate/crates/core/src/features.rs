//! Sliding-window variance features of block produce times.
//!
//! Feature `j` at height `k` is the population variance of the `l` block
//! times ending at `k − j·s`. Only the newest window is maintained with
//! running sums; older features are read back from the history of past
//! newest-window values, so `A_k^(j) = A_{k−s}^(j−1)` holds exactly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// Block stride between consecutive features.
    pub s: usize,
    /// Number of features.
    pub q: usize,
    /// Window length of each variance.
    pub l: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { s: 200, q: 11, l: 2000 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 1 {
            return Err(Error::config("features.s", "must be ≥ 1"));
        }
        if self.q < 2 {
            return Err(Error::config("features.q", "must be ≥ 2"));
        }
        if self.l < 2 {
            return Err(Error::config("features.l", "must be ≥ 2"));
        }
        Ok(())
    }

    /// Block times needed before the first full feature vector: `(q−1)·s + l`.
    pub fn history(&self) -> usize {
        (self.q - 1) * self.s + self.l
    }

    /// Span from the oldest to the newest feature window end: `(q−1)·s`.
    pub fn lookback(&self) -> usize {
        (self.q - 1) * self.s
    }
}

/// Incremental feature state.
#[derive(Debug, Clone)]
pub struct FeatureState {
    cfg: FeatureConfig,
    window: VecDeque<f64>,
    /// Shift applied before accumulating, for cancellation-free variances.
    pivot: f64,
    sum: f64,
    sum_sq: f64,
    /// Sum of squared shifted values added or removed since the last
    /// refresh; bounds the rounding error carried in `sum_sq`.
    magnitude: f64,
    since_refresh: usize,
    /// Newest-window variance at each of the last `(q−1)·s + 1` heights.
    history: VecDeque<f64>,
    pushed: u64,
}

impl FeatureState {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            window: VecDeque::with_capacity(cfg.l + 1),
            pivot: 0.0,
            sum: 0.0,
            sum_sq: 0.0,
            magnitude: 0.0,
            since_refresh: 0,
            history: VecDeque::with_capacity(cfg.lookback() + 2),
            pushed: 0,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Number of block times pushed so far.
    pub fn height(&self) -> u64 {
        self.pushed
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.cfg).expect("config was validated");
    }

    pub fn push(&mut self, block_time: f64) {
        self.pushed += 1;
        if self.window.is_empty() {
            self.pivot = block_time;
        }
        self.window.push_back(block_time);
        let x = block_time - self.pivot;
        self.sum += x;
        self.sum_sq += x * x;
        self.magnitude += x * x;
        if self.window.len() > self.cfg.l {
            let old = self.window.pop_front().expect("window is non-empty") - self.pivot;
            self.sum -= old;
            self.sum_sq -= old * old;
            self.magnitude += old * old;
        }
        self.since_refresh += 1;
        let centered = self.sum_sq - self.sum * self.sum / self.window.len() as f64;
        if self.since_refresh >= self.cfg.l || self.magnitude > 1e5 * centered {
            self.refresh();
        }
        if self.window.len() == self.cfg.l {
            let v = self.newest_variance();
            self.history.push_back(v);
            if self.history.len() > self.cfg.lookback() + 1 {
                self.history.pop_front();
            }
        }
    }

    /// Recomputes the running sums about the window mean.
    fn refresh(&mut self) {
        self.since_refresh = 0;
        let n = self.window.len().max(1) as f64;
        self.pivot = self.window.iter().sum::<f64>() / n;
        let (mut s, mut ss) = (0.0, 0.0);
        for &t in &self.window {
            let x = t - self.pivot;
            s += x;
            ss += x * x;
        }
        self.sum = s;
        self.sum_sq = ss;
        self.magnitude = ss;
    }

    fn newest_variance(&self) -> f64 {
        let n = self.cfg.l as f64;
        let mean = self.sum / n;
        (self.sum_sq / n - mean * mean).max(0.0)
    }

    pub fn is_ready(&self) -> bool {
        self.history.len() == self.cfg.lookback() + 1
    }

    /// `[A^(0), …, A^(q−1)]`, or `None` until `(q−1)·s + l` times are in.
    pub fn feature_vector(&self) -> Option<Vec<f64>> {
        if !self.is_ready() {
            return None;
        }
        let last = self.history.len() - 1;
        Some((0..self.cfg.q).map(|j| self.history[last - j * self.cfg.s]).collect())
    }
}

/// Features at the end of `times` (the newest block last), via a fresh state.
pub fn features_of(times: &[f64], cfg: FeatureConfig) -> Result<Vec<f64>> {
    let mut state = FeatureState::new(cfg)?;
    let start = times.len().saturating_sub(cfg.history());
    for &t in &times[start..] {
        state.push(t);
    }
    state.feature_vector().ok_or_else(|| {
        Error::Validation(format!(
            "need {} block times for features, got {}",
            cfg.history(),
            times.len()
        ))
    })
}
