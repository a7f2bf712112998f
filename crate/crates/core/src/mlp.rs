//! Two-layer perceptron: standardized log-variance inputs, a tanh hidden
//! layer and a softmax over the three change patterns.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASSES: usize = 3;
pub const DEFAULT_HIDDEN: usize = 25;

const MAGIC: &[u8; 8] = b"DCMLP\0\0\0";
const FORMAT_VERSION: u32 = 1;

/// Change pattern of the block-time trend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    NoChange = 0,
    Normal = 1,
    Abnormal = 2,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::NoChange, Pattern::Normal, Pattern::Abnormal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    inputs: usize,
    hidden: usize,
    /// Per-input mean and standard deviation of `ln(feature)`.
    pub(crate) input_mean: Vec<f64>,
    pub(crate) input_std: Vec<f64>,
    pub(crate) params: Params,
}

/// Weights in row-major order: `w1` is `hidden × inputs`, `w2` is
/// `CLASSES × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; CLASSES * hidden],
            b2: vec![0.0; CLASSES],
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }
}

/// Softmax over three logits.
fn softmax(z: [f64; CLASSES]) -> [f64; CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

impl MlpModel {
    /// All-zero weights with identity standardization.
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            input_mean: vec![0.0; inputs],
            input_std: vec![1.0; inputs],
            params: Params::zeros(inputs, hidden),
        }
    }

    /// Uniform weights in `±1/√fan_in`, zero biases.
    pub fn random<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden);
        let s1 = 1.0 / (inputs as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        for w in &mut m.params.w1 {
            *w = rng.gen_range(-s1..s1);
        }
        for w in &mut m.params.w2 {
            *w = rng.gen_range(-s2..s2);
        }
        m
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_standardization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.inputs || std.len() != self.inputs {
            return Err(Error::Model("standardization length mismatch".into()));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Model("standardization parameters must be finite, std > 0".into()));
        }
        self.input_mean = mean;
        self.input_std = std;
        Ok(())
    }

    /// Log-transforms and z-scores raw variance features.
    pub fn standardize(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.inputs {
            return Err(Error::Domain(format!(
                "expected {} features, got {}",
                self.inputs,
                features.len()
            )));
        }
        features
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(&x, (&m, &s))| {
                if !x.is_finite() || x < 0.0 {
                    Err(Error::Domain(format!("feature {x} is not a finite variance")))
                } else {
                    Ok((x.max(f64::MIN_POSITIVE).ln() - m) / s)
                }
            })
            .collect()
    }

    /// Hidden activations and class probabilities for standardized input.
    pub fn forward(&self, x: &[f64], hidden_out: &mut [f64]) -> [f64; CLASSES] {
        let p = &self.params;
        for (j, h) in hidden_out.iter_mut().enumerate() {
            let row = &p.w1[j * self.inputs..(j + 1) * self.inputs];
            let z: f64 = p.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *h = z.tanh();
        }
        let mut logits = [0.0; CLASSES];
        for (c, out) in logits.iter_mut().enumerate() {
            let row = &p.w2[c * self.hidden..(c + 1) * self.hidden];
            *out = p.b2[c] + row.iter().zip(hidden_out.iter()).map(|(w, h)| w * h).sum::<f64>();
        }
        softmax(logits)
    }

    /// Class probabilities `(P(no change), P(normal), P(abnormal))` for raw
    /// variance features.
    pub fn classify(&self, features: &[f64]) -> Result<[f64; CLASSES]> {
        let x = self.standardize(features)?;
        let mut h = vec![0.0; self.hidden];
        Ok(self.forward(&x, &mut h))
    }

    /// Mean cross-entropy over standardized rows and its gradient, laid out
    /// like the parameters.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], labels: &[usize]) -> (f64, Params) {
        let mut grad = Params::zeros(self.inputs, self.hidden);
        let mut loss = 0.0;
        let mut h = vec![0.0; self.hidden];
        let mut dh = vec![0.0; self.hidden];
        for (x, &y) in xs.iter().zip(labels) {
            let p = self.forward(x, &mut h);
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            let mut dz = p;
            dz[y] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (c, &g) in dz.iter().enumerate() {
                grad.b2[c] += g;
                let row = c * self.hidden;
                for j in 0..self.hidden {
                    grad.w2[row + j] += g * h[j];
                    dh[j] += g * self.params.w2[row + j];
                }
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                grad.b1[j] += da;
                let row = j * self.inputs;
                for (i, v) in x.iter().enumerate() {
                    grad.w1[row + i] += da * v;
                }
            }
        }
        (loss, grad)
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|w| w.is_finite())
    }

    /// Versioned little-endian binary: magic, version, dimensions, then
    /// standardization and row-major weights as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (2 * self.inputs + self.params.len()));
        out.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, self.inputs as u32, self.hidden as u32, CLASSES as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.input_mean.iter().chain(&self.input_std).chain(self.params.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(Error::Model("not a model file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", word(0))));
        }
        let (inputs, hidden, classes) = (word(1) as usize, word(2) as usize, word(3) as usize);
        if classes != CLASSES || inputs == 0 || hidden == 0 {
            return Err(Error::Model(format!("bad dimensions {inputs}×{hidden}×{classes}")));
        }
        let mut model = Self::zeros(inputs, hidden);
        let expected = 24 + 8 * (2 * inputs + model.params.len());
        if bytes.len() != expected {
            return Err(Error::Model(format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut values = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for v in model.input_mean.iter_mut().chain(model.input_std.iter_mut()) {
            *v = values.next().unwrap();
        }
        for v in model.params.iter_mut() {
            *v = values.next().unwrap();
        }
        if !model.is_finite() {
            return Err(Error::Model("non-finite weights".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
