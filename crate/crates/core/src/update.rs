//! Update functions `f(T_previous)`, the stationary densities of `T_previous`,
//! and calibration of the zero-drift condition `∫ f·g = 0`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, QuadratureOptions, QuadratureReport};

/// Ethereum's difficulty adjustment quotient.
pub const ETHEREUM_QUOTIENT: f64 = 2048.0;
/// Block-time bucket width of the Ethereum rule, seconds.
pub const ETHEREUM_BUCKET: f64 = 9.0;
/// Upper clamp of the Ethereum rule argument, seconds.
pub const ETHEREUM_CAP: f64 = 900.0;
pub const BITCOIN_EPOCH: usize = 2016;
pub const BITCOIN_SPACING: f64 = 600.0;

/// Combined probability mass left outside the integration range.
pub const TAIL_MASS: f64 = 1e-12;
/// Absolute accuracy demanded of every Condition-1 residual.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// `(floor(T/9) − 1) / 2048` for `0 < T ≤ 900`, else `99/2048`.
pub fn ethereum_update(block_time: f64) -> Result<f64> {
    if !(block_time > 0.0) {
        return Err(Error::Domain(format!(
            "Ethereum rule needs a positive block time, got {block_time}"
        )));
    }
    Ok(ethereum_rule(block_time))
}

fn ethereum_rule(t: f64) -> f64 {
    if t <= ETHEREUM_CAP {
        ((t / ETHEREUM_BUCKET).floor() - 1.0) / ETHEREUM_QUOTIENT
    } else {
        99.0 / ETHEREUM_QUOTIENT
    }
}

/// `1 − N·β / T_previous`.
pub fn bitcoin_update(t_previous: f64, epoch: usize, spacing: f64) -> Result<f64> {
    if !(t_previous > 0.0) {
        return Err(Error::Domain(format!(
            "Bitcoin rule needs a positive epoch duration, got {t_previous}"
        )));
    }
    Ok(1.0 - epoch as f64 * spacing / t_previous)
}

/// `A·(arctan(B·(t − C)) + D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArctanUpdate {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ArctanUpdate {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let f = Self { a, b, c, d };
        f.validate()?;
        Ok(f)
    }

    /// Ethereum row of the published parameter table (C in seconds).
    pub fn ethereum_table() -> Self {
        Self { a: 1e-3, b: 1e-2, c: 11.0, d: 0.0 }
    }

    /// Bitcoin row of the published parameter table; C = 20,160 minutes and B
    /// is per minute, both converted to seconds.
    pub fn bitcoin_table() -> Self {
        Self {
            a: 5e-5,
            b: 1e-3 / 60.0,
            c: 20_160.0 * 60.0,
            d: 1.35e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::config("a", format!("must be positive, got {}", self.a)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::config("b", format!("must be positive, got {}", self.b)));
        }
        if !self.c.is_finite() {
            return Err(Error::config("c", "must be finite"));
        }
        if !self.d.is_finite() {
            return Err(Error::config("d", "must be finite"));
        }
        if self.sup_abs() >= 1.0 {
            return Err(Error::config(
                "a",
                format!("A·(π/2 + |D|) = {} must stay below 1", self.sup_abs()),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.a * ((self.b * (t - self.c)).atan() + self.d)
    }

    /// Bound on `|f|` over the whole real line.
    pub fn sup_abs(&self) -> f64 {
        self.a * (FRAC_PI_2 + self.d.abs())
    }
}

/// An update function paired with a controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateFunction {
    Ethereum,
    Bitcoin { epoch: usize, spacing: f64 },
    Arctan(ArctanUpdate),
    /// `f ≡ value`; `Constant(0.0)` is the identity controller.
    Constant { value: f64 },
}

impl UpdateFunction {
    pub fn bitcoin() -> Self {
        UpdateFunction::Bitcoin { epoch: BITCOIN_EPOCH, spacing: BITCOIN_SPACING }
    }

    /// Domain-checked evaluation.
    pub fn evaluate(&self, t_previous: f64) -> Result<f64> {
        match *self {
            UpdateFunction::Ethereum => ethereum_update(t_previous),
            UpdateFunction::Bitcoin { epoch, spacing } => bitcoin_update(t_previous, epoch, spacing),
            UpdateFunction::Arctan(f) => Ok(f.eval(t_previous)),
            UpdateFunction::Constant { value } => Ok(value),
        }
    }

    /// Evaluation on `t ≥ 0` without the positivity check; a zero Ethereum
    /// block time falls in the first bucket like it does on-chain.
    #[inline]
    pub(crate) fn value(&self, t: f64) -> f64 {
        match *self {
            UpdateFunction::Ethereum => ethereum_rule(t),
            UpdateFunction::Bitcoin { epoch, spacing } => 1.0 - epoch as f64 * spacing / t,
            UpdateFunction::Arctan(f) => f.eval(t),
            UpdateFunction::Constant { value } => value,
        }
    }

    /// `sup f` over `t ∈ (0, ∞)`.
    pub fn supremum(&self) -> f64 {
        match *self {
            UpdateFunction::Ethereum => 99.0 / ETHEREUM_QUOTIENT,
            UpdateFunction::Bitcoin { .. } => 1.0,
            UpdateFunction::Arctan(f) => f.a * (FRAC_PI_2 + f.d),
            UpdateFunction::Constant { value } => value,
        }
    }

    /// `sup |f|`, infinite when unbounded.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            UpdateFunction::Ethereum => 99.0 / ETHEREUM_QUOTIENT,
            UpdateFunction::Bitcoin { .. } => f64::INFINITY,
            UpdateFunction::Arctan(f) => f.sup_abs(),
            UpdateFunction::Constant { value } => value.abs(),
        }
    }

    fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            UpdateFunction::Ethereum => (1..=100)
                .map(|n| n as f64 * ETHEREUM_BUCKET)
                .filter(|&t| t > lo && t < hi)
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Stationary law of `T_previous` under a fixed mean single-block time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TPreviousDistribution {
    Exponential { beta: f64 },
    /// Sum of `shape` independent exponentials of mean `beta`.
    Erlang { shape: u32, beta: f64 },
    /// Degenerate law concentrated at one point (test density).
    PointMass { at: f64 },
}

impl TPreviousDistribution {
    pub fn exponential(beta: f64) -> Result<Self> {
        let d = TPreviousDistribution::Exponential { beta };
        d.validate()?;
        Ok(d)
    }

    pub fn erlang(shape: u32, beta: f64) -> Result<Self> {
        let d = TPreviousDistribution::Erlang { shape, beta };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TPreviousDistribution::Exponential { beta } | TPreviousDistribution::Erlang { beta, .. }
                if !(beta > 0.0 && beta.is_finite()) =>
            {
                Err(Error::config("beta", format!("must be positive, got {beta}")))
            }
            TPreviousDistribution::Erlang { shape: 0, .. } => Err(Error::config("shape", "must be at least 1")),
            TPreviousDistribution::PointMass { at } if !(at >= 0.0 && at.is_finite()) => {
                Err(Error::config("at", format!("must be a non-negative time, got {at}")))
            }
            _ => Ok(()),
        }
    }

    /// Same family with a different single-block mean.
    pub fn with_beta(&self, beta: f64) -> Self {
        match *self {
            TPreviousDistribution::Exponential { .. } => TPreviousDistribution::Exponential { beta },
            TPreviousDistribution::Erlang { shape, .. } => TPreviousDistribution::Erlang { shape, beta },
            TPreviousDistribution::PointMass { .. } => TPreviousDistribution::PointMass { at: beta },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            TPreviousDistribution::Exponential { beta } => beta,
            TPreviousDistribution::Erlang { shape, beta } => shape as f64 * beta,
            TPreviousDistribution::PointMass { at } => at,
        }
    }

    /// Mean of a single block time.
    pub fn block_mean(&self) -> f64 {
        match *self {
            TPreviousDistribution::Exponential { beta } | TPreviousDistribution::Erlang { beta, .. } => beta,
            TPreviousDistribution::PointMass { at } => at,
        }
    }

    pub fn density(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("density needs t ≥ 0, got {t}")));
        }
        match *self {
            TPreviousDistribution::PointMass { .. } => Err(Error::Domain(
                "a point mass has no density".into(),
            )),
            _ => Ok(self.ln_density(t).exp()),
        }
    }

    /// Log-density; stays finite for large Erlang shapes where the
    /// direct formula overflows.
    pub fn ln_density(&self, t: f64) -> f64 {
        match *self {
            TPreviousDistribution::Exponential { beta } => -t / beta - beta.ln(),
            TPreviousDistribution::Erlang { shape: 1, beta } => -t / beta - beta.ln(),
            TPreviousDistribution::Erlang { shape, beta } => {
                if t == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let n = shape as f64;
                (n - 1.0) * t.ln() - t / beta - n * beta.ln() - ln_factorial(shape - 1)
            }
            TPreviousDistribution::PointMass { .. } => f64::NAN,
        }
    }

    /// Range `[lo, hi]` outside which at most [`TAIL_MASS`] probability lies,
    /// from Chernoff bounds `P(S ≥ xμ), P(S ≤ xμ) ≤ (x·e^{1−x})^N`.
    pub fn support(&self) -> (f64, f64) {
        let budget = (TAIL_MASS / 2.0).ln().abs();
        match *self {
            TPreviousDistribution::Exponential { beta } => (0.0, beta * 2.0 * budget),
            TPreviousDistribution::Erlang { shape, beta } => {
                let n = shape as f64;
                let mean = n * beta;
                let rate = |x: f64| n * (x - 1.0 - x.ln()) - budget;
                let mut top = 2.0;
                while rate(top) < 0.0 {
                    top *= 2.0;
                }
                let hi = bisect_positive(rate, 1.0, top);
                let lo = if shape == 1 {
                    0.0
                } else {
                    1.0 - bisect_positive(|y: f64| rate(1.0 - y), 0.0, 1.0)
                };
                (lo * mean, hi * mean)
            }
            TPreviousDistribution::PointMass { at } => (at, at),
        }
    }
}

/// Smallest `x` in `[from, to]` (to within 1e-15) with `g(x) ≥ 0`, for `g`
/// increasing and negative at `from`.
fn bisect_positive<G: Fn(f64) -> f64>(g: G, from: f64, to: f64) -> f64 {
    let (mut lo, mut hi) = (from, to);
    if g(hi) < 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    hi
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Condition-1 evaluation result with quadrature diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub residual: f64,
    pub lower: f64,
    pub upper: f64,
    pub tail_mass_bound: f64,
    pub quadrature: Option<QuadratureReport>,
}

fn expectation<F: Fn(f64) -> f64>(h: F, breaks: &[f64], dist: &TPreviousDistribution) -> Result<ResidualReport> {
    dist.validate()?;
    if let TPreviousDistribution::PointMass { at } = *dist {
        return Ok(ResidualReport {
            residual: h(at),
            lower: at,
            upper: at,
            tail_mass_bound: 0.0,
            quadrature: None,
        });
    }
    let (lo, hi) = dist.support();
    // Seed the refinement with a grid so that narrow Erlang peaks are resolved.
    let mut seeds: Vec<f64> = (1..32).map(|i| lo + (hi - lo) * i as f64 / 32.0).collect();
    seeds.extend_from_slice(breaks);
    let opts = QuadratureOptions { abs_tol: RESIDUAL_TOL * 1e-2, max_intervals: 50_000 };
    let q = numeric::integrate(|t| h(t) * dist.ln_density(t).exp(), lo, hi, &seeds, opts)?;
    Ok(ResidualReport {
        residual: q.value,
        lower: lo,
        upper: hi,
        tail_mass_bound: TAIL_MASS,
        quadrature: Some(q),
    })
}

/// `∫ f(t)·g(t) dt` over the truncated support of `dist`.
pub fn condition1_residual(f: &UpdateFunction, dist: &TPreviousDistribution) -> Result<ResidualReport> {
    if !f.sup_abs().is_finite() {
        // The Bitcoin rule is unbounded near zero; its density there is
        // negligible for realistic epochs, but the lower tail must be cut.
        if matches!(dist, TPreviousDistribution::Exponential { .. }) {
            return Err(Error::Domain(
                "unbounded update function needs an Erlang or point-mass distribution".into(),
            ));
        }
    }
    let (lo, hi) = match dist {
        TPreviousDistribution::PointMass { .. } => (0.0, 0.0),
        _ => dist.support(),
    };
    expectation(|t| f.value(t), &f.breakpoints(lo, hi), dist)
}

/// Parameters produced by a calibration, with the residual re-evaluated on
/// the final function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub update: ArctanUpdate,
    pub distribution: TPreviousDistribution,
    pub check: ResidualReport,
}

/// Solves for the shift `D` making the arctan rule drift-free under `dist`.
/// The residual is `A·(E[arctan(B(T − C))] + D)`, so `D = −E[arctan(B(T − C))]`.
pub fn solve_shift(a: f64, b: f64, c: f64, dist: &TPreviousDistribution) -> Result<Calibration> {
    ArctanUpdate::new(a, b, c, 0.0)?;
    let mean_atan = expectation(|t| (b * (t - c)).atan(), &[], dist)?;
    let update = ArctanUpdate::new(a, b, c, -mean_atan.residual)?;
    let check = condition1_residual(&UpdateFunction::Arctan(update), dist)?;
    if check.residual.abs() > RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "shift solve left residual {:e} (quadrature {:?})",
            check.residual, check.quadrature
        )));
    }
    Ok(Calibration { update, distribution: *dist, check })
}

/// Solves for the center `C` given `A, B, D`; the residual decreases
/// monotonically in `C`.
pub fn solve_center(a: f64, b: f64, d: f64, dist: &TPreviousDistribution) -> Result<Calibration> {
    ArctanUpdate::new(a, b, 0.0, d)?;
    if d.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!("|D| = {} leaves no zero crossing", d.abs())));
    }
    let residual = |c: f64| -> Result<f64> {
        let f = UpdateFunction::Arctan(ArctanUpdate { a, b, c, d });
        Ok(condition1_residual(&f, dist)?.residual)
    };
    let mean = dist.mean();
    let mut span = mean.max(1.0 / b);
    let (mut lo, mut hi) = (mean - span, mean + span);
    while residual(lo)? < 0.0 || residual(hi)? > 0.0 {
        span *= 2.0;
        lo = mean - span;
        hi = mean + span;
        if span > 1e6 * (mean.abs() + 1.0 / b) {
            return Err(Error::Numerical("could not bracket the center".into()));
        }
    }
    let tol = 1e-12 * (mean.abs() + 1.0);
    let c = numeric::brent(residual, lo, hi, tol)?;
    let update = ArctanUpdate::new(a, b, c, d)?;
    let check = condition1_residual(&UpdateFunction::Arctan(update), dist)?;
    Ok(Calibration { update, distribution: *dist, check })
}

/// Mean single-block time `β` at which `f` is drift-free under the family
/// of `family` (its own β is ignored).
pub fn zero_drift_mean(f: &UpdateFunction, family: &TPreviousDistribution) -> Result<f64> {
    let residual = |beta: f64| -> Result<f64> { Ok(condition1_residual(f, &family.with_beta(beta))?.residual) };
    let (mut lo, mut hi) = (1e-3, 1.0);
    let r_lo = residual(lo)?;
    while residual(hi)?.signum() == r_lo.signum() {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical(format!("no zero-drift mean found for {f:?}")));
        }
    }
    lo = lo.max(hi / 2.0);
    if residual(lo)?.signum() != r_lo.signum() {
        lo = 1e-3;
    }
    numeric::brent(residual, lo, hi, 1e-13 * hi)
}

/// `sup f_old / sup f_new` on `(0, ∞)`.
pub fn amplitude_ratio(old: &UpdateFunction, new: &UpdateFunction) -> Result<f64> {
    let top = new.supremum();
    if !(top > 0.0) {
        return Err(Error::Domain(format!("sup of the new update function is {top}, not positive")));
    }
    Ok(old.supremum() / top)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethereum_rule_values() {
        assert_eq!(ethereum_update(13.0).unwrap(), 0.0);
        assert_eq!(ethereum_update(5.0).unwrap(), -1.0 / 2048.0);
        assert_eq!(ethereum_update(1200.0).unwrap(), 99.0 / 2048.0);
        assert_eq!(ethereum_update(900.0).unwrap(), 99.0 / 2048.0);
        assert!(ethereum_update(0.0).is_err());
        assert!(ethereum_update(-3.0).is_err());
    }

    #[test]
    fn bitcoin_rule_values() {
        assert_eq!(bitcoin_update(2016.0 * 600.0, 2016, 600.0).unwrap(), 0.0);
        assert_eq!(bitcoin_update(1008.0 * 600.0, 2016, 600.0).unwrap(), -1.0);
        assert!(bitcoin_update(0.0, 2016, 600.0).is_err());
    }

    #[test]
    fn arctan_table_values() {
        let eth = ArctanUpdate::ethereum_table();
        assert_eq!(eth.eval(11.0), 0.0);
        assert!((eth.eval(1e300) - 1e-3 * FRAC_PI_2).abs() < 1e-18);
        let btc = ArctanUpdate::bitcoin_table();
        assert!((btc.eval(btc.c) - 6.75e-8).abs() < 1e-22);
    }

    #[test]
    fn arctan_rejects_bad_parameters() {
        assert!(ArctanUpdate::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(ArctanUpdate::new(1e-3, -1.0, 0.0, 0.0).is_err());
        assert!(ArctanUpdate::new(0.7, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn densities() {
        let e = TPreviousDistribution::exponential(13.5).unwrap();
        assert!((e.density(0.0).unwrap() - 1.0 / 13.5).abs() < 1e-16);
        let g = TPreviousDistribution::erlang(2, 1.0).unwrap();
        assert!((g.density(1.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(e.density(-1.0).is_err());
        assert_eq!(g.density(0.0).unwrap(), 0.0);
    }

    #[test]
    fn erlang_2016_mode_is_finite_and_maximal() {
        let g = TPreviousDistribution::erlang(2016, 600.0).unwrap();
        let mode = 2015.0 * 600.0;
        let at_mode = g.density(mode).unwrap();
        assert!(at_mode.is_finite() && at_mode > 0.0);
        for dt in [-600.0, -60.0, -1.0, 1.0, 60.0, 600.0] {
            assert!(g.density(mode + dt).unwrap() < at_mode);
        }
    }

    #[test]
    fn support_bounds_contain_the_mass() {
        let g = TPreviousDistribution::erlang(2016, 600.0).unwrap();
        let (lo, hi) = g.support();
        assert!(lo > 0.0 && lo < g.mean() && hi > g.mean());
        let e = TPreviousDistribution::exponential(10.0).unwrap();
        let (_, hi) = e.support();
        assert!((-hi / 10.0f64).exp() <= TAIL_MASS);
    }

    #[test]
    fn zero_function_has_zero_residual() {
        let f = UpdateFunction::Constant { value: 0.0 };
        for d in [
            TPreviousDistribution::exponential(3.0).unwrap(),
            TPreviousDistribution::erlang(50, 2.0).unwrap(),
        ] {
            assert_eq!(condition1_residual(&f, &d).unwrap().residual, 0.0);
        }
    }

    #[test]
    fn point_mass_at_center_gives_zero_shift() {
        let d = TPreviousDistribution::PointMass { at: 11.0 };
        let cal = solve_shift(1e-3, 1e-2, 11.0, &d).unwrap();
        assert_eq!(cal.update.d, 0.0);
    }

    #[test]
    fn amplitude_ratio_scales() {
        let eth = UpdateFunction::Ethereum;
        let new = UpdateFunction::Arctan(ArctanUpdate::ethereum_table());
        let r = amplitude_ratio(&eth, &new).unwrap();
        assert!((r - 99.0 / 2048.0 / (1e-3 * FRAC_PI_2)).abs() < 1e-12);
        assert_eq!(amplitude_ratio(&new, &new).unwrap(), 1.0);
        let doubled = UpdateFunction::Arctan(ArctanUpdate { a: 2e-3, ..ArctanUpdate::ethereum_table() });
        assert!((amplitude_ratio(&eth, &doubled).unwrap() - r / 2.0).abs() < 1e-12);
        let neg = UpdateFunction::Constant { value: -1.0 };
        assert!(amplitude_ratio(&eth, &neg).is_err());
    }

    #[test]
    fn solve_center_inverts_solve_shift() {
        let d = TPreviousDistribution::exponential(13.0).unwrap();
        let shifted = solve_shift(1e-3, 1e-2, 11.0, &d).unwrap();
        let centered = solve_center(1e-3, 1e-2, shifted.update.d, &d).unwrap();
        assert!((centered.update.c - 11.0).abs() < 1e-6, "{centered:?}");
        assert!(centered.check.residual.abs() < RESIDUAL_TOL);
    }
}
