//! Adaptive Gauss–Kronrod quadrature and bracketing root finding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// 15-point Kronrod abscissae on [-1, 1] (non-negative half); odd entries are
// shared with the embedded 7-point Gauss rule.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub value: f64,
    /// Sum of per-interval |Kronrod − Gauss| estimates.
    pub abs_error: f64,
    pub intervals: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            max_intervals: 20_000,
        }
    }
}

struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrates `f` over `[lo, hi]`, first splitting at the interior
/// `breakpoints` (discontinuities of the integrand), then bisecting the
/// segment with the largest error estimate until the total estimate drops
/// below `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    opts: QuadratureOptions,
) -> Result<QuadratureReport> {
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::Numerical(format!("invalid integration range [{lo}, {hi}]")));
    }
    let mut edges = vec![lo];
    let mut interior: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > lo && b < hi)
        .collect();
    interior.sort_by(f64::total_cmp);
    interior.dedup();
    edges.extend(interior);
    edges.push(hi);

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in edges.windows(2) {
        if w[1] > w[0] {
            let (value, error) = kronrod15(&f, w[0], w[1]);
            evaluations += 15;
            heap.push(Segment { lo: w[0], hi: w[1], value, error });
        }
    }

    loop {
        let total_err: f64 = heap.iter().map(|s| s.error).sum();
        if !total_err.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand produced non-finite values on [{lo}, {hi}]"
            )));
        }
        if total_err <= opts.abs_tol {
            break;
        }
        if heap.len() >= opts.max_intervals {
            let worst = heap.peek().map(|s| (s.lo, s.hi, s.error));
            return Err(Error::Numerical(format!(
                "quadrature did not converge: error estimate {total_err:e} > {:e} after {} intervals \
                 ({evaluations} evaluations); worst segment {worst:?}",
                opts.abs_tol,
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // Cannot split further in floating point; accept the segment.
            heap.push(Segment { error: 0.0, ..worst });
            continue;
        }
        for (a, b) in [(worst.lo, mid), (mid, worst.hi)] {
            let (value, error) = kronrod15(&f, a, b);
            evaluations += 15;
            heap.push(Segment { lo: a, hi: b, value, error });
        }
    }

    let mut segs: Vec<_> = heap.into_vec();
    segs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(QuadratureReport {
        value: segs.iter().map(|s| s.value).sum(),
        abs_error: segs.iter().map(|s| s.error).sum(),
        intervals: segs.len(),
        evaluations,
    })
}

/// Brent's method on a sign-changing bracket `[a, b]`.
pub fn brent<F: FnMut(f64) -> Result<f64>>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numerical(format!(
            "root not bracketed: f({a}) = {fa:e}, f({b}) = {fb:e}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * m * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::Numerical(format!(
        "Brent iteration did not converge on [{a}, {b}]"
    )))
}
