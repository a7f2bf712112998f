use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Exp, Gamma};

use diffctl::update::{condition1_residual, solve_shift, zero_drift_mean};
use diffctl::{sample_block_time, ArctanUpdate, TPreviousDistribution, UpdateFunction};

#[test]
fn erlang_one_is_the_exponential() {
    for beta in [0.5, 13.0, 600.0] {
        let erl = TPreviousDistribution::erlang(1, beta).unwrap();
        let exp = TPreviousDistribution::exponential(beta).unwrap();
        let oracle = Exp::new(1.0 / beta).unwrap();
        for i in 0..=4000 {
            let t = i as f64 * beta / 200.0;
            let want = oracle.pdf(t);
            for got in [erl.density(t).unwrap(), exp.density(t).unwrap()] {
                assert!((got - want).abs() <= 1e-12 * want, "β={beta} t={t}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn erlang_density_matches_gamma() {
    for (shape, beta) in [(2u32, 10.0), (40, 13.0), (2016, 600.0)] {
        let d = TPreviousDistribution::erlang(shape, beta).unwrap();
        let oracle = Gamma::new(shape as f64, 1.0 / beta).unwrap();
        let (lo, hi) = d.support();
        for i in 1..400 {
            let t = lo + (hi - lo) * i as f64 / 400.0;
            let want = oracle.pdf(t);
            if want > 1e-300 {
                assert!((d.density(t).unwrap() - want).abs() <= 1e-9 * want, "N={shape} t={t}");
            }
        }
        // Tail mass outside the integration support.
        let outside = oracle.cdf(lo) + oracle.sf(hi);
        assert!(outside <= 1e-12, "N={shape}: {outside:e}");
    }
}

#[test]
fn quadrature_agrees_with_monte_carlo() {
    let n = 10_000_000usize;
    let cases = [
        (UpdateFunction::Arctan(ArctanUpdate::ethereum_table()), TPreviousDistribution::exponential(13.0).unwrap()),
        (UpdateFunction::Ethereum, TPreviousDistribution::exponential(12.0).unwrap()),
    ];
    for (k, (f, dist)) in cases.iter().enumerate() {
        let q = condition1_residual(f, dist).unwrap().residual;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let (mut s, mut ss) = (0.0, 0.0);
        for _ in 0..n {
            let t = -dist.mean() * (1.0 - rng.gen::<f64>()).ln();
            let v = f.evaluate(t.max(f64::MIN_POSITIVE)).unwrap();
            s += v;
            ss += v * v;
        }
        let mean = s / n as f64;
        let se = ((ss / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((q - mean).abs() <= 3.0 * se, "case {k}: {q} vs {mean} ± {se}");
    }
}

#[test]
fn ethereum_zero_drift_mean_has_closed_form() {
    // E[min(⌊T/9⌋, 100)] = Σ_{n=1}^{100} e^{−9n/β} must equal 1.
    let closed = |beta: f64| (1..=100).map(|n| (-9.0 * n as f64 / beta).exp()).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (5.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if closed(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let got = zero_drift_mean(&UpdateFunction::Ethereum, &TPreviousDistribution::exponential(1.0).unwrap()).unwrap();
    assert!((got - lo).abs() < 1e-8, "{got} vs {lo}");
    assert!((got - 9.0 / std::f64::consts::LN_2).abs() < 1e-8);
    assert!((got - 13.5).abs() > 0.2);
}

#[test]
fn solved_shift_closes_condition_one() {
    for dist in [
        TPreviousDistribution::exponential(9.0 / std::f64::consts::LN_2).unwrap(),
        TPreviousDistribution::exponential(15.0).unwrap(),
        TPreviousDistribution::erlang(2016, 600.0).unwrap(),
        TPreviousDistribution::erlang(7, 20.0).unwrap(),
    ] {
        let (a, b, c) = match dist {
            TPreviousDistribution::Erlang { shape: 2016, .. } => {
                let t = ArctanUpdate::bitcoin_table();
                (t.a, t.b, t.c)
            }
            _ => (1e-3, 1e-2, 11.0),
        };
        let cal = solve_shift(a, b, c, &dist).unwrap();
        let r = condition1_residual(&UpdateFunction::Arctan(cal.update), &dist).unwrap();
        assert!(r.residual.abs() < 1e-10, "{dist:?}: {:e}", r.residual);
    }
}

#[test]
fn sampled_block_times_pass_ks() {
    let (d, rate) = (2.255e15, 1.455e14);
    let mean = d / rate;
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| sample_block_time(d, rate, 0.0, &mut rng).unwrap()).collect();
    xs.sort_by(f64::total_cmp);
    let cdf = Exp::new(1.0 / mean).unwrap();
    let ks = xs.iter().enumerate().fold(0.0f64, |m, (i, &x)| {
        let c = cdf.cdf(x);
        m.max(c - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - c)
    });
    assert!(ks < 1.628 / (n as f64).sqrt(), "D = {ks}");
}
