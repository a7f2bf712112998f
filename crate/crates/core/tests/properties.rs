use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diffctl::controller::apply_update;
use diffctl::estimators::nominal_hash_rate;
use diffctl::io::{load_chain_csv, save_trace};
use diffctl::update::ethereum_update;
use diffctl::{
    run_simulation, ArctanUpdate, ChainRecord, Controller, ControllerSpec, DifficultyController, FeatureConfig,
    FeatureState, HashRateScenario, MlpModel, SimulationConfig, UpdateFunction,
};

fn two_pass_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

fn feature_cfg() -> impl Strategy<Value = FeatureConfig> {
    (1usize..12, 2usize..6, 2usize..40).prop_map(|(s, q, l)| FeatureConfig { s, q, l })
}

fn block_times(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![0.01f64..200.0, Just(0.0), 1e-3f64..1.0], 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_features_match_batch(cfg in feature_cfg(), times in block_times(400)) {
        let mut st = FeatureState::new(cfg).unwrap();
        for (k, &t) in times.iter().enumerate() {
            st.push(t);
            let Some(v) = st.feature_vector() else {
                prop_assert!(k + 1 < cfg.history());
                continue;
            };
            prop_assert!(k + 1 >= cfg.history());
            for (j, &a) in v.iter().enumerate() {
                let end = k + 1 - j * cfg.s;
                let b = two_pass_variance(&times[end - cfg.l..end]);
                prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-12), "k={k} j={j} {a} vs {b}");
            }
        }
    }

    #[test]
    fn shift_identity_is_exact(cfg in feature_cfg(), times in block_times(400)) {
        let mut st = FeatureState::new(cfg).unwrap();
        let mut seen: Vec<Option<Vec<f64>>> = Vec::new();
        for &t in &times {
            st.push(t);
            let v = st.feature_vector();
            if let (Some(now), Some(Some(prev))) = (&v, seen.len().checked_sub(cfg.s).map(|i| &seen[i])) {
                for j in 1..cfg.q {
                    prop_assert_eq!(now[j].to_bits(), prev[j - 1].to_bits());
                }
            }
            seen.push(v);
        }
    }

    #[test]
    fn softmax_sums_to_one(seed in any::<u64>(), hidden in 1usize..30, scale in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::random(5, hidden, &mut rng);
        for w in m.params_mut().iter_mut() {
            *w *= scale;
        }
        let f: Vec<f64> = (0..5).map(|_| rng.gen_range(1e-6..1e6)).collect();
        let p = m.classify(&f).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn ethereum_recursion_matches_direct_transcription(times in prop::collection::vec(1e-3f64..2000.0, 1..500), d0 in 1e3f64..1e16) {
        let mut ctl = Controller::new(ControllerSpec::ethereum()).unwrap();
        ctl.reset(d0);
        let mut d = d0;
        for (k, &t) in times.iter().enumerate() {
            let f = if t <= 900.0 { ((t / 9.0).floor() - 1.0) / 2048.0 } else { 99.0 / 2048.0 };
            d = (d - d * f).max(1.0);
            prop_assert_eq!(ctl.observe(k as u64 + 1, t).unwrap().difficulty.to_bits(), d.to_bits());
        }
    }

    #[test]
    fn difficulty_respects_floor(prev in 1.0f64..1e6, i in 0.0f64..=1.0, f in -0.9f64..0.999) {
        let d = apply_update(prev, i, f, 1.0);
        prop_assert!(d >= 1.0);
        if i == 0.0 {
            prop_assert_eq!(d, prev);
        }
    }

    #[test]
    fn arctan_stays_inside_its_bounds(t in 0.0f64..1e7, c in 0.0f64..100.0) {
        let u = ArctanUpdate::new(1e-3, 1e-2, c, 0.0).unwrap();
        prop_assert!(u.eval(t).abs() < 1e-3 * std::f64::consts::FRAC_PI_2 + 1e-18);
        let e = ethereum_update(t.max(1e-9)).unwrap();
        prop_assert!(e.abs() <= UpdateFunction::Ethereum.sup_abs());
    }

    #[test]
    fn prefix_sums_match_naive_windows(w in 1usize..60, seed in any::<u64>(), n in 60usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<ChainRecord> = (0..n)
            .map(|i| ChainRecord {
                height: i as u64 + 1,
                timestamp: 0.0,
                block_time: rng.gen_range(0.5..60.0),
                difficulty: rng.gen_range(1e14..3e15),
            })
            .collect();
        let est = nominal_hash_rate(&recs, w).unwrap();
        prop_assert_eq!(est.rates.len(), n - w + 1);
        for (i, &h) in est.rates.iter().enumerate() {
            let win = &recs[i..i + w];
            let naive = win.iter().map(|r| r.difficulty).sum::<f64>() / win.iter().map(|r| r.block_time).sum::<f64>();
            prop_assert!((h - naive).abs() <= 1e-9 * naive);
        }
    }

    #[test]
    fn estimator_is_scale_equivariant(k in 1e-3f64..1e3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<ChainRecord> = (0..100)
            .map(|i| ChainRecord { height: i + 1, timestamp: 0.0, block_time: rng.gen_range(1.0..30.0), difficulty: rng.gen_range(1.0..10.0) })
            .collect();
        let scaled: Vec<ChainRecord> = recs.iter().map(|r| ChainRecord { difficulty: r.difficulty * k, ..*r }).collect();
        let a = nominal_hash_rate(&recs, 10).unwrap();
        let b = nominal_hash_rate(&scaled, 10).unwrap();
        for (x, y) in a.rates.iter().zip(&b.rates) {
            prop_assert!((x * k - y).abs() <= 1e-12 * y);
        }
    }
}

#[test]
fn traces_are_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = HashRateScenario { length: 20_000, ..diffctl::replicate::injection_scenario(1.455e14).scaled(15) };
    let run = |name: &str, seed: u64| {
        let mut ctl = Controller::new(ControllerSpec::ethereum()).unwrap();
        let t = run_simulation(&scenario, &mut ctl, &SimulationConfig::with_seed(seed), 1.455e14 * 13.0).unwrap();
        let p = dir.path().join(name);
        save_trace(&t, &p).unwrap();
        std::fs::read(p).unwrap()
    };
    assert_eq!(run("a.csv", 5), run("b.csv", 5));
    assert_ne!(run("a.csv", 5), run("c.csv", 6));
}

#[test]
fn trace_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctl = Controller::new(ControllerSpec::ethereum()).unwrap();
    let t = run_simulation(&HashRateScenario::constant(1e14, 3000), &mut ctl, &SimulationConfig::with_seed(3), 1.3e15).unwrap();
    let p = dir.path().join("t.csv");
    save_trace(&t, &p).unwrap();
    let back = load_chain_csv(&p).unwrap();
    assert_eq!(back, t.records);
}

#[test]
fn features_stay_accurate_across_a_regime_change() {
    let cfg = FeatureConfig { s: 5, q: 3, l: 50 };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let times: Vec<f64> = (0..600)
        .map(|i| if i < 300 { rng.gen_range(150.0..250.0) } else { rng.gen_range(1e-3..2e-3) })
        .collect();
    let mut st = FeatureState::new(cfg).unwrap();
    for (k, &t) in times.iter().enumerate() {
        st.push(t);
        if let Some(v) = st.feature_vector() {
            for (j, &a) in v.iter().enumerate() {
                let end = k + 1 - j * cfg.s;
                let b = two_pass_variance(&times[end - cfg.l..end]);
                assert!((a - b).abs() <= 1e-9 * b, "k={k} j={j} {a} vs {b}");
            }
        }
    }
}
