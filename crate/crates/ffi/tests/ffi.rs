use std::ffi::{CStr, CString};
use std::ptr;

use diffctl::MlpModel;
use diffctl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { diffctl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn exponential(beta: f64) -> DiffctlDistribution {
    DiffctlDistribution { kind: DiffctlDistributionKind::Exponential, shape: 1, beta }
}

#[test]
fn update_functions() {
    let mut v = 0.0;
    assert_eq!(unsafe { diffctl_ethereum_update(20.0, &mut v) }, DiffctlStatus::Ok);
    assert_eq!(v, 1.0 / 2048.0);
    assert_eq!(unsafe { diffctl_ethereum_update(5000.0, &mut v) }, DiffctlStatus::Ok);
    assert_eq!(v, 99.0 / 2048.0);
    assert_eq!(unsafe { diffctl_arctan_update(1e-3, 1e-2, 11.0, 0.0, 11.0, &mut v) }, DiffctlStatus::Ok);
    assert_eq!(v, 0.0);
    assert_eq!(unsafe { diffctl_ethereum_update(-1.0, &mut v) }, DiffctlStatus::Config);
    assert!(!last_error().is_empty());
}

#[test]
fn null_out_pointer_is_reported() {
    assert_eq!(unsafe { diffctl_ethereum_update(10.0, ptr::null_mut()) }, DiffctlStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { diffctl_trace_len(ptr::null()) }, 0);
    assert!(unsafe { diffctl_trace_mean_block_time(ptr::null()) }.is_nan());
    unsafe {
        diffctl_controller_free(ptr::null_mut());
        diffctl_model_free(ptr::null_mut());
        diffctl_trace_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_into_small_buffers() {
    assert_eq!(unsafe { diffctl_amplitude_ratio(-1.0, 1.0, 1.0, 0.0, &mut 0.0) }, DiffctlStatus::Config);
    let mut buf = [0x7f as std::ffi::c_char; 4];
    let n = unsafe { diffctl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { diffctl_last_error_message(ptr::null_mut(), 0) }, n);
}

#[test]
fn calibration_matches_library() {
    let beta = 9.0 / std::f64::consts::LN_2;
    let dist = exponential(beta);
    let (mut d, mut residual) = (0.0, 1.0);
    assert_eq!(unsafe { diffctl_solve_shift(1e-3, 1e-2, 11.0, &dist, &mut d, &mut residual) }, DiffctlStatus::Ok);
    let lib = diffctl::update::solve_shift(1e-3, 1e-2, 11.0, &diffctl::TPreviousDistribution::exponential(beta).unwrap()).unwrap();
    assert_eq!(d, lib.update.d);
    assert!(residual.abs() < 1e-10);
    let mut r = 1.0;
    assert_eq!(unsafe { diffctl_arctan_residual(1e-3, 1e-2, 11.0, d, &dist, &mut r) }, DiffctlStatus::Ok);
    assert!(r.abs() < 1e-10);
    let mut ratio = 0.0;
    assert_eq!(unsafe { diffctl_amplitude_ratio(1e-3, 1e-2, 11.0, 0.0, &mut ratio) }, DiffctlStatus::Ok);
    assert!((ratio - 30.774).abs() < 1e-3);
    let mut p = 0.0;
    assert_eq!(unsafe { diffctl_density(&dist, beta, &mut p) }, DiffctlStatus::Ok);
    assert!((p - (-1.0f64).exp() / beta).abs() < 1e-15);
    let bad = DiffctlDistribution { kind: DiffctlDistributionKind::Erlang, shape: 0, beta: 1.0 };
    assert_eq!(unsafe { diffctl_density(&bad, 1.0, &mut p) }, DiffctlStatus::Config);
    assert_eq!(unsafe { diffctl_solve_shift(1e-3, 1e-2, 11.0, ptr::null(), &mut d, ptr::null_mut()) }, DiffctlStatus::NullPointer);
}

#[test]
fn controller_observe_follows_recursion() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { diffctl_controller_new_ethereum(&mut c) }, DiffctlStatus::Ok);
    assert_eq!(unsafe { diffctl_controller_reset(c, 1e6) }, DiffctlStatus::Ok);
    let (mut d, mut i) = (0.0, 0.0);
    assert_eq!(unsafe { diffctl_controller_observe(c, 1, 30.0, &mut d, &mut i) }, DiffctlStatus::Ok);
    assert_eq!(d, 1e6 - 1e6 * (2.0 / 2048.0));
    assert_eq!(i, 1.0);
    assert_eq!(unsafe { diffctl_controller_observe(c, 2, f64::NAN, &mut d, ptr::null_mut()) }, DiffctlStatus::Config);
    unsafe { diffctl_controller_free(c) };

    let mut b = ptr::null_mut();
    assert_eq!(unsafe { diffctl_controller_new_bitcoin(4, 600.0, &mut b) }, DiffctlStatus::Ok);
    unsafe { diffctl_controller_reset(b, 1000.0) };
    for h in 1..4 {
        assert_eq!(unsafe { diffctl_controller_observe(b, h, 300.0, &mut d, ptr::null_mut()) }, DiffctlStatus::Ok);
        assert_eq!(d, 1000.0);
    }
    unsafe { diffctl_controller_observe(b, 4, 300.0, &mut d, ptr::null_mut()) };
    assert!(d > 1000.0);
    unsafe { diffctl_controller_free(b) };

    assert_eq!(unsafe { diffctl_controller_new_arctan(-1.0, 1e-2, 11.0, 0.0, ptr::null(), 1, 3, 10, 1, &mut c) }, DiffctlStatus::Config);
}

#[test]
fn simulate_and_write_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ptr::null_mut();
    unsafe { diffctl_controller_new_arctan(1e-3, 1e-2, 11.0, 0.0, ptr::null(), 1, 3, 10, 1, &mut c) };
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { diffctl_simulate_constant(c, 1e12, 5000, 7, 0.0, 1.3e13, &mut t) }, DiffctlStatus::Ok);
    assert_eq!(unsafe { diffctl_trace_len(t) }, 5000);
    let mut r = DiffctlRecord::default();
    assert_eq!(unsafe { diffctl_trace_get(t, 0, &mut r) }, DiffctlStatus::Ok);
    assert_eq!(r.height, 1);
    assert_eq!(r.scheduled_rate, 1e12);
    assert_eq!(r.indicator, 1.0);
    assert_eq!(unsafe { diffctl_trace_get(t, 5000, &mut r) }, DiffctlStatus::Config);
    assert!(last_error().contains("out of range"));
    let mean = unsafe { diffctl_trace_mean_block_time(t) };
    assert!(mean > 5.0 && mean < 20.0, "{mean}");

    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { diffctl_trace_write_csv(t, path.as_ptr()) }, DiffctlStatus::Ok);
    let back = diffctl::io::load_chain_csv(&dir.path().join("t.csv")).unwrap();
    assert_eq!(back.len(), 5000);
    std::fs::write(dir.path().join("file"), b"").unwrap();
    let missing = CString::new(dir.path().join("file/t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { diffctl_trace_write_csv(t, missing.as_ptr()) }, DiffctlStatus::Io);
    unsafe {
        diffctl_trace_free(t);
        diffctl_controller_free(c);
    }
}

#[test]
fn model_round_trip_and_neural_controller() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    MlpModel::zeros(3, 25).save(&p).unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { diffctl_model_load(path.as_ptr(), &mut m) }, DiffctlStatus::Ok);
    assert_eq!(unsafe { diffctl_model_inputs(m) }, 3);
    let mut probs = [0.0; 3];
    let x = [100.0, 90.0, 80.0];
    assert_eq!(unsafe { diffctl_model_classify(m, x.as_ptr(), 3, probs.as_mut_ptr()) }, DiffctlStatus::Ok);
    for v in probs {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(unsafe { diffctl_model_classify(m, x.as_ptr(), 2, probs.as_mut_ptr()) }, DiffctlStatus::Config);

    let mut c = ptr::null_mut();
    assert_eq!(unsafe { diffctl_controller_new_arctan(1e-3, 1e-2, 11.0, 0.0, m, 5, 3, 20, 1, &mut c) }, DiffctlStatus::Ok);
    unsafe { diffctl_model_free(m) };
    unsafe { diffctl_controller_reset(c, 1e6) };
    let (mut d, mut i) = (0.0, 0.0);
    let mut seen = None;
    for h in 1..=100 {
        unsafe { diffctl_controller_observe(c, h, 13.0, &mut d, &mut i) };
        if seen.is_none() && !i.is_nan() {
            seen = Some((h, i));
        }
    }
    let (h, i) = seen.expect("indicator evaluated");
    assert!(h > 1);
    assert!((i - 1.0 / 3.0).abs() < 1e-12);
    unsafe { diffctl_controller_free(c) };

    let garbage = dir.path().join("g.bin");
    std::fs::write(&garbage, b"not a model").unwrap();
    let g = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { diffctl_model_load(g.as_ptr(), &mut m) }, DiffctlStatus::Validation);
    let none = CString::new(dir.path().join("none.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { diffctl_model_load(none.as_ptr(), &mut m) }, DiffctlStatus::Io);
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(diffctl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/diffctl.h")).unwrap();
    for name in [
        "DIFFCTL_H",
        "diffctl_solve_shift",
        "diffctl_controller_observe",
        "diffctl_simulate_constant",
        "diffctl_model_classify",
        "DIFFCTL_STATUS_NULL_POINTER",
        "typedef struct DiffctlTrace DiffctlTrace",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
