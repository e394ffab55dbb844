use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use drr_ffi::*;

fn case1_path() -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/case1.json");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn load_case1() -> *mut DrrScenario {
    let mut sc = ptr::null_mut();
    let st = unsafe { drr_scenario_from_file(case1_path().as_ptr(), &mut sc) };
    assert_eq!(st, DrrStatus::Ok);
    assert!(!sc.is_null());
    sc
}

fn last_error() -> String {
    let p = drr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(drr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_matches_core_bitwise() {
    let sc = load_case1();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { drr_run(sc, 7, DrrMode::Drr, &mut run) }, DrrStatus::Ok);

    let text = std::fs::read_to_string(case1_path().to_str().unwrap()).unwrap();
    let core_sc = drr_core::cli::parse_scenario_str(&text, "case1").unwrap();
    let (log, metrics) = drr_core::sim::run_drr(&core_sc, 7, drr_core::sim::RunMode::Drr).unwrap();

    let n = unsafe { drr_run_record_count(run) };
    assert_eq!(n, log.records.len());
    let arms_n = unsafe { drr_run_arm_count(run) };
    assert_eq!(arms_n, log.records[0].arms.len());
    let mut rec = DrrRecord { t: 0.0, x: 0.0, y: 0.0, heading: 0.0, vx: 0.0, vy: 0.0, ax: 0.0, ay: 0.0, mode: DrrControllerMode::Tracking };
    let mut arms = vec![f64::NAN; arms_n];
    for (i, want) in log.records.iter().enumerate() {
        assert_eq!(unsafe { drr_run_record(run, i, &mut rec, arms.as_mut_ptr()) }, DrrStatus::Ok);
        assert_eq!(rec.t.to_bits(), want.t.to_bits());
        assert_eq!(rec.x.to_bits(), want.x.to_bits());
        assert_eq!(rec.vy.to_bits(), want.vy.to_bits());
        assert_eq!(arms, want.arms);
    }

    let mut m = DrrMetrics::default();
    assert_eq!(unsafe { drr_run_metrics(run, &mut m) }, DrrStatus::Ok);
    assert_eq!(m.t_end, metrics.t_end);
    assert_eq!(m.collisions, metrics.collisions);
    assert_eq!(m.reached, 1);
    assert!(m.collisions >= 1);

    assert_eq!(unsafe { drr_run_record(run, n, &mut rec, ptr::null_mut()) }, DrrStatus::OutOfRange);
    assert!(last_error().contains(&n.to_string()));

    unsafe {
        drr_run_free(run);
        drr_scenario_free(sc);
    }
}

#[test]
fn log_written_through_ffi_reads_back() {
    let sc = load_case1();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { drr_run(sc, 1, DrrMode::Preplanned, &mut run) }, DrrStatus::Ok);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trial.jsonl");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { drr_run_write_log(run, cpath.as_ptr()) }, DrrStatus::Ok);
    let lines = drr_core::cli::read_log(&path).unwrap();
    let steps = lines.iter().filter(|l| matches!(l, drr_core::sim::LogLine::Step(_))).count();
    assert_eq!(steps, unsafe { drr_run_record_count(run) });
    let mut m = DrrMetrics::default();
    unsafe { drr_run_metrics(run, &mut m) };
    assert_eq!(m.reached, 0);
    unsafe {
        drr_run_free(run);
        drr_scenario_free(sc);
    }
}

#[test]
fn max_safe_speed_matches_energy_bound() {
    let sc = load_case1();
    let mut v = 0.0;
    assert_eq!(unsafe { drr_max_safe_speed(sc, &mut v) }, DrrStatus::Ok);
    // Reference robot: spring work over the usable stroke plus tilt and push terms.
    let (m, k, l0, ls, le, rho, g, a, sigma): (f64, f64, f64, f64, f64, f64, f64, f64, f64) = (6.0, 2310.0, 0.0415, 0.030, 0.015, 0.3, 9.81, 5.0, 3f64.to_radians());
    let spring = 0.5 * k * ((l0 - le).powi(2) - (l0 - ls).powi(2)) / m;
    let oracle = (spring + g * (rho - ls + le) * sigma.sin() + a * (ls - le)).sqrt();
    assert!((v - oracle).abs() < 1e-12, "v={v} oracle={oracle}");
    unsafe { drr_scenario_free(sc) };
}

#[test]
fn recovery_plan_meets_terminal_state() {
    let sc = load_case1();
    let mut plan = ptr::null_mut();
    let st = unsafe { drr_recovery_plan(sc, 0.0, -0.3, 0.0, 0.1, 0.0, 0.0, &mut plan) };
    assert_eq!(st, DrrStatus::Ok, "{}", last_error());
    let steps = unsafe { drr_recovery_plan_steps(plan) };
    assert!(steps > 0);
    let mut src = DrrPlanSource::Emergency;
    assert_eq!(unsafe { drr_recovery_plan_source(plan, &mut src) }, DrrStatus::Ok);
    let mut s = [0.0; 4];
    assert_eq!(unsafe { drr_recovery_plan_state(plan, 0, s.as_mut_ptr()) }, DrrStatus::Ok);
    assert_eq!(s, [0.0, 0.0, -0.3, 0.0]);
    assert_eq!(unsafe { drr_recovery_plan_state(plan, steps, s.as_mut_ptr()) }, DrrStatus::Ok);
    if src == DrrPlanSource::Requested {
        assert!((s[2] - 0.1).abs() < 1e-6 && s[3].abs() < 1e-6, "{s:?}");
    }
    let mut u = [0.0; 2];
    assert_eq!(unsafe { drr_recovery_plan_control(plan, steps - 1, u.as_mut_ptr()) }, DrrStatus::Ok);
    assert_eq!(unsafe { drr_recovery_plan_control(plan, steps, u.as_mut_ptr()) }, DrrStatus::OutOfRange);
    assert_eq!(unsafe { drr_recovery_plan_state(plan, steps + 1, s.as_mut_ptr()) }, DrrStatus::OutOfRange);
    unsafe {
        drr_recovery_plan_free(plan);
        drr_scenario_free(sc);
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut sc = ptr::null_mut();
    let bad = CString::new("{ not json").unwrap();
    assert_eq!(unsafe { drr_scenario_from_json(bad.as_ptr(), &mut sc) }, DrrStatus::Parse);
    assert!(sc.is_null());
    assert!(!last_error().is_empty());

    let invalid_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { drr_scenario_from_json(invalid_utf8.as_ptr().cast(), &mut sc) }, DrrStatus::InvalidUtf8);

    let missing = CString::new("/nonexistent/dir/scenario.json").unwrap();
    assert_eq!(unsafe { drr_scenario_from_file(missing.as_ptr(), &mut sc) }, DrrStatus::Io);

    assert_eq!(unsafe { drr_scenario_from_json(ptr::null(), &mut sc) }, DrrStatus::NullPointer);
    assert_eq!(unsafe { drr_scenario_from_json(bad.as_ptr(), ptr::null_mut()) }, DrrStatus::NullPointer);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { drr_run(ptr::null(), 0, DrrMode::Drr, &mut run) }, DrrStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { drr_max_safe_speed(ptr::null(), &mut v) }, DrrStatus::NullPointer);
    assert_eq!(unsafe { drr_run_record_count(ptr::null()) }, 0);
    assert_eq!(unsafe { drr_recovery_plan_steps(ptr::null()) }, 0);
    unsafe {
        drr_run_free(ptr::null_mut());
        drr_scenario_free(ptr::null_mut());
        drr_recovery_plan_free(ptr::null_mut());
    }
}

#[test]
fn json_round_trip_validates() {
    let text = std::fs::read_to_string(case1_path().to_str().unwrap()).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let good = CString::new(text).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { drr_scenario_from_json(good.as_ptr(), &mut sc) }, DrrStatus::Ok);
    unsafe { drr_scenario_free(sc) };

    value["waypoints"] = serde_json::json!([[0.0, 0.0]]);
    let one_wp = CString::new(value.to_string()).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { drr_scenario_from_json(one_wp.as_ptr(), &mut sc) }, DrrStatus::Validation);
    assert!(sc.is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/drr.h")).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from drr.h");
    }
}
