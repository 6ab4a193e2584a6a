use std::ffi::{CStr, CString};
use std::ptr;

use carma_indirect_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(carma_last_error()) }.to_string_lossy().into_owned()
}

fn simulate_car1(n: usize, seed: u64) -> *mut CarmaSeries {
    let theta = [-2.0];
    let mut s = ptr::null_mut();
    let st = unsafe { carma_series_simulate(CarmaFamily::Car1, theta.as_ptr(), 1, n, 1.0, 1.0, seed, &mut s) };
    assert_eq!(st, CarmaStatus::Ok, "{}", last_error());
    s
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(carma_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn series_round_trip() {
    let xs = [0.5, -1.0, 2.0, 0.25];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { carma_series_from_values(xs.as_ptr(), 4, 1.0, &mut s) }, CarmaStatus::Ok);
    assert_eq!(unsafe { carma_series_len(s) }, 4);
    let mut buf = [0.0; 4];
    assert_eq!(unsafe { carma_series_values(s, buf.as_mut_ptr(), 4) }, CarmaStatus::Ok);
    assert_eq!(buf, xs);
    unsafe { carma_series_free(s) };
}

#[test]
fn null_arguments_are_reported() {
    let mut s = ptr::null_mut();
    let st = unsafe { carma_series_from_values(ptr::null(), 3, 1.0, &mut s) };
    assert_eq!(st, CarmaStatus::NullPointer);
    assert!(last_error().contains("values"));
    assert_eq!(unsafe { carma_series_len(ptr::null()) }, 0);
    assert_eq!(unsafe { carma_estimate_failed(ptr::null()) }, -1);
    assert!(unsafe { carma_estimate_objective(ptr::null()) }.is_nan());
    unsafe {
        carma_series_free(ptr::null_mut());
        carma_estimate_free(ptr::null_mut());
    }
}

#[test]
fn non_stationary_parameter_is_numerical_error() {
    let theta = [0.5];
    let mut s = ptr::null_mut();
    let st = unsafe { carma_series_simulate(CarmaFamily::Car1, theta.as_ptr(), 1, 100, 1.0, 1.0, 1, &mut s) };
    assert_eq!(st, CarmaStatus::Numerical);
    assert!(s.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn wrong_dimension_is_invalid_argument() {
    let theta = [-1.0, -2.0];
    let mut s = ptr::null_mut();
    let st = unsafe { carma_series_simulate(CarmaFamily::Carma31, theta.as_ptr(), 2, 100, 1.0, 1.0, 1, &mut s) };
    assert_eq!(st, CarmaStatus::InvalidArgument);
}

#[test]
fn simulation_is_seeded() {
    let a = simulate_car1(200, 11);
    let b = simulate_car1(200, 11);
    let mut va = vec![0.0; 200];
    let mut vb = vec![0.0; 200];
    unsafe {
        carma_series_values(a, va.as_mut_ptr(), 200);
        carma_series_values(b, vb.as_mut_ptr(), 200);
        carma_series_free(a);
        carma_series_free(b);
    }
    assert_eq!(va, vb);
}

#[test]
fn additive_contamination_with_gamma_one_shifts_everything() {
    let s = simulate_car1(50, 3);
    let mut before = vec![0.0; 50];
    let mut after = vec![0.0; 50];
    unsafe {
        carma_series_values(s, before.as_mut_ptr(), 50);
        assert_eq!(carma_series_contaminate(s, CarmaOutlierMode::Additive, 1.0, 5.0, 9), CarmaStatus::Ok);
        carma_series_values(s, after.as_mut_ptr(), 50);
        carma_series_free(s);
    }
    for (a, b) in after.iter().zip(&before) {
        assert!((a - b - 5.0).abs() < 1e-12);
    }
}

#[test]
fn bad_contamination_probability_is_rejected() {
    let s = simulate_car1(50, 3);
    let st = unsafe { carma_series_contaminate(s, CarmaOutlierMode::Replacement, 1.5, 5.0, 9) };
    assert_eq!(st, CarmaStatus::InvalidArgument);
    unsafe { carma_series_free(s) };
}

#[test]
fn car1_estimators_land_near_truth() {
    let s = simulate_car1(1000, 5);
    for est in [CarmaEstimator::Indirect, CarmaEstimator::Ls, CarmaEstimator::Qmle] {
        let mut e = ptr::null_mut();
        let st = unsafe { carma_estimate(s, CarmaFamily::Car1, est, 1, 5, 1.0, 1, 5, &mut e) };
        assert_eq!(st, CarmaStatus::Ok, "{}", last_error());
        assert_eq!(unsafe { carma_estimate_dim(e) }, 1);
        let mut v = [0.0];
        assert_eq!(unsafe { carma_estimate_values(e, v.as_mut_ptr(), 1) }, CarmaStatus::Ok);
        assert!((v[0] + 2.0).abs() < 0.8, "{est:?}: {}", v[0]);
        assert_eq!(unsafe { carma_estimate_failed(e) }, 0);
        assert!(unsafe { carma_estimate_objective(e) }.is_finite());
        unsafe { carma_estimate_free(e) };
    }
    unsafe { carma_series_free(s) };
}

#[test]
fn gm_fit_matches_ar1_coefficient() {
    let s = simulate_car1(2000, 8);
    let mut pi = [0.0];
    let mut sigma = 0.0;
    assert_eq!(unsafe { carma_gm_fit(s, 1, pi.as_mut_ptr(), &mut sigma) }, CarmaStatus::Ok);
    assert!((pi[0] - (-2.0f64).exp()).abs() < 0.06, "{}", pi[0]);
    assert!(sigma > 0.0);
    unsafe { carma_series_free(s) };
}

#[test]
fn run_config_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
family = "car1"
theta0 = [-1.0]
scale = "nuisance"
[driver]
kind = "brownian"
sigma_l2 = 1.0
[estimators]
list = ["ls"]
r = 1
s = 2
[run]
n = 200
replications = 2
master_seed = 4
name = "tiny"
"#,
    )
    .unwrap();
    let c = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { carma_run_config(c.as_ptr(), 1, out.as_ptr()) }, CarmaStatus::Ok, "{}", last_error());
    let table = std::fs::read_to_string(dir.path().join("tiny.csv")).unwrap();
    assert!(table.starts_with("estimator,component,true_value,mean,bias,var,failures,replications\n"));
    assert_eq!(table.lines().count(), 2);

    let missing = CString::new(dir.path().join("nope.toml").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { carma_run_config(missing.as_ptr(), 1, ptr::null()) }, CarmaStatus::Io);
}

#[test]
fn header_compiles_as_c() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let header = std::fs::read_to_string(format!("{include}/carma_indirect.h")).unwrap();
    for f in [
        "carma_version",
        "carma_last_error",
        "carma_series_from_values",
        "carma_series_simulate",
        "carma_series_contaminate",
        "carma_series_free",
        "carma_estimate",
        "carma_estimate_values",
        "carma_estimate_free",
        "carma_gm_fit",
        "carma_run_config",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"carma_indirect.h\"\nint main(void) { CarmaSeries *s = 0; return (int)carma_series_len(s); }\n",
    )
    .unwrap();
    let st = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
