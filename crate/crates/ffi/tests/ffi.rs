use std::ffi::{c_char, CStr};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use weylrg_ffi::*;

fn p_star(u: f64) -> *mut WeylrgParams {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { weylrg_params_new(1.0, 0.5, 2.0, 0.5, u, &mut p) }, WeylrgStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe { weylrg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn weyl_points_at_reference() {
    let p = p_star(0.0);
    let (mut pf, mut v0, mut v30) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { weylrg_weyl_points(p, &mut pf, &mut v0, &mut v30) }, WeylrgStatus::Ok);
    assert!((pf - std::f64::consts::FRAC_PI_3).abs() < 1e-12);
    assert_eq!(v0, 1.0);
    assert!((v30 - 0.5 * 3f64.sqrt() / 2.0).abs() < 1e-12);
    let mut phase = WeylrgPhase::Critical;
    assert_eq!(unsafe { weylrg_phase(p, &mut phase) }, WeylrgStatus::Ok);
    assert_eq!(phase, WeylrgPhase::Semimetal);
    let mut h = 1;
    assert_eq!(unsafe { weylrg_crossover_scale(p, &mut h) }, WeylrgStatus::Ok);
    assert_eq!(h, 0);
    unsafe { weylrg_params_free(p) };
}

#[test]
fn errors_are_reported() {
    let mut p = ptr::null_mut();
    let s = unsafe { weylrg_params_new(-1.0, 0.5, 2.0, 0.5, 0.0, &mut p) };
    assert_eq!(s, WeylrgStatus::InvalidParams);
    assert!(p.is_null());
    assert!(last_error().contains("t must be positive"), "{}", last_error());
    assert_eq!(unsafe { weylrg_params_new(1.0, 0.5, 2.0, 0.5, 0.0, ptr::null_mut()) }, WeylrgStatus::NullPointer);

    let mut ins = ptr::null_mut();
    assert_eq!(unsafe { weylrg_params_new(1.0, 0.5, 2.0, -0.2, 0.0, &mut ins) }, WeylrgStatus::Ok);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { weylrg_weyl_points(ins, &mut a, &mut b, &mut c) }, WeylrgStatus::NotApplicable);
    unsafe { weylrg_params_free(ins) };

    let p = p_star(0.0);
    let mut g = [0.0; 8];
    assert_eq!(unsafe { weylrg_free_propagator(p, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_3, g.as_mut_ptr()) }, WeylrgStatus::Singular);
    assert_eq!(unsafe { weylrg_free_propagator(p, 1.0, 0.0, 0.0, 0.0, g.as_mut_ptr()) }, WeylrgStatus::Ok);
    assert!(g.iter().all(|x| x.is_finite()));
    unsafe { weylrg_params_free(p) };
    unsafe { weylrg_params_free(ptr::null_mut()) };
}

#[test]
fn free_flow_is_constant_per_regime() {
    let p = p_star(0.0);
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { weylrg_flow_run(p, 0.0, -3, 8, &mut t) }, WeylrgStatus::Ok);
    let n = unsafe { weylrg_trajectory_len(t) };
    assert_eq!(n, 5);
    let mut rows = Vec::new();
    for i in 0..n {
        let mut c = WeylrgCouplings { h: 0, regime: 0, z: 0.0, v: 0.0, v3: 0.0, nu: 0.0 };
        assert_eq!(unsafe { weylrg_trajectory_get(t, i, &mut c) }, WeylrgStatus::Ok);
        rows.push(c);
    }
    assert_eq!(rows[0].h, 1);
    assert_eq!(rows[4].h, -3);
    for c in &rows {
        assert_eq!((c.z, c.v, c.nu), (1.0, 1.0, 0.0));
    }
    let mut c = rows[0];
    assert_eq!(unsafe { weylrg_trajectory_get(t, n, &mut c) }, WeylrgStatus::IndexOutOfRange);
    let mut beta = 1.0;
    assert_eq!(unsafe { weylrg_trajectory_max_beta(t, &mut beta) }, WeylrgStatus::Ok);
    assert_eq!(beta, 0.0);
    unsafe {
        weylrg_trajectory_free(t);
        weylrg_params_free(p);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(weylrg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/weylrg.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles and runs a C client against the header and the static library.
#[test]
fn c_client_links() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // the test binary lives in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libweylrg_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("client");
    let status = Command::new(cc)
        .arg(dir.join("tests/client.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "p_F=1.047198 v30=0.433013 phase=0");
}
