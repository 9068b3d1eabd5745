use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use imitate_ffi::*;

fn last_error() -> String {
    let p = imitate_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn coordination() -> *mut ImitateGame {
    let r = [10.0, 0.0, 8.0, 7.0];
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { imitate_game_linear(2, r.as_ptr(), &mut g) }, ImitateStatus::Ok);
    g
}

#[test]
fn rewards_and_field() {
    let g = coordination();
    let mut rule = ptr::null_mut();
    unsafe {
        assert_eq!(imitate_game_num_actions(g), 2);
        assert_eq!(imitate_rule_replicator(&mut rule), ImitateStatus::Ok);
        let x = [0.5, 0.5];
        let mut r = [0.0; 2];
        assert_eq!(imitate_game_rewards(g, x.as_ptr(), 2, r.as_mut_ptr()), ImitateStatus::Ok);
        assert_eq!(r, [5.0, 7.5]);
        let mut v = [0.0; 2];
        assert_eq!(imitate_vector_field(g, rule, x.as_ptr(), 2, v.as_mut_ptr()), ImitateStatus::Ok);
        assert!((v[0] + 0.625).abs() < 1e-15 && (v[0] + v[1]).abs() < 1e-15);
        let mut phi = f64::NAN;
        assert_eq!(imitate_game_potential(g, x.as_ptr(), 2, &mut phi), ImitateStatus::Ok);
        assert!(phi.is_finite());
        imitate_rule_free(rule);
        imitate_game_free(g);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let g = coordination();
    unsafe {
        let x = [0.2, 0.3, 0.5];
        let mut out = [0.0; 3];
        assert_eq!(imitate_game_rewards(g, x.as_ptr(), 3, out.as_mut_ptr()), ImitateStatus::DimensionMismatch);
        assert!(last_error().contains("dimension"));
        let y = [0.5, 0.5];
        assert_eq!(imitate_game_rewards(g, y.as_ptr(), 2, out.as_mut_ptr()), ImitateStatus::Ok);
        assert!(imitate_last_error().is_null());
        assert_eq!(imitate_game_rewards(ptr::null(), x.as_ptr(), 2, out.as_mut_ptr()), ImitateStatus::NullPointer);
        let bad = [0.5, -0.5];
        assert_eq!(imitate_game_rewards(g, bad.as_ptr(), 2, out.as_mut_ptr()), ImitateStatus::InvalidArgument);

        let rsp = [0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0];
        let mut h = ptr::null_mut();
        assert_eq!(imitate_game_linear(3, rsp.as_ptr(), &mut h), ImitateStatus::Ok);
        let mut phi = 0.0;
        assert_eq!(imitate_game_potential(h, x.as_ptr(), 3, &mut phi), ImitateStatus::NoPotential);
        imitate_game_free(h);
        imitate_game_free(g);
    }
}

#[test]
fn equilibria_of_coordination_game() {
    let g = coordination();
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(imitate_equilibria(g, 1e-9, &mut set), ImitateStatus::Ok);
        assert_eq!(imitate_equilibria_len(set), 3);
        let mut nash = 0;
        for k in 0..3 {
            let mut p = [0.0; 2];
            let mut label = ImitateLabel::CriticalNonNash;
            assert_eq!(imitate_equilibria_get(set, k, p.as_mut_ptr(), 2, &mut label), ImitateStatus::Ok);
            if label == ImitateLabel::Nash {
                nash += 1;
            }
        }
        assert_eq!(nash, 3);
        let mut p = [0.0; 2];
        let mut label = ImitateLabel::Nash;
        assert_eq!(imitate_equilibria_get(set, 3, p.as_mut_ptr(), 2, &mut label), ImitateStatus::OutOfRange);
        imitate_equilibria_free(set);
        imitate_game_free(g);
    }
}

#[test]
fn integration_reaches_the_basin_limit() {
    let g = coordination();
    unsafe {
        let k = [0.5, 0.5, 0.5, 0.5];
        let mut rule = ptr::null_mut();
        assert_eq!(imitate_rule_arctan(2, k.as_ptr(), &mut rule), ImitateStatus::Ok);
        let x0 = [0.9, 0.1];
        for step in [0.01, 0.0] {
            let mut traj = ptr::null_mut();
            assert_eq!(imitate_integrate(g, rule, x0.as_ptr(), 2, 60.0, 0.5, step, 1e-8, &mut traj), ImitateStatus::Ok);
            let n = imitate_trajectory_len(traj);
            assert_eq!(n, 121);
            let (mut t, mut x) = (0.0, [0.0; 2]);
            assert_eq!(imitate_trajectory_get(traj, n - 1, &mut t, x.as_mut_ptr(), 2), ImitateStatus::Ok);
            assert!((t - 60.0).abs() < 1e-9);
            assert!(x[0] > 1.0 - 1e-4, "{x:?}");
            imitate_trajectory_free(traj);
        }
        let mut traj = ptr::null_mut();
        assert_eq!(imitate_integrate(g, rule, x0.as_ptr(), 2, -1.0, 0.5, 0.01, 0.0, &mut traj), ImitateStatus::Validation);
        assert!(traj.is_null());
        imitate_rule_free(rule);
        imitate_game_free(g);
    }
}

#[test]
fn scenarios_parse_run_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let text = CString::new(
        r#"{"id": "ffi", "seed": 2, "game": {"family": "linear", "R": [[2, 0], [0, 1]]},
            "rule": {"kind": "replicator"}, "initial": {"point": [0.5, 0.5]},
            "integrator": {"method": "rk4-fixed", "step": 0.01, "t_end": 20}}"#,
    )
    .unwrap();
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(imitate_scenario_parse(text.as_ptr(), &mut s), ImitateStatus::Ok);
        let out = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(imitate_scenario_run(s, out.as_ptr()), ImitateStatus::Ok);
        assert!(dir.path().join("ffi/2/trajectory.csv").exists());
        let mut ok = false;
        assert_eq!(imitate_scenario_verify(s, &mut ok), ImitateStatus::Ok);
        assert!(ok);
        imitate_scenario_free(s);

        let broken = CString::new("{\"id\": ").unwrap();
        assert_eq!(imitate_scenario_parse(broken.as_ptr(), &mut s), ImitateStatus::Parse);
        assert!(last_error().contains("line 1"));
        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        assert_eq!(imitate_scenario_load(missing.as_ptr(), &mut s), ImitateStatus::Io);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/imitate.h");
    assert!(header.exists());
    let Ok(status) = Command::new("cc").args(["-std=c99", "-fsyntax-only", "-x", "c"]).arg(&header).status() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(status.success());
}
