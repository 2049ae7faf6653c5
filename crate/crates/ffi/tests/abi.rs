use std::ffi::{CStr, CString};
use std::ptr;

use intervene_ffi::*;

fn last_error() -> String {
    let p = iv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn benchmark_sampling_clamps_the_intervened_column() {
    let h = iv_scm_benchmark5();
    unsafe {
        assert_eq!(iv_scm_n_nodes(h), 5);
        let mut buf = vec![0.0; 50 * 5];
        let s = iv_scm_sample(h, 1, 2.5, 50, 7, buf.as_mut_ptr(), buf.len());
        assert_eq!(s, IvStatus::Ok);
        assert!(buf.chunks(5).all(|r| r[1] == 2.5));
        iv_scm_free(h);
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let h = iv_scm_benchmark15();
    unsafe {
        let n = iv_scm_n_nodes(h);
        assert_eq!(n, 15);
        let mut a = vec![0.0; 10 * n];
        let mut b = vec![0.0; 10 * n];
        assert_eq!(iv_scm_sample(h, -1, 0.0, 10, 3, a.as_mut_ptr(), a.len()), IvStatus::Ok);
        assert_eq!(iv_scm_sample(h, -1, 0.0, 10, 3, b.as_mut_ptr(), b.len()), IvStatus::Ok);
        assert_eq!(a, b);
        iv_scm_free(h);
    }
}

#[test]
fn small_buffer_and_bad_value_are_reported() {
    let h = iv_scm_benchmark5();
    unsafe {
        let mut buf = vec![0.0; 4];
        assert_eq!(
            iv_scm_sample(h, -1, 0.0, 1, 0, buf.as_mut_ptr(), buf.len()),
            IvStatus::BufferTooSmall
        );
        assert!(last_error().contains("need 5"));
        let mut buf = vec![0.0; 5];
        assert_eq!(
            iv_scm_sample(h, 0, 9.0, 1, 0, buf.as_mut_ptr(), buf.len()),
            IvStatus::InvalidArgument
        );
        assert!(last_error().contains("outside"));
        assert_eq!(iv_scm_sample(ptr::null(), 0, 0.0, 1, 0, buf.as_mut_ptr(), 5), IvStatus::NullPointer);
        iv_scm_free(h);
    }
}

#[test]
fn model_from_toml() {
    let text = CString::new(
        r#"
nodes = ["A", "B"]
edges = [["A", "B"]]
[mechanisms.A]
kind = "root"
mean = 1.0
std = 1.0
[mechanisms.B]
kind = "linear"
weights = [3.0]
intercept = 0.5
noise_std = 0.0
"#,
    )
    .unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        let s = iv_scm_from_toml(text.as_ptr(), &mut h);
        assert_eq!(s, IvStatus::Ok, "{}", last_error());
        let mut buf = [0.0; 2];
        assert_eq!(iv_scm_sample(h, -1, 0.0, 1, 0, buf.as_mut_ptr(), 2), IvStatus::Ok);
        assert_eq!(buf[1], 3.0 * buf[0] + 0.5, "{buf:?}");
        iv_scm_free(h);

        let bad = CString::new("nodes = 3").unwrap();
        assert_eq!(iv_scm_from_toml(bad.as_ptr(), &mut h), IvStatus::Config);
        assert!(!last_error().is_empty());
        assert_eq!(iv_scm_from_toml(ptr::null(), &mut h), IvStatus::NullPointer);
    }
}

#[test]
fn run_experiment_returns_json() {
    let cfg = CString::new(
        "policy = \"random\"\nseeds = [5]\n[orchestrator]\nwarm_start = 3\nepisodes = 4\n",
    )
    .unwrap();
    let mut out = ptr::null_mut();
    unsafe {
        let s = iv_run_experiment(cfg.as_ptr(), &mut out);
        assert_eq!(s, IvStatus::Ok, "{}", last_error());
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        iv_string_free(out);
        assert_eq!(json["results"][0]["episodes"], 4);
        assert_eq!(json["summary"]["seeds"][0], 5);
    }
}

#[test]
fn run_experiment_rejects_unknown_policy() {
    let cfg = CString::new("policy = \"greedy\"\nseeds = [1]\n").unwrap();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(iv_run_experiment(cfg.as_ptr(), &mut out), IvStatus::Config);
        assert!(last_error().contains("greedy"));
        assert!(out.is_null());
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/intervene.h");
    let src = std::env::temp_dir().join("intervene_header_check.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ return IV_STATUS_OK; }}\n")).unwrap();
    match std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror"]).arg(&src).status() {
        Ok(status) => assert!(status.success()),
        Err(_) => eprintln!("no C compiler available; header check skipped"),
    }
}
