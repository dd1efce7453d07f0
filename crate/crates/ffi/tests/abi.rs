use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use adabatch_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ab_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn synthetic(objective: AbObjective) -> *mut AbDataset {
    let mut ds = ptr::null_mut();
    let status = unsafe { ab_dataset_synthetic(objective, 300, 4, 1.0, 5, &mut ds) };
    assert_eq!(status, AbStatus::Ok, "{}", last_error());
    ds
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ab_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_through_the_abi() {
    let ds = synthetic(AbObjective::LeastSquares);
    let config = CString::new(
        "step = { policy = \"constant\", eta = 0.01 }\nbatch = { policy = \"fixed\", size = 4 }\nseed = 2\nmax_epochs = 2.0\n",
    )
    .unwrap();
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { ab_run(ds, config.as_ptr(), &mut trace) }, AbStatus::Ok);
    assert_eq!(unsafe { ab_trace_status(trace) }, AbRunStatus::BudgetExhausted);
    let n = unsafe { ab_trace_len(trace) };
    // 300 samples * 2 epochs / 4 per batch = 150 steps, every one recorded
    assert_eq!(n, 151);
    let mut row = std::mem::MaybeUninit::<AbTraceRow>::uninit();
    assert_eq!(unsafe { ab_trace_row(trace, n - 1, row.as_mut_ptr()) }, AbStatus::Ok);
    let row = unsafe { row.assume_init() };
    assert_eq!((row.iter, row.samples, row.batch_size), (150, 600, 4));
    assert_eq!(row.step_size, 0.01);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ab_trace_write_csv(trace, path.as_ptr()) }, AbStatus::Ok);
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().count(), 152);

    let bad_path = CString::new(dir.path().join("missing/t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ab_trace_write_csv(trace, bad_path.as_ptr()) }, AbStatus::Io);

    unsafe {
        ab_trace_free(trace);
        ab_dataset_free(ds);
    }
}

#[test]
fn error_codes() {
    let ds = synthetic(AbObjective::Logistic);
    let mut trace = ptr::null_mut();
    let unknown = CString::new(
        "step = { policy = \"constant\", eta = 0.1 }\nbatch = { policy = \"fixed\", size = 2 }\nwarp = 9\n",
    )
    .unwrap();
    assert_eq!(unsafe { ab_run(ds, unknown.as_ptr(), &mut trace) }, AbStatus::Config);
    assert!(last_error().contains("warp"));
    assert!(trace.is_null());

    let invalid =
        CString::new("step = { policy = \"constant\", eta = 0.1 }\nbatch = { policy = \"fixed\", size = 0 }\n")
            .unwrap();
    assert_eq!(unsafe { ab_run(ds, invalid.as_ptr(), &mut trace) }, AbStatus::Config);
    assert_eq!(
        unsafe { ab_run(ptr::null(), invalid.as_ptr(), &mut trace) },
        AbStatus::NullPointer
    );
    assert_eq!(unsafe { ab_run(ds, ptr::null(), &mut trace) }, AbStatus::NullPointer);

    let missing = CString::new("/definitely/not/here.libsvm").unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(
        unsafe { ab_dataset_from_libsvm(missing.as_ptr(), AbObjective::Logistic, 0, &mut other) },
        AbStatus::Io
    );

    // logistic needs two label values
    let x = [1.0, 2.0];
    let y = [0.5, 0.7];
    assert_eq!(
        unsafe { ab_dataset_from_dense(AbObjective::Logistic, x.as_ptr(), y.as_ptr(), 2, 1, &mut other) },
        AbStatus::Data
    );

    let mut eta = 0.0;
    assert_eq!(
        unsafe { ab_adagrad_step_size(1.0, 0.0, 0.0, 1.0, &mut eta) },
        AbStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { ab_adagrad_step_size(1.0, 1.0, 0.0, 1.0, ptr::null_mut()) },
        AbStatus::NullPointer
    );

    let zero_mean = [1.0, -1.0];
    let cfg = AbTestConfig {
        theta: 1.0,
        nu: 1.0,
        omega: 1.0,
    };
    let mut v = std::mem::MaybeUninit::<AbTestVerdict>::uninit();
    assert_eq!(
        unsafe { ab_approx_tests(zero_mean.as_ptr(), 2, 1, &cfg, v.as_mut_ptr()) },
        AbStatus::DegenerateGradient
    );
    assert_eq!(
        unsafe { ab_adagrad_step_size(1.0, 4.0, 0.0, 0.0, &mut eta) },
        AbStatus::Ok
    );
    assert_eq!(last_error(), "");
    assert_eq!(eta, 0.5);

    unsafe {
        ab_dataset_free(ds);
        ab_dataset_free(ptr::null_mut());
        ab_trace_free(ptr::null_mut());
    }
}

#[test]
fn dense_and_libsvm_loaders_agree() {
    let x = [1.0, 0.0, 0.5, 2.0, 0.0, -1.0];
    let y = [1.0, 0.0, 1.0];
    let mut dense = ptr::null_mut();
    assert_eq!(
        unsafe { ab_dataset_from_dense(AbObjective::Nllsq, x.as_ptr(), y.as_ptr(), 3, 2, &mut dense) },
        AbStatus::Ok
    );
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("d.libsvm");
    std::fs::write(&file, "+1 1:1\n-1 1:0.5 2:2\n+1 2:-1\n").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut parsed = ptr::null_mut();
    assert_eq!(
        unsafe { ab_dataset_from_libsvm(path.as_ptr(), AbObjective::Nllsq, 0, &mut parsed) },
        AbStatus::Ok
    );
    unsafe {
        assert_eq!(ab_dataset_n_samples(parsed), 3);
        assert_eq!(ab_dataset_n_features(parsed), 2);
        assert_eq!(ab_dataset_n_features(ptr::null()), 0);
    }

    let config = CString::new(
        "step = { policy = \"constant\", eta = 0.5 }\nbatch = { policy = \"fixed\", size = 3 }\nmax_iterations = 5\n",
    )
    .unwrap();
    let mut weights = [[0.0; 2]; 2];
    for (k, ds) in [dense, parsed].into_iter().enumerate() {
        let mut t = ptr::null_mut();
        assert_eq!(unsafe { ab_run(ds, config.as_ptr(), &mut t) }, AbStatus::Ok);
        assert_eq!(
            unsafe { ab_trace_final_weights(t, weights[k].as_mut_ptr(), 2) },
            AbStatus::Ok
        );
        unsafe {
            ab_trace_free(t);
            ab_dataset_free(ds);
        }
    }
    assert_eq!(weights[0], weights[1]);
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/adabatch.h")).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exported.len() >= 15);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles tests/c/smoke.c against the header and the static library.
/// Skipped when no C compiler or no static library is present.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libadabatch_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
