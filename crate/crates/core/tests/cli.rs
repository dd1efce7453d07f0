use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn opt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opt"))
        .args(args)
        .env_remove("ADABATCH_OUT_DIR")
        .output()
        .expect("opt runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const CONFIG: &str = r#"
objective = "least_squares"
seeds = [1, 2]

[dataset]
source = "synthetic"
n_samples = 200
n_features = 5
noise_std = 1.0
seed = 3

[runs.sgd]
step = { policy = "constant", eta = 0.01 }
batch = { policy = "fixed", size = 2 }
max_epochs = 5.0
trace_every = 10

[runs.adabatchgrad]
step = { policy = "adagrad", alpha = 2.23606797749979, beta = 50000.0 }
batch = { policy = "approx_tests" }
max_epochs = 5.0
trace_every = 10
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = opt(&["run", "--config", &config, "--out", a.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = opt(&["run", "--config", &config, "--out", b.to_str().unwrap(), "--jobs", "3"]);
    assert_eq!(code(&second), 0);

    let files = dir_contents(&a);
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        [
            "adabatchgrad_seed1.csv",
            "adabatchgrad_seed1.json",
            "adabatchgrad_seed2.csv",
            "adabatchgrad_seed2.json",
            "sgd_seed1.csv",
            "sgd_seed1.json",
            "sgd_seed2.csv",
            "sgd_seed2.json",
        ]
    );
    assert_eq!(files, dir_contents(&b));

    let csv = String::from_utf8(files[4].1.clone()).unwrap();
    assert!(csv.starts_with(
        "iter,samples,epoch,f,grad_norm_full,grad_norm_batch,step_size,batch_size,inner_lhs,inner_rhs,orth_lhs,orth_rhs,status\n"
    ));
    assert!(csv.trim_end().ends_with("budget_exhausted"));
    let side: serde_json::Value = serde_json::from_slice(&files[5].1).unwrap();
    assert_eq!(side["seed"], 1);
    assert_eq!(side["name"], "sgd");
    assert_eq!(side["outcome"]["status"], "budget_exhausted");
    assert!(side["f_star"].as_f64().is_some());
}

#[test]
fn seed_override_and_env_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("env-out");
    let result = Command::new(env!("CARGO_BIN_EXE_opt"))
        .args(["run", "--config", &config, "--seed", "9"])
        .env("ADABATCH_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&result), 0);
    let names: Vec<String> = dir_contents(&out).into_iter().map(|f| f.0).collect();
    assert_eq!(
        names,
        [
            "adabatchgrad_seed9.csv",
            "adabatchgrad_seed9.json",
            "sgd_seed9.csv",
            "sgd_seed9.json"
        ]
    );
}

#[test]
fn diverging_run_exits_2_and_keeps_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("eta = 0.01", "eta = 50.0");
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("o");
    let result = opt(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&result), 2);
    let csv = fs::read_to_string(out.join("sgd_seed1.csv")).unwrap();
    assert!(csv.lines().count() > 2);
    assert!(csv.trim_end().ends_with("non_finite"));
    // the well-behaved run is still written
    assert!(out.join("adabatchgrad_seed1.csv").exists());
}

#[test]
fn config_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = opt(&["run", "--config", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(code(&missing), 3);

    let bad = write_config(
        tmp.path(),
        &CONFIG.replace(
            "max_epochs = 5.0\ntrace_every = 10\n\n[runs.adabatchgrad]",
            "mystery = 1\n\n[runs.adabatchgrad]",
        ),
    );
    let out = opt(&["run", "--config", &bad]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));

    let invalid = write_config(tmp.path(), &CONFIG.replace("size = 2", "size = 0"));
    assert_eq!(code(&opt(&["run", "--config", &invalid])), 1);

    assert_eq!(code(&opt(&["frobnicate"])), 1);
    assert_eq!(code(&opt(&["run"])), 1);
    assert_eq!(code(&opt(&["--help"])), 0);
}

#[test]
fn generate_is_deterministic_and_capped() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.libsvm");
    let b = tmp.path().join("b.libsvm");
    for p in [&a, &b] {
        let out = opt(&[
            "generate",
            "--out",
            p.to_str().unwrap(),
            "--seed",
            "4",
            "--n-samples",
            "50",
            "--n-features",
            "3",
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 50);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a.libsvm.json")).unwrap()).unwrap();
    assert_eq!(meta["n_samples"], 50);
    assert_eq!(meta["w_star"].as_array().unwrap().len(), 3);

    let capped = opt(&[
        "generate",
        "--out",
        tmp.path().join("c").to_str().unwrap(),
        "--n-samples",
        "500",
        "--max-rows",
        "100",
    ]);
    assert_eq!(code(&capped), 1);
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn generated_data_feeds_a_libsvm_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.libsvm");
    assert_eq!(
        code(&opt(&[
            "generate",
            "--out",
            data.to_str().unwrap(),
            "--n-samples",
            "80",
            "--n-features",
            "4"
        ])),
        0
    );
    let text = r#"
objective = "least_squares"
seeds = [1]
output_dir = "traces"

[dataset]
source = "libsvm"
path = "data.libsvm"
n_features = 4

[runs.sgd]
step = { policy = "constant", eta = 0.01 }
batch = { policy = "fixed", size = 4 }
max_epochs = 2.0
"#;
    let config = write_config(tmp.path(), text);
    assert_eq!(code(&opt(&["run", "--config", &config])), 0);
    assert!(tmp.path().join("traces/sgd_seed1.csv").exists());
}

#[test]
fn demo_tables() {
    let out = opt(&["demo-inconsistency"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 22);
    assert!(lines[0].starts_with("n,"));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("FP"), "{stderr}");

    let out = opt(&["demo-inconsistency", "--batch-total", "10"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 12);

    let out = opt(&["demo-inconsistency", "--w", "0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn compare_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("o");
    assert_eq!(
        code(&opt(&["run", "--config", &config, "--out", out.to_str().unwrap()])),
        0
    );

    // identical traces under two names: zero difference
    let twins = tmp.path().join("twins");
    fs::create_dir(&twins).unwrap();
    fs::copy(out.join("sgd_seed1.csv"), twins.join("left_seed1.csv")).unwrap();
    fs::copy(out.join("sgd_seed1.csv"), twins.join("right_seed1.csv")).unwrap();
    let result = opt(&[
        "compare",
        twins.join("left_seed1.csv").to_str().unwrap(),
        twins.join("right_seed1.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0);
    let text = String::from_utf8(result.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "left");
    assert_eq!(rows[1][0], "right");
    assert_eq!(rows[1][9], "0");
    assert_eq!(rows[0][2..9], rows[1][2..9]);

    // suboptimality uses f_star from the sidecars
    let paths: Vec<String> = ["sgd_seed1", "sgd_seed2", "adabatchgrad_seed1", "adabatchgrad_seed2"]
        .iter()
        .map(|s| out.join(format!("{s}.csv")).to_str().unwrap().to_string())
        .collect();
    let mut args = vec!["compare", "--metric", "suboptimality"];
    args.extend(paths.iter().map(String::as_str));
    let result = opt(&args);
    assert_eq!(code(&result), 0);
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("sgd,2,"));
    assert!(text.lines().nth(2).unwrap().starts_with("adabatchgrad,2,"));

    // without a sidecar there is no f_star
    let result = opt(&[
        "compare",
        "--metric",
        "suboptimality",
        twins.join("left_seed1.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 1);

    let wrong = tmp.path().join("wrong.csv");
    fs::write(&wrong, "iter,f\n0,1.0\n").unwrap();
    let result = opt(&["compare", wrong.to_str().unwrap()]);
    assert_eq!(code(&result), 1);
    assert!(String::from_utf8_lossy(&result.stderr).contains("schema"));

    let result = opt(&["compare", tmp.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(code(&result), 3);
}

#[test]
fn presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = adabatch::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
        for run in config.runs.values() {
            run.validate(1000, 20).unwrap();
        }
        count += 1;
    }
    assert!(count >= 6);
}
