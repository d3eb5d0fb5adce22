use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ulisse-gp");

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        r#"
[dataset.synthetic]
n = 60
d = 2
seed = 5

[sgld]
total_iters = 400
variance_batch = 50
map_subset = 60

[mh]
num_iters = 600
burn_in = 200
adapt_iters = 200

[run]
chains = 2
seed = 3

[sweep]
num_draws = 5

[gradient_check]
q_values = [0.5]
repetitions = 5
num_draws = 2
"#,
    )
    .unwrap();
    p
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("ULISSE_GP_OUTPUT_DIR").env_remove("ULISSE_GP_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();

    ok(&run(&["map", "-c", cfg, "-o", o], &[]));
    assert!(out.join("map.json").exists());

    ok(&run(&["sample-sgld", "-c", cfg, "-o", o], &[]));
    for f in ["chain_00.csv", "chain_01.csv", "psrf.csv", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sample-sgld");
    assert_eq!(manifest["config"]["sgld"]["total_iters"], 400);
    let chain = std::fs::read_to_string(out.join("chain_00.csv")).unwrap();
    assert_eq!(chain.lines().count(), 401);

    let c0 = out.join("chain_00.csv");
    let c1 = out.join("chain_01.csv");
    let diag = dir.path().join("diag");
    ok(&run(
        &["diagnose", "-c", cfg, "-o", diag.to_str().unwrap(), "--burn-in", "100", c0.to_str().unwrap(), c1.to_str().unwrap()],
        &[],
    ));
    assert!(diag.join("diagnostics.csv").exists());
    assert!(diag.join("running_summary.csv").exists());

    let inputs = dir.path().join("x.csv");
    std::fs::write(&inputs, "a,b\n0.1,0.2\n-1.0,0.5\n").unwrap();
    let pred = dir.path().join("pred");
    ok(&run(
        &[
            "predict",
            "-c",
            cfg,
            "-o",
            pred.to_str().unwrap(),
            "--chain",
            c0.to_str().unwrap(),
            "--inputs",
            inputs.to_str().unwrap(),
            "--stride",
            "10",
            "--set",
            "predict.burn_in=200",
        ],
        &[],
    ));
    let p = std::fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert_eq!(p.lines().count(), 3);

    ok(&run(&["sample-mh", "-c", cfg, "-o", o, "--chains", "1"], &[]));
    assert!(out.join("mh_chain_00.csv").exists());
    ok(&run(&["condition-sweep", "-c", cfg, "-o", o], &[]));
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 6);
    ok(&run(&["gradient-check", "-c", cfg, "-o", o], &[]));
    assert!(out.join("gradient_check.csv").exists());
}

#[test]
fn same_seed_gives_identical_chains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for sub in ["a", "b"] {
        let o = dir.path().join(sub);
        ok(&run(&["sample-sgld", "-c", cfg, "-o", o.to_str().unwrap(), "--chains", "1", "--set", "sgld.total_iters=200"], &[]));
    }
    let a = std::fs::read(dir.path().join("a/chain_00.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/chain_00.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn env_sets_output_dir_unless_flag_given() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let env_dir = dir.path().join("from_env");
    ok(&run(&["ingest", "-c", cfg], &[("ULISSE_GP_OUTPUT_DIR", env_dir.to_str().unwrap())]));
    assert!(env_dir.join("dataset.json").exists());

    let flag_dir = dir.path().join("from_flag");
    ok(&run(&["ingest", "-c", cfg, "-o", flag_dir.to_str().unwrap()], &[("ULISSE_GP_OUTPUT_DIR", env_dir.to_str().unwrap())]));
    assert!(flag_dir.join("dataset.json").exists());

    let workers_dir = dir.path().join("workers");
    ok(&run(&["ingest", "-c", cfg, "-o", workers_dir.to_str().unwrap()], &[("ULISSE_GP_WORKERS", "1")]));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(workers_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["workers"], 1);
}

#[test]
fn bad_configuration_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["map", "-c", cfg.to_str().unwrap(), "--set", "sgld.gamma=0.3", "--set", "mh.burn_in=5000"], &[]);
    assert_eq!(out.status.code(), Some(9));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gamma") && err.contains("burn_in"), "{err}");

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[sgld]\ntotal_iter = 10\n").unwrap();
    let out = run(&["map", "-c", typo.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(9));
}

#[test]
fn missing_data_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["ingest", "--data", "/nonexistent/concrete.csv", "-o", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(7), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn committed_example_config_loads() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/concrete.toml");
    let cfg = ulisse_gp::workbench::ExperimentConfig::load(Some(&p), &[]).unwrap();
    assert_eq!(cfg.sgld.total_iters, 40_000);
    assert_eq!(cfg.mh.num_iters, 50_000);
    assert_eq!(cfg.run.chains, 4);
}
