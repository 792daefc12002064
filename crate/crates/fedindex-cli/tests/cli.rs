//! End-to-end tests of the `fedindex` binary: subcommands, output files,
//! determinism, and exit-code discipline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_fedindex")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    let base = "\
master_seed = 42
rounds = 4
n_runs = 2

[population]
n_producers = 3
n_obs_per_producer = 120

[local]
epochs = 2
batch_size = 32

[evaluation]
n_bins = 8

[baselines]
anor = [0.470, 0.160]
";
    fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

#[test]
fn generate_writes_population_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = dir.path().join("gen");
    let result = run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );

    let population = String::from_utf8(read(&out, "population.txt")).unwrap();
    assert!(population.starts_with("fedindex-population v1"));
    assert!(out.join("config.resolved.toml").is_file());
    assert!(!out.join("traces.csv").exists(), "generate must not train");
}

#[test]
fn train_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let result = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            result.status.success(),
            "{}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    for name in ["traces.csv", "summary.json", "fitted.json"] {
        assert_eq!(
            read(&out_a, name),
            read(&out_b, name),
            "{name} differs between reruns"
        );
    }
    let header = String::from_utf8(read(&out_a, "traces.csv")).unwrap();
    assert!(
        header.starts_with("round,run,global_loss,a_1,a_2\n"),
        "{header}"
    );
}

#[test]
fn seed_override_changes_the_traces() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let base = ["train", "--config"];
    let result = run(&[
        &base[..],
        &[config.to_str().unwrap(), "--out", out_a.to_str().unwrap()],
    ]
    .concat());
    assert!(result.status.success());
    let result = run(&[
        &base[..],
        &[
            config.to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap(),
            "--seed",
            "7",
        ],
    ]
    .concat());
    assert!(result.status.success());
    assert_ne!(read(&out_a, "traces.csv"), read(&out_b, "traces.csv"));
}

#[test]
fn saved_population_bypasses_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let gen_out = dir.path().join("gen");
    let result = run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        gen_out.to_str().unwrap(),
    ]);
    assert!(result.status.success());

    // Same experiment, but the population now comes from the saved file.
    let loaded_config = dir.path().join("loaded.toml");
    fs::write(
        &loaded_config,
        format!(
            "master_seed = 42\nrounds = 4\nn_runs = 2\npopulation_path = \"{}\"\n\n[local]\nepochs = 2\nbatch_size = 32\n",
            gen_out.join("population.txt").display()
        ),
    )
    .unwrap();
    let direct_out = dir.path().join("direct");
    let loaded_out = dir.path().join("loaded");
    let result = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        direct_out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let result = run(&[
        "train",
        "--config",
        loaded_config.to_str().unwrap(),
        "--out",
        loaded_out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert_eq!(
        read(&direct_out, "traces.csv"),
        read(&loaded_out, "traces.csv"),
        "loaded population must train identically to the generated one"
    );
}

#[test]
fn evaluate_writes_basis_risk_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = dir.path().join("eval");
    let result = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );

    let report: serde_json::Value = serde_json::from_slice(&read(&out, "basis_risk.json")).unwrap();
    assert_eq!(report["n_bins"], 8);
    let anor = &report["sets"]["anor"];
    assert_eq!(anor["coefficients"], serde_json::json!([0.470, 0.160]));
    assert_eq!(anor["reports"].as_array().unwrap().len(), 3);
    assert!(!out.join("traces.csv").exists(), "evaluate must not train");
}

#[test]
fn report_produces_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = dir.path().join("report");
    let result = run(&[
        "report",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for name in [
        "config.resolved.toml",
        "population.txt",
        "traces.csv",
        "summary.json",
        "fitted.json",
        "oracle.json",
        "basis_risk.json",
        "run.log",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let basis: serde_json::Value = serde_json::from_slice(&read(&out, "basis_risk.json")).unwrap();
    let sets = basis["sets"].as_object().unwrap();
    for key in ["anor", "fitted", "oracle"] {
        assert!(sets.contains_key(key), "missing coefficient set {key}");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        "master_seed = 1\n[population]\nq_range = [1.0, 1.5]\n",
    )
    .unwrap();
    let result = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("q_range"), "{stderr}");
}

#[test]
fn missing_config_exits_with_code_four() {
    let result = run(&["train", "--config", "/nonexistent/experiment.toml"]);
    assert_eq!(result.status.code(), Some(4));
}

#[test]
fn malformed_population_file_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("broken.txt");
    fs::write(
        &pop,
        "fedindex-population v1\nproducers 1\ncovariates 2\nproducer oops\n",
    )
    .unwrap();
    let config = dir.path().join("cfg.toml");
    fs::write(
        &config,
        format!("master_seed = 1\npopulation_path = \"{}\"\n", pop.display()),
    )
    .unwrap();
    let out = dir.path().join("out");
    let result = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line"), "{stderr}");
}
