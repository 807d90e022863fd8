//! Smoke tests of the binary surface: exit codes and artifact layout.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_homlab"))
}

fn tiny_config_path(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(
        &path,
        r#"{
        "d": 2,
        "master_seed": 5,
        "mesh_nodes_min": 17,
        "eps_grid": [0.5, 0.25],
        "sweep_seeds": 2,
        "ensemble_n": [2, 2],
        "torus_cells": 16,
        "torus_period": 4.0,
        "kernel": {"family":"truncated-gaussian","ell":0.4,"amplitude":null,"field_std":0.8,"kappa":1},
        "abar_pilot_samples": 4,
        "gk_samples": 50,
        "gk_chi_scales": [0.5, 1.0],
        "sublinearity_samples": 30,
        "sublinearity_radii": [0.5, 1.0]
    }"#,
    )
    .unwrap();
    path
}

#[test]
fn sample_field_and_corrector_write_artifacts() {
    let dir = std::env::temp_dir().join("homlab-cli-sample");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = tiny_config_path(&dir);
    let st = bin()
        .args(["sample-field", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("f"))
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.join("f/field.shom").exists());
    assert!(dir.join("f/coefficient.shom").exists());
    assert!(dir.join("f/field_meta.json").exists());

    let st = bin()
        .args(["corrector", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("c"))
        .status()
        .unwrap();
    assert!(st.success());
    for f in ["phi.shom", "gradients.shom", "flux.shom", "sigma.shom", "commutator.shom", "corrector.json"] {
        assert!(dir.join("c").join(f).exists(), "{f} missing");
    }
}

#[test]
fn eigen_and_exit_codes() {
    let dir = std::env::temp_dir().join("homlab-cli-eigen");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = tiny_config_path(&dir);
    let st = bin()
        .args(["eigen", "--eps", "0.5", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("e"))
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.join("e/results.csv").exists());

    // validation failure: exit code 2
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"d":4,"master_seed":1}"#).unwrap();
    let st = bin()
        .args(["sample-field", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.join("x"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}
