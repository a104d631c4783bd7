//! End-to-end checks of the command-line surface: exit codes, determinism
//! of generated artifacts, and the bisection sanity campaign.

use std::path::PathBuf;
use std::process::{Command, Output};

fn sysid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sysid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("sysid-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = sysid(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_2() {
    let out = sysid(&["gen-data", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_deterministic_across_runs() {
    let dir = tmp_dir("gen-det");
    let run = |sub: &str| {
        let out = sysid(&[
            "gen-data",
            "--env",
            "scoop",
            "--mode",
            "rbs",
            "--n",
            "100",
            "--seed",
            "1",
            "--run-dir",
            &dir.join(sub).display().to_string(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
        stdout
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix("sha256=").map(str::to_string))
            .expect("checksum printed")
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b, "same seed must give identical dataset checksums");
}

#[test]
fn eval_without_checkpoint_exits_3_with_missing_artifact_message() {
    let dir = tmp_dir("eval-missing");
    let out = sysid(&[
        "eval",
        "--env",
        "scoop",
        "--methods",
        "incontext",
        "--run-dir",
        &dir.display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "stderr: {err}");
    assert!(err.contains("missing checkpoint"), "stderr: {err}");
}

#[test]
fn oracle_reaches_full_success_by_iteration_seven() {
    let dir = tmp_dir("oracle");
    let out = sysid(&[
        "oracle",
        "--env",
        "scoop",
        "--pairs",
        "60",
        "--iters",
        "10",
        "--run-dir",
        &dir.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // rows: "<iter> <bisect_success> <dr_success>"
    let mut reached = None;
    for line in stdout.lines().skip(1) {
        let mut f = line.split_whitespace();
        let iter: u32 = f.next().unwrap().parse().unwrap();
        let bisect: f64 = f.next().unwrap().parse().unwrap();
        if bisect == 1.0 {
            reached = Some(iter);
            break;
        }
    }
    let reached = reached.expect("bisection oracle never reached full success");
    assert!(reached <= 7, "full success only at iteration {reached}");
}

#[test]
fn ablate_refuses_existing_output_without_force() {
    let dir = tmp_dir("ablate-refuse");
    std::fs::create_dir_all(dir.join("sweep_L")).unwrap();
    let out = sysid(&[
        "ablate",
        "--env",
        "scoop",
        "--axis",
        "L",
        "--values",
        "5",
        "--run-dir",
        &dir.display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
}

#[test]
fn shipped_configs_validate() {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            sysid_core::io::config::ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 6, "expected the shipped experiment configs");
}

#[test]
fn report_joins_metrics_files() {
    let dir = tmp_dir("report");
    std::fs::create_dir_all(&dir).unwrap();
    let metrics = dir.join("m.csv");
    std::fs::write(
        &metrics,
        "env,method,seed,pair,iter,dim,param_err,traj_dist,label,success\n\
         scoop,dr,0,0,0,0,0.5,,1,0\n\
         scoop,dr,0,1,0,0,0.25,,0,1\n",
    )
    .unwrap();
    let out_path = dir.join("joined.csv");
    let out = sysid(&[
        "report",
        "--inputs",
        &metrics.display().to_string(),
        "--out",
        &out_path.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.lines().count() == 2, "{text}");
    assert!(text.contains("0.375"), "mean of 0.5 and 0.25: {text}");
}
