//! End-to-end exercise of the command-line pipeline: phantom generation,
//! coil maps, simulation, a tiny training run, reconstruction, evaluation,
//! a benchmark grid, and plotting.

use std::path::Path;
use std::process::Command;

fn mrbench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrbench"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(
        out.status.success(),
        "command failed\nstdout: {stdout}\nstderr: {stderr}"
    );
    stdout
}

#[test]
fn full_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    run_ok(mrbench().args([
        "phantom",
        "--seed",
        "3",
        "--dims",
        "16,16,16",
        "--ellipsoids",
        "6",
        "--out",
        p("gt.cvol").to_str().unwrap(),
    ]));
    assert!(p("gt.cvol").exists());

    run_ok(mrbench().args([
        "coilmaps",
        "--dims",
        "16,16,16",
        "--coils",
        "3",
        "--seed",
        "5",
        "--out",
        p("maps.maps").to_str().unwrap(),
    ]));

    let mask_out = run_ok(mrbench().args([
        "mask",
        "--shape",
        "32,32",
        "--accel",
        "4",
        "--kind",
        "poisson",
        "--acs",
        "8,8",
        "--out",
        p("mask.txt").to_str().unwrap(),
    ]));
    assert!(mask_out.contains("achieved R"));
    let mask_text = std::fs::read_to_string(p("mask.txt")).unwrap();
    assert_eq!(mask_text.lines().count(), 32);

    run_ok(mrbench().args([
        "simulate",
        "--vol",
        p("gt.cvol").to_str().unwrap(),
        "--maps",
        p("maps.maps").to_str().unwrap(),
        "--accel",
        "2",
        "--acs",
        "8,8",
        "--seed",
        "1",
        "--out",
        p("y.cksp").to_str().unwrap(),
    ]));

    // a deliberately tiny prior so the test stays fast
    std::fs::write(
        p("train.toml"),
        r#"
[dataset]
dims = [16, 16, 16]
n_ellipsoids = 5
seed_start = 0
seed_count = 2

[denoiser]
base_channels = 8
channel_mults = [1, 2]
attention_levels = []

[train]
steps = 30
schedule_t = 100
"#,
    )
    .unwrap();
    run_ok(mrbench().args([
        "train",
        "--config",
        p("train.toml").to_str().unwrap(),
        "--out",
        p("ckpt").to_str().unwrap(),
    ]));
    assert!(p("ckpt/meta.json").exists());

    run_ok(mrbench().args([
        "recon",
        "--ksp",
        p("y.cksp").to_str().unwrap(),
        "--maps",
        p("maps.maps").to_str().unwrap(),
        "--ckpt",
        p("ckpt").to_str().unwrap(),
        "--method",
        "variational",
        "--lambda",
        "0.02",
        "--iters",
        "8",
        "--slices-per-plane",
        "4",
        "--slab-size",
        "2",
        "--t-prime",
        "40",
        "--out",
        p("recon.cvol").to_str().unwrap(),
    ]));
    assert!(p("recon.cvol").exists());
    assert!(p("recon.run.json").exists());
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("recon.run.json")).unwrap()).unwrap();
    assert_eq!(log["dc_loss"].as_array().unwrap().len(), 8);

    let eval_out = run_ok(mrbench().args([
        "eval",
        "--recon",
        p("recon.cvol").to_str().unwrap(),
        "--ref",
        p("gt.cvol").to_str().unwrap(),
    ]));
    assert!(eval_out.contains("psnr_db"));
    assert!(eval_out.contains("ssim"));

    // zero-filled benchmark grid + plot
    std::fs::write(
        p("bench.toml"),
        format!(
            r#"
seed = 1
out_dir = "{}"

[dataset]
kind = "phantom"
dims = [16, 16, 16]
n_ellipsoids = 5
seeds = [100, 101]

[coils]
count = 2
seed = 0

[masks]
kind = "poisson"
accels = [2.0, 4.0]
acs = [8, 8]

[recon]
method = "zero_filled"
"#,
            p("bench_out").display()
        ),
    )
    .unwrap();
    run_ok(mrbench().args([
        "bench",
        "--config",
        p("bench.toml").to_str().unwrap(),
    ]));
    let csv = p("bench_out/metrics.csv");
    assert!(csv.exists());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5, "header + 4 cells:\n{text}");
    assert!(text.starts_with(
        "volume_id,method,v_train_mm,v_recon_mm,accel,psnr_db,ssim,wall_s,seed,error"
    ));

    // re-running a finished experiment leaves the CSV byte-identical
    let before = std::fs::read(&csv).unwrap();
    run_ok(mrbench().args([
        "bench",
        "--config",
        p("bench.toml").to_str().unwrap(),
    ]));
    let after = std::fs::read(&csv).unwrap();
    assert_eq!(before, after);

    run_ok(mrbench().args([
        "plot",
        "--csv",
        csv.to_str().unwrap(),
        "--x",
        "accel",
        "--out",
        p("plot.png").to_str().unwrap(),
    ]));
    let png = std::fs::read(p("plot.png")).unwrap();
    assert!(&png[1..4] == b"PNG");
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "this is not valid toml [").unwrap();
    let out = mrbench()
        .args(["bench", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = mrbench()
        .args(["recon", "--ksp", "nope.cksp", "--maps", "nope.maps", "--method", "bogus", "--out", "x.cvol"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_files_are_runtime_errors() {
    let out = mrbench()
        .args([
            "eval",
            "--recon",
            "/nonexistent/a.cvol",
            "--ref",
            "/nonexistent/b.cvol",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let _ = Path::new("x");
}
