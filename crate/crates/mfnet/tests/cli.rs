//! End-to-end checks of the command-line surface: exit codes, report
//! parse-back, and the init → inflate → eval pipeline.

use std::path::Path;
use std::process::{Command, Output};

use mfnet::arch::{build_mfnet, NetConfig};
use mfnet::cost::count_flops;

fn mfnet_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 output")
}

#[test]
fn summarize_csv_reproduces_cost_model_integers() {
    let out = mfnet_cmd(&["summarize", "--arch", "mfnet", "--dims", "3d", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);

    let graph = build_mfnet(&NetConfig::mfnet_3d()).unwrap();
    let report = count_flops(&graph, &[1, 3, 16, 224, 224]).unwrap();

    let mut rows = 0usize;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        if fields[0] == "total" {
            assert_eq!(fields[3].parse::<u64>().unwrap(), report.total_params);
            assert_eq!(fields[4].parse::<u64>().unwrap(), report.total_macs);
        } else {
            let row = &report.rows[rows];
            assert_eq!(fields[0], row.name);
            assert_eq!(fields[3].parse::<u64>().unwrap(), row.params);
            assert_eq!(fields[4].parse::<u64>().unwrap(), row.macs);
            rows += 1;
        }
    }
    assert_eq!(rows, report.rows.len());
}

#[test]
fn summarize_honors_explicit_input_shape() {
    let out = mfnet_cmd(&[
        "summarize",
        "--arch",
        "resnet18",
        "--input-shape",
        "2x3x224x224",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let total = stdout(&out)
        .lines()
        .find(|l| l.starts_with("total,"))
        .unwrap()
        .to_string();
    let macs: u64 = total.split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(macs, 2 * 1_814_073_344);
}

#[test]
fn compare_lists_every_architecture() {
    let out = mfnet_cmd(&["compare", "--archs", "resnet18", "mfnet", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("resnet18,resnet18,11689512,1814073344"));
    assert!(text.contains("mfnet-2d,mfnet,5716488,859379712"));
}

#[test]
fn usage_and_config_errors_exit_two() {
    // unknown subcommand (clap usage error)
    let out = mfnet_cmd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    // invalid config value
    let out = mfnet_cmd(&["summarize", "--arch", "/nonexistent/path.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    // unsupported thread count
    let out = mfnet_cmd(&["--threads", "4", "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));
    // 3d resnet18 is contradictory
    let out = mfnet_cmd(&["summarize", "--arch", "resnet18", "--dims", "3d"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let out = mfnet_cmd(&["gradcheck", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 15);
    assert!(!text.contains("FAIL"));
}

#[test]
fn init_inflate_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let arch_cfg = dir.path().join("toy.arch");
    // 2D base of the toy pair; inflation flips dims itself.
    std::fs::write(
        &arch_cfg,
        "width_scale: 1/8\nfibers: 2\nclasses: 4\nin_channels: 1\nframes: 8\ninput_hw: 32\nstage_repeats: 1,1,1,1\n",
    )
    .unwrap();
    let ckpt2 = dir.path().join("toy2d.ckpt");
    let ckpt3 = dir.path().join("toy3d.ckpt");

    let out = mfnet_cmd(&[
        "init",
        "--arch",
        arch_cfg.to_str().unwrap(),
        "--dims",
        "2d",
        "--seed",
        "11",
        "--out",
        ckpt2.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");

    let out = mfnet_cmd(&[
        "inflate",
        "--from",
        ckpt2.to_str().unwrap(),
        "--arch",
        arch_cfg.to_str().unwrap(),
        "--out",
        ckpt3.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(Path::new(&ckpt3).exists());

    // The inflated checkpoint drives the 3D evaluator directly.
    let out = mfnet_cmd(&["eval", "--ckpt", ckpt3.to_str().unwrap(), "--clips", "2", "--seed", "1"]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("val accuracy"));
    assert!(text.contains("shuffled-time control"));
    assert!(text.contains("multi-clip accuracy"));

    // Inflating from a checkpoint of the wrong graph fails cleanly ...
    let out = mfnet_cmd(&[
        "inflate",
        "--from",
        ckpt3.to_str().unwrap(),
        "--arch",
        arch_cfg.to_str().unwrap(),
        "--out",
        dir.path().join("bad.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_rejects_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("resnet.ckpt");
    let out = mfnet_cmd(&[
        "init",
        "--arch",
        "resnet18",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let out = mfnet_cmd(&["eval", "--ckpt", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
