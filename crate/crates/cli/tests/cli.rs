use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn c2a(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2a")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = c2a(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        err.trim_end().lines().count(),
        1,
        "expected a single-line error, got {err:?}"
    );
    err.trim_end().to_string()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&["gen-data", "--out", s(&a), "--seed", "4"]);
    ok(&["gen-data", "--out", s(&b), "--seed", "4"]);
    ok(&["gen-data", "--out", s(&c), "--seed", "5"]);
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn config_errors_list_every_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let world = tmp.path().join("w");
    ok(&["gen-data", "--out", s(&world)]);
    let cfg = tmp.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"max_iter": "many", "bogus": 1, "model": {"kk": 2}, "lr_disc": -1.0}"#,
    )
    .unwrap();
    let out = c2a(&[
        "train",
        "--world",
        s(&world),
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error: code=config"), "{line}");
    for key in ["bogus", "max_iter", "model.kk"] {
        assert!(line.contains(key), "{key} missing from {line}");
    }
}

#[test]
fn out_of_range_values_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"lr_disc": -1.0, "lr_power": -2.0}"#).unwrap();
    let out = c2a(&["train", "--config", s(&cfg), "--print-defaults"]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.contains("lr_disc") && line.contains("lr_power"), "{line}");
}

#[test]
fn unknown_flags_are_rejected_with_one_line() {
    let out = c2a(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(line.starts_with("error: code=usage msg="), "{line}");
}

#[test]
fn missing_world_is_a_single_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = c2a(&[
        "eval",
        "--world",
        s(&tmp.path().join("nope")),
        "--ckpt",
        s(&tmp.path().join("ck")),
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error: code="));
}

#[test]
fn print_defaults_round_trips_as_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["train", "--print-defaults"]);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["max_iter"], 2000);
    let cfg = tmp.path().join("defaults.json");
    fs::write(&cfg, &text).unwrap();
    let again = ok(&["train", "--config", s(&cfg), "--print-defaults"]);
    assert_eq!(text, again);
    // flags override the file
    let over = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--max-iter",
        "7",
        "--mode",
        "target_only",
        "--print-defaults",
    ]);
    let v: Value = serde_json::from_str(&over).unwrap();
    assert_eq!(v["max_iter"], 7);
    assert_eq!(v["mode"], "target_only");
}

#[test]
fn help_documents_every_subcommand_flag() {
    let cases: [(&str, &[&str]); 6] = [
        ("gen-data", &["--spec", "--out", "--seed", "--print-spec"]),
        ("init-clusters", &["--world", "--config", "--out", "--seed"]),
        (
            "train",
            &[
                "--world",
                "--config",
                "--mode",
                "--init",
                "--out",
                "--seed",
                "--max-iter",
                "--print-defaults",
            ],
        ),
        ("eval", &["--world", "--ckpt", "--split", "--out"]),
        (
            "sweep",
            &[
                "--config",
                "--seeds",
                "--modes",
                "--world",
                "--out",
                "--max-iter",
                "--jobs",
                "--expect-ordering",
            ],
        ),
        ("plot", &["--runs", "--out"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn untrained_model_scores_below_the_uniform_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let world = tmp.path().join("w");
    ok(&["gen-data", "--out", s(&world), "--seed", "2"]);
    let run = tmp.path().join("r");
    ok(&[
        "train",
        "--world",
        s(&world),
        "--mode",
        "target_only",
        "--max-iter",
        "0",
        "--out",
        s(&run),
    ]);
    let out = tmp.path().join("eval.json");
    ok(&[
        "eval",
        "--world",
        s(&world),
        "--ckpt",
        s(&run.join("checkpoint")),
        "--out",
        s(&out),
    ]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let c = v["per_class_iou"].as_array().unwrap().len() as f64;
    let miou = v["miou"].as_f64().unwrap();
    assert!(miou <= 2.0 / (c + 1.0), "mIoU {miou} with {c} classes");
}

#[test]
fn train_eval_and_plot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let world = tmp.path().join("w");
    ok(&["gen-data", "--out", s(&world), "--seed", "1"]);
    let init = tmp.path().join("init");
    ok(&[
        "init-clusters",
        "--world",
        s(&world),
        "--out",
        s(&init),
        "--pretrain-iters",
        "50",
    ]);
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--world",
        s(&world),
        "--mode",
        "c2a_full",
        "--init",
        s(&init),
        "--max-iter",
        "40",
        "--out",
        s(&run),
    ]);
    let lines = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let records: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.first().unwrap()["iter"], 0);
    assert_eq!(records.last().unwrap()["iter"], 40);
    let table = ok(&["eval", "--world", s(&world), "--ckpt", s(&run.join("checkpoint"))]);
    assert!(table.contains("miou"));
    let svg = tmp.path().join("curves.svg");
    ok(&["plot", "--runs", s(&run), "--out", s(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("<path"));
}

#[test]
fn sweep_writes_a_summary_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let table = ok(&[
        "sweep",
        "--seeds",
        "0,1",
        "--modes",
        "target_only,c2a_full",
        "--max-iter",
        "20",
        "--jobs",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(table.contains("target_only") && table.contains("c2a_full"));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 4);
    assert_eq!(v["per_mode"].as_array().unwrap().len(), 2);
    assert!(out.join("seed-1").join("c2a_full").join("metrics.jsonl").exists());
    // parallel workers do not change results
    let serial = tmp.path().join("serial");
    ok(&[
        "sweep",
        "--seeds",
        "0,1",
        "--modes",
        "target_only,c2a_full",
        "--max-iter",
        "20",
        "--out",
        s(&serial),
    ]);
    let w: Value = serde_json::from_str(&fs::read_to_string(serial.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["cells"], w["cells"]);
}

#[test]
fn bad_seed_list_is_rejected() {
    let out = c2a(&["sweep", "--seeds", "5..2", "--out", "/nonexistent/never"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("seeds"));
}
