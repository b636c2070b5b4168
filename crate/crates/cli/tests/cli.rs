//! End-to-end tests driving the `hiss` binary as a subprocess: artifact
//! layout, exact train/eval agreement, deterministic generation, error
//! lines, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn hiss(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiss"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("the binary should spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_tiny(dir: &Path, out: &str, n: &str, seed: &str) {
    let o = hiss(
        &[
            "gen", "--task", "drift-integrator", "--n", n, "--seed", seed, "--duration", "2",
            "2", "--out", out,
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_names_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hiss(&["--help"], tmp.path());
    assert!(o.status.success());
    let s = stdout(&o);
    for sub in ["gen", "train", "eval", "bench", "ablate", "inspect"] {
        assert!(s.contains(sub), "help is missing {sub}:\n{s}");
    }
    assert!(s.contains("HISS_SEQ_THREADS"));
}

#[test]
fn gen_writes_identical_bytes_for_identical_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    gen_tiny(tmp.path(), "a", "3", "7");
    gen_tiny(tmp.path(), "b", "3", "7");
    gen_tiny(tmp.path(), "c", "3", "8");

    let names = |d: &str| -> Vec<String> {
        let mut v: Vec<String> = std::fs::read_dir(tmp.path().join(d))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    let listing = names("a");
    assert_eq!(listing, names("b"));
    assert!(listing.contains(&"manifest.json".to_string()));
    assert!(listing.len() > 3, "three trajectory files plus the manifest");
    for n in &listing {
        let a = std::fs::read(tmp.path().join("a").join(n)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(n)).unwrap();
        assert_eq!(a, b, "{n} differs between identical-seed runs");
    }
    assert_ne!(
        std::fs::read(tmp.path().join("a/manifest.json")).unwrap(),
        std::fs::read(tmp.path().join("c/manifest.json")).unwrap(),
        "a different seed changes the dataset"
    );
}

#[test]
fn train_eval_inspect_agree() {
    let tmp = tempfile::tempdir().unwrap();
    gen_tiny(tmp.path(), "ds", "6", "3");
    let cfg = serde_json::json!({
        "train": {
            "dataset": "ds/manifest.json",
            "model": {"flat": {"kind": "dssm", "depth": 1, "width": 8, "state_dim": 4}},
            "epochs": 2,
            "batch_size": 2
        },
        "out": "run"
    });
    std::fs::write(
        tmp.path().join("exp.json"),
        serde_json::to_string_pretty(&cfg).unwrap(),
    )
    .unwrap();

    let t = hiss(&["train", "--config", "exp.json"], tmp.path());
    assert!(t.status.success(), "{}", stderr(&t));
    let t_out = stdout(&t);
    let best_line = t_out
        .lines()
        .find(|l| l.starts_with("best epoch"))
        .unwrap_or_else(|| panic!("no best-epoch line in:\n{t_out}"));
    let best_mse = best_line.split_whitespace().last().unwrap();
    for f in [
        "run/config.json",
        "run/checkpoint/index.json",
        "run/checkpoint/params.bin",
        "run/checkpoint/norm_stats.json",
        "run/checkpoint/history.csv",
        "run/loss_curve.svg",
        "run/run.json",
    ] {
        assert!(tmp.path().join(f).exists(), "missing artifact {f}");
    }

    // the reported validation MSE is the number the train log recorded,
    // token for token
    let e = hiss(&["eval", "--ckpt", "run", "--split", "val"], tmp.path());
    assert!(e.status.success(), "{}", stderr(&e));
    let e_out = stdout(&e);
    let seed_line = e_out.lines().find(|l| l.starts_with("seed ")).unwrap();
    assert_eq!(
        seed_line.split_whitespace().last().unwrap(),
        best_mse,
        "eval disagrees with the train log:\n{t_out}\n{e_out}"
    );
    assert!(e_out.contains("val mse mean"));

    // parameter count matches the hand count for this architecture:
    // embed 30x8 + 8, one dssm block (6 state planes of 8x4, d and
    // log_dt of 8, layer norm 2x8), head 8x2 + 2
    let i = hiss(&["inspect", "--ckpt", "run"], tmp.path());
    assert!(i.status.success(), "{}", stderr(&i));
    let i_out = stdout(&i);
    let (d_in, w, n, d_out) = (30usize, 8usize, 4usize, 2usize);
    let want = (d_in * w + w) + (6 * w * n + 2 * w + 2 * w) + (w * d_out + d_out);
    assert!(
        i_out.contains(&format!("parameters {want}")),
        "expected parameters {want} in:\n{i_out}"
    );
    assert!(i_out.contains("model flat dssm depth 1 width 8"));

    // the frozen config reproduces the run exactly
    let t2 = hiss(
        &["train", "--config", "run/config.json", "--out", "run2"],
        tmp.path(),
    );
    assert!(t2.status.success(), "{}", stderr(&t2));
    let t2_out = stdout(&t2);
    let best2 = t2_out
        .lines()
        .find(|l| l.starts_with("best epoch"))
        .unwrap()
        .split_whitespace()
        .last()
        .unwrap();
    assert_eq!(best_mse, best2, "a frozen config must reproduce its run");
}

#[test]
fn failures_exit_with_coded_one_liners() {
    let tmp = tempfile::tempdir().unwrap();
    let model = serde_json::json!({"flat": {"kind": "dssm", "depth": 1, "width": 8}});

    // unknown key in the config
    std::fs::write(
        tmp.path().join("bad.json"),
        serde_json::json!({"train": {"dataset": "x", "model": model, "epoch": 3}}).to_string(),
    )
    .unwrap();
    let o = hiss(&["train", "--config", "bad.json", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.starts_with("error[config]:"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1, "one line only:\n{e}");

    // dataset missing and nothing to generate it from
    std::fs::write(
        tmp.path().join("noset.json"),
        serde_json::json!({"train": {"dataset": "absent/manifest.json", "model": model}})
            .to_string(),
    )
    .unwrap();
    let o = hiss(&["train", "--config", "noset.json", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]:"), "{}", stderr(&o));

    // config file itself missing
    let o = hiss(&["train", "--config", "absent.json", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(3));

    // no output directory from either flag or config
    std::fs::write(
        tmp.path().join("noout.json"),
        serde_json::json!({"train": {"dataset": "x", "model": model}}).to_string(),
    )
    .unwrap();
    let o = hiss(&["train", "--config", "noout.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    // bad command line
    let o = hiss(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.starts_with("error[config]:"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
}

#[test]
fn bench_reports_and_charts_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hiss(
        &[
            "bench", "--model", "s4", "--lengths", "64..512", "--width", "4", "--state-dim",
            "4", "--out", "b",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("cost slope"));

    let csv = std::fs::read_to_string(tmp.path().join("b/s4_scaling.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("len,median_s,spread,reps,floats"));
    assert_eq!(lines.count(), 4);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("b/s4_scaling.json")).unwrap())
            .unwrap();
    assert_eq!(json["model"], "s4");
    assert_eq!(json["points"].as_array().unwrap().len(), 4);
    assert!(json["slope"].is_number());

    let svg = std::fs::read_to_string(tmp.path().join("b/s4_scaling.svg")).unwrap();
    assert!(svg.contains("</svg>"));

    // explicit comma grids work too
    let o = hiss(
        &[
            "bench", "--model", "lstm", "--lengths", "16,32,64,128", "--width", "4", "--out",
            "b2",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("b2/lstm_scaling.csv").exists());

    let o = hiss(
        &["bench", "--model", "s4", "--lengths", "100..300", "--out", "b3"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2), "300 is not 100 doubled");
    let o = hiss(
        &["bench", "--model", "transformer", "--lengths", "64..512", "--out", "b3"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"));
}

#[test]
fn ablate_generates_data_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "train": {
            "dataset": "ds",
            "model": {"flat": {"kind": "dssm", "depth": 1, "width": 8, "state_dim": 4}},
            "epochs": 1,
            "batch_size": 2
        },
        "task": {
            "kind": "drift-integrator",
            "count": 6,
            "seed": 5,
            "duration_s": [2.0, 2.0]
        },
        "out": "abl",
        "sweep": {"fractions": [1.0], "seeds": [0]}
    });
    std::fs::write(
        tmp.path().join("exp.json"),
        serde_json::to_string_pretty(&cfg).unwrap(),
    )
    .unwrap();

    let o = hiss(&["ablate", "--kind", "fraction", "--config", "exp.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        tmp.path().join("ds/manifest.json").exists(),
        "the dataset is generated from the task block"
    );
    let csv_path = tmp.path().join("abl/fraction_ablation.csv");
    let csv = std::fs::read(&csv_path).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    assert!(text.starts_with("fraction,seed,val_mse\n"));
    assert_eq!(text.lines().count(), 2, "header plus one cell:\n{text}");

    let o = hiss(&["ablate", "--kind", "fraction", "--config", "exp.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 new cell(s)"), "{}", stdout(&o));
    assert_eq!(std::fs::read(&csv_path).unwrap(), csv, "a finished sweep is untouched");

    // the sweep kind must match the lists in the config
    let o = hiss(&["ablate", "--kind", "chunk", "--config", "exp.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
