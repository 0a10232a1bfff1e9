//! End-to-end exercises of the binary: workflows, exit codes, idempotence.

use std::path::Path;
use std::process::{Command, Output};

fn good(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_good"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL: &str = "num_nodes = 50\nlatent_dim = 8\nnum_known_contexts = 2\n\
    num_target_contexts = 1\nnum_steps = 6\ntarget_mixture = 0.6,0.4\n\
    edge_density = 0.1\nnoise = 0.3\nseed = 3\nepochs = 4\n\
    learning_rate = 0.001\nschedule = 12,8-8-8\n";

#[test]
fn full_workflow_and_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.cfg");
    write(&cfg, SMALL);
    let data = root.join("data");
    let run = root.join("run");
    let cfg_s = cfg.to_str().unwrap();
    let data_s = data.to_str().unwrap();
    let run_s = run.to_str().unwrap();

    let gen = good(&["generate", "--config", cfg_s, "--out", data_s], &[]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    for f in ["edges.csv", "features.csv", "manifest.json", "config.txt"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    let tr = good(&["train", "--config", cfg_s, "--data", data_s, "--out", run_s], &[]);
    assert!(tr.status.success(), "{}", String::from_utf8_lossy(&tr.stderr));
    for f in ["checkpoint.good", "epochs.jsonl", "metrics.json", "coefficients.json", "config.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    // evaluate reports the same test roc-auc the train run logged
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let ckpt = run.join("checkpoint.good");
    let ev = good(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", data_s], &[]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    let row: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(run.join("checkpoint.eval.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(row["roc_auc"], metrics["test_roc_auc"]);
    assert_eq!(row["accuracy"], metrics["test_accuracy"]);

    // identical seed re-run produces identical per-epoch metrics
    let run2 = root.join("run2");
    let tr2 = good(&["train", "--config", cfg_s, "--data", data_s, "--out", run2.to_str().unwrap()], &[]);
    assert!(tr2.status.success());
    assert_eq!(
        std::fs::read_to_string(run.join("epochs.jsonl")).unwrap(),
        std::fs::read_to_string(run2.join("epochs.jsonl")).unwrap()
    );

    // report aggregates the evaluate row and skips nothing
    let rep = good(&["report", "--runs", run_s], &[]);
    assert!(rep.status.success());
    let table = String::from_utf8_lossy(&rep.stdout);
    assert!(table.contains("good"), "{table}");
}

#[test]
fn good_lc_plus_needs_companion_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let base = root.join("base.cfg");
    write(&base, SMALL);
    let gen = good(
        &["generate", "--config", base.to_str().unwrap(), "--out", data.to_str().unwrap()],
        &[],
    );
    assert!(gen.status.success());

    let plus = root.join("plus.cfg");
    write(&plus, &format!("{SMALL}variant = good_lc_plus\n"));
    let tr = good(
        &["train", "--config", plus.to_str().unwrap(), "--data", data.to_str().unwrap(),
          "--out", root.join("x").to_str().unwrap()],
        &[],
    );
    assert_eq!(tr.status.code(), Some(2), "{}", String::from_utf8_lossy(&tr.stderr));

    // with a companion good_lc run it trains and evaluates
    let lc = root.join("lc.cfg");
    write(&lc, &format!("{SMALL}variant = good_lc\n"));
    let lcrun = root.join("lcrun");
    let tr_lc = good(
        &["train", "--config", lc.to_str().unwrap(), "--data", data.to_str().unwrap(),
          "--out", lcrun.to_str().unwrap()],
        &[],
    );
    assert!(tr_lc.status.success());
    let plus_ok = root.join("plus_ok.cfg");
    write(
        &plus_ok,
        &format!(
            "{SMALL}variant = good_lc_plus\ncoefficients_path = {}\n",
            lcrun.join("coefficients.json").display()
        ),
    );
    let tr_plus = good(
        &["train", "--config", plus_ok.to_str().unwrap(), "--data", data.to_str().unwrap(),
          "--out", root.join("plusrun").to_str().unwrap()],
        &[],
    );
    assert!(tr_plus.status.success(), "{}", String::from_utf8_lossy(&tr_plus.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // config error -> 2, message names the key
    let bad = root.join("bad.cfg");
    write(&bad, "edge_density = 1.5\n");
    let gen = good(
        &["generate", "--config", bad.to_str().unwrap(), "--out", root.join("x").to_str().unwrap()],
        &[],
    );
    assert_eq!(gen.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&gen.stderr).contains("edge_density"));

    // missing file -> 3
    let ev = good(
        &["evaluate", "--checkpoint", root.join("no.good").to_str().unwrap(),
          "--data", root.to_str().unwrap()],
        &[],
    );
    assert_eq!(ev.status.code(), Some(3));

    // empty runs dir -> 3
    let rep = good(&["report", "--runs", root.to_str().unwrap()], &[]);
    assert_eq!(rep.status.code(), Some(3));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let clean = good(&["gradcheck"], &[]);
    assert!(clean.status.success(), "{}", String::from_utf8_lossy(&clean.stderr));
    let out = String::from_utf8_lossy(&clean.stdout);
    for name in ["eq1_subblock", "eq2_residual_stack", "g_link_head", "g_disentangler", "l_link", "l_q"] {
        assert!(out.contains(name), "missing {name} in:\n{out}");
    }
    assert!(!out.contains("FAIL"));

    let corrupt = good(&["gradcheck"], &[("GOOD_GRADCHECK_CORRUPT", "1")]);
    assert_eq!(corrupt.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("corrupted_fixture"));
}

#[test]
fn report_skips_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let row = r#"{"member":"good","seed":1,"accuracy":0.75,"roc_auc":0.8,"epochs_ran":4,"wall_clock_s":0.5,"config_hash":"ab","scores":[0.9,0.2],"labels":[1.0,0.0]}"#;
    write(&root.join("m.jsonl"), &format!("{row}\nnot json at all\n"));
    let rep = good(&["report", "--runs", root.to_str().unwrap()], &[]);
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stderr).contains("skipped malformed line"));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("good"));
}
