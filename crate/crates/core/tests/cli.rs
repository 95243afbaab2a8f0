use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gdvig_core::harness::ShortcutReport;

fn gdvig(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdvig")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Relative path → contents of every file below `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SPEC: &str = "n_train = 16\nn_test = 8\nimage_size = 32\nseed = 3\n";
const CONFIG: &str = "image_size = 32\ngmg_channels = 16\ngdc_channels = 16,32\nlr = 1e-3\nepochs = 2\nseed = 3\n";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.txt"), SPEC).unwrap();
    fs::write(dir.path().join("cfg.txt"), CONFIG).unwrap();
    dir
}

#[test]
fn pipeline_is_byte_deterministic() {
    let w = workspace();
    let d = w.path();
    ok(&gdvig(&["synth-data", "--spec", "spec.txt", "--out", "c1"], d));
    ok(&gdvig(&["synth-data", "--spec", "spec.txt", "--out", "c2"], d));
    assert_eq!(tree(&d.join("c1")), tree(&d.join("c2")));
    ok(&gdvig(&["train", "--corpus", "c1", "--config", "cfg.txt", "--out", "r1"], d));
    ok(&gdvig(&["train", "--corpus", "c1", "--config", "cfg.txt", "--out", "r2"], d));
    let (a, b) = (tree(&d.join("r1")), tree(&d.join("r2")));
    assert!(a.keys().any(|p| p.starts_with("params")));
    assert_eq!(a, b);
}

#[test]
fn eval_export_and_dump_use_the_checkpoint() {
    let w = workspace();
    let d = w.path();
    ok(&gdvig(&["synth-data", "--spec", "spec.txt", "--out", "c"], d));
    ok(&gdvig(&["train", "--corpus", "c", "--config", "cfg.txt", "--out", "r"], d));

    let report: serde_json::Value = serde_json::from_str(&ok(&gdvig(
        &["eval", "--checkpoint", "r", "--corpus", "c", "--split", "test", "--predictions", "p.jsonl"],
        d,
    )))
    .unwrap();
    assert_eq!(report["n_samples"], 8);
    let lines = fs::read_to_string(d.join("p.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "test-00000");
    assert_eq!(first["logits"].as_array().unwrap().len(), 2);
    assert_eq!(lines.lines().count(), 8);
    let acc = report["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    ok(&gdvig(&["export-attention", "--checkpoint", "r", "--sample", "test-00001"], d));
    let pgm = fs::read(d.join("r/attention/test-00001.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), 13 + 32 * 32);

    let dump: serde_json::Value = serde_json::from_str(&ok(&gdvig(
        &["dump-graph", "--checkpoint", "r", "--sample", "test-00001", "--centers", "0,9,63"],
        d,
    )))
    .unwrap();
    assert_eq!(dump["centers"].as_array().unwrap().len(), 3);
    for f in ["feature.graph", "gaze.graph", "fused.graph", "report.json"] {
        assert!(d.join("r/graphs/test-00001").join(f).is_file(), "{f}");
    }

    let zero = gdvig(
        &["dump-graph", "--checkpoint", "r", "--sample", "test-00001", "--centers", "0", "--lambda-g", "0", "--out", "z"],
        d,
    );
    ok(&zero);
    let body = |f: &str| {
        let t = fs::read_to_string(d.join("z").join(f)).unwrap();
        t.lines().skip(1).map(str::to_owned).collect::<Vec<_>>()
    };
    assert_eq!(body("feature.graph"), body("fused.graph"));

    assert!(!gdvig(&["export-attention", "--checkpoint", "r", "--sample", "nope"], d).status.success());
    assert!(!gdvig(&["dump-graph", "--checkpoint", "r", "--sample", "test-00001", "--centers", "64"], d).status.success());
}

#[test]
fn bad_inputs_fail_with_nonzero_exit() {
    let w = workspace();
    let d = w.path();
    fs::write(d.join("bad.txt"), "n_train = 4\nwobble = 2\n").unwrap();
    let out = gdvig(&["synth-data", "--spec", "bad.txt", "--out", "c"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("wobble"));
    assert!(!gdvig(&["train", "--corpus", "missing", "--config", "cfg.txt", "--out", "r"], d).status.success());
    assert!(!gdvig(&["knn-bench", "--n", "8", "--k", "8"], d).status.success());
    assert!(!gdvig(&["frobnicate"], d).status.success());
    ok(&gdvig(&["knn-bench", "--n", "100", "--k", "9"], d));
}

#[test]
fn shortcut_report_names_its_arms() {
    let w = workspace();
    let d = w.path();
    let spec = "n_train = 16\nn_test = 8\nimage_size = 32\nshortcut = true\ntrain_correlation = 1\n\
                test_correlation = -1\ngmg_channels = 8\ngdc_channels = 8,16\nepochs = 1\nlr = 1e-3\n";
    fs::write(d.join("exp.txt"), spec).unwrap();
    let text = ok(&gdvig(&["shortcut-exp", "--spec", "exp.txt", "--seeds", "1,2", "--out", "rep.json"], d));
    let report = ShortcutReport::from_json(&text).unwrap();
    assert_eq!(report.seeds, vec![1, 2]);
    assert_eq!(fs::read_to_string(d.join("rep.json")).unwrap(), text);

    let swapped = text.replace("\"baseline\"", "\"tmp\"").replace("\"gd_vig\"", "\"baseline\"").replace("\"tmp\"", "\"gd_vig\"");
    assert!(ShortcutReport::from_json(&swapped).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let base = v["baseline"].clone();
    v["baseline"] = v["gd_vig"].clone();
    v["gd_vig"] = base;
    assert!(ShortcutReport::from_json(&v.to_string()).is_err());
}
