mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::quick_overrides;
use memefuse::commands::{digest_tree, RUN_ROOT_ENV};

fn memefuse(root: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_memefuse"));
    cmd.env(RUN_ROOT_ENV, root).env("RUST_LOG", "warn");
    for o in quick_overrides() {
        cmd.arg("--set").arg(o);
    }
    cmd.args(args).output().unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = memefuse(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(root: &Path, args: &[&str]) -> i32 {
    memefuse(root, args).status.code().unwrap()
}

#[test]
fn full_pipeline_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let run = root.join("default");
    ok(root, &["synthesize-corpus"]);
    assert!(run.join("config.toml").exists());
    ok(root, &["split"]);
    for (stage, arch) in [("1", "double_tower"), ("1", "single_flow"), ("2", "double_tower")] {
        ok(root, &["train", "--stage", stage, "--arch", arch]);
    }
    ok(root, &["ensemble"]);
    ok(root, &["postprocess"]);
    let table = ok(root, &["evaluate"]);
    for row in ["organizers baseline", "single-flow", "double-tower", "ensemble", "post-processing"] {
        assert!(table.contains(row), "missing row {row}:\n{table}");
    }
    let tsv = std::fs::read_to_string(run.join("evaluation/report.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 6);

    let sub_b = std::fs::read_to_string(run.join("postprocess/submission_b.tsv")).unwrap();
    for line in sub_b.lines().skip(1) {
        let bits: Vec<&str> = line.split('\t').skip(1).collect();
        assert_eq!(bits.len(), 5);
        if bits[0] == "0" {
            assert!(bits[1..].iter().all(|b| *b == "0"), "hierarchy broken: {line}");
        }
    }

    // rerunning from the manifest reproduces every artifact byte for byte
    let stage = run.join("stage1/single_flow");
    let before = digest_tree(&stage).unwrap();
    let manifest = stage.join("manifest.json");
    ok(root, &["train", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(digest_tree(&stage).unwrap(), before);

    // saved fold models reproduce the stage's test predictions
    let p = root.join("p.tsv");
    ok(root, &["predict", "--stage", "1", "--arch", "single_flow", "--out", p.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(&p).unwrap(),
        std::fs::read(stage.join("stage1_test.tsv")).unwrap()
    );

    // the same fold plan under the same seed
    let folds = std::fs::read(run.join("split/folds.tsv")).unwrap();
    ok(root, &["split"]);
    assert_eq!(std::fs::read(run.join("split/folds.tsv")).unwrap(), folds);

    // alignment: gold ids that the predictions do not cover
    let train = run.join("corpus/train.tsv");
    assert_eq!(code(root, &["evaluate", "--gold", train.to_str().unwrap()]), 4);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    // configuration: nothing registered under data.train
    assert_eq!(code(root, &["split"]), 2);
    assert_eq!(code(root, &["--set", "train.batch_size=0", "split"]), 2);
    assert_eq!(code(root, &["no-such-command"]), 2);

    ok(root, &["synthesize-corpus"]);
    // configuration: no fold plan yet
    assert_eq!(code(root, &["train", "--stage", "1", "--arch", "double_tower"]), 2);
    ok(root, &["split"]);
    // configuration: stage 2 without an external corpus
    let out = memefuse(root, &["--set", "data.external=", "train", "--stage", "2", "--arch", "double_tower"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.external"));

    // data: a corpus file that is not there
    assert_eq!(code(root, &["--set", "data.train=\"/nonexistent/train.tsv\"", "split"]), 3);
    let bad = root.join("bad.tsv");
    std::fs::write(&bad, "sample_id\tprobability\nx\t0.5\n").unwrap();
    let arg = format!("y1={}", bad.display());
    assert_eq!(code(root, &["evaluate", "--pred", &arg]), 3);

    // alignment: ensemble inputs over different samples
    let a = root.join("a.tsv");
    let b = root.join("b.tsv");
    std::fs::write(&a, "sample_id\tmisogynous\nx\t0.5\n").unwrap();
    std::fs::write(&b, "sample_id\tmisogynous\ny\t0.5\n").unwrap();
    assert_eq!(
        code(root, &["ensemble", "--y1", a.to_str().unwrap(), "--y2", b.to_str().unwrap()]),
        4
    );
}

#[test]
fn run_dir_flag_overrides_the_root() {
    let tmp = tempfile::tempdir().unwrap();
    let explicit = tmp.path().join("elsewhere");
    ok(tmp.path(), &["--run-dir", explicit.to_str().unwrap(), "synthesize-corpus"]);
    assert!(explicit.join("corpus/train.tsv").exists());
    assert!(!tmp.path().join("default").exists());
    ok(tmp.path(), &["--run", "named", "synthesize-corpus"]);
    assert!(tmp.path().join("named/config.toml").exists());
}
