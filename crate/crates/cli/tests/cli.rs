use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "hidden=8",
    "--set", "embed=6",
    "--set", "batch_size=2",
    "--set", "unlabeled_batch=2",
    "--set", "iterations=4",
    "--set", "bt.speaker_iterations=2",
    "--set", "data.train_worlds=2",
    "--set", "data.unseen_worlds=1",
    "--set", "data.sizes=4x4",
    "--set", "data.n_labeled=6",
    "--set", "data.m_unlabeled=4",
    "--set", "data.n_val_seen=4",
    "--set", "data.n_val_unseen=4",
];

fn ccc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ccc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let r = dir.path().join("r");
    for out in [&a, &b] {
        ok(&with_small(&["train", "--mode", "ccc", "--seed", "3", "--checkpoint-every", "2", "--out", s(out)]));
    }
    let read = |p: &Path, f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read(&a, "checkpoint.ckpt"), read(&b, "checkpoint.ckpt"));
    assert_eq!(read(&a, "runlog.csv"), read(&b, "runlog.csv"));

    let mid = a.join("checkpoint-2.ckpt");
    ok(&with_small(&["train", "--mode", "ccc", "--seed", "3", "--resume", s(&mid), "--out", s(&r)]));
    assert_eq!(read(&a, "checkpoint.ckpt"), read(&r, "checkpoint.ckpt"));
}

#[test]
fn gen_data_feeds_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&with_small(&["gen-data", "--seed", "2", "--out", s(&data)]));
    for f in ["worlds.txt", "train.tsv", "unlabeled.tsv", "val_seen.tsv", "val_unseen.tsv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    ok(&with_small(&["train", "--seed", "2", "--data", s(&data), "--out", s(&run)]));
    let csv = dir.path().join("m.csv");
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.ckpt")),
        "--data",
        s(&data),
        "--out",
        s(&csv),
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sha256:"), "banner missing input hash: {err}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in ["SR", "NE", "OR", "SPL", "Bleu-1", "Bleu-4", "CIDEr", "Rouge"] {
        assert!(header.contains(&col), "{header:?}");
    }
    let idx = |c: &str| header.iter().position(|h| *h == c).unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let v = |c: &str| r[idx(c)].parse::<f64>().unwrap();
        assert!(v("SPL") <= v("SR") && v("SR") <= v("OR"), "{r:?}");
    }
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(ccc(&["train", "--mode", "nope", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(ccc(&["train", "--set", "lr=fast", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(ccc(&["frobnicate"]).status.code(), Some(2));
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(ccc(&["eval", "--checkpoint", s(&missing), "--out", s(&out)]).status.code(), Some(3));
    let garbage = dir.path().join("g.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(ccc(&["eval", "--checkpoint", s(&garbage), "--out", s(&out)]).status.code(), Some(3));
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(ccc(&["gen-world", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn oracle_check_reports_every_property() {
    let out = ok(&["oracle-check", "--seed", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(lines.len() >= 10, "{text}");
    assert!(lines.iter().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn plot_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&with_small(&["train", "--mode", "ablation:dA+dX", "--out", s(&run)]));
    let svg = dir.path().join("p.svg");
    ok(&["plot", "--log", s(&run.join("runlog.csv")), "--out", s(&svg)]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
}

#[test]
fn ablate_writes_a_combined_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    ok(&with_small(&["ablate", "--rows", "baseline,dA", "--out", s(&out)]));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    // Header plus val_seen and val_unseen for each row.
    assert_eq!(table.lines().count(), 5, "{table}");
}
