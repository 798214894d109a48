//! CLI exit-code contract and byte-identical reruns.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_accelopt")
}

fn run(args: &[&str]) -> i32 {
    Command::new(bin())
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| -> String {
        dir.path().join(name).to_str().unwrap().to_string()
    };

    // 2: usage / configuration errors
    assert_eq!(run(&["train", "--dataset", &p("missing.csv"), "--out-dir", &p("t")]), 2);
    assert_eq!(run(&["gen-data", "--apps", "not_an_app", "--out", &p("d.csv")]), 2);
    assert_eq!(run(&["no-such-command"]), 2);

    // 0: success
    let data = p("data.csv");
    assert_eq!(
        run(&["gen-data", "--apps", "m4", "--n-samples", "300", "--seed", "1", "--out", &data]),
        0
    );
    let train_dir = p("train");
    assert_eq!(
        run(&[
            "train", "--dataset", &data, "--out-dir", &train_dir, "--alpha", "0.1", "--beta",
            "1.0", "--steps", "200", "--checkpoint-interval", "100", "--seed", "1", "--small",
            "--max-feasible", "150",
        ]),
        0
    );
    let ckpt = format!("{train_dir}/selected.ckpt");
    assert_eq!(
        run(&[
            "search", "--checkpoint", &ckpt, "--apps", "m4", "--n-top", "16", "--iterations",
            "50", "--seeds", "1", "--out-dir", &p("s_ok"),
        ]),
        0
    );

    // 1: search found no feasible design under an impossible area budget
    assert_eq!(
        run(&[
            "search", "--checkpoint", &ckpt, "--apps", "m4", "--area", "0.01", "--n-top", "16",
            "--iterations", "50", "--seeds", "1", "--out-dir", &p("s_fail"),
        ]),
        1
    );
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    let s = |name: &str| -> String { p(name).to_str().unwrap().to_string() };
    for round in ["x", "y"] {
        assert_eq!(
            run(&[
                "gen-data", "--apps", "m4,m5", "--n-samples", "200", "--seed", "9", "--out",
                &s(&format!("d_{round}.csv")),
            ]),
            0
        );
    }
    assert_eq!(
        std::fs::read(p("d_x.csv")).unwrap(),
        std::fs::read(p("d_y.csv")).unwrap()
    );
}
