use std::process::{Command, Output};

fn nlbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlbox")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn behavior_check_reports_locality() {
    let o = nlbox(&["behavior", "check", "tsirelson"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("local         false"), "{out}");
    assert!(out.contains("0.707107"), "{out}");

    let o = nlbox(&["behavior", "check", "isotropic:0.5"]);
    assert!(stdout(&o).contains("local         true"));
}

#[test]
fn behavior_check_rejects_signaling_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sig.json");
    std::fs::write(
        &path,
        r#"{"name":"sig","x_size":2,"y_size":2,"a_size":2,"b_size":2,"table":[1,0,0,0, 0,0,0,1, 1,0,0,0, 0,0,0,1]}"#,
    )
    .unwrap();
    let o = nlbox(&["behavior", "check", "--file", path.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn local_demo_session_prints_the_transcript() {
    let o = nlbox(&["demo-session", "--local", "--seed", "1", "--id-prefix", "20211106"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let replies: Vec<&str> = out.lines().map(str::trim).filter(|l| l.starts_with('{')).collect();
    assert_eq!(
        replies,
        include_str!("golden/demo_replies.txt").lines().collect::<Vec<_>>()
    );
}

#[test]
fn local_play_and_verify() {
    let o = nlbox(&[
        "play",
        "--local",
        "--strategy",
        "boxed",
        "--rounds",
        "200",
        "--seed",
        "2",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("losses     0"), "{}", stdout(&o));

    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("rounds.jsonl");
    let o = nlbox(&[
        "play",
        "--strategy",
        "classical",
        "--rounds",
        "100",
        "--seed",
        "2",
        "--records",
        records.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&records).unwrap().lines().count(), 100);

    let o = nlbox(&[
        "verify",
        "--local",
        "--rounds",
        "4000",
        "--seed",
        "3",
        "--fidelity-tol",
        "0.06",
        "--strata-tol",
        "0.08",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn bad_arguments_exit_nonzero() {
    let o = nlbox(&["play", "--strategy", "psychic"]);
    assert!(!o.status.success());
    let o = nlbox(&[
        "use",
        "--box",
        "1",
        "--transaction",
        "t",
        "-x",
        "0",
        "-y",
        "0",
        "--api-key",
        "k",
    ]);
    assert!(!o.status.success());
}
