use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use qkd_core::model::KeyBuffer;
use qkd_core::privacy::KeyStore;

fn qkd(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_qkd")).args(args).output().unwrap();
    assert!(out.status.success(), "qkd {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn keys(dir: &Path) -> Vec<KeyBuffer> {
    KeyStore::open(dir.join("keys")).unwrap().load_all().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        qkd(&["simulate", "--scenario", "two-link-night2", "--duration", "3", "--seed", "7", "--out", s(d)]);
    }
    for f in ["alice.ttag", "bob.ttag", "truth.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_duration_gives_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    qkd(&["simulate", "--duration", "0", "--out", s(dir.path())]);
    for f in ["alice.ttag", "bob.ttag"] {
        let bytes = std::fs::read(dir.path().join(f)).unwrap();
        assert_eq!(bytes.len(), qkd_core::timetag::HEADER_LEN);
        assert!(qkd_core::timetag::read_file(&dir.path().join(f)).unwrap().is_empty());
    }
}

#[test]
fn networked_nodes_match_offline_run() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let common = ["--scenario", "two-link-night2", "--duration", "6", "--seed", "21"];
    fn with<'a>(common: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
        [extra, common].concat()
    }
    qkd(&with(&common, &["simulate", "--out", s(&sim)]));

    let (alice_dir, bob_dir) = (dir.path().join("net/alice"), dir.path().join("net/bob"));
    let mut alice = Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(["node", "--role", "alice", "--listen", "127.0.0.1:0", "--input", s(&sim), "--out", s(&alice_dir)])
        .args(common)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(alice.stderr.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    qkd(&with(&common, &["node", "--role", "bob", "--connect", &addr, "--input", s(&sim), "--out", s(&bob_dir)]));
    assert!(alice.wait().unwrap().success());

    let offline = dir.path().join("offline");
    qkd(&with(&common, &["node", "--offline", "--input", s(&sim), "--out", s(&offline)]));

    let net_keys = keys(&alice_dir);
    assert_eq!(net_keys.len(), 3);
    assert_eq!(net_keys, keys(&bob_dir));
    assert_eq!(net_keys, keys(&offline.join("alice")));
    assert_eq!(net_keys, keys(&offline.join("bob")));

    let report = qkd(&["report", "--input", s(&dir.path().join("net"))]);
    assert!(String::from_utf8_lossy(&report.stdout).contains("epochs           3 (0 aborted)"));
    assert!(dir.path().join("net/coincidence_matrix.csv").exists());
}

#[test]
fn injected_abort_skips_one_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("faults.toml");
    std::fs::write(&cfg, "scenario = \"two-link-night1\"\nepoch_seconds = 1\n[faults]\nabort_epochs = [3]\n").unwrap();
    let out = dir.path().join("run");
    qkd(&["node", "--offline", "--config", s(&cfg), "--duration", "5", "--seed", "4", "--out", s(&out)]);
    for side in ["alice", "bob"] {
        let ids: Vec<u32> = keys(&out.join(side)).iter().map(|k| k.epoch_id).collect();
        assert_eq!(ids, vec![1, 2, 4, 5], "{side}");
    }
}

#[test]
fn replay_table3_prints_figures() {
    let out = String::from_utf8(qkd(&["replay-table3"]).stdout).unwrap();
    for want in [
        "raw              10806880 bits",
        "sifted           5422762 bits",
        "QBER total       4.92%",
        "QBER X           2.11%",
        "QBER Z           2.81%",
        "visibility Z     88.6%",
        "visibility X     91.7%",
        "p0               0.4725",
        "extra shrink     0.22%",
    ] {
        assert!(out.contains(want), "missing {want:?} in\n{out}");
    }
}

#[test]
fn invalid_flags_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let status = Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(["simulate", "--epoch-seconds", "3", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(!out.exists());
}
