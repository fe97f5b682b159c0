use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn slokit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slokit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bench_ledger_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = slokit(dir.path(), &["bench-ledger", "--config", "default", "--peers", "7", "--duration", "10s"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "peer_count,latency_ms,blocks,txs,mean_accept_ms,p95_accept_ms,consistent,state_hash");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "7");
    assert_eq!(row[6], "true");
    assert!(dir.path().join("bench-blocks-7.csv").exists());
}

#[test]
fn run_then_audit_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let o = slokit(dir.path(), &["run", "--config", "default"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = slokit(dir.path(), &["audit", "--service", "vault", "--config", "default"]);
    assert_eq!(o.status.code(), Some(0));
    let records: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty());
    let id = records[0]["token_id"].as_str().unwrap().to_string();

    let o = slokit(dir.path(), &["verify", &id]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("verified "));

    // Flip one hex digit inside the payload of the first mint.
    let chain = fs::read_to_string(dir.path().join("chain.jsonl")).unwrap();
    let at = chain.find("\"action\":\"mint\"").unwrap();
    let p = at + chain[at..].find("\"payload\":\"").unwrap() + "\"payload\":\"".len() + 40;
    let mut bytes = chain.into_bytes();
    bytes[p] = if bytes[p] == b'0' { b'1' } else { b'0' };
    let tampered = dir.path().join("tampered.jsonl");
    fs::write(&tampered, bytes).unwrap();

    let o = slokit(dir.path(), &["verify", &id, "--chain", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("HashMismatch"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(slokit(dir.path(), &["verify", "xyz"]).status.code(), Some(1));
    assert_eq!(slokit(dir.path(), &["run", "--config", "/no/such/scenario.toml"]).status.code(), Some(1));
    assert_eq!(slokit(dir.path(), &["bench-ledger", "--peers", "9"]).status.code(), Some(1));
    assert_eq!(slokit(dir.path(), &["no-such-command"]).status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 2\nname = \"x\"\n").unwrap();
    assert_eq!(slokit(dir.path(), &["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}
