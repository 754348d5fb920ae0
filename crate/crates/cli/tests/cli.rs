use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn abd(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abd"))
        .env("ABD_HOME", home)
        .args(args)
        .output()
        .expect("run abd")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(home: &Path, args: &[&str]) -> String {
    let out = abd(home, args);
    assert!(
        out.status.success(),
        "abd {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout(&out)
}

fn json(home: &Path, args: &[&str]) -> Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    serde_json::from_str(&ok(home, &all)).unwrap()
}

fn scenario_home() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["scenario", "init", "--force"]);
    for who in ["Alice", "Bob"] {
        let file = dir.path().join("creds").join(format!("{who}.json"));
        ok(dir.path(), &["cred", "import", file.to_str().unwrap()]);
    }
    dir
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(abd(dir.path(), &["frobnicate"]).status.code(), Some(64));
    assert_eq!(
        abd(dir.path(), &["discover", "--issuer", "S"])
            .status
            .code(),
        Some(64)
    );
    assert_eq!(abd(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(abd(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn scenario_init_refuses_non_empty_home() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep"), "x").unwrap();
    let out = abd(dir.path(), &["scenario", "init"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DataDirNotEmpty"));
    let table = ok(dir.path(), &["scenario", "init", "--force"]);
    assert_eq!(table.lines().count(), 8);
    let policy = std::fs::read_to_string(dir.path().join("policy.json")).unwrap();
    let policy: Value = serde_json::from_str(&policy).unwrap();
    assert_eq!(policy, serde_json::json!({"dco-portal": ["user"]}));
}

#[test]
fn discover_exit_codes_and_trace() {
    let home = scenario_home();
    let h = home.path();
    let out = ok(
        h,
        &[
            "discover",
            "--issuer",
            "S",
            "--attr",
            "user",
            "--subject",
            "Bob",
        ],
    );
    assert!(out.contains("1. resolve S.user -> WADA.nado.dco"));
    assert!(out.contains("credential C2.controller <- Bob"));

    let v = json(
        h,
        &[
            "discover",
            "--issuer",
            "S",
            "--attr",
            "user",
            "--subject",
            "Alice",
        ],
    );
    assert_eq!(v["found"], true);
    assert_eq!(v["resolves"], 3);

    ok(h, &["identity", "create", "Eve"]);
    let out = abd(
        h,
        &[
            "discover",
            "--issuer",
            "S",
            "--attr",
            "user",
            "--subject",
            "Eve",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("no delegation chain found"));

    let out = abd(
        h,
        &[
            "discover",
            "--issuer",
            "Nobody",
            "--attr",
            "user",
            "--subject",
            "Bob",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn discover_with_explicit_credentials_file() {
    let home = scenario_home();
    let h = home.path();
    let alice = h.join("creds").join("Alice.json");
    let out = abd(
        h,
        &[
            "--json",
            "discover",
            "--issuer",
            "S",
            "--attr",
            "user",
            "--subject",
            "Bob",
            "--creds",
            alice.to_str().unwrap(),
        ],
    );
    // Alice's credential names Alice, so it cannot help Bob
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["found"], false);
}

#[test]
fn trail_limit_is_an_error() {
    let home = scenario_home();
    let out = abd(
        home.path(),
        &[
            "discover",
            "--issuer",
            "S",
            "--attr",
            "user",
            "--subject",
            "Bob",
            "--max-trail-len",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_trail_len"));
}

#[test]
fn delegate_add_publish_and_remove() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path();
    for who in ["A", "B", "Carol"] {
        ok(h, &["identity", "create", who]);
    }
    let ids = json(h, &["identity", "ls"]);
    assert_eq!(ids.as_array().unwrap().len(), 3);

    ok(
        h,
        &[
            "delegate", "add", "--issuer", "A", "--attr", "member", "--expr", "B.staff",
        ],
    );
    ok(
        h,
        &[
            "delegate",
            "add",
            "--issuer",
            "B",
            "--attr",
            "staff",
            "--expr",
            "Carol",
            "--ttl",
            "2h",
            "--relative",
        ],
    );
    let list = json(h, &["delegate", "ls"]);
    assert_eq!(list.as_array().unwrap().len(), 2);
    let resolved = json(h, &["resolve", "--ns", "A", "--label", "member"]);
    assert_eq!(resolved[0]["text"], "B.staff");

    ok(
        h,
        &[
            "discover",
            "--issuer",
            "A",
            "--attr",
            "member",
            "--subject",
            "Carol",
        ],
    );

    ok(
        h,
        &[
            "delegate", "rm", "--issuer", "B", "--attr", "staff", "--expr", "Carol",
        ],
    );
    let out = abd(h, &["resolve", "--ns", "B", "--label", "staff"]);
    assert_eq!(out.status.code(), Some(1));
    let out = abd(
        h,
        &[
            "discover",
            "--issuer",
            "A",
            "--attr",
            "member",
            "--subject",
            "Carol",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn delegate_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path();
    ok(h, &["identity", "create", "A"]);
    let bad = abd(
        h,
        &[
            "delegate",
            "add",
            "--issuer",
            "A",
            "--attr",
            "x",
            "--expr",
            "Ghost.role",
        ],
    );
    assert_eq!(bad.status.code(), Some(2));
    let bad = abd(
        h,
        &[
            "delegate",
            "add",
            "--issuer",
            "A",
            "--attr",
            "Not Valid",
            "--expr",
            "A",
        ],
    );
    assert_eq!(bad.status.code(), Some(2));
    let dup = abd(h, &["identity", "create", "A"]);
    assert_eq!(dup.status.code(), Some(2));
}

#[test]
fn seeded_identities_are_reproducible() {
    let seed = "11".repeat(32);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ka = json(a.path(), &["identity", "create", "X", "--seed", &seed]);
    let kb = json(b.path(), &["identity", "create", "Y", "--seed", &seed]);
    assert_eq!(ka["key"], kb["key"]);
    assert_eq!(
        abd(a.path(), &["identity", "create", "Z", "--seed", "abc"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn credentials_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path();
    ok(h, &["identity", "create", "Org"]);
    ok(h, &["identity", "create", "Pat"]);
    let cred = ok(
        h,
        &[
            "cred",
            "issue",
            "--issuer",
            "Org",
            "--subject",
            "Pat",
            "--attr",
            "badge",
            "--ttl",
            "1d",
        ],
    );
    let file = h.join("pat.json");
    std::fs::write(&file, &cred).unwrap();
    ok(h, &["cred", "import", file.to_str().unwrap()]);
    let listed = json(h, &["cred", "ls", "--identity", "Pat"]);
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert_eq!(listed[0]["attribute"], "badge");

    // a tampered credential is refused
    let mut v: Value = serde_json::from_str(&cred).unwrap();
    v["attribute"] = "admin".into();
    std::fs::write(&file, v.to_string()).unwrap();
    assert_eq!(
        abd(h, &["cred", "import", file.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn request_against_missing_server_is_an_error() {
    let home = scenario_home();
    let out = abd(
        home.path(),
        &[
            "request",
            "--endpoint",
            "http://127.0.0.1:9",
            "--resource",
            "dco-portal",
            "--identity",
            "Bob",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sim_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(
        &cfg,
        "[dht]\nnode_count = 32\nreplication_factor = 3\n\n[workload]\nrounds = 2\nsubjects = [\"Bob\"]\nfail_per_round = 2\n",
    )
    .unwrap();
    let out = ok(dir.path(), &["sim", "--config", cfg.to_str().unwrap()]);
    let lines: Vec<Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2]["summary"]["lookups"].as_u64().unwrap() > 0);

    std::fs::write(&cfg, "[dht]\nreplication_factor = 0\n").unwrap();
    assert_eq!(
        abd(dir.path(), &["sim", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(&cfg, "[dht]\nbogus = 1\n").unwrap();
    assert_eq!(
        abd(dir.path(), &["sim", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
