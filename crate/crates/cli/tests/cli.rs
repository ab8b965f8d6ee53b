//! End-to-end tests of the binary: exit-code contract, stable machine
//! output, store/log side effects, and the referral serve mode.

use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_saltbio");

// Aligned to a step boundary so per-test offsets stay within one window.
const T0: u64 = 1_755_000_000; // step-aligned

struct Harness {
    dir: tempfile::TempDir,
}

impl Harness {
    fn new() -> Self {
        Harness {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &[u8]) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("SALTBIO_STORE")
            .stdin(Stdio::null())
            .output()
            .unwrap()
    }

    /// Runs with the store/log/server flags pointing into the temp dir.
    fn run_stateful(&self, args: &[&str]) -> Output {
        let mut full = vec![
            "--store",
            "store.tsv",
            "--log",
            "audit.log",
            "--server-id",
            "A",
        ];
        full.extend_from_slice(args);
        self.run(&full)
    }

    fn code_at(&self, seed: &str, t: u64) -> String {
        let out = self.run(&["salt", "--seed", seed, "--at", &t.to_string()]);
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap().trim().to_string()
    }
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

const SEED: &str = "00000000deadbeef";

fn enroll_alice(h: &Harness) {
    let sample = h.write("alice.bin", b"fingerprint-alice-ridge-pattern-001");
    let out = h.run_stateful(&[
        "enroll",
        "--user",
        "alice",
        "--sample",
        sample.to_str().unwrap(),
        "--password",
        "HELLO",
        "--eam-password",
        "BREAK-GLASS",
        "--seed",
        SEED,
        "--at",
        &T0.to_string(),
    ]);
    assert!(out.status.success(), "enroll failed: {}", stderr(&out));
}

#[test]
fn pipeline_prints_the_regression_trace() {
    let h = Harness::new();
    let out = h.run(&["pipeline", "--password", "HELLO", "--salt", "34", "--e", "40"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("ascii_value     7269767679"));
    assert!(text.contains("combined_value  247172101086"));
    assert!(text.contains("scaled_value    9886884043440"));
    assert!(text.contains("pre_code_bits   10001111110111111000001101100001101010110000"));
    assert!(text.contains(
        "coded_bits      1001011101110111110110010101010111001001101101011111110"
    ));
    assert!(text.contains("recoded_value   21317248407100158"));
    assert!(text.contains(
        "template        396905836805944271645224399496932274023849032161214317817683614934574985316827210891275733298614023181919893582"
    ));
    // Stable across runs.
    let again = h.run(&["pipeline", "--password", "HELLO", "--salt", "34", "--e", "40"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn no_arguments_is_a_usage_error() {
    let h = Harness::new();
    let out = h.run(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_reports_usage_on_stderr() {
    let h = Harness::new();
    let out = h.run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let h = Harness::new();
    let out = h.run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn keygen_prints_parameters_and_warns() {
    let h = Harness::new();
    let out = h.run(&["keygen", "--p", "11", "--q", "13", "--d", "7"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("n  143"));
    assert!(text.contains("m  120"));
    assert!(text.contains("e  103"));
    assert!(stderr(&out).contains("2048"));

    // The impossible published pair is a domain error.
    let bad = h.run(&["keygen", "--p", "11", "--q", "13", "--d", "3"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("no inverse"));
}

#[test]
fn salt_codes_are_reproducible_with_injected_time() {
    let h = Harness::new();
    assert_eq!(h.code_at("0000000000000000", 0), "000000");
    assert_eq!(h.code_at("002a", 4_242_424_242), "739967");
    // RFC 3339 form hits the same step.
    let out = h.run(&["salt", "--seed", "002a", "--at", "2104-06-09T11:50:00Z"]);
    assert!(out.status.success());
    // Window check output.
    let code = h.code_at(SEED, 6_000);
    let out = h.run(&["salt", "--seed", SEED, "--at", "6065", "--check", &code]);
    assert_eq!(stdout(&out).trim(), "accepted offset -1");
    let out = h.run(&["salt", "--seed", SEED, "--at", "6600", "--check", &code]);
    assert_eq!(stdout(&out).trim(), "rejected");
}

#[test]
fn login_outcomes_are_not_errors() {
    let h = Harness::new();
    enroll_alice(&h);
    let sample = h.path("alice.bin");
    let sample = sample.to_str().unwrap();

    // Accept with the live code.
    let t1 = T0 + 60;
    let code = h.code_at(SEED, t1);
    let out = h.run_stateful(&[
        "login", "--user", "alice", "--sample", sample, "--password", "HELLO", "--code", &code,
        "--at", &t1.to_string(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().next(), Some("Accept"));

    // A code two steps old: printed outcome, still exit 0.
    let t2 = T0 + 240;
    let stale = h.code_at(SEED, t2 - 120);
    let out = h.run_stateful(&[
        "login", "--user", "alice", "--sample", sample, "--password", "HELLO", "--code", &stale,
        "--at", &t2.to_string(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().next(), Some("RejectSalt"));

    // Unknown user.
    let t3 = T0 + 300;
    let code = h.code_at(SEED, t3);
    let out = h.run_stateful(&[
        "login", "--user", "mallory", "--sample", sample, "--password", "HELLO", "--code", &code,
        "--at", &t3.to_string(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().next(), Some("UnknownUser"));

    // One audit line per login call, plus the enrollment line.
    let log = std::fs::read_to_string(h.path("audit.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn eam_recovers_a_locked_user() {
    let h = Harness::new();
    enroll_alice(&h);
    let alice = h.path("alice.bin");
    let alice = alice.to_str().unwrap();
    let eve = h.write("eve.bin", b"totally-different-person-percival!!");
    let eve = eve.to_str().unwrap();

    // Three wrong fingers lock the record.
    for i in 1..=3u64 {
        let t = T0 + 60 * i;
        let code = h.code_at(SEED, t);
        let out = h.run_stateful(&[
            "login", "--user", "alice", "--sample", eve, "--password", "HELLO", "--code", &code,
            "--at", &t.to_string(),
        ]);
        assert_eq!(stdout(&out).lines().next(), Some("RejectBiometric"));
    }
    let t = T0 + 240;
    let code = h.code_at(SEED, t);
    let out = h.run_stateful(&[
        "login", "--user", "alice", "--sample", alice, "--password", "HELLO", "--code", &code,
        "--at", &t.to_string(),
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("LockedOut"));

    // Recovery through the emergency mode with a new reference.
    let new = h.write("alice2.bin", b"fingerprint-alice-ridge-pattern-NEW");
    let t = T0 + 300;
    let code = h.code_at(SEED, t);
    let out = h.run_stateful(&[
        "eam",
        "--user",
        "alice",
        "--eam-password",
        "BREAK-GLASS",
        "--code",
        &code,
        "--at",
        &t.to_string(),
        "--change-id",
        "CHG-1",
        "--approver",
        "it-manager",
        "--action",
        "update",
        "--index",
        "0",
        "--sample",
        new.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let t = T0 + 360;
    let code = h.code_at(SEED, t);
    let out = h.run_stateful(&[
        "login",
        "--user",
        "alice",
        "--sample",
        new.to_str().unwrap(),
        "--password",
        "HELLO",
        "--code",
        &code,
        "--at",
        &t.to_string(),
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("Accept"));
}

#[test]
fn report_evaluates_the_acceptance_formula() {
    let h = Harness::new();
    enroll_alice(&h);
    let alice = h.path("alice.bin");
    let alice = alice.to_str().unwrap();
    let eve = h.write("eve.bin", b"totally-different-person-percival!!");
    let eve = eve.to_str().unwrap();

    // 8 accepts then 2 biometric rejects, all on one UTC date.
    for i in 1..=8u64 {
        let t = T0 + 60 * i;
        let code = h.code_at(SEED, t);
        let out = h.run_stateful(&[
            "login", "--user", "alice", "--sample", alice, "--password", "HELLO", "--code",
            &code, "--at", &t.to_string(),
        ]);
        assert_eq!(stdout(&out).lines().next(), Some("Accept"));
    }
    for i in 9..=10u64 {
        let t = T0 + 60 * i;
        let code = h.code_at(SEED, t);
        let out = h.run_stateful(&[
            "login", "--user", "alice", "--sample", eve, "--password", "HELLO", "--code", &code,
            "--at", &t.to_string(),
        ]);
        assert_eq!(stdout(&out).lines().next(), Some("RejectBiometric"));
    }

    let date = chrono::DateTime::from_timestamp(T0 as i64, 0)
        .unwrap()
        .date_naive()
        .to_string();
    let report_path = h.path("eod.txt");
    let out = h.run_stateful(&[
        "report",
        "--date",
        &date,
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("accepts            8"));
    assert!(text.contains("rejects            2"));
    assert!(text.contains("total_logins       10"));
    assert!(text.contains("pct_acceptance     0.6"));
    // The consolidated block went to the output path too.
    let written = std::fs::read_to_string(&report_path).unwrap();
    assert!(written.contains("\"pct_acceptance\":0.6"));
}

#[test]
fn backup_restore_round_trip() {
    let h = Harness::new();
    enroll_alice(&h);
    let backup = h.path("backup.dat");
    let out = h.run_stateful(&[
        "backup",
        "--out",
        backup.to_str().unwrap(),
        "--at",
        &(T0 + 60).to_string(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("exported 1 record(s)"));

    // Restore into a second store and log in there.
    let out = h.run(&[
        "--store",
        "store2.tsv",
        "--log",
        "audit2.log",
        "--server-id",
        "A2",
        "restore",
        "--in",
        backup.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("imported 1 record(s)"));

    let t = T0 + 120;
    let code = h.code_at(SEED, t);
    let sample = h.path("alice.bin");
    let out = h.run(&[
        "--store",
        "store2.tsv",
        "--log",
        "audit2.log",
        "--server-id",
        "A2",
        "login",
        "--user",
        "alice",
        "--sample",
        sample.to_str().unwrap(),
        "--password",
        "HELLO",
        "--code",
        &code,
        "--at",
        &t.to_string(),
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("Accept"));

    // An artifact cut mid-record is refused outright.
    let text = std::fs::read_to_string(&backup).unwrap();
    h.write("broken.dat", &text.as_bytes()[..text.len() / 2]);
    let out = h.run(&[
        "--store",
        "store3.tsv",
        "--log",
        "audit3.log",
        "restore",
        "--in",
        h.path("broken.dat").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dry_run_writes_nothing() {
    let h = Harness::new();
    enroll_alice(&h);
    let store_before = std::fs::read(h.path("store.tsv")).unwrap();
    let log_before = std::fs::read(h.path("audit.log")).unwrap();

    let t = T0 + 60;
    let code = h.code_at(SEED, t);
    let sample = h.path("alice.bin");
    let out = h.run_stateful(&[
        "--dry-run",
        "login",
        "--user",
        "alice",
        "--sample",
        sample.to_str().unwrap(),
        "--password",
        "HELLO",
        "--code",
        &code,
        "--at",
        &t.to_string(),
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("Accept"));
    assert_eq!(std::fs::read(h.path("store.tsv")).unwrap(), store_before);
    assert_eq!(std::fs::read(h.path("audit.log")).unwrap(), log_before);
}

#[test]
fn store_env_variable_sets_the_default_path() {
    let h = Harness::new();
    let sample = h.write("s.bin", b"sample-bytes-here");
    let out = Command::new(BIN)
        .args([
            "--log",
            "audit.log",
            "enroll",
            "--user",
            "envuser",
            "--sample",
            sample.to_str().unwrap(),
            "--password",
            "pw",
            "--eam-password",
            "em",
            "--seed",
            SEED,
            "--at",
            &T0.to_string(),
        ])
        .current_dir(h.dir.path())
        .env("SALTBIO_STORE", "env-store.tsv")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(h.path("env-store.tsv").exists());
    assert!(!h.path("saltbio.store").exists());
}

#[test]
fn metrics_reports_rates_and_eer() {
    let h = Harness::new();
    let scores = h.write(
        "scores.txt",
        b"genuine 0.05\ngenuine 0.12\ngenuine 0.22\nimpostor 0.4\nimpostor 0.55\nimpostor 0.61\n",
    );
    let out = h.run(&["metrics", "--scores", scores.to_str().unwrap(), "--tau-step", "0.25"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("tau     far     frr"));
    assert!(text.contains("det:"));
    assert!(text.contains("eer tau=0.22 value=0"));
}

#[test]
fn serve_answers_referral_logins() {
    let h = Harness::new();
    enroll_alice(&h);

    // Pick a free port by binding and releasing it first.
    let port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(BIN)
        .args([
            "--store",
            "store.tsv",
            "--log",
            "audit.log",
            "--server-id",
            "A",
            "serve",
            "--listen",
            &addr,
        ])
        .current_dir(h.dir.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();

    // Wait for the listener to come up.
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    loop {
        if std::net::TcpStream::connect(&addr).is_ok() {
            break;
        }
        assert!(std::time::Instant::now() < deadline, "server never listened");
        std::thread::sleep(std::time::Duration::from_millis(50));
    }

    let t = T0 + 60;
    let code = h.code_at(SEED, t);
    let sample = h.path("alice.bin");
    let out = h.run(&[
        "--store",
        "bstore.tsv",
        "--log",
        "baudit.log",
        "--server-id",
        "B",
        "login",
        "--user",
        "alice",
        "--sample",
        sample.to_str().unwrap(),
        "--password",
        "HELLO",
        "--code",
        &code,
        "--at",
        &t.to_string(),
        "--home",
        "A",
        "--peer",
        &format!("A={addr}"),
    ]);
    server.kill().ok();
    server.wait().ok();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().next(), Some("Accept"));

    // Serving node annotated the referral; home node audited the login.
    let b_log = std::fs::read_to_string(h.path("baudit.log")).unwrap();
    assert!(b_log.contains("\"home_server\":\"A\""));
    let a_log = std::fs::read_to_string(h.path("audit.log")).unwrap();
    assert!(a_log.lines().count() >= 2);
}

#[test]
fn config_flags_must_be_consistent_between_enroll_and_login() {
    // A different gate changes the stored-side template, so a login under
    // another gate still accepts only because both sides recompute with
    // the same configuration; under a mismatched password it rejects.
    let h = Harness::new();
    enroll_alice(&h);
    let t = T0 + 60;
    let code = h.code_at(SEED, t);
    let sample = h.path("alice.bin");
    let out = h.run_stateful(&[
        "--gate",
        "xor",
        "login",
        "--user",
        "alice",
        "--sample",
        sample.to_str().unwrap(),
        "--password",
        "HELLO",
        "--code",
        &code,
        "--at",
        &t.to_string(),
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("Accept"));
}
