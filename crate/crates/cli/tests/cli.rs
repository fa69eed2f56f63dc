use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emissions-audit"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

const METER_SEED: &str = "0707070707070707070707070707070707070707070707070707070707070707";

/// Ledger, report and commitment for one firm; returns its meter key.
fn firm(dir: &Path, id: &str, readings: &[u32]) -> String {
    let mut csv = String::from("hour,e\n");
    for (h, e) in readings.iter().enumerate() {
        csv.push_str(&format!("2025-03-01T{h:02}:00:00Z,{e}\n"));
    }
    std::fs::write(dir.join(format!("{id}.csv")), csv).unwrap();
    let ing = ok(
        dir,
        &[
            "ingest",
            "--firm",
            id,
            "--csv",
            &format!("{id}.csv"),
            "--meter-seed",
            METER_SEED,
            "--out",
            &format!("{id}.ledger"),
        ],
    );
    let pk = ing["meter_pk"].as_str().unwrap().to_string();
    ok(
        dir,
        &[
            "report",
            "--pp",
            "pp.json",
            "--ledger",
            &format!("{id}.ledger"),
            "--firm",
            id,
            "--meter-pk",
            &pk,
            "--cycle",
            "2025",
            "--seed",
            "9",
            "--out",
            &format!("{id}.rep"),
            "--commitment-out",
            &format!("{id}.com"),
        ],
    );
    pk
}

#[test]
fn setup_is_deterministic_in_hash_mode() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["setup", "--group", "prod", "--out", "a.json"]);
    let b = ok(dir.path(), &["setup", "--group", "prod", "--out", "b.json"]);
    assert_eq!(a["h"], b["h"]);
    assert_eq!(
        std::fs::read(dir.path().join("a.json")).unwrap(),
        std::fs::read(dir.path().join("b.json")).unwrap()
    );
}

#[test]
fn unknown_group_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["setup", "--group", "p-256", "--out", "pp.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error_class"], "ConfigInvalid");
    assert!(!dir.path().join("pp.json").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "aggregate",
            "--pp",
            "nope.json",
            "--reports",
            "r.json",
            "--out",
            "s.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error_class"], "Io");
}

#[test]
fn reporting_pipeline_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "prod", "--out", "pp.json"]);
    firm(d, "F1", &[10, 20, 30]);
    firm(d, "F2", &[5]);
    let agg = ok(
        d,
        &[
            "aggregate",
            "--pp",
            "pp.json",
            "--reports",
            "F1.rep",
            "F2.rep",
            "--out",
            "sum.json",
        ],
    );
    assert_eq!(agg["total"], 65);
    let v = ok(
        d,
        &[
            "verify-sum",
            "--pp",
            "pp.json",
            "--commitments",
            "F1.com",
            "F2.com",
            "--sum",
            "sum.json",
            "--out",
            "v.json",
        ],
    );
    assert_eq!(v["verdict"], "ACCEPT");
    assert_eq!(v["total"], 65);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(d.join("v.json")).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn tampered_report_is_rejected_with_culprit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "toy", "--out", "pp.json"]);
    firm(d, "F1", &[3, 4]);
    firm(d, "F2", &[1]);
    let path = d.join("F2.rep");
    let mut rep: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let m = rep["m"].as_str().unwrap().to_string();
    let bumped = format!("{:0width$x}", u64::from_str_radix(&m, 16).unwrap() + 1, width = m.len());
    rep["m"] = Value::String(bumped);
    std::fs::write(&path, rep.to_string()).unwrap();

    let out = run(
        d,
        &[
            "aggregate",
            "--pp",
            "pp.json",
            "--reports",
            "F1.rep",
            "F2.rep",
            "--out",
            "sum.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["verdict"], "REJECT");
    assert_eq!(s["culprit"], "firm:F2");
    assert_eq!(s["reason"], "opening_mismatch");
}

#[test]
fn wrong_published_sum_blames_the_country() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "prod", "--out", "pp.json"]);
    firm(d, "F1", &[7]);
    firm(d, "F2", &[8]);
    ok(
        d,
        &[
            "aggregate",
            "--pp",
            "pp.json",
            "--reports",
            "F1.rep",
            "F2.rep",
            "--out",
            "sum.json",
        ],
    );
    let path = d.join("sum.json");
    let mut sum: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    sum["m"] = Value::String(format!("{:064x}", 16));
    std::fs::write(&path, sum.to_string()).unwrap();

    let out = run(
        d,
        &[
            "verify-sum",
            "--pp",
            "pp.json",
            "--commitments",
            "F1.com",
            "F2.com",
            "--sum",
            "sum.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["culprit"], "country");
    assert_eq!(s["reason"], "sum_mismatch");

    let out = run(
        d,
        &[
            "verify-sum",
            "--pp",
            "pp.json",
            "--commitments",
            "F1.com",
            "--sum",
            "sum.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["reason"], "firm_set_mismatch");
}

#[test]
fn file_based_pick_settles_and_faults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "prod", "--out", "pp.json"]);
    std::fs::write(d.join("roster.txt"), "F1\nF2\nF3\nF4\nF5\n").unwrap();
    ok(
        d,
        &[
            "pick-init",
            "--roster",
            "roster.txt",
            "--k",
            "2",
            "--pp",
            "pp.json",
            "--out",
            "s0.json",
        ],
    );

    let mut state = "s0.json".to_string();
    let mut picked = Vec::new();
    for round in 0..2 {
        for (party, seed) in [("country", "11"), ("verifier", "12")] {
            ok(
                d,
                &[
                    "pick-commit",
                    "--state",
                    &state,
                    "--pp",
                    "pp.json",
                    "--party",
                    party,
                    "--seed",
                    seed,
                    "--out",
                    &format!("{party}.c"),
                    "--secret",
                    &format!("{party}.s"),
                ],
            );
        }
        ok(
            d,
            &[
                "pick-reveal",
                "--secret",
                "country.s",
                "--peer-commit",
                "verifier.c",
                "--out",
                "country.r",
            ],
        );
        ok(
            d,
            &[
                "pick-reveal",
                "--secret",
                "verifier.s",
                "--peer-commit",
                "country.c",
                "--out",
                "verifier.r",
            ],
        );
        let next = format!("s{}.json", round + 1);
        let s = ok(
            d,
            &[
                "pick-settle",
                "--state",
                &state,
                "--pp",
                "pp.json",
                "--commits",
                "country.c",
                "verifier.c",
                "--reveals",
                "country.r",
                "verifier.r",
                "--out",
                &next,
            ],
        );
        picked.push(s["selected"].as_str().unwrap().to_string());
        state = next;
    }
    assert_ne!(picked[0], picked[1]);
    let done: Value = serde_json::from_str(&std::fs::read_to_string(d.join("s2.json")).unwrap()).unwrap();
    assert_eq!(done["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(done["remaining"].as_array().unwrap().len(), 3);

    // A finished pick takes no more commitments.
    let out = run(
        d,
        &[
            "pick-commit",
            "--state",
            "s2.json",
            "--pp",
            "pp.json",
            "--party",
            "country",
            "--out",
            "x.c",
            "--secret",
            "x.s",
        ],
    );
    assert_eq!(out.status.code(), Some(1));

    // Reveal against the wrong round's commitment is refused.
    ok(
        d,
        &[
            "pick-commit",
            "--state",
            "s0.json",
            "--pp",
            "pp.json",
            "--party",
            "country",
            "--out",
            "c1.c",
            "--secret",
            "c1.s",
        ],
    );
    let out = run(
        d,
        &[
            "pick-reveal",
            "--secret",
            "c1.s",
            "--peer-commit",
            "verifier.c",
            "--out",
            "c1.r",
        ],
    );
    assert_eq!(out.status.code(), Some(1));

    // Round 1 files do not settle round 0.
    let out = run(
        d,
        &[
            "pick-settle",
            "--state",
            "s0.json",
            "--pp",
            "pp.json",
            "--commits",
            "country.c",
            "verifier.c",
            "--reveals",
            "country.r",
            "verifier.r",
            "--out",
            "bad.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("bad.json").exists());
}

#[test]
fn withheld_reveal_faults_the_withholder() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "toy", "--out", "pp.json"]);
    std::fs::write(d.join("roster.txt"), "A\nB\nC\n").unwrap();
    ok(
        d,
        &[
            "pick-init",
            "--roster",
            "roster.txt",
            "--k",
            "1",
            "--pp",
            "pp.json",
            "--out",
            "s0.json",
        ],
    );
    for party in ["country", "verifier"] {
        ok(
            d,
            &[
                "pick-commit",
                "--state",
                "s0.json",
                "--pp",
                "pp.json",
                "--party",
                party,
                "--out",
                &format!("{party}.c"),
                "--secret",
                &format!("{party}.s"),
            ],
        );
    }
    ok(
        d,
        &[
            "pick-reveal",
            "--secret",
            "country.s",
            "--peer-commit",
            "verifier.c",
            "--out",
            "country.r",
        ],
    );
    let out = run(
        d,
        &[
            "pick-settle",
            "--state",
            "s0.json",
            "--pp",
            "pp.json",
            "--commits",
            "country.c",
            "verifier.c",
            "--reveals",
            "country.r",
            "--out",
            "s1.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["verdict"], "REJECT");
    assert_eq!(s["culprit"], "verifier");
}

#[test]
fn duplicate_roster_entry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "toy", "--out", "pp.json"]);
    std::fs::write(d.join("roster.txt"), "A\nB\nA\n").unwrap();
    let out = run(
        d,
        &[
            "pick",
            "--roster",
            "roster.txt",
            "--k",
            "1",
            "--pp",
            "pp.json",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error_class"], "ConfigInvalid");
}

#[test]
fn one_shot_pick_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["setup", "--group", "prod", "--out", "pp.json"]);
    std::fs::write(d.join("roster.txt"), "A\nB\nC\nD\nE\nF\n").unwrap();
    let a = ok(
        d,
        &[
            "pick",
            "--roster",
            "roster.txt",
            "--k",
            "3",
            "--pp",
            "pp.json",
            "--seed",
            "4",
            "--out",
            "a.json",
        ],
    );
    let b = ok(
        d,
        &[
            "pick",
            "--roster",
            "roster.txt",
            "--k",
            "3",
            "--pp",
            "pp.json",
            "--seed",
            "4",
            "--out",
            "b.json",
        ],
    );
    assert_eq!(a["picked"], b["picked"]);
    assert_eq!(a["picked"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_one_tamperer_detection_rate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = ok(
        d,
        &[
            "simulate",
            "--scenario",
            "one-tamperer-n10-k3",
            "--trials",
            "20000",
            "--seed",
            "1",
            "--out",
            "stats.csv",
        ],
    );
    let rate = s["detection_rate"].as_f64().unwrap();
    assert!((0.289..=0.311).contains(&rate), "detection rate {rate}");
    assert_eq!(s["routing_violations"], 0);
    let csv = std::fs::read_to_string(d.join("stats.csv")).unwrap();
    assert!(csv.starts_with("scenario,trials,abort_step_histogram,detection_rate,chi_square_p\n"));
}

#[test]
fn simulate_prints_csv_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["simulate", "--scenario", "honest-n10-k3", "--trials", "20"],
    );
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "scenario,trials,abort_step_histogram,detection_rate,chi_square_p\nhonest-n10-k3,20,,0.0,\n"
    );
}

#[test]
fn scenario_file_is_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("s.json"),
        r#"{"name":"tiny","group":"toy_group","n":3,"k":3,"emissions":{"fixed":[1,2,3]},
            "adversary":[{"role":"firm:1","behavior":{"tamper_report":{"delta":1}}}],"seed":3}"#,
    )
    .unwrap();
    let s = ok(
        d,
        &["simulate", "--scenario", "s.json", "--trials", "10", "--out", "o.csv"],
    );
    assert_eq!(s["detection_rate"], 1.0);
    assert_eq!(s["abort_step_histogram"], "6:10");
}

#[test]
fn transcript_audit_agrees_and_catches_edits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for scenario in ["honest-n10-k3", "misreport-sum-n10-k3"] {
        let r = ok(
            d,
            &[
                "run",
                "--scenario",
                scenario,
                "--seed",
                "8",
                "--transcript-out",
                "t.jsonl",
            ],
        );
        let a = ok(
            d,
            &["transcript-audit", "--scenario", scenario, "--transcript", "t.jsonl"],
        );
        assert_eq!(a["verdict"], "ACCEPT");
        assert_eq!(a["replayed"], r["verdict"]);
    }

    // A forged verdict line no longer matches the replay.
    ok(
        d,
        &[
            "run",
            "--scenario",
            "misreport-sum-n10-k3",
            "--seed",
            "8",
            "--transcript-out",
            "t.jsonl",
        ],
    );
    let text = std::fs::read_to_string(d.join("t.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.pop().unwrap();
    let mut verdict: Value = serde_json::from_str(&last).unwrap();
    assert_eq!(verdict["outcome"], "aborted");
    verdict["outcome"] = Value::String("completed".into());
    verdict["step"] = Value::Null;
    verdict["culprit"] = Value::Null;
    verdict["reason"] = Value::Null;
    verdict["accepted_m"] = Value::String(format!("{:064x}", 1));
    lines.push(verdict.to_string());
    std::fs::write(d.join("forged.jsonl"), lines.join("\n") + "\n").unwrap();
    let out = run(
        d,
        &[
            "transcript-audit",
            "--scenario",
            "misreport-sum-n10-k3",
            "--transcript",
            "forged.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["verdict"], "REJECT");
    assert_eq!(s["replayed"]["step"], 7);

    // An edited message fails its digest.
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut msg: Value = serde_json::from_str(&lines[3]).unwrap();
    let p = msg["payload"].as_str().unwrap().to_string();
    let flipped = if p.ends_with('0') { "1" } else { "0" };
    msg["payload"] = Value::String(format!("{}{flipped}", &p[..p.len() - 1]));
    lines[3] = msg.to_string();
    std::fs::write(d.join("edited.jsonl"), lines.join("\n") + "\n").unwrap();
    let out = run(
        d,
        &[
            "transcript-audit",
            "--scenario",
            "misreport-sum-n10-k3",
            "--transcript",
            "edited.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}
