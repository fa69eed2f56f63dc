use std::path::Path;

use emissions_audit::audit_protocol::{replay_verifier, Transcript};
use emissions_audit::group::PrimeGroup;
use emissions_audit::sim_harness::{builtin_scenario, run_session, run_trials, Prepared, Scenario, StatsRow};
use serde_json::json;

use crate::error::{CliError, CliResult, ErrorClass};
use crate::io::{self, with_group, Inputs};
use crate::Outcome;

/// Built-in name first, then a file path.
fn load_scenario(inputs: &mut Inputs, name: &str, seed: Option<u64>) -> CliResult<(Scenario, std::path::PathBuf)> {
    let (mut scenario, base) = match builtin_scenario(name) {
        Some(s) => {
            inputs.note(name);
            (s, std::path::PathBuf::from("."))
        }
        None => {
            let path = Path::new(name);
            if !path.exists() {
                return Err(CliError::config(format!(
                    "`{name}` is neither a built-in scenario nor a file"
                )));
            }
            let text = inputs.read(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (Scenario::from_json(&text)?, base)
        }
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    inputs.note(&scenario.seed.to_string());
    Ok((scenario, base))
}

pub fn simulate(name: &str, trials: u64, seed: Option<u64>, out: Option<&Path>) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("simulate");
    inputs.note(&trials.to_string());
    let (scenario, base) = load_scenario(&mut inputs, name, seed)?;
    let stats = with_group!(scenario.group, G => {
        let p: Prepared<G> = scenario.prepare(&base)?;
        run_trials(&p.config, &p.data, &p.adversary, trials, p.seed)?
    });
    let row = stats.row(&scenario.name);
    let mut csv = Vec::new();
    StatsRow::write_csv(std::slice::from_ref(&row), &mut csv)
        .map_err(|e| CliError::new(ErrorClass::Io, e.to_string()))?;
    let csv = String::from_utf8(csv).expect("csv is UTF-8");
    match out {
        Some(path) => {
            io::write(path, &csv)?;
            Outcome::ok(json!({
                "command": "simulate",
                "scenario": row.scenario,
                "trials": row.trials,
                "completions": stats.completions,
                "abort_step_histogram": row.abort_step_histogram,
                "detection_rate": row.detection_rate,
                "chi_square_p": row.chi_square_p,
                "routing_violations": stats.routing_violations,
                "out": path.display().to_string(),
                "inputs_sha256": inputs.digest(),
            }))
        }
        None => {
            print!("{csv}");
            Outcome::ok(serde_json::Value::Null)
        }
    }
}

pub fn run_one(name: &str, seed: Option<u64>, transcript_out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("run");
    let (scenario, base) = load_scenario(&mut inputs, name, seed)?;
    let (record, messages) = with_group!(scenario.group, G => {
        let p: Prepared<G> = scenario.prepare(&base)?;
        let result = run_session(&p.config, &p.data, &p.adversary, p.seed)?;
        let record = result.verdict.to_record();
        io::write(transcript_out, &result.transcript.export(&record))?;
        (record, result.transcript.messages().len())
    });
    Outcome::ok(json!({
        "command": "run",
        "scenario": scenario.name,
        "verdict": record,
        "messages": messages,
        "out": transcript_out.display().to_string(),
        "inputs_sha256": inputs.digest(),
    }))
}

pub fn transcript_audit(name: &str, transcript: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("transcript-audit");
    let (scenario, base) = load_scenario(&mut inputs, name, None)?;
    let text = inputs.read(transcript)?;
    with_group!(scenario.group, G => audit_in::<G>(&scenario, &base, &text, &inputs))
}

fn audit_in<G: PrimeGroup>(scenario: &Scenario, base: &Path, text: &str, inputs: &Inputs) -> CliResult<Outcome> {
    let p: Prepared<G> = scenario.prepare(base)?;
    let (transcript, recorded) = Transcript::<G>::import(text)?;
    if transcript.firm_count() != p.config.n() {
        return Err(CliError::config(format!(
            "transcript has {} firms, scenario has {}",
            transcript.firm_count(),
            p.config.n()
        )));
    }
    let replayed = replay_verifier(&p.config, &transcript)?.to_record();
    let agrees = replayed == recorded;
    Ok(Outcome {
        summary: json!({
            "command": "transcript-audit",
            "verdict": if agrees { "ACCEPT" } else { "REJECT" },
            "recorded": recorded,
            "replayed": replayed,
            "messages": transcript.messages().len(),
            "inputs_sha256": inputs.digest(),
        }),
        rejected: !agrees,
    })
}
