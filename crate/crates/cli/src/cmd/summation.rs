use std::collections::BTreeSet;
use std::path::Path;

use emissions_audit::commitment::{Commitment, Opening, MAX_EMISSIONS};
use emissions_audit::group::{scalar_from_hex, scalar_to_hex, GroupDescriptor, PrimeGroup};
use emissions_audit::measurement::{CycleId, LabeledReport};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult, ErrorClass};
use crate::io::{self, with_group, Inputs};
use crate::Outcome;

/// Public half of a report: what a firm broadcasts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitmentFile {
    pub version: u32,
    pub group: GroupDescriptor,
    pub firm_id: String,
    pub cycle: CycleId,
    pub c: String,
}

impl CommitmentFile {
    pub fn from_report<G: PrimeGroup>(r: &LabeledReport<G>) -> Self {
        CommitmentFile {
            version: 1,
            group: G::descriptor(),
            firm_id: r.firm_id.clone(),
            cycle: r.cycle.clone(),
            c: r.report.commitment.to_hex(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("commitment file serializes")
    }
}

/// The country's published totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SumFile {
    pub version: u32,
    pub group: GroupDescriptor,
    pub cycle: CycleId,
    pub firms: Vec<String>,
    pub m: String,
    pub r: String,
    /// `m` as an integer, when below `2^64`.
    pub total: Option<u64>,
    pub inputs_sha256: String,
}

fn reject(command: &str, culprit: &str, reason: &str, inputs: &Inputs) -> CliResult<Outcome> {
    Ok(Outcome {
        summary: json!({
            "command": command,
            "verdict": "REJECT",
            "culprit": culprit,
            "reason": reason,
            "inputs_sha256": inputs.digest(),
        }),
        rejected: true,
    })
}

pub fn aggregate(pp: &Path, reports: &[std::path::PathBuf], out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("aggregate");
    let pp_text = inputs.read(pp)?;
    let texts = reports.iter().map(|p| inputs.read(p)).collect::<CliResult<Vec<_>>>()?;
    let kind = io::params_group(&pp_text)?;
    with_group!(kind, G => aggregate_in::<G>(&pp_text, &texts, out, &inputs))
}

fn aggregate_in<G: PrimeGroup>(pp_text: &str, texts: &[String], out: &Path, inputs: &Inputs) -> CliResult<Outcome> {
    let pp = io::load_params::<G>(pp_text)?;
    let reports = texts
        .iter()
        .map(|t| LabeledReport::<G>::from_json(t))
        .collect::<Result<Vec<_>, _>>()?;
    let cycle = common_cycle(reports.iter().map(|r| (&r.firm_id, &r.cycle)))?;
    for r in &reports {
        if !r.report.self_verifies(&pp) {
            return reject("aggregate", &format!("firm:{}", r.firm_id), "opening_mismatch", inputs);
        }
        if !G::scalar_to_u64(&r.report.emissions()).is_some_and(|m| m < MAX_EMISSIONS) {
            return reject("aggregate", &format!("firm:{}", r.firm_id), "range_exceeded", inputs);
        }
    }
    let total: Opening<G> = reports.iter().map(|r| r.report.opening).sum();
    let file = SumFile {
        version: 1,
        group: G::descriptor(),
        cycle,
        firms: reports.iter().map(|r| r.firm_id.clone()).collect(),
        m: scalar_to_hex::<G>(&total.m),
        r: scalar_to_hex::<G>(&total.r),
        total: G::scalar_to_u64(&total.m),
        inputs_sha256: inputs.digest(),
    };
    io::write(out, &serde_json::to_string_pretty(&file).expect("sum serializes"))?;
    Outcome::ok(json!({
        "command": "aggregate",
        "firms": file.firms.len(),
        "total": file.total,
        "out": out.display().to_string(),
        "inputs_sha256": file.inputs_sha256,
    }))
}

/// All entries must share one cycle and have distinct firm ids.
fn common_cycle<'a>(items: impl Iterator<Item = (&'a String, &'a CycleId)>) -> CliResult<CycleId> {
    let mut ids = BTreeSet::new();
    let mut cycle: Option<CycleId> = None;
    for (id, c) in items {
        if !ids.insert(id.clone()) {
            return Err(CliError::config(format!("firm `{id}` appears twice")));
        }
        match &cycle {
            None => cycle = Some(c.clone()),
            Some(prev) if prev != c => {
                return Err(CliError::config(format!("mixed cycles {prev} and {c}")));
            }
            _ => {}
        }
    }
    cycle.ok_or_else(|| CliError::config("no reports given"))
}

pub fn verify_sum(pp: &Path, commitments: &[std::path::PathBuf], sum: &Path, out: Option<&Path>) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("verify-sum");
    let pp_text = inputs.read(pp)?;
    let texts = commitments
        .iter()
        .map(|p| inputs.read(p))
        .collect::<CliResult<Vec<_>>>()?;
    let sum_text = inputs.read(sum)?;
    let kind = io::params_group(&pp_text)?;
    let outcome = with_group!(kind, G => verify_in::<G>(&pp_text, &texts, &sum_text, &inputs))?;
    if let Some(path) = out {
        io::write(
            path,
            &serde_json::to_string_pretty(&outcome.summary).expect("verdict serializes"),
        )?;
    }
    Ok(outcome)
}

/// One broadcast commitment, with the opening when a full report was given.
struct Entry<G: PrimeGroup> {
    firm_id: String,
    cycle: CycleId,
    c: Commitment<G>,
    opening: Option<Opening<G>>,
}

fn parse_entry<G: PrimeGroup>(text: &str) -> CliResult<Entry<G>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("r").is_some() {
        let r = LabeledReport::<G>::from_json(text)?;
        return Ok(Entry {
            firm_id: r.firm_id,
            cycle: r.cycle,
            c: r.report.commitment,
            opening: Some(r.report.opening),
        });
    }
    let f: CommitmentFile = serde_json::from_value(value)?;
    if f.version != 1 || f.group != G::descriptor() {
        return Err(CliError::new(
            ErrorClass::Parse,
            format!("commitment for `{}` has wrong version or group", f.firm_id),
        ));
    }
    Ok(Entry {
        firm_id: f.firm_id,
        cycle: f.cycle,
        c: Commitment::from_hex(&f.c)?,
        opening: None,
    })
}

fn verify_in<G: PrimeGroup>(pp_text: &str, texts: &[String], sum_text: &str, inputs: &Inputs) -> CliResult<Outcome> {
    let pp = io::load_params::<G>(pp_text)?;
    let entries = texts
        .iter()
        .map(|t| parse_entry::<G>(t))
        .collect::<CliResult<Vec<_>>>()?;
    let sum: SumFile = serde_json::from_str(sum_text)?;
    if sum.version != 1 || sum.group != G::descriptor() {
        return Err(CliError::new(ErrorClass::Parse, "sum file has wrong version or group"));
    }
    let m = scalar_from_hex::<G>(&sum.m)?;
    let r = scalar_from_hex::<G>(&sum.r)?;
    if !entries.is_empty() {
        let cycle = common_cycle(entries.iter().map(|e| (&e.firm_id, &e.cycle)))?;
        if cycle != sum.cycle {
            return Err(CliError::config(format!(
                "commitments are for {cycle}, sum is for {}",
                sum.cycle
            )));
        }
    }
    for e in &entries {
        if let Some(o) = e.opening {
            if !pp.verify_opening(&e.c, &o) {
                return reject("verify-sum", &format!("firm:{}", e.firm_id), "opening_mismatch", inputs);
            }
        }
    }
    let given: BTreeSet<&String> = entries.iter().map(|e| &e.firm_id).collect();
    let claimed: BTreeSet<&String> = sum.firms.iter().collect();
    if given != claimed {
        return reject("verify-sum", "country", "firm_set_mismatch", inputs);
    }
    let total: Commitment<G> = entries.iter().map(|e| e.c).sum();
    if total != pp.commit(&Opening::new(m, r)) {
        return reject("verify-sum", "country", "sum_mismatch", inputs);
    }
    Outcome::ok(json!({
        "command": "verify-sum",
        "verdict": "ACCEPT",
        "firms": entries.len(),
        "m": sum.m,
        "total": G::scalar_to_u64(&m),
        "inputs_sha256": inputs.digest(),
    }))
}
