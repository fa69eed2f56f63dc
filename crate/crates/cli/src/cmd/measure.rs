use std::path::Path;

use emissions_audit::group::PrimeGroup;
use emissions_audit::measurement::{
    build_report, import_csv, CycleId, FirmLedger, LabeledReport, MeterKeypair, MeterPublicKey,
};
use serde_json::json;

use super::summation::CommitmentFile;
use crate::error::{CliError, CliResult, ErrorClass};
use crate::io::{self, with_group, Inputs};
use crate::Outcome;

pub fn ingest(firm: &str, csv: &Path, meter_seed: &str, out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("ingest");
    inputs.note(firm);
    inputs.note(meter_seed);
    let seed: [u8; 32] = hex::decode(meter_seed.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::config("--meter-seed must be 32 bytes of hex"))?;
    let meter = MeterKeypair::from_seed(seed);
    let text = inputs.read(csv)?;
    let ledger = import_csv(firm, &meter, text.as_bytes())?;
    let file =
        std::fs::File::create(out).map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", out.display())))?;
    ledger.write_to(std::io::BufWriter::new(file))?;
    Outcome::ok(json!({
        "command": "ingest",
        "firm_id": firm,
        "entries": ledger.len(),
        "head": ledger.head().map(|h| hex::encode(h.0)),
        "meter_pk": meter.public().to_hex(),
        "out": out.display().to_string(),
        "inputs_sha256": inputs.digest(),
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn report(
    pp: &Path,
    ledger: &Path,
    firm: &str,
    meter_pk: &str,
    cycle: &str,
    seed: Option<u64>,
    out: &Path,
    commitment_out: Option<&Path>,
) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("report");
    let pp_text = inputs.read(pp)?;
    let ledger_text = inputs.read(ledger)?;
    inputs.note(&format!("{firm} {meter_pk} {cycle} {seed:?}"));
    let kind = io::params_group(&pp_text)?;
    let meter = MeterPublicKey::from_hex(meter_pk)?;
    let cycle: CycleId = cycle.parse()?;
    let ledger = FirmLedger::from_bytes(firm, ledger_text.as_bytes())?;
    with_group!(kind, G => write_report::<G>(&pp_text, &ledger, &meter, cycle, seed, out, commitment_out, &inputs))
}

#[allow(clippy::too_many_arguments)]
fn write_report<G: PrimeGroup>(
    pp_text: &str,
    ledger: &FirmLedger,
    meter: &MeterPublicKey,
    cycle: CycleId,
    seed: Option<u64>,
    out: &Path,
    commitment_out: Option<&Path>,
    inputs: &Inputs,
) -> CliResult<Outcome> {
    let pp = io::load_params::<G>(pp_text)?;
    let report = build_report(&pp, ledger, &cycle, meter, &mut io::rng(seed))?;
    let labeled = LabeledReport {
        firm_id: ledger.firm_id().to_string(),
        cycle,
        report,
    };
    io::write(out, &labeled.to_json())?;
    if let Some(path) = commitment_out {
        io::write(path, &CommitmentFile::from_report(&labeled).to_json())?;
    }
    Outcome::ok(json!({
        "command": "report",
        "firm_id": labeled.firm_id,
        "cycle": labeled.cycle,
        "total": G::scalar_to_u64(&report.emissions()),
        "c": report.commitment.to_hex(),
        "out": out.display().to_string(),
        "inputs_sha256": inputs.digest(),
    }))
}
