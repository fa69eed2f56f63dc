use std::path::Path;

use emissions_audit::commitment::{PublicParams, SetupMode};
use emissions_audit::group::{point_to_hex, PrimeGroup};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::io::{self, with_group, Inputs};
use crate::Outcome;

pub fn run(group: &str, mode: &str, seed: Option<u64>, out: &Path) -> CliResult<Outcome> {
    let kind = io::parse_group(group)?;
    let mode: SetupMode = mode.parse().map_err(CliError::config)?;
    let mut inputs = Inputs::new("setup");
    inputs.note(&format!("{kind} {mode:?} {seed:?}"));
    with_group!(kind, G => write_params::<G>(mode, seed, out, &inputs))
}

fn write_params<G: PrimeGroup>(mode: SetupMode, seed: Option<u64>, out: &Path, inputs: &Inputs) -> CliResult<Outcome> {
    let pp = PublicParams::<G>::setup(mode, &mut io::rng(seed))?;
    let text = pp.to_json();
    io::write(out, &text)?;
    Outcome::ok(json!({
        "command": "setup",
        "group": G::KIND,
        "mode": mode,
        "h": point_to_hex::<G>(&pp.h()),
        "out": out.display().to_string(),
        "inputs_sha256": inputs.digest(),
    }))
}
