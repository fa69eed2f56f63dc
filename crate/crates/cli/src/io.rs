//! File helpers shared by the subcommands.

use std::path::Path;

use emissions_audit::commitment::{ParamsEnvelope, PublicParams};
use emissions_audit::group::{GroupKind, PrimeGroup};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, ErrorClass};

/// Running SHA-256 over every input a command consumed, for provenance.
pub struct Inputs {
    hasher: Sha256,
}

impl Inputs {
    pub fn new(command: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"emissions-audit-cli/inputs/v1");
        let mut s = Inputs { hasher };
        s.note(command);
        s
    }

    pub fn note(&mut self, item: &str) {
        self.hasher.update((item.len() as u64).to_be_bytes());
        self.hasher.update(item.as_bytes());
    }

    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", path.display())))?;
        self.hasher.update((bytes.len() as u64).to_be_bytes());
        self.hasher.update(&bytes);
        String::from_utf8(bytes).map_err(|_| CliError::new(ErrorClass::Parse, format!("{}: not UTF-8", path.display())))
    }

    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

pub fn write(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", path.display())))
}

/// Seeded when `seed` is given, otherwise from OS entropy.
pub fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

pub fn parse_group(s: &str) -> CliResult<GroupKind> {
    s.parse().map_err(CliError::config)
}

/// Group named by a params file, read without committing to a group type.
pub fn params_group(text: &str) -> CliResult<GroupKind> {
    let env: ParamsEnvelope =
        serde_json::from_str(text).map_err(|e| CliError::new(ErrorClass::Parse, format!("params file: {e}")))?;
    Ok(env.group.kind)
}

pub fn load_params<G: PrimeGroup>(text: &str) -> CliResult<PublicParams<G>> {
    Ok(PublicParams::from_json(text)?)
}

/// Runs `$body` with `$g` bound to the group type named by `$kind`.
macro_rules! with_group {
    ($kind:expr, $g:ident => $body:expr) => {
        match $kind {
            emissions_audit::group::GroupKind::ProductionCurve => {
                type $g = emissions_audit::group::Secp256k1;
                $body
            }
            emissions_audit::group::GroupKind::ToyGroup => {
                type $g = emissions_audit::group::ToyGroup;
                $body
            }
        }
    };
}
pub(crate) use with_group;
