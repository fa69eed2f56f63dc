//! Scenario files: session config, data source and adversary block.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audit_protocol::{DataMode, FirmEntry, Role, SelectionMode, SessionConfig};
use crate::commitment::{PublicParams, SetupMode};
use crate::group::{GroupKind, PrimeGroup};
use crate::measurement::{CycleId, FirmLedger, MeterPublicKey};
use crate::random_list::{FaultPolicy, PickParams};

use super::{AdversarySpec, Behavior, DataSource, HarnessError, Tamper};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionsSpec {
    Fixed(Vec<u64>),
    Uniform { max: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerSpec {
    pub id: String,
    /// JSONL ledger; relative paths resolve against the scenario file.
    pub path: PathBuf,
    pub meter_pk: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SelectionSpec {
    #[default]
    Environment,
    JointPick {
        #[serde(default)]
        two_generator: bool,
        #[serde(default)]
        policy: FaultPolicy,
    },
}

fn default_setup_mode() -> SetupMode {
    SetupMode::HashDerived
}

fn default_cycle() -> CycleId {
    CycleId::year(2025)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub group: GroupKind,
    #[serde(default = "default_setup_mode")]
    pub setup_mode: SetupMode,
    #[serde(default)]
    pub data_mode: DataMode,
    pub n: usize,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emissions: Option<EmissionsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledgers: Option<Vec<LedgerSpec>>,
    #[serde(default = "default_cycle")]
    pub cycle: CycleId,
    #[serde(default)]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub seed: u64,
}

/// A scenario resolved against a concrete group.
#[derive(Debug, Clone)]
pub struct Prepared<G: PrimeGroup> {
    pub name: String,
    pub config: SessionConfig<G>,
    pub data: DataSource,
    pub adversary: AdversarySpec,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Builds the session config. `base_dir` anchors relative ledger paths.
    pub fn prepare<G: PrimeGroup>(&self, base_dir: &Path) -> Result<Prepared<G>, HarnessError> {
        let bad = |m: String| HarnessError::ConfigInvalid(m);
        if self.group != G::KIND {
            return Err(bad(format!("scenario is for {}, not {}", self.group, G::KIND)));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let pp = PublicParams::<G>::setup(self.setup_mode, &mut rng).map_err(|e| bad(e.to_string()))?;
        let selection = match self.selection {
            SelectionSpec::Environment => SelectionMode::Environment,
            SelectionSpec::JointPick { two_generator, policy } => {
                let params = if two_generator {
                    let country = PublicParams::setup(SetupMode::Trusted, &mut rng).map_err(|e| bad(e.to_string()))?;
                    let verifier = PublicParams::setup(SetupMode::Trusted, &mut rng).map_err(|e| bad(e.to_string()))?;
                    PickParams::TwoGenerator { country, verifier }
                } else {
                    PickParams::Shared(pp.public_only())
                };
                SelectionMode::JointPick { params, policy }
            }
        };

        let (roster, data) = match (self.data_mode, &self.emissions, &self.ledgers) {
            (DataMode::Abstract, Some(em), None) => {
                let roster = (1..=self.n).map(|i| FirmEntry::new(format!("F{i}"))).collect();
                let data = match em {
                    EmissionsSpec::Fixed(v) => {
                        if v.len() != self.n {
                            return Err(bad(format!("{} emission values for n = {}", v.len(), self.n)));
                        }
                        DataSource::Fixed(v.clone())
                    }
                    EmissionsSpec::Uniform { max } => DataSource::Uniform { max: *max },
                };
                (roster, data)
            }
            (DataMode::Integrated, None, Some(specs)) => {
                if specs.len() != self.n {
                    return Err(bad(format!("{} ledgers for n = {}", specs.len(), self.n)));
                }
                let mut roster = Vec::with_capacity(self.n);
                let mut ledgers = Vec::with_capacity(self.n);
                for spec in specs {
                    let pk = MeterPublicKey::from_hex(&spec.meter_pk)?;
                    let path = base_dir.join(&spec.path);
                    let file = std::fs::File::open(&path).map_err(|source| HarnessError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    ledgers.push(FirmLedger::read_from(&spec.id, std::io::BufReader::new(file))?);
                    roster.push(FirmEntry::with_meter(spec.id.clone(), pk));
                }
                (roster, DataSource::Ledgers(ledgers))
            }
            (DataMode::Abstract, _, _) => return Err(bad("abstract mode needs `emissions` and no `ledgers`".into())),
            (DataMode::Integrated, _, _) => {
                return Err(bad("integrated mode needs `ledgers` and no `emissions`".into()))
            }
        };

        let config = SessionConfig {
            pp,
            roster,
            k: self.k,
            cycle: self.cycle.clone(),
            data_mode: self.data_mode,
            selection,
        };
        config.validate()?;
        self.adversary.validate_for(&config)?;
        Ok(Prepared {
            name: self.name.clone(),
            config,
            data,
            adversary: self.adversary.clone(),
            seed: self.seed,
        })
    }
}

const BUILTINS: &[&str] = &[
    "honest-n10-k3",
    "one-tamperer-n10-k3",
    "one-tamperer-n10-k10",
    "misreport-sum-n10-k3",
    "collusion-n10-k3",
    "bias-pick-n5-k2",
];

pub fn builtin_scenario_names() -> &'static [&'static str] {
    BUILTINS
}

/// Canned scenarios on secp256k1 with totals uniform in `0..=10_000`.
pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let base = |n: usize, k: usize| Scenario {
        name: name.to_string(),
        group: GroupKind::ProductionCurve,
        setup_mode: SetupMode::HashDerived,
        data_mode: DataMode::Abstract,
        n,
        k,
        emissions: Some(EmissionsSpec::Uniform { max: 10_000 }),
        ledgers: None,
        cycle: default_cycle(),
        selection: SelectionSpec::Environment,
        adversary: AdversarySpec::honest(),
        seed: 1,
    };
    let corrupt = |pairs: &[(Role, Behavior)]| {
        pairs
            .iter()
            .try_fold(AdversarySpec::honest(), |a, (r, b)| a.corrupt(*r, *b))
            .expect("builtin adversaries are well formed")
    };
    let tamperer = (Role::Firm(2), Behavior::TamperReport(Tamper::Delta(100)));
    Some(match name {
        "honest-n10-k3" => base(10, 3),
        "one-tamperer-n10-k3" => Scenario {
            adversary: corrupt(&[tamperer]),
            ..base(10, 3)
        },
        "one-tamperer-n10-k10" => Scenario {
            adversary: corrupt(&[tamperer]),
            ..base(10, 10)
        },
        "misreport-sum-n10-k3" => Scenario {
            adversary: corrupt(&[(Role::Country, Behavior::MisreportSum { dm: 1, dr: 0 })]),
            ..base(10, 3)
        },
        "collusion-n10-k3" => Scenario {
            adversary: corrupt(&[
                (Role::Firm(2), Behavior::TamperReport(Tamper::Delta(-100))),
                (Role::Country, Behavior::Collude),
            ]),
            ..base(10, 3)
        },
        "bias-pick-n5-k2" => Scenario {
            selection: SelectionSpec::JointPick {
                two_generator: false,
                policy: FaultPolicy::HonestCompletes,
            },
            adversary: corrupt(&[(
                Role::Verifier,
                Behavior::BiasPick {
                    strategy: crate::random_list::BiasStrategy::ConstantZero,
                },
            )]),
            ..base(5, 2)
        },
        _ => return None,
    })
}
