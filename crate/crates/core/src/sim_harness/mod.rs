//! Seeded multi-party simulation of the audit session with a static
//! adversary, plus the statistics the acceptance suite consumes.

mod scenario;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit_protocol::{
    run_audit, signed_scalar, Channel, Conduct, DataMode, EnvironmentData, ExamineAction, FirmAction, FirmConduct,
    Message, Payload, ProtocolError, RevealAction, Role, SelectionMode, SessionConfig, SumAction, Transcript, Verdict,
    VerifierAction,
};
use crate::group::PrimeGroup;
use crate::measurement::{FirmLedger, MeasurementError};
use crate::random_list::{BiasStrategy, PickBehavior};

pub use scenario::{
    builtin_scenario, builtin_scenario_names, EmissionsSpec, LedgerSpec, Prepared, Scenario, SelectionSpec,
};
pub use stats::{chi_square_uniform_p, StatsRow, TrialStats};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{0} is not a participant of this session")]
    UnknownParticipant(Role),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tamper {
    /// Reports `m + delta` (mod q).
    Delta(i64),
    Absolute(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Follows the protocol; its view counts as the adversary's.
    HonestButObserved,
    TamperReport(Tamper),
    /// Firm sends `r + 1` with its opening to the country.
    CorruptOpening,
    MisreportSum {
        dm: i64,
        dr: i64,
    },
    /// Country waives the range check so a colluding firm's value passes.
    Collude,
    InconsistentReveal {
        round: usize,
    },
    WithholdReveal {
        round: usize,
    },
    BiasPick {
        strategy: BiasStrategy,
    },
    /// Stops sending at the given step.
    AbortAt {
        step: u8,
    },
}

impl Behavior {
    fn fits(&self, role: Role) -> bool {
        use Behavior::*;
        match role {
            Role::Environment => false,
            Role::Firm(_) => matches!(
                self,
                HonestButObserved | TamperReport(_) | CorruptOpening | AbortAt { step: 2 | 5 }
            ),
            Role::Country => matches!(
                self,
                HonestButObserved
                    | MisreportSum { .. }
                    | Collude
                    | InconsistentReveal { .. }
                    | WithholdReveal { .. }
                    | BiasPick { .. }
                    | AbortAt { step: 3..=5 }
            ),
            Role::Verifier => matches!(
                self,
                HonestButObserved
                    | InconsistentReveal { .. }
                    | WithholdReveal { .. }
                    | BiasPick { .. }
                    | AbortAt { step: 5..=7 }
            ),
        }
    }

    fn needs_joint_pick(&self, role: Role) -> bool {
        matches!(
            self,
            Behavior::InconsistentReveal { .. } | Behavior::WithholdReveal { .. } | Behavior::BiasPick { .. }
        ) || (*self == Behavior::AbortAt { step: 5 } && !matches!(role, Role::Firm(_)))
    }
}

/// One entry of an adversary block in a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub role: Role,
    pub behavior: Behavior,
}

/// Static corruption: which participants the adversary controls and how
/// each behaves. Fixed before a session starts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Corruption>", into = "Vec<Corruption>")]
pub struct AdversarySpec {
    corrupted: BTreeMap<Role, Behavior>,
}

impl TryFrom<Vec<Corruption>> for AdversarySpec {
    type Error = HarnessError;
    fn try_from(list: Vec<Corruption>) -> Result<Self, Self::Error> {
        list.into_iter()
            .try_fold(AdversarySpec::honest(), |spec, c| spec.corrupt(c.role, c.behavior))
    }
}

impl From<AdversarySpec> for Vec<Corruption> {
    fn from(spec: AdversarySpec) -> Self {
        spec.corrupted
            .into_iter()
            .map(|(role, behavior)| Corruption { role, behavior })
            .collect()
    }
}

impl AdversarySpec {
    pub fn honest() -> Self {
        AdversarySpec::default()
    }

    /// Adds one corrupted participant.
    pub fn corrupt(mut self, role: Role, behavior: Behavior) -> Result<Self, HarnessError> {
        if role == Role::Environment {
            return Err(HarnessError::ConfigInvalid(
                "the environment cannot be corrupted".into(),
            ));
        }
        if !behavior.fits(role) {
            return Err(HarnessError::ConfigInvalid(format!(
                "behavior {behavior:?} does not apply to {role}"
            )));
        }
        if self.corrupted.insert(role, behavior).is_some() {
            return Err(HarnessError::ConfigInvalid(format!("{role} listed twice")));
        }
        Ok(self)
    }

    pub fn corrupted(&self) -> impl Iterator<Item = (Role, Behavior)> + '_ {
        self.corrupted.iter().map(|(r, b)| (*r, *b))
    }

    pub fn is_corrupted(&self, role: Role) -> bool {
        self.corrupted.contains_key(&role)
    }

    pub fn behavior(&self, role: Role) -> Option<Behavior> {
        self.corrupted.get(&role).copied()
    }

    pub fn validate_for<G: PrimeGroup>(&self, config: &SessionConfig<G>) -> Result<(), HarnessError> {
        let joint = matches!(config.selection, SelectionMode::JointPick { .. });
        for (role, behavior) in self.corrupted() {
            if let Role::Firm(i) = role {
                if i >= config.n() {
                    return Err(HarnessError::UnknownParticipant(role));
                }
            }
            if !joint && behavior.needs_joint_pick(role) {
                return Err(HarnessError::ConfigInvalid(format!(
                    "{role}: {behavior:?} needs joint-pick selection"
                )));
            }
        }
        Ok(())
    }

    /// Per-step actions for a session whose true firm totals are `truth`.
    pub fn conduct<G: PrimeGroup>(&self, truth: &[u64]) -> Conduct<G> {
        let mut conduct = Conduct::default();
        for (role, behavior) in self.corrupted() {
            match role {
                Role::Firm(i) => {
                    let m = G::scalar_from_u64(truth[i]);
                    let fc: FirmConduct<G> = match behavior {
                        Behavior::TamperReport(Tamper::Delta(d)) => FirmConduct {
                            commit: FirmAction::Report(m + signed_scalar::<G>(d)),
                            ..Default::default()
                        },
                        Behavior::TamperReport(Tamper::Absolute(v)) => FirmConduct {
                            commit: FirmAction::Report(G::scalar_from_u64(v)),
                            ..Default::default()
                        },
                        Behavior::CorruptOpening => FirmConduct {
                            commit: FirmAction::CorruptOpening,
                            ..Default::default()
                        },
                        Behavior::AbortAt { step: 2 } => FirmConduct {
                            commit: FirmAction::Withhold,
                            ..Default::default()
                        },
                        Behavior::AbortAt { step: 5 } => FirmConduct {
                            reveal: RevealAction::Withhold,
                            ..Default::default()
                        },
                        _ => FirmConduct::default(),
                    };
                    conduct.firms.insert(i, fc);
                }
                Role::Country => {
                    let c = &mut conduct.country;
                    match behavior {
                        Behavior::MisreportSum { dm, dr } => c.sum = SumAction::Offset { dm, dr },
                        Behavior::Collude => c.examine = ExamineAction::SkipRangeCheck,
                        Behavior::AbortAt { step: 3 } => c.examine = ExamineAction::Withhold,
                        Behavior::AbortAt { step: 4 } => c.sum = SumAction::Withhold,
                        other => c.pick = pick_behavior(other),
                    }
                }
                Role::Verifier => {
                    let v = &mut conduct.verifier;
                    match behavior {
                        Behavior::AbortAt { step: 6 } => v.check_picked = VerifierAction::Withhold,
                        Behavior::AbortAt { step: 7 } => v.check_sum = VerifierAction::Withhold,
                        other => v.pick = pick_behavior(other),
                    }
                }
                Role::Environment => unreachable!("rejected by corrupt()"),
            }
        }
        conduct
    }
}

fn pick_behavior(b: Behavior) -> PickBehavior {
    match b {
        Behavior::InconsistentReveal { round } => PickBehavior::InconsistentReveal { round },
        Behavior::WithholdReveal { round } => PickBehavior::WithholdReveal { round },
        Behavior::BiasPick { strategy } => PickBehavior::Bias(strategy),
        Behavior::AbortAt { step: 5 } => PickBehavior::WithholdReveal { round: 0 },
        _ => PickBehavior::Honest,
    }
}

/// Where the environment's per-firm totals come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Fixed(Vec<u64>),
    /// Fresh totals per session, uniform in `0..=max`.
    Uniform {
        max: u64,
    },
    Ledgers(Vec<FirmLedger>),
}

#[derive(Debug, Clone)]
pub struct SessionResult<G: PrimeGroup> {
    pub verdict: Verdict<G>,
    pub transcript: Transcript<G>,
    pub truth: Vec<u64>,
    /// Sorted verification list, if the session got as far as revealing it.
    pub selection: Option<Vec<usize>>,
}

impl<G: PrimeGroup> SessionResult<G> {
    pub fn true_total(&self) -> u64 {
        self.truth.iter().sum()
    }

    /// Completed, and the accepted total is the true one.
    pub fn accepted_correct_sum(&self) -> bool {
        matches!(self.verdict, Verdict::Completed { accepted_m } if accepted_m == G::scalar_from_u64(self.true_total()))
    }
}

/// One seeded session. Identical inputs give a byte-identical transcript.
pub fn run_session<G: PrimeGroup>(
    config: &SessionConfig<G>,
    data: &DataSource,
    adversary: &AdversarySpec,
    seed: u64,
) -> Result<SessionResult<G>, HarnessError> {
    adversary.validate_for(config)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let env = match data {
        DataSource::Fixed(m) => EnvironmentData::Emissions(m.clone()),
        DataSource::Uniform { max } => {
            EnvironmentData::Emissions((0..config.n()).map(|_| rng.gen_range(0..=*max)).collect())
        }
        DataSource::Ledgers(l) => EnvironmentData::Ledgers(l.clone()),
    };
    let truth = match (&env, config.data_mode) {
        (EnvironmentData::Emissions(m), DataMode::Abstract) => m.clone(),
        (EnvironmentData::Ledgers(ls), DataMode::Integrated) => {
            let mut t = Vec::with_capacity(ls.len());
            for (l, f) in ls.iter().zip(&config.roster) {
                let pk = f
                    .meter
                    .as_ref()
                    .ok_or_else(|| HarnessError::ConfigInvalid(format!("firm `{}` has no meter key", f.id)))?;
                t.push(l.aggregate(&config.cycle, pk)?);
            }
            t
        }
        _ => {
            return Err(HarnessError::ConfigInvalid(
                "data source does not match data mode".into(),
            ))
        }
    };
    if truth.len() != config.n() {
        return Err(HarnessError::ConfigInvalid(format!(
            "data for {} firms, roster has {}",
            truth.len(),
            config.n()
        )));
    }
    let conduct = adversary.conduct::<G>(&truth);
    let (verdict, session) = run_audit(config, env, &conduct, &mut rng)?;
    let selection = session.verification_list().ok().map(<[usize]>::to_vec);
    Ok(SessionResult {
        verdict,
        transcript: session.into_transcript(),
        truth,
        selection,
    })
}

/// Seed of trial `i` under master seed `seed`.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"emissions-audit-kit/trial/v1");
    h.update(seed.to_be_bytes());
    h.update(i.to_be_bytes());
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// `trials` independent sessions, run in parallel and merged.
pub fn run_trials<G: PrimeGroup>(
    config: &SessionConfig<G>,
    data: &DataSource,
    adversary: &AdversarySpec,
    trials: u64,
    seed: u64,
) -> Result<TrialStats, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::ConfigInvalid("need at least one trial".into()));
    }
    adversary.validate_for(config)?;
    config.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| run_session(config, data, adversary, trial_seed(seed, i)))
        .try_fold(
            || TrialStats::new(config.n(), config.k),
            |mut acc, res| {
                acc.record(&res?);
                Ok(acc)
            },
        )
        .try_reduce(|| TrialStats::new(config.n(), config.k), |a, b| Ok(a.merge(b)))
}

/// Messages `participant` received, in order.
pub fn view_of<G: PrimeGroup>(transcript: &Transcript<G>, participant: Role) -> Result<Vec<&Message<G>>, HarnessError> {
    transcript
        .view(participant)
        .ok_or(HarnessError::UnknownParticipant(participant))
}

/// Checks every private message against the protocol's routing table:
/// who may send which payload to whom. Returns the offending indices.
pub fn routing_violations<G: PrimeGroup>(transcript: &Transcript<G>) -> Vec<usize> {
    transcript
        .messages()
        .iter()
        .filter(|m| !routed_correctly(transcript, m))
        .map(|m| m.index)
        .collect()
}

fn routed_correctly<G: PrimeGroup>(t: &Transcript<G>, m: &Message<G>) -> bool {
    use Payload::*;
    let firm_ok = |f: usize| t.is_participant(Role::Firm(f));
    match (&m.payload, m.sender, m.channel) {
        (Params { .. } | Selection { .. }, Role::Environment, Channel::Broadcast) => true,
        (Selection { .. }, Role::Country | Role::Verifier, Channel::Broadcast) => true,
        (Emission { firm, .. }, Role::Environment, Channel::Private(Role::Firm(to))) => firm_ok(*firm) && *firm == to,
        (Emission { firm, .. }, Role::Environment, Channel::Private(Role::Verifier)) => firm_ok(*firm),
        (Commitment { firm, .. }, Role::Firm(s), Channel::Broadcast) => *firm == s && firm_ok(s),
        (Opening { firm, .. }, Role::Firm(s), Channel::Private(Role::Country)) => *firm == s && firm_ok(s),
        (Randomness { firm, .. } | Ledger { firm, .. }, Role::Firm(s), Channel::Private(Role::Verifier)) => {
            *firm == s && firm_ok(s)
        }
        (Sum { .. }, Role::Country, Channel::Broadcast) => true,
        (PickCommit { .. } | PickReveal { .. }, Role::Country, Channel::Private(Role::Verifier)) => true,
        (PickCommit { .. } | PickReveal { .. }, Role::Verifier, Channel::Private(Role::Country)) => true,
        (Abort(_), _, Channel::Broadcast) => true,
        _ => false,
    }
}

/// `(viewer, firm)` pairs where `viewer` received private data of an
/// honest firm that was never picked. The firm itself and the country (who
/// examines every opening) are the only legitimate holders.
pub fn leakage_violations<G: PrimeGroup>(result: &SessionResult<G>, adversary: &AdversarySpec) -> Vec<(Role, usize)> {
    let picked: BTreeSet<usize> = result.selection.iter().flatten().copied().collect();
    let t = &result.transcript;
    let mut out = Vec::new();
    for viewer in t.participants() {
        for msg in t.view(viewer).expect("participant") {
            let Some(firm) = msg.payload.private_data_of() else {
                continue;
            };
            let protected = !picked.contains(&firm) && !adversary.is_corrupted(Role::Firm(firm));
            if protected && viewer != Role::Firm(firm) && viewer != Role::Country {
                out.push((viewer, firm));
            }
        }
    }
    out
}

/// Firms whose plaintext total appears in the union of corrupted views.
pub fn corrupted_plaintexts<G: PrimeGroup>(result: &SessionResult<G>, adversary: &AdversarySpec) -> BTreeSet<usize> {
    let t = &result.transcript;
    adversary
        .corrupted()
        .filter_map(|(role, _)| t.view(role))
        .flatten()
        .filter_map(|m| m.payload.plaintext_emission_of())
        .collect()
}
