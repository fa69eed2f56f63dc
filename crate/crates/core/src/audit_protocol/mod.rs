//! The seven-step audit session among the environment, `n` firms, the
//! country and the verifier.
//!
//! Each step is a method on [`AuditSession`]; calling one out of order is an
//! error, and any failed examination moves the session to a terminal abort
//! that names the step and the culprit. Deviating behaviour is injected
//! through the per-step action enums; the honest variant is always the
//! default.

mod transcript;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{Commitment, Opening, PublicParams, MAX_EMISSIONS};
use crate::group::{scalar_to_hex, GroupError, PrimeGroup};
use crate::measurement::{spot_check, CycleId, FirmLedger, FirmReport, MeasurementError, MeterPublicKey};
use crate::random_list::{run_pick, FaultPolicy, PickError, PickParams, PickParty, PickStrategy, RoundVerdict};

pub use transcript::{
    AbortCause, AbortReason, Channel, CodecError, Message, Payload, Role, Step, Transcript, VerdictOutcome,
    VerdictRecord, TRANSCRIPT_VERSION,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid session config: {0}")]
    ConfigInvalid(String),
    #[error("`{op}` called while session is {phase}")]
    OutOfOrder { op: &'static str, phase: String },
    #[error("verification list is sealed until step 5")]
    Sealed,
    #[error("transcript incomplete: {0}")]
    IncompleteTranscript(String),
    #[error(transparent)]
    Pick(#[from] PickError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmEntry {
    pub id: String,
    /// Required in integrated mode.
    pub meter: Option<MeterPublicKey>,
}

impl FirmEntry {
    pub fn new(id: impl Into<String>) -> Self {
        FirmEntry {
            id: id.into(),
            meter: None,
        }
    }

    pub fn with_meter(id: impl Into<String>, meter: MeterPublicKey) -> Self {
        FirmEntry {
            id: id.into(),
            meter: Some(meter),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Firm totals come straight from the environment's inputs.
    #[default]
    Abstract,
    /// Firm totals are aggregated from signed ledgers, and picked firms hand
    /// their ledger to the verifier for a full spot check.
    Integrated,
}

#[derive(Debug, Clone)]
pub enum SelectionMode<G: PrimeGroup> {
    /// The environment samples the list at setup and reveals it at step 5.
    Environment,
    /// Country and verifier run the commit-reveal pick at step 5.
    JointPick { params: PickParams<G>, policy: FaultPolicy },
}

#[derive(Debug, Clone)]
pub struct SessionConfig<G: PrimeGroup> {
    pub pp: PublicParams<G>,
    pub roster: Vec<FirmEntry>,
    pub k: usize,
    pub cycle: CycleId,
    pub data_mode: DataMode,
    pub selection: SelectionMode<G>,
}

impl<G: PrimeGroup> SessionConfig<G> {
    /// Abstract-mode config with environment selection and firms `F1..Fn`.
    pub fn simple(pp: PublicParams<G>, n: usize, k: usize) -> Self {
        SessionConfig {
            pp,
            roster: (1..=n).map(|i| FirmEntry::new(format!("F{i}"))).collect(),
            k,
            cycle: CycleId::year(2025),
            data_mode: DataMode::Abstract,
            selection: SelectionMode::Environment,
        }
    }

    pub fn n(&self) -> usize {
        self.roster.len()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::ConfigInvalid(m));
        if self.k > self.n() {
            return bad(format!("k = {} exceeds n = {}", self.k, self.n()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.roster {
            if !seen.insert(f.id.as_str()) {
                return bad(format!("duplicate firm id `{}`", f.id));
            }
            if self.data_mode == DataMode::Integrated && f.meter.is_none() {
                return bad(format!("firm `{}` has no meter key", f.id));
            }
        }
        Ok(())
    }
}

/// Ground truth held by the environment.
#[derive(Debug, Clone)]
pub enum EnvironmentData {
    Emissions(Vec<u64>),
    Ledgers(Vec<FirmLedger>),
}

/// How a firm behaves at step 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirmAction<G: PrimeGroup> {
    #[default]
    Honest,
    /// Honest, with caller-chosen randomness.
    HonestWithRandomness(G::Scalar),
    /// Commits to `m~` instead of its true total and opens consistently.
    Report(G::Scalar),
    /// Commits honestly but sends `r + 1` to the country.
    CorruptOpening,
    Withhold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RevealAction {
    #[default]
    Honest,
    Withhold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExamineAction {
    #[default]
    Honest,
    /// Verifies openings but accepts any value range.
    SkipRangeCheck,
    Withhold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumAction {
    #[default]
    Honest,
    /// Publishes `(m + dm, r + dr)`.
    Offset {
        dm: i64,
        dr: i64,
    },
    Withhold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifierAction {
    #[default]
    Honest,
    Withhold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    At(Step),
    Aborted(AbortCause),
    Completed,
}

impl fmt::Display for SessionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionPhase::At(s) => write!(f, "at {s}"),
            SessionPhase::Aborted(c) => write!(f, "{c}"),
            SessionPhase::Completed => f.write_str("completed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict<G: PrimeGroup> {
    Completed { accepted_m: G::Scalar },
    Aborted(AbortCause),
}

impl<G: PrimeGroup> Verdict<G> {
    pub fn abort(&self) -> Option<AbortCause> {
        match self {
            Verdict::Aborted(c) => Some(*c),
            Verdict::Completed { .. } => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Verdict::Completed { .. })
    }

    pub fn to_record(&self) -> VerdictRecord {
        match self {
            Verdict::Completed { accepted_m } => VerdictRecord {
                v: TRANSCRIPT_VERSION,
                outcome: VerdictOutcome::Completed,
                step: None,
                culprit: None,
                reason: None,
                accepted_m: Some(scalar_to_hex::<G>(accepted_m)),
            },
            Verdict::Aborted(c) => VerdictRecord {
                v: TRANSCRIPT_VERSION,
                outcome: VerdictOutcome::Aborted,
                step: Some(c.step),
                culprit: Some(c.culprit),
                reason: Some(c.reason),
                accepted_m: None,
            },
        }
    }
}

/// Maps a signed offset into the scalar field.
pub fn signed_scalar<G: PrimeGroup>(v: i64) -> G::Scalar {
    let s = G::scalar_from_u64(v.unsigned_abs());
    if v < 0 {
        -s
    } else {
        s
    }
}

#[derive(Debug, Clone)]
struct FirmState<G: PrimeGroup> {
    /// What the firm committed to, kept for its step-5 reveal.
    committed: Option<Opening<G>>,
}

/// One run of the audit protocol.
pub struct AuditSession<'c, G: PrimeGroup> {
    config: &'c SessionConfig<G>,
    phase: SessionPhase,
    transcript: Transcript<G>,
    truth: Vec<u64>,
    ledgers: Option<Vec<FirmLedger>>,
    sealed: Option<Vec<usize>>,
    firms: Vec<FirmState<G>>,
    next_firm: usize,
    country_inbox: Vec<Option<Opening<G>>>,
    published: Vec<Option<Commitment<G>>>,
    published_sum: Option<Opening<G>>,
    selection: Option<Vec<usize>>,
    verifier_inbox: BTreeMap<usize, PickedData<G>>,
    accepted: Option<G::Scalar>,
}

#[derive(Debug, Clone)]
struct PickedData<G: PrimeGroup> {
    m: Option<G::Scalar>,
    r: Option<G::Scalar>,
    ledger: Option<Vec<u8>>,
}

impl<G: PrimeGroup> Default for PickedData<G> {
    fn default() -> Self {
        PickedData {
            m: None,
            r: None,
            ledger: None,
        }
    }
}

impl<'c, G: PrimeGroup> AuditSession<'c, G> {
    /// Step 1: the environment broadcasts the parameters, hands each firm its
    /// total and (in environment-selection mode) seals a uniform `k`-subset.
    pub fn new<R: RngCore + ?Sized>(
        config: &'c SessionConfig<G>,
        data: EnvironmentData,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        let n = config.n();
        let (truth, ledgers) = match (config.data_mode, data) {
            (DataMode::Abstract, EnvironmentData::Emissions(m)) => (m, None),
            (DataMode::Integrated, EnvironmentData::Ledgers(ls)) => {
                let mut totals = Vec::with_capacity(ls.len());
                for (f, l) in config.roster.iter().zip(&ls) {
                    let pk = f.meter.as_ref().expect("validated");
                    totals.push(l.aggregate(&config.cycle, pk)?);
                }
                (totals, Some(ls))
            }
            (mode, _) => {
                return Err(ProtocolError::ConfigInvalid(format!(
                    "environment data does not match {mode:?} mode"
                )))
            }
        };
        if truth.len() != n || ledgers.as_ref().is_some_and(|l| l.len() != n) {
            return Err(ProtocolError::ConfigInvalid(format!(
                "expected data for {n} firms, got {}",
                truth.len()
            )));
        }

        let sealed = match config.selection {
            SelectionMode::Environment => {
                let mut v = index::sample(rng, n, config.k).into_vec();
                v.sort_unstable();
                Some(v)
            }
            SelectionMode::JointPick { .. } => None,
        };

        let mut transcript = Transcript::new(n);
        transcript.push(
            Step::Setup,
            Role::Environment,
            Channel::Broadcast,
            Payload::Params {
                mode: config.pp.mode(),
                h: config.pp.h(),
            },
        );
        for (i, m) in truth.iter().enumerate() {
            transcript.push(
                Step::Setup,
                Role::Environment,
                Channel::Private(Role::Firm(i)),
                Payload::Emission {
                    firm: i,
                    m: G::scalar_from_u64(*m),
                },
            );
        }

        Ok(AuditSession {
            config,
            phase: SessionPhase::At(if n == 0 { Step::Examine } else { Step::Commit }),
            transcript,
            truth,
            ledgers,
            sealed,
            firms: vec![FirmState { committed: None }; n],
            next_firm: 0,
            country_inbox: vec![None; n],
            published: vec![None; n],
            published_sum: None,
            selection: None,
            verifier_inbox: BTreeMap::new(),
            accepted: None,
        })
    }

    pub fn config(&self) -> &SessionConfig<G> {
        self.config
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn transcript(&self) -> &Transcript<G> {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript<G> {
        self.transcript
    }

    /// Environment's true firm totals.
    pub fn true_emissions(&self) -> &[u64] {
        &self.truth
    }

    pub fn true_total(&self) -> u64 {
        self.truth.iter().sum()
    }

    /// The firm whose step-2 turn is next.
    pub fn next_firm(&self) -> Option<usize> {
        (self.phase == SessionPhase::At(Step::Commit)).then_some(self.next_firm)
    }

    /// The revealed verification list, sorted by roster position.
    pub fn verification_list(&self) -> Result<&[usize], ProtocolError> {
        self.selection.as_deref().ok_or(ProtocolError::Sealed)
    }

    pub fn published_commitments(&self) -> Vec<Option<Commitment<G>>> {
        self.published.clone()
    }

    pub fn published_sum(&self) -> Option<Opening<G>> {
        self.published_sum
    }

    pub fn verdict(&self) -> Option<Verdict<G>> {
        match self.phase {
            SessionPhase::Aborted(c) => Some(Verdict::Aborted(c)),
            SessionPhase::Completed => Some(Verdict::Completed {
                accepted_m: self.accepted.expect("set on completion"),
            }),
            SessionPhase::At(_) => None,
        }
    }

    fn expect_step(&self, op: &'static str, step: Step) -> Result<(), ProtocolError> {
        if self.phase == SessionPhase::At(step) {
            Ok(())
        } else {
            Err(ProtocolError::OutOfOrder {
                op,
                phase: self.phase.to_string(),
            })
        }
    }

    fn abort(&mut self, reporter: Role, cause: AbortCause) -> Verdict<G> {
        self.transcript
            .push(cause.step, reporter, Channel::Broadcast, Payload::Abort(cause));
        self.phase = SessionPhase::Aborted(cause);
        Verdict::Aborted(cause)
    }

    fn withheld(&mut self, step: Step, culprit: Role) -> Verdict<G> {
        self.abort(
            Role::Environment,
            AbortCause {
                step,
                culprit,
                reason: AbortReason::Withheld,
            },
        )
    }

    fn advance(&mut self, from: Step) {
        self.phase = SessionPhase::At(from.next().expect("not the last step"));
    }

    /// Step 2 for the next firm in roster order: broadcast `c_i`, send the
    /// opening privately to the country.
    pub fn firm_commit_and_report<R: RngCore + ?Sized>(
        &mut self,
        firm: usize,
        action: FirmAction<G>,
        rng: &mut R,
    ) -> Result<(), ProtocolError> {
        self.expect_step("firm_commit_and_report", Step::Commit)?;
        if firm != self.next_firm {
            return Err(ProtocolError::OutOfOrder {
                op: "firm_commit_and_report",
                phase: format!("waiting for firm:{}", self.next_firm),
            });
        }
        let m = G::scalar_from_u64(self.truth[firm]);
        let opening = match action {
            FirmAction::Honest | FirmAction::CorruptOpening => Some(Opening::new(m, G::try_random_scalar(rng)?)),
            FirmAction::HonestWithRandomness(r) => Some(Opening::new(m, r)),
            FirmAction::Report(m_tilde) => Some(Opening::new(m_tilde, G::try_random_scalar(rng)?)),
            FirmAction::Withhold => None,
        };
        if let Some(opening) = opening {
            let c = self.config.pp.commit(&opening);
            let sent = match action {
                FirmAction::CorruptOpening => Opening::new(opening.m, opening.r + G::scalar_one()),
                _ => opening,
            };
            self.firms[firm].committed = Some(opening);
            self.published[firm] = Some(c);
            self.country_inbox[firm] = Some(sent);
            self.transcript.push(
                Step::Commit,
                Role::Firm(firm),
                Channel::Broadcast,
                Payload::Commitment { firm, c },
            );
            self.transcript.push(
                Step::Commit,
                Role::Firm(firm),
                Channel::Private(Role::Country),
                Payload::Opening { firm, opening: sent },
            );
        }
        self.next_firm += 1;
        if self.next_firm == self.config.n() {
            self.advance(Step::Commit);
        }
        Ok(())
    }

    /// Runs step 2 for every remaining firm.
    pub fn all_firms_commit<R: RngCore + ?Sized>(
        &mut self,
        mut action: impl FnMut(usize) -> FirmAction<G>,
        rng: &mut R,
    ) -> Result<(), ProtocolError> {
        while let Some(i) = self.next_firm() {
            self.firm_commit_and_report(i, action(i), rng)?;
        }
        Ok(())
    }

    /// Step 3: the country checks every opening against the broadcast
    /// commitment and the range rule, in roster order.
    pub fn country_examine(&mut self, action: ExamineAction) -> Result<Option<Verdict<G>>, ProtocolError> {
        self.expect_step("country_examine", Step::Examine)?;
        if action == ExamineAction::Withhold {
            return Ok(Some(self.withheld(Step::Examine, Role::Country)));
        }
        for i in 0..self.config.n() {
            let cause = |reason| AbortCause {
                step: Step::Examine,
                culprit: Role::Firm(i),
                reason,
            };
            let (Some(c), Some(o)) = (self.published[i], self.country_inbox[i]) else {
                return Ok(Some(self.abort(Role::Country, cause(AbortReason::MissingReport))));
            };
            if !self.config.pp.verify_opening(&c, &o) {
                return Ok(Some(self.abort(Role::Country, cause(AbortReason::OpeningMismatch))));
            }
            let in_range = G::scalar_to_u64(&o.m).is_some_and(|m| m < MAX_EMISSIONS);
            if !in_range && action != ExamineAction::SkipRangeCheck {
                return Ok(Some(self.abort(Role::Country, cause(AbortReason::RangeExceeded))));
            }
        }
        self.advance(Step::Examine);
        Ok(None)
    }

    /// Step 4: the country broadcasts `(m, r)`, the sums of what it received.
    pub fn country_publish_sum(&mut self, action: SumAction) -> Result<Option<Verdict<G>>, ProtocolError> {
        self.expect_step("country_publish_sum", Step::PublishSum)?;
        let honest: Opening<G> = self.country_inbox.iter().flatten().copied().sum();
        let opening = match action {
            SumAction::Honest => honest,
            SumAction::Offset { dm, dr } => {
                Opening::new(honest.m + signed_scalar::<G>(dm), honest.r + signed_scalar::<G>(dr))
            }
            SumAction::Withhold => return Ok(Some(self.withheld(Step::PublishSum, Role::Country))),
        };
        self.published_sum = Some(opening);
        self.transcript.push(
            Step::PublishSum,
            Role::Country,
            Channel::Broadcast,
            Payload::Sum { opening },
        );
        self.advance(Step::PublishSum);
        Ok(None)
    }

    fn publish_selection(&mut self, sender: Role, mut list: Vec<usize>) {
        self.transcript.push(
            Step::Reveal,
            sender,
            Channel::Broadcast,
            Payload::Selection { firms: list.clone() },
        );
        list.sort_unstable();
        self.selection = Some(list);
    }

    /// Step 5, environment selection: unseal and broadcast the list.
    pub fn reveal_sealed(&mut self) -> Result<(), ProtocolError> {
        self.expect_step("reveal_sealed", Step::Reveal)?;
        if self.selection.is_some() {
            return Err(ProtocolError::OutOfOrder {
                op: "reveal_sealed",
                phase: "list already revealed".into(),
            });
        }
        let list = self.sealed.take().ok_or_else(|| {
            ProtocolError::ConfigInvalid("session selects by joint pick, not by the environment".into())
        })?;
        self.publish_selection(Role::Environment, list);
        Ok(())
    }

    /// Step 5, joint selection: country and verifier run the commit-reveal
    /// pick over the roster on their private lanes.
    pub fn run_joint_pick<R: RngCore>(
        &mut self,
        country: &mut dyn PickStrategy<G, usize>,
        verifier: &mut dyn PickStrategy<G, usize>,
        rng: &mut R,
    ) -> Result<Option<Verdict<G>>, ProtocolError> {
        self.expect_step("run_joint_pick", Step::Reveal)?;
        let SelectionMode::JointPick { params, policy } = &self.config.selection else {
            return Err(ProtocolError::ConfigInvalid(
                "session selects by the environment, not by joint pick".into(),
            ));
        };
        if self.selection.is_some() {
            return Err(ProtocolError::OutOfOrder {
                op: "run_joint_pick",
                phase: "list already revealed".into(),
            });
        }
        let roster: Vec<usize> = (0..self.config.n()).collect();
        let outcome = run_pick(&roster, self.config.k, params, country, verifier, *policy, rng)?;
        for round in &outcome.rounds {
            let lanes = [
                (
                    Role::Country,
                    Role::Verifier,
                    round.country_commitment,
                    round.country_reveal,
                ),
                (
                    Role::Verifier,
                    Role::Country,
                    round.verifier_commitment,
                    round.verifier_reveal,
                ),
            ];
            for (from, to, c, _) in lanes {
                if let Some(c) = c {
                    let payload = Payload::PickCommit { round: round.round, c };
                    self.transcript.push(Step::Reveal, from, Channel::Private(to), payload);
                }
            }
            for (from, to, _, rv) in lanes {
                if let Some(rv) = rv {
                    let payload = Payload::PickReveal {
                        round: round.round,
                        m: rv.m,
                        r: rv.r,
                    };
                    self.transcript.push(Step::Reveal, from, Channel::Private(to), payload);
                }
            }
        }
        if outcome.aborted {
            let bad = outcome.faulted.expect("aborted implies a fault");
            let cause = AbortCause {
                step: Step::Reveal,
                culprit: bad.into(),
                reason: AbortReason::PickFault,
            };
            return Ok(Some(self.abort(bad.other().into(), cause)));
        }
        let sender = match outcome.rounds.iter().find_map(|r| match r.verdict {
            RoundVerdict::Unilateral { by, .. } => Some(by),
            _ => None,
        }) {
            Some(by) => by,
            None => PickParty::Verifier,
        };
        self.publish_selection(sender.into(), outcome.picked_index);
        Ok(None)
    }

    /// Step 5, second half: for each picked firm the environment forwards
    /// `m_i` and the firm forwards `r_i` (plus its ledger in integrated mode)
    /// to the verifier.
    pub fn forward_openings(
        &mut self,
        mut action: impl FnMut(usize) -> RevealAction,
    ) -> Result<Option<Verdict<G>>, ProtocolError> {
        self.expect_step("forward_openings", Step::Reveal)?;
        let list = self.selection.clone().ok_or(ProtocolError::Sealed)?;
        for &i in &list {
            let m = G::scalar_from_u64(self.truth[i]);
            self.transcript.push(
                Step::Reveal,
                Role::Environment,
                Channel::Private(Role::Verifier),
                Payload::Emission { firm: i, m },
            );
            let entry = self.verifier_inbox.entry(i).or_default();
            entry.m = Some(m);
            if action(i) == RevealAction::Withhold {
                continue;
            }
            if let Some(committed) = self.firms[i].committed {
                entry.r = Some(committed.r);
                self.transcript.push(
                    Step::Reveal,
                    Role::Firm(i),
                    Channel::Private(Role::Verifier),
                    Payload::Randomness {
                        firm: i,
                        r: committed.r,
                    },
                );
            }
            if let Some(ledgers) = &self.ledgers {
                let bytes = ledgers[i].to_bytes();
                entry.ledger = Some(bytes.clone());
                self.transcript.push(
                    Step::Reveal,
                    Role::Firm(i),
                    Channel::Private(Role::Verifier),
                    Payload::Ledger { firm: i, bytes },
                );
            }
        }
        self.advance(Step::Reveal);
        Ok(None)
    }

    /// Environment-selection step 5 in one call.
    pub fn reveal_and_forward(
        &mut self,
        action: impl FnMut(usize) -> RevealAction,
    ) -> Result<Option<Verdict<G>>, ProtocolError> {
        self.reveal_sealed()?;
        self.forward_openings(action)
    }

    /// Step 6: the verifier checks each picked opening, and in integrated
    /// mode the firm's ledger.
    pub fn verifier_check_picked(&mut self, action: VerifierAction) -> Result<Option<Verdict<G>>, ProtocolError> {
        self.expect_step("verifier_check_picked", Step::CheckPicked)?;
        if action == VerifierAction::Withhold {
            return Ok(Some(self.withheld(Step::CheckPicked, Role::Verifier)));
        }
        let list = self.selection.clone().expect("revealed at step 5");
        let picked = list
            .iter()
            .map(|i| (*i, self.verifier_inbox.get(i).cloned().unwrap_or_default()));
        match check_picked(self.config, &self.published, picked)? {
            Some(cause) => Ok(Some(self.abort(Role::Verifier, cause))),
            None => {
                self.advance(Step::CheckPicked);
                Ok(None)
            }
        }
    }

    /// Step 7: the verifier checks `sum c_i == commit(m, r)`.
    pub fn verifier_check_sum(&mut self, action: VerifierAction) -> Result<Verdict<G>, ProtocolError> {
        self.expect_step("verifier_check_sum", Step::CheckSum)?;
        if action == VerifierAction::Withhold {
            return Ok(self.withheld(Step::CheckSum, Role::Verifier));
        }
        let sum = self.published_sum.expect("published at step 4");
        match check_sum(&self.config.pp, &self.published, &sum) {
            Some(cause) => Ok(self.abort(Role::Verifier, cause)),
            None => {
                self.phase = SessionPhase::Completed;
                self.accepted = Some(sum.m);
                Ok(Verdict::Completed { accepted_m: sum.m })
            }
        }
    }
}

fn check_picked<G: PrimeGroup>(
    config: &SessionConfig<G>,
    published: &[Option<Commitment<G>>],
    picked: impl Iterator<Item = (usize, PickedData<G>)>,
) -> Result<Option<AbortCause>, ProtocolError> {
    for (i, data) in picked {
        let cause = |reason| AbortCause {
            step: Step::CheckPicked,
            culprit: Role::Firm(i),
            reason,
        };
        let (Some(m), Some(r)) = (data.m, data.r) else {
            return Ok(Some(cause(AbortReason::MissingRandomness)));
        };
        let c = published
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| ProtocolError::IncompleteTranscript(format!("no commitment for firm {i}")))?;
        let opening = Opening::new(m, r);
        if !config.pp.verify_opening(&c, &opening) {
            return Ok(Some(cause(AbortReason::OpeningMismatch)));
        }
        if config.data_mode == DataMode::Integrated {
            let entry = &config.roster[i];
            let Some(bytes) = data.ledger else {
                return Ok(Some(cause(AbortReason::MissingRandomness)));
            };
            let Ok(ledger) = FirmLedger::from_bytes(&entry.id, &bytes) else {
                return Ok(Some(cause(AbortReason::SpotCheckFailed)));
            };
            let meter = entry.meter.as_ref().expect("validated");
            let report = FirmReport { opening, commitment: c };
            if !spot_check(&config.pp, &report, &ledger, &config.cycle, meter).passed() {
                return Ok(Some(cause(AbortReason::SpotCheckFailed)));
            }
        }
    }
    Ok(None)
}

fn check_sum<G: PrimeGroup>(
    pp: &PublicParams<G>,
    published: &[Option<Commitment<G>>],
    sum: &Opening<G>,
) -> Option<AbortCause> {
    let total: Commitment<G> = published.iter().flatten().sum();
    (total != pp.commit(sum)).then_some(AbortCause {
        step: Step::CheckSum,
        culprit: Role::Country,
        reason: AbortReason::SumMismatch,
    })
}

/// Re-derives the verdict a fresh honest verifier reaches from the
/// verifier's view of a transcript.
///
/// Abort notices raised before step 6, or blaming the verifier itself, are
/// taken as given; steps 6 and 7 are recomputed.
pub fn replay_verifier<G: PrimeGroup>(
    config: &SessionConfig<G>,
    transcript: &Transcript<G>,
) -> Result<Verdict<G>, ProtocolError> {
    if transcript.firm_count() != config.n() {
        return Err(ProtocolError::IncompleteTranscript(format!(
            "transcript has {} firms, config has {}",
            transcript.firm_count(),
            config.n()
        )));
    }
    let view = transcript.view(Role::Verifier).expect("verifier is a participant");
    let mut published = vec![None; config.n()];
    let mut sum = None;
    let mut selection = None;
    let mut inbox: BTreeMap<usize, PickedData<G>> = BTreeMap::new();
    let firm_slot = |i: usize| {
        if i < config.n() {
            Ok(i)
        } else {
            Err(ProtocolError::IncompleteTranscript(format!("unknown firm {i}")))
        }
    };
    for msg in view {
        match &msg.payload {
            Payload::Abort(cause) if cause.step < Step::CheckPicked || cause.culprit == Role::Verifier => {
                return Ok(Verdict::Aborted(*cause));
            }
            Payload::Commitment { firm, c } => published[firm_slot(*firm)?] = Some(*c),
            Payload::Sum { opening } => sum = Some(*opening),
            Payload::Selection { firms } => {
                let mut s = firms.clone();
                s.sort_unstable();
                selection = Some(s);
            }
            Payload::Emission { firm, m } if msg.sender == Role::Environment => {
                inbox.entry(firm_slot(*firm)?).or_default().m = Some(*m);
            }
            Payload::Randomness { firm, r } if msg.sender == Role::Firm(*firm) => {
                inbox.entry(firm_slot(*firm)?).or_default().r = Some(*r);
            }
            Payload::Ledger { firm, bytes } if msg.sender == Role::Firm(*firm) => {
                inbox.entry(firm_slot(*firm)?).or_default().ledger = Some(bytes.clone());
            }
            _ => {}
        }
    }
    let selection = selection.ok_or_else(|| ProtocolError::IncompleteTranscript("no selection".into()))?;
    let picked = selection
        .iter()
        .map(|i| (*i, inbox.get(i).cloned().unwrap_or_default()));
    if let Some(cause) = check_picked(config, &published, picked)? {
        return Ok(Verdict::Aborted(cause));
    }
    let sum = sum.ok_or_else(|| ProtocolError::IncompleteTranscript("no published sum".into()))?;
    Ok(match check_sum(&config.pp, &published, &sum) {
        Some(cause) => Verdict::Aborted(cause),
        None => Verdict::Completed { accepted_m: sum.m },
    })
}

/// Per-participant behaviour for a whole session.
#[derive(Debug, Clone)]
pub struct Conduct<G: PrimeGroup> {
    pub firms: BTreeMap<usize, FirmConduct<G>>,
    pub country: CountryConduct,
    pub verifier: VerifierConduct,
}

impl<G: PrimeGroup> Default for Conduct<G> {
    fn default() -> Self {
        Conduct {
            firms: BTreeMap::new(),
            country: CountryConduct::default(),
            verifier: VerifierConduct::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FirmConduct<G: PrimeGroup> {
    pub commit: FirmAction<G>,
    pub reveal: RevealAction,
}

impl<G: PrimeGroup> Default for FirmConduct<G> {
    fn default() -> Self {
        FirmConduct {
            commit: FirmAction::Honest,
            reveal: RevealAction::Honest,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CountryConduct {
    pub examine: ExamineAction,
    pub sum: SumAction,
    pub pick: crate::random_list::PickBehavior,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifierConduct {
    pub check_picked: VerifierAction,
    pub check_sum: VerifierAction,
    pub pick: crate::random_list::PickBehavior,
}

/// Drives a session through all seven steps.
pub fn run_audit<'c, G: PrimeGroup, R: RngCore>(
    config: &'c SessionConfig<G>,
    data: EnvironmentData,
    conduct: &Conduct<G>,
    rng: &mut R,
) -> Result<(Verdict<G>, AuditSession<'c, G>), ProtocolError> {
    let mut s = AuditSession::new(config, data, rng)?;
    s.all_firms_commit(|i| conduct.firms.get(&i).map(|f| f.commit).unwrap_or_default(), rng)?;
    macro_rules! stop_on_abort {
        ($e:expr) => {
            if let Some(v) = $e? {
                return Ok((v, s));
            }
        };
    }
    stop_on_abort!(s.country_examine(conduct.country.examine));
    stop_on_abort!(s.country_publish_sum(conduct.country.sum));
    match config.selection {
        SelectionMode::Environment => s.reveal_sealed()?,
        SelectionMode::JointPick { .. } => {
            let mut c = conduct.country.pick;
            let mut v = conduct.verifier.pick;
            stop_on_abort!(s.run_joint_pick(&mut c, &mut v, rng));
        }
    }
    stop_on_abort!(s.forward_openings(|i| conduct.firms.get(&i).map(|f| f.reveal).unwrap_or_default()));
    stop_on_abort!(s.verifier_check_picked(conduct.verifier.check_picked));
    let v = s.verifier_check_sum(conduct.verifier.check_sum)?;
    Ok((v, s))
}
