//! Joint selection of `k` firms by the country and the verifier.
//!
//! Each round both parties commit to a value in `0..l` (where `l` is the
//! current list length), exchange commitments, then exchange openings. The
//! round's index is `(m_c + m_v) mod l` and the firm at that 0-based position
//! moves from the remaining list to the picked list. A party whose opening
//! does not verify, or whose value is outside `0..l`, is faulted and loses its
//! say; by default the other party finishes the remaining picks alone with
//! fresh uniform randomness.
//!
//! Indices are 0-based throughout so that "the m-th firm" and `mod l` agree.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::commitment::{Commitment, Opening, PublicParams};
use crate::group::{scalar_to_hex, PrimeGroup};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PickError {
    #[error("{action} is not allowed in phase {phase:?}")]
    OutOfPhase { action: &'static str, phase: Phase },
    #[error("cannot pick {k} firms from a roster of {n}")]
    TooMany { k: usize, n: usize },
    #[error("list length {0} cannot be encoded injectively in this group")]
    ListTooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickParty {
    Country,
    Verifier,
}

impl PickParty {
    pub fn other(self) -> Self {
        match self {
            PickParty::Country => PickParty::Verifier,
            PickParty::Verifier => PickParty::Country,
        }
    }

    fn slot(self) -> usize {
        match self {
            PickParty::Country => 0,
            PickParty::Verifier => 1,
        }
    }
}

impl fmt::Display for PickParty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PickParty::Country => f.write_str("country"),
            PickParty::Verifier => f.write_str("verifier"),
        }
    }
}

/// Commitment bases for the two parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickParams<G: PrimeGroup> {
    /// Both parties commit under the same public parameters.
    Shared(PublicParams<G>),
    /// Each party publishes its own `H` (knowing its trapdoor) and commits
    /// under the other party's `H`, whose trapdoor it does not know.
    TwoGenerator {
        country: PublicParams<G>,
        verifier: PublicParams<G>,
    },
}

impl<G: PrimeGroup> PickParams<G> {
    /// Parameters under which `party` commits.
    pub fn base_for(&self, party: PickParty) -> PublicParams<G> {
        match self {
            PickParams::Shared(pp) => pp.public_only(),
            PickParams::TwoGenerator { country, verifier } => match party {
                PickParty::Country => verifier.public_only(),
                PickParty::Verifier => country.public_only(),
            },
        }
    }
}

/// Value `m` encoded into the message space as the scalar `m`.
pub fn encode_choice<G: PrimeGroup>(m: u64) -> G::Scalar {
    G::scalar_from_u64(m)
}

/// `(m_c + m_v) mod l`, the 0-based position of the next firm.
pub fn derive_index(m_c: u64, m_v: u64, l: u64) -> u64 {
    assert!(l > 0, "list must be non-empty");
    ((u128::from(m_c) + u128::from(m_v)) % u128::from(l)) as u64
}

/// A party's revealed value and blinding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reveal<G: PrimeGroup> {
    pub m: u64,
    pub r: G::Scalar,
}

/// Draws `m` uniformly from `0..l` and commits to it.
pub fn round_commit<G: PrimeGroup, R: RngCore + ?Sized>(
    base: &PublicParams<G>,
    l: usize,
    rng: &mut R,
) -> (Reveal<G>, Commitment<G>) {
    let m = rng.gen_range(0..l as u64);
    commit_choice(base, m, rng)
}

fn commit_choice<G: PrimeGroup, R: RngCore + ?Sized>(
    base: &PublicParams<G>,
    m: u64,
    rng: &mut R,
) -> (Reveal<G>, Commitment<G>) {
    let r = G::random_scalar(rng);
    let c = base.commit(&Opening::new(encode_choice::<G>(m), r));
    (Reveal { m, r }, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Committing,
    Revealing,
    Settled { m_c: u64, m_v: u64 },
    Faulted(PickParty),
}

/// One commit/reveal round over a list of length `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PickRound<G: PrimeGroup> {
    pub index: usize,
    pub l: usize,
    commitments: [Option<Commitment<G>>; 2],
    reveals: [Option<Reveal<G>>; 2],
    phase: Phase,
}

impl<G: PrimeGroup> PickRound<G> {
    pub fn new(index: usize, l: usize) -> Self {
        PickRound {
            index,
            l,
            commitments: [None, None],
            reveals: [None, None],
            phase: Phase::Committing,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn commitment(&self, party: PickParty) -> Option<Commitment<G>> {
        self.commitments[party.slot()]
    }

    pub fn reveal(&self, party: PickParty) -> Option<Reveal<G>> {
        self.reveals[party.slot()]
    }

    pub fn record_commitment(&mut self, party: PickParty, c: Commitment<G>) -> Result<(), PickError> {
        if self.phase != Phase::Committing || self.commitments[party.slot()].is_some() {
            return Err(PickError::OutOfPhase {
                action: "commit",
                phase: self.phase,
            });
        }
        self.commitments[party.slot()] = Some(c);
        if self.commitments.iter().all(Option::is_some) {
            self.phase = Phase::Revealing;
        }
        Ok(())
    }

    /// Stores a reveal; verification happens in [`PickRound::check`].
    pub fn record_reveal(&mut self, party: PickParty, reveal: Reveal<G>) -> Result<(), PickError> {
        if self.phase != Phase::Revealing || self.reveals[party.slot()].is_some() {
            return Err(PickError::OutOfPhase {
                action: "reveal",
                phase: self.phase,
            });
        }
        self.reveals[party.slot()] = Some(reveal);
        Ok(())
    }

    /// Verifies both reveals against their commitments and the `0..l`
    /// range. A missing reveal faults its party. Country is examined first.
    pub fn check(&mut self, params: &PickParams<G>) -> Result<Phase, PickError> {
        if self.phase != Phase::Revealing {
            return Err(PickError::OutOfPhase {
                action: "check",
                phase: self.phase,
            });
        }
        for party in [PickParty::Country, PickParty::Verifier] {
            let ok = match (self.commitments[party.slot()], self.reveals[party.slot()]) {
                (Some(c), Some(rv)) => {
                    rv.m < self.l as u64
                        && params
                            .base_for(party)
                            .verify_opening(&c, &Opening::new(encode_choice::<G>(rv.m), rv.r))
                }
                _ => false,
            };
            if !ok {
                self.phase = Phase::Faulted(party);
                return Ok(self.phase);
            }
        }
        let m_c = self.reveals[0].expect("checked").m;
        let m_v = self.reveals[1].expect("checked").m;
        self.phase = Phase::Settled { m_c, m_v };
        Ok(self.phase)
    }

    /// 0-based index selected by a settled round.
    pub fn selected_index(&self) -> Option<usize> {
        match self.phase {
            Phase::Settled { m_c, m_v } => Some(derive_index(m_c, m_v, self.l as u64) as usize),
            _ => None,
        }
    }
}

/// Canned adversarial choice rules. None of them sees the honest value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasStrategy {
    /// Always contributes 0.
    ConstantZero,
    /// Contributes the current position of a target firm (roster index), so
    /// the target would be picked if the honest value were 0.
    TargetFirm { firm: usize },
    /// Commits second and derives its value from the honest party's
    /// commitment bytes.
    CommitmentAdaptive,
}

/// Behaviour of one party in the pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickBehavior {
    #[default]
    Honest,
    /// Reveals `r + 1` in the given round (0-based), which always fails
    /// verification.
    InconsistentReveal {
        round: usize,
    },
    /// Withholds its reveal in the given round.
    WithholdReveal {
        round: usize,
    },
    Bias(BiasStrategy),
}

impl PickBehavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, PickBehavior::Honest)
    }
}

/// What a strategy can see when choosing its value.
pub struct ChoiceContext<'a, G: PrimeGroup, T> {
    pub round: usize,
    pub remaining: &'a [T],
    /// Positions (in the original roster) of the remaining firms.
    pub remaining_roster_index: &'a [usize],
    pub peer_commitment: Option<&'a Commitment<G>>,
}

/// Open strategy hook, for experiments beyond the canned behaviours.
pub trait PickStrategy<G: PrimeGroup, T> {
    fn choose(&mut self, ctx: &ChoiceContext<'_, G, T>, rng: &mut dyn RngCore) -> u64;

    /// Opening actually sent; `None` withholds it.
    fn reveal(&mut self, round: usize, honest: Reveal<G>) -> Option<Reveal<G>> {
        let _ = round;
        Some(honest)
    }

    fn is_honest(&self) -> bool {
        false
    }
}

impl<G: PrimeGroup, T> PickStrategy<G, T> for PickBehavior {
    fn choose(&mut self, ctx: &ChoiceContext<'_, G, T>, rng: &mut dyn RngCore) -> u64 {
        let l = ctx.remaining.len() as u64;
        match *self {
            PickBehavior::Bias(BiasStrategy::ConstantZero) => 0,
            PickBehavior::Bias(BiasStrategy::TargetFirm { firm }) => {
                ctx.remaining_roster_index.iter().position(|i| *i == firm).unwrap_or(0) as u64
            }
            PickBehavior::Bias(BiasStrategy::CommitmentAdaptive) => match ctx.peer_commitment {
                Some(c) => {
                    let digest = Sha256::digest(c.to_bytes());
                    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) % l
                }
                None => 0,
            },
            _ => rng.gen_range(0..l),
        }
    }

    fn reveal(&mut self, round: usize, honest: Reveal<G>) -> Option<Reveal<G>> {
        match *self {
            PickBehavior::InconsistentReveal { round: bad } if bad == round => Some(Reveal {
                m: honest.m,
                r: honest.r + G::scalar_one(),
            }),
            PickBehavior::WithholdReveal { round: bad } if bad == round => None,
            _ => Some(honest),
        }
    }

    fn is_honest(&self) -> bool {
        PickBehavior::is_honest(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPolicy {
    /// The non-faulting party completes the list with fresh randomness.
    #[default]
    HonestCompletes,
    /// The pick stops at the fault; already settled picks are kept.
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundVerdict {
    Settled {
        index: usize,
    },
    Faulted(PickParty),
    /// Drawn by the surviving party alone after a fault.
    Unilateral {
        by: PickParty,
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRecord<G: PrimeGroup> {
    pub round: usize,
    pub l: usize,
    pub country_commitment: Option<Commitment<G>>,
    pub verifier_commitment: Option<Commitment<G>>,
    pub country_reveal: Option<Reveal<G>>,
    pub verifier_reveal: Option<Reveal<G>>,
    pub verdict: RoundVerdict,
}

impl<G: PrimeGroup> RoundRecord<G> {
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.round as u64).to_be_bytes());
        out.extend_from_slice(&(self.l as u64).to_be_bytes());
        for c in [self.country_commitment, self.verifier_commitment] {
            match c {
                Some(c) => {
                    out.push(1);
                    out.extend(c.to_bytes());
                }
                None => out.push(0),
            }
        }
        for rv in [self.country_reveal, self.verifier_reveal] {
            match rv {
                Some(rv) => {
                    out.push(1);
                    out.extend_from_slice(&rv.m.to_be_bytes());
                    out.extend(G::encode_scalar(&rv.r));
                }
                None => out.push(0),
            }
        }
        match self.verdict {
            RoundVerdict::Settled { index } => {
                out.push(0);
                out.extend_from_slice(&(index as u64).to_be_bytes());
            }
            RoundVerdict::Faulted(p) => {
                out.push(1);
                out.push(p.slot() as u8);
            }
            RoundVerdict::Unilateral { by, index } => {
                out.push(2);
                out.push(by.slot() as u8);
                out.extend_from_slice(&(index as u64).to_be_bytes());
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let reveal = |r: Option<Reveal<G>>| r.map(|r| serde_json::json!({ "m": r.m, "r": scalar_to_hex::<G>(&r.r) }));
        let verdict = match &self.verdict {
            RoundVerdict::Settled { index } => serde_json::json!({ "settled": index }),
            RoundVerdict::Faulted(p) => serde_json::json!({ "faulted": p }),
            RoundVerdict::Unilateral { by, index } => {
                serde_json::json!({ "unilateral": { "by": by, "index": index } })
            }
        };
        serde_json::json!({
            "round": self.round,
            "l": self.l,
            "c_c": self.country_commitment.map(|c| c.to_hex()),
            "c_v": self.verifier_commitment.map(|c| c.to_hex()),
            "reveal_c": reveal(self.country_reveal),
            "reveal_v": reveal(self.verifier_reveal),
            "verdict": verdict,
        })
    }
}

/// Result of a pick: the ordered list of selected firms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PickOutcome<G: PrimeGroup, T> {
    pub picked: Vec<T>,
    /// Roster positions of `picked`, same order.
    pub picked_index: Vec<usize>,
    pub faulted: Option<PickParty>,
    /// True when the pick stopped early under [`FaultPolicy::Abort`].
    pub aborted: bool,
    pub rounds: Vec<RoundRecord<G>>,
}

impl<G: PrimeGroup, T> PickOutcome<G, T> {
    /// SHA-256 over the canonical encoding of every round record.
    pub fn transcript_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"emissions-audit-kit/pick/v1");
        for r in &self.rounds {
            let bytes = r.canonical_bytes();
            h.update((bytes.len() as u64).to_be_bytes());
            h.update(bytes);
        }
        h.finalize().into()
    }
}

/// Remaining/picked bookkeeping across rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PickSession<T> {
    remaining: Vec<(usize, T)>,
    picked: Vec<(usize, T)>,
    k: usize,
}

impl<T: Clone> PickSession<T> {
    pub fn new(roster: &[T], k: usize) -> Result<Self, PickError> {
        if k > roster.len() {
            return Err(PickError::TooMany { k, n: roster.len() });
        }
        Ok(PickSession {
            remaining: roster.iter().cloned().enumerate().collect(),
            picked: Vec::new(),
            k,
        })
    }

    /// Rebuilds a session mid-way, e.g. from a state file.
    pub fn from_parts(remaining: Vec<(usize, T)>, picked: Vec<(usize, T)>, k: usize) -> Self {
        PickSession { remaining, picked, k }
    }

    pub fn remaining(&self) -> impl Iterator<Item = &T> {
        self.remaining.iter().map(|(_, t)| t)
    }

    pub fn remaining_entries(&self) -> &[(usize, T)] {
        &self.remaining
    }

    pub fn picked_entries(&self) -> &[(usize, T)] {
        &self.picked
    }

    pub fn picked(&self) -> impl Iterator<Item = &T> {
        self.picked.iter().map(|(_, t)| t)
    }

    pub fn list_len(&self) -> usize {
        self.remaining.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.picked.len() >= self.k
    }

    /// Moves the firm at `index` of the remaining list to the picked list.
    pub fn settle_round(&mut self, index: usize) {
        let entry = self.remaining.remove(index);
        self.picked.push(entry);
    }
}

/// Runs the full pick between two parties.
///
/// With exactly one non-honest party, the honest one commits first and the
/// other sees that commitment before choosing (a rushing adversary).
pub fn run_pick<G, T, R>(
    roster: &[T],
    k: usize,
    params: &PickParams<G>,
    country: &mut dyn PickStrategy<G, T>,
    verifier: &mut dyn PickStrategy<G, T>,
    policy: FaultPolicy,
    rng: &mut R,
) -> Result<PickOutcome<G, T>, PickError>
where
    G: PrimeGroup,
    T: Clone,
    R: RngCore,
{
    let q = G::order_be();
    if roster.len() > 1 && !fits_in_order(roster.len() as u64, &q) {
        return Err(PickError::ListTooLong(roster.len()));
    }
    let mut session = PickSession::new(roster, k)?;
    let mut rounds = Vec::with_capacity(k);
    let mut faulted = None;
    let mut aborted = false;
    let first = if !verifier.is_honest() || country.is_honest() {
        PickParty::Country
    } else {
        PickParty::Verifier
    };

    while !session.is_done() {
        let round_no = rounds.len();
        let l = session.list_len();
        if let Some(bad) = faulted {
            let index = rng.gen_range(0..l);
            session.settle_round(index);
            rounds.push(RoundRecord {
                round: round_no,
                l,
                country_commitment: None,
                verifier_commitment: None,
                country_reveal: None,
                verifier_reveal: None,
                verdict: RoundVerdict::Unilateral {
                    by: PickParty::other(bad),
                    index,
                },
            });
            continue;
        }

        let mut round = PickRound::<G>::new(round_no, l);
        let mut honest_openings: [Option<Reveal<G>>; 2] = [None, None];
        let (items, roster_index): (Vec<T>, Vec<usize>) =
            session.remaining.iter().map(|(i, t)| (t.clone(), *i)).unzip();
        for party in [first, first.other()] {
            let strategy: &mut dyn PickStrategy<G, T> = match party {
                PickParty::Country => &mut *country,
                PickParty::Verifier => &mut *verifier,
            };
            let peer = round.commitment(party.other());
            let ctx = ChoiceContext {
                round: round_no,
                remaining: &items,
                remaining_roster_index: &roster_index,
                peer_commitment: peer.as_ref(),
            };
            let m = strategy.choose(&ctx, rng);
            let (reveal, c) = commit_choice(&params.base_for(party), m, rng);
            honest_openings[party.slot()] = Some(reveal);
            round.record_commitment(party, c)?;
        }
        for party in [PickParty::Country, PickParty::Verifier] {
            let strategy: &mut dyn PickStrategy<G, T> = match party {
                PickParty::Country => &mut *country,
                PickParty::Verifier => &mut *verifier,
            };
            let own = honest_openings[party.slot()].expect("committed above");
            if let Some(sent) = strategy.reveal(round_no, own) {
                round.record_reveal(party, sent)?;
            }
        }
        let verdict = match round.check(params)? {
            Phase::Settled { .. } => {
                let index = round.selected_index().expect("settled");
                session.settle_round(index);
                RoundVerdict::Settled { index }
            }
            Phase::Faulted(p) => {
                faulted = Some(p);
                RoundVerdict::Faulted(p)
            }
            other => unreachable!("check returned {other:?}"),
        };
        rounds.push(RoundRecord {
            round: round_no,
            l,
            country_commitment: round.commitment(PickParty::Country),
            verifier_commitment: round.commitment(PickParty::Verifier),
            country_reveal: round.reveal(PickParty::Country),
            verifier_reveal: round.reveal(PickParty::Verifier),
            verdict,
        });
        if faulted.is_some() && policy == FaultPolicy::Abort {
            aborted = true;
            break;
        }
    }

    let (picked_index, picked) = session.picked.into_iter().unzip();
    Ok(PickOutcome {
        picked,
        picked_index,
        faulted,
        aborted,
        rounds,
    })
}

/// `l - 1 < q` so every value in `0..l` encodes to a distinct scalar.
fn fits_in_order(l: u64, q_be: &[u8]) -> bool {
    let split = q_be.len().saturating_sub(8);
    if q_be[..split].iter().any(|b| *b != 0) {
        return true;
    }
    let q = q_be[split..].iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b));
    l <= q
}
