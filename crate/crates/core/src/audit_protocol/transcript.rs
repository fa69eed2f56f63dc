//! Participants, channels and the message log of an audit session.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::commitment::{Commitment, Opening, SetupMode};
use crate::group::{GroupError, PrimeGroup};
use crate::random_list::PickParty;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("payload truncated")]
    Truncated,
    #[error("unknown tag {0}")]
    UnknownTag(u8),
    #[error("trailing bytes after payload")]
    Trailing,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("bad record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    /// Sets up inputs, holds the ground truth and the sealed list. Not a
    /// participant and never corruptible.
    Environment,
    /// Firm by 0-based roster position.
    Firm(usize),
    Country,
    Verifier,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Environment => f.write_str("environment"),
            Role::Firm(i) => write!(f, "firm:{i}"),
            Role::Country => f.write_str("country"),
            Role::Verifier => f.write_str("verifier"),
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "environment" => Ok(Role::Environment),
            "country" => Ok(Role::Country),
            "verifier" => Ok(Role::Verifier),
            other => other
                .strip_prefix("firm:")
                .and_then(|i| i.parse().ok())
                .map(Role::Firm)
                .ok_or_else(|| format!("unknown role `{other}`")),
        }
    }
}

impl Serialize for Role {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<PickParty> for Role {
    fn from(p: PickParty) -> Self {
        match p {
            PickParty::Country => Role::Country,
            PickParty::Verifier => Role::Verifier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Broadcast,
    Private(Role),
}

impl Channel {
    pub fn delivers_to(&self, role: Role) -> bool {
        match self {
            Channel::Broadcast => role != Role::Environment,
            Channel::Private(r) => *r == role,
        }
    }
}

/// Protocol step, 1 through 7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Step {
    /// Environment broadcasts parameters and hands each firm its data.
    Setup = 1,
    /// Firms broadcast commitments and open them privately to the country.
    Commit = 2,
    /// Country examines every opening.
    Examine = 3,
    /// Country broadcasts the totals `(m, r)`.
    PublishSum = 4,
    /// The verification list is revealed and picked openings forwarded.
    Reveal = 5,
    /// Verifier examines every picked opening.
    CheckPicked = 6,
    /// Verifier examines the homomorphic sum.
    CheckSum = 7,
}

impl Step {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn next(self) -> Option<Step> {
        Step::try_from(self as u8 + 1).ok()
    }
}

impl From<Step> for u8 {
    fn from(s: Step) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for Step {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Ok(match v {
            1 => Step::Setup,
            2 => Step::Commit,
            3 => Step::Examine,
            4 => Step::PublishSum,
            5 => Step::Reveal,
            6 => Step::CheckPicked,
            7 => Step::CheckSum,
            other => return Err(format!("no step {other}")),
        })
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    /// `c_i != commit(m_i, r_i)`.
    OpeningMismatch,
    /// A firm total at or above `2^40` reached the country.
    RangeExceeded,
    MissingReport,
    MissingRandomness,
    /// Ledger spot check found at least one failure.
    SpotCheckFailed,
    /// `sum c_i != commit(m, r)`.
    SumMismatch,
    /// Participant stopped sending.
    Withheld,
    /// A party faulted in the joint pick and the pick was configured to
    /// stop.
    PickFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbortCause {
    pub step: Step,
    pub culprit: Role,
    pub reason: AbortReason,
}

impl fmt::Display for AbortCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "aborted at {} by {}: {:?}", self.step, self.culprit, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload<G: PrimeGroup> {
    Params { mode: SetupMode, h: G::Point },
    Emission { firm: usize, m: G::Scalar },
    Commitment { firm: usize, c: Commitment<G> },
    Opening { firm: usize, opening: Opening<G> },
    Sum { opening: Opening<G> },
    Selection { firms: Vec<usize> },
    Randomness { firm: usize, r: G::Scalar },
    Ledger { firm: usize, bytes: Vec<u8> },
    PickCommit { round: usize, c: Commitment<G> },
    PickReveal { round: usize, m: u64, r: G::Scalar },
    Abort(AbortCause),
}

impl<G: PrimeGroup> Payload<G> {
    /// Firm whose private data (`m_i`, `r_i`, or ledger) this payload carries.
    pub fn private_data_of(&self) -> Option<usize> {
        match self {
            Payload::Emission { firm, .. }
            | Payload::Opening { firm, .. }
            | Payload::Randomness { firm, .. }
            | Payload::Ledger { firm, .. } => Some(*firm),
            _ => None,
        }
    }

    /// Firm whose emission value in plaintext this payload carries.
    pub fn plaintext_emission_of(&self) -> Option<usize> {
        match self {
            Payload::Emission { firm, .. } | Payload::Opening { firm, .. } | Payload::Ledger { firm, .. } => {
                Some(*firm)
            }
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            Payload::Params { mode, h } => {
                w.push(0);
                w.push(match mode {
                    SetupMode::HashDerived => 0,
                    SetupMode::Trusted => 1,
                });
                w.extend(G::encode_point(h));
            }
            Payload::Emission { firm, m } => {
                w.push(1);
                put_u32(&mut w, *firm);
                w.extend(G::encode_scalar(m));
            }
            Payload::Commitment { firm, c } => {
                w.push(2);
                put_u32(&mut w, *firm);
                w.extend(c.to_bytes());
            }
            Payload::Opening { firm, opening } => {
                w.push(3);
                put_u32(&mut w, *firm);
                w.extend(opening.to_bytes());
            }
            Payload::Sum { opening } => {
                w.push(4);
                w.extend(opening.to_bytes());
            }
            Payload::Selection { firms } => {
                w.push(5);
                put_u32(&mut w, firms.len());
                for f in firms {
                    put_u32(&mut w, *f);
                }
            }
            Payload::Randomness { firm, r } => {
                w.push(6);
                put_u32(&mut w, *firm);
                w.extend(G::encode_scalar(r));
            }
            Payload::Ledger { firm, bytes } => {
                w.push(7);
                put_u32(&mut w, *firm);
                put_u32(&mut w, bytes.len());
                w.extend_from_slice(bytes);
            }
            Payload::PickCommit { round, c } => {
                w.push(8);
                put_u32(&mut w, *round);
                w.extend(c.to_bytes());
            }
            Payload::PickReveal { round, m, r } => {
                w.push(9);
                put_u32(&mut w, *round);
                w.extend_from_slice(&m.to_be_bytes());
                w.extend(G::encode_scalar(r));
            }
            Payload::Abort(cause) => {
                w.push(10);
                w.push(cause.step.number());
                put_role(&mut w, cause.culprit);
                w.push(cause.reason as u8);
            }
        }
        w
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader { buf: bytes };
        let payload = match r.u8()? {
            0 => {
                let mode = match r.u8()? {
                    0 => SetupMode::HashDerived,
                    1 => SetupMode::Trusted,
                    t => return Err(CodecError::UnknownTag(t)),
                };
                Payload::Params {
                    mode,
                    h: G::decode_point(r.take(G::POINT_BYTES)?)?,
                }
            }
            1 => Payload::Emission {
                firm: r.u32()?,
                m: G::decode_scalar(r.take(G::SCALAR_BYTES)?)?,
            },
            2 => Payload::Commitment {
                firm: r.u32()?,
                c: Commitment::from_bytes(r.take(G::POINT_BYTES)?)?,
            },
            3 => Payload::Opening {
                firm: r.u32()?,
                opening: Opening::from_bytes(r.take(2 * G::SCALAR_BYTES)?)?,
            },
            4 => Payload::Sum {
                opening: Opening::from_bytes(r.take(2 * G::SCALAR_BYTES)?)?,
            },
            5 => {
                let len = r.u32()?;
                let firms = (0..len).map(|_| r.u32()).collect::<Result<_, _>>()?;
                Payload::Selection { firms }
            }
            6 => Payload::Randomness {
                firm: r.u32()?,
                r: G::decode_scalar(r.take(G::SCALAR_BYTES)?)?,
            },
            7 => {
                let firm = r.u32()?;
                let len = r.u32()?;
                Payload::Ledger {
                    firm,
                    bytes: r.take(len)?.to_vec(),
                }
            }
            8 => Payload::PickCommit {
                round: r.u32()?,
                c: Commitment::from_bytes(r.take(G::POINT_BYTES)?)?,
            },
            9 => Payload::PickReveal {
                round: r.u32()?,
                m: u64::from_be_bytes(r.take(8)?.try_into().expect("8 bytes")),
                r: G::decode_scalar(r.take(G::SCALAR_BYTES)?)?,
            },
            10 => {
                let step = Step::try_from(r.u8()?).map_err(CodecError::Record)?;
                let culprit = r.role()?;
                let reason = match r.u8()? {
                    0 => AbortReason::OpeningMismatch,
                    1 => AbortReason::RangeExceeded,
                    2 => AbortReason::MissingReport,
                    3 => AbortReason::MissingRandomness,
                    4 => AbortReason::SpotCheckFailed,
                    5 => AbortReason::SumMismatch,
                    6 => AbortReason::Withheld,
                    7 => AbortReason::PickFault,
                    t => return Err(CodecError::UnknownTag(t)),
                };
                Payload::Abort(AbortCause { step, culprit, reason })
            }
            t => return Err(CodecError::UnknownTag(t)),
        };
        if !r.buf.is_empty() {
            return Err(CodecError::Trailing);
        }
        Ok(payload)
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.encode()).into()
    }
}

fn put_u32(w: &mut Vec<u8>, v: usize) {
    w.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_be_bytes());
}

fn put_role(w: &mut Vec<u8>, role: Role) {
    match role {
        Role::Environment => w.push(0),
        Role::Firm(i) => {
            w.push(1);
            put_u32(w, i);
        }
        Role::Country => w.push(2),
        Role::Verifier => w.push(3),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn role(&mut self) -> Result<Role, CodecError> {
        Ok(match self.u8()? {
            0 => Role::Environment,
            1 => Role::Firm(self.u32()?),
            2 => Role::Country,
            3 => Role::Verifier,
            t => return Err(CodecError::UnknownTag(t)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message<G: PrimeGroup> {
    pub index: usize,
    pub step: Step,
    pub sender: Role,
    pub channel: Channel,
    pub payload: Payload<G>,
}

impl<G: PrimeGroup> Message<G> {
    pub fn digest(&self) -> [u8; 32] {
        self.payload.digest()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageRecord {
    v: u32,
    index: usize,
    step: Step,
    sender: Role,
    channel: Channel,
    payload: String,
    digest: String,
}

/// Final line of an exported transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub v: u32,
    pub outcome: VerdictOutcome,
    pub step: Option<Step>,
    pub culprit: Option<Role>,
    pub reason: Option<AbortReason>,
    /// Accepted country total (hex scalar) when completed.
    pub accepted_m: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictOutcome {
    Completed,
    Aborted,
}

pub const TRANSCRIPT_VERSION: u32 = 1;

/// Append-only ordered log of every message in a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript<G: PrimeGroup> {
    firms: usize,
    messages: Vec<Message<G>>,
}

impl<G: PrimeGroup> Transcript<G> {
    pub fn new(firms: usize) -> Self {
        Transcript {
            firms,
            messages: Vec::new(),
        }
    }

    pub fn firm_count(&self) -> usize {
        self.firms
    }

    pub fn push(&mut self, step: Step, sender: Role, channel: Channel, payload: Payload<G>) {
        let index = self.messages.len();
        self.messages.push(Message {
            index,
            step,
            sender,
            channel,
            payload,
        });
    }

    pub fn messages(&self) -> &[Message<G>] {
        &self.messages
    }

    pub fn is_participant(&self, role: Role) -> bool {
        match role {
            Role::Environment => false,
            Role::Firm(i) => i < self.firms,
            Role::Country | Role::Verifier => true,
        }
    }

    pub fn participants(&self) -> Vec<Role> {
        (0..self.firms)
            .map(Role::Firm)
            .chain([Role::Country, Role::Verifier])
            .collect()
    }

    /// Messages `role` received, in order. `None` for non-participants.
    pub fn view(&self, role: Role) -> Option<Vec<&Message<G>>> {
        if !self.is_participant(role) {
            return None;
        }
        Some(self.messages.iter().filter(|m| m.channel.delivers_to(role)).collect())
    }

    pub fn broadcasts(&self) -> impl Iterator<Item = &Message<G>> {
        self.messages.iter().filter(|m| m.channel == Channel::Broadcast)
    }

    /// SHA-256 over every record's index, routing and payload digest.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"emissions-audit-kit/transcript/v1");
        h.update((self.firms as u64).to_be_bytes());
        for m in &self.messages {
            h.update(self.record_line(m).as_bytes());
        }
        h.finalize().into()
    }

    fn record_line(&self, m: &Message<G>) -> String {
        let rec = MessageRecord {
            v: TRANSCRIPT_VERSION,
            index: m.index,
            step: m.step,
            sender: m.sender,
            channel: m.channel,
            payload: hex::encode(m.payload.encode()),
            digest: hex::encode(m.digest()),
        };
        serde_json::to_string(&rec).expect("record serializes")
    }

    /// JSON-lines export: a header, one record per message, then `verdict`.
    pub fn export(&self, verdict: &VerdictRecord) -> String {
        let mut out = serde_json::json!({
            "v": TRANSCRIPT_VERSION,
            "group": G::descriptor(),
            "firms": self.firms,
        })
        .to_string();
        out.push('\n');
        for m in &self.messages {
            out.push_str(&self.record_line(m));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(verdict).expect("verdict serializes"));
        out.push('\n');
        out
    }

    /// Parses an export, checking every payload digest.
    pub fn import(text: &str) -> Result<(Self, VerdictRecord), CodecError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: serde_json::Value = serde_json::from_str(lines.next().ok_or(CodecError::Truncated)?)
            .map_err(|e| CodecError::Record(e.to_string()))?;
        if header["v"] != TRANSCRIPT_VERSION {
            return Err(CodecError::Record("unsupported transcript version".into()));
        }
        let group: crate::group::GroupDescriptor =
            serde_json::from_value(header["group"].clone()).map_err(|e| CodecError::Record(e.to_string()))?;
        if group != G::descriptor() {
            return Err(CodecError::Record(format!("transcript is for group {:?}", group.kind)));
        }
        let firms = header["firms"]
            .as_u64()
            .ok_or_else(|| CodecError::Record("missing firm count".into()))? as usize;
        let mut transcript = Transcript::new(firms);
        let rest: Vec<&str> = lines.collect();
        let (verdict_line, records) = rest.split_last().ok_or(CodecError::Truncated)?;
        for line in records {
            let rec: MessageRecord = serde_json::from_str(line).map_err(|e| CodecError::Record(e.to_string()))?;
            let bytes = hex::decode(&rec.payload).map_err(|e| CodecError::Record(e.to_string()))?;
            let payload = Payload::<G>::decode(&bytes)?;
            if hex::encode(payload.digest()) != rec.digest {
                return Err(CodecError::Record(format!("digest mismatch at record {}", rec.index)));
            }
            if rec.index != transcript.messages.len() {
                return Err(CodecError::Record(format!("record {} out of order", rec.index)));
            }
            transcript.push(rec.step, rec.sender, rec.channel, payload);
        }
        let verdict: VerdictRecord =
            serde_json::from_str(verdict_line).map_err(|e| CodecError::Record(e.to_string()))?;
        Ok((transcript, verdict))
    }
}
