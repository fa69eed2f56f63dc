//! Signed hourly meter readings, a hash-chained append-only ledger per firm,
//! and aggregation of a compliance cycle into a committed firm report.
//!
//! Meters sign with Ed25519 over [`MeterReading::signing_bytes`]. The ledger
//! links every entry to its predecessor:
//!
//! ```text
//! chain_0 = SHA-256(entry_0)
//! chain_i = SHA-256(chain_{i-1} || entry_i)
//! entry_i = signing_bytes || signature
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Datelike, Timelike, Utc};
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::commitment::{Commitment, Opening, PublicParams, MAX_EMISSIONS};
use crate::group::{scalar_from_hex, scalar_to_hex, GroupDescriptor, GroupError, PrimeGroup};

const READING_DOMAIN: &[u8] = b"emissions-audit-kit/reading/v1";

/// Exclusive bound on a single hourly reading.
pub const MAX_READING: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("meter signature does not verify")]
    BadSignature,
    #[error("hour {got} is earlier than the last recorded hour {last}")]
    NonMonotonicHour { last: DateTime<Utc>, got: DateTime<Utc> },
    #[error("hour {0} is already recorded")]
    DuplicateHour(DateTime<Utc>),
    #[error("hour {0} is not aligned to a whole hour")]
    UnalignedHour(DateTime<Utc>),
    #[error("reading belongs to firm `{got}`, ledger is for `{expected}`")]
    FirmMismatch { expected: String, got: String },
    #[error("hash chain broken at entry {0}")]
    ChainBroken(usize),
    #[error("signature invalid at entry {0}")]
    SignatureInvalid(usize),
    #[error("hours out of order at entry {0}")]
    OrderViolated(usize),
    #[error("cycle aggregate {0} exceeds the 2^40 kg range")]
    RangeExceeded(u64),
    #[error("invalid cycle id `{0}` (expected a calendar year)")]
    InvalidCycle(String),
    #[error("invalid meter key: {0}")]
    InvalidKey(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Compliance cycle: one calendar year (UTC), labelled by the year.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CycleId(i32);

impl CycleId {
    pub fn year(year: i32) -> Self {
        CycleId(year)
    }

    pub fn contains(&self, hour: &DateTime<Utc>) -> bool {
        hour.year() == self.0
    }
}

impl fmt::Display for CycleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for CycleId {
    type Err = MeasurementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .parse::<i32>()
            .map(CycleId)
            .map_err(|_| MeasurementError::InvalidCycle(s.to_string()))
    }
}

impl TryFrom<String> for CycleId {
    type Error = MeasurementError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CycleId> for String {
    fn from(c: CycleId) -> String {
        c.to_string()
    }
}

pub struct MeterKeypair(SigningKey);

impl MeterKeypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        MeterKeypair(SigningKey::from_bytes(&seed))
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public(&self) -> MeterPublicKey {
        MeterPublicKey(self.0.verifying_key())
    }

    pub fn sign_reading(&self, firm_id: &str, hour: DateTime<Utc>, e: u32) -> MeterReading {
        let mut reading = MeterReading {
            firm_id: firm_id.to_string(),
            hour,
            e,
            signature: [0u8; 64],
        };
        reading.signature = self.0.sign(&reading.signing_bytes()).to_bytes();
        reading
    }
}

impl fmt::Debug for MeterKeypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("MeterKeypair").field(&self.public()).finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct MeterPublicKey(VerifyingKey);

impl MeterPublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0.as_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, MeasurementError> {
        let bytes = hex::decode(s.trim()).map_err(|e| MeasurementError::InvalidKey(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| MeasurementError::InvalidKey("expected 32 bytes".into()))?;
        VerifyingKey::from_bytes(&arr)
            .map(MeterPublicKey)
            .map_err(|e| MeasurementError::InvalidKey(e.to_string()))
    }

    pub fn verify(&self, reading: &MeterReading) -> bool {
        let sig = Signature::from_bytes(&reading.signature);
        self.0.verify(&reading.signing_bytes(), &sig).is_ok()
    }
}

impl fmt::Debug for MeterPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MeterPublicKey({})", self.to_hex())
    }
}

/// One signed hourly reading `e` in kilograms of CO2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterReading {
    pub firm_id: String,
    pub hour: DateTime<Utc>,
    pub e: u32,
    pub signature: [u8; 64],
}

impl MeterReading {
    /// `domain || 0x00 || len(firm_id) as u16 BE || firm_id || unix seconds
    /// as i64 BE || e as u32 BE`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let id = self.firm_id.as_bytes();
        let mut out = Vec::with_capacity(READING_DOMAIN.len() + 15 + id.len());
        out.extend_from_slice(READING_DOMAIN);
        out.push(0);
        out.extend_from_slice(&(id.len() as u16).to_be_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.hour.timestamp().to_be_bytes());
        out.extend_from_slice(&self.e.to_be_bytes());
        out
    }

    fn entry_bytes(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature);
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainHash(pub [u8; 32]);

impl fmt::Debug for ChainHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainHash({})", hex::encode(&self.0[..8]))
    }
}

pub fn chain_hash(prev: Option<&ChainHash>, data: &[u8]) -> ChainHash {
    let mut hasher = Sha256::new();
    if let Some(prev) = prev {
        hasher.update(prev.0);
    }
    hasher.update(data);
    ChainHash(hasher.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub reading: MeterReading,
    pub chain: ChainHash,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerLine {
    firm_id: String,
    hour: DateTime<Utc>,
    e: u32,
    signature: String,
    chain: String,
}

/// Append-only ledger of one firm's signed readings.
///
/// Entries loaded from disk keep their stored chain hashes verbatim, so a
/// tampered file loads fine and is caught by [`FirmLedger::faults`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmLedger {
    firm_id: String,
    entries: Vec<LedgerEntry>,
}

impl FirmLedger {
    pub fn new(firm_id: impl Into<String>) -> Self {
        FirmLedger {
            firm_id: firm_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn firm_id(&self) -> &str {
        &self.firm_id
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Direct mutable access, for simulating storage tampering.
    pub fn entries_mut(&mut self) -> &mut Vec<LedgerEntry> {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<ChainHash> {
        self.entries.last().map(|e| e.chain)
    }

    pub fn append_reading(
        &mut self,
        reading: MeterReading,
        meter: &MeterPublicKey,
    ) -> Result<ChainHash, MeasurementError> {
        if reading.firm_id != self.firm_id {
            return Err(MeasurementError::FirmMismatch {
                expected: self.firm_id.clone(),
                got: reading.firm_id,
            });
        }
        if !is_hour_aligned(&reading.hour) {
            return Err(MeasurementError::UnalignedHour(reading.hour));
        }
        if !meter.verify(&reading) {
            return Err(MeasurementError::BadSignature);
        }
        if let Some(last) = self.entries.last() {
            let last = last.reading.hour;
            if reading.hour == last {
                return Err(MeasurementError::DuplicateHour(reading.hour));
            }
            if reading.hour < last {
                return Err(MeasurementError::NonMonotonicHour {
                    last,
                    got: reading.hour,
                });
            }
        }
        let chain = chain_hash(self.head().as_ref(), &reading.entry_bytes());
        self.entries.push(LedgerEntry { reading, chain });
        Ok(chain)
    }

    /// Every integrity fault in the ledger, in entry order.
    pub fn faults(&self, meter: &MeterPublicKey) -> Vec<LedgerFault> {
        let mut faults = Vec::new();
        let mut prev: Option<&LedgerEntry> = None;
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.reading.firm_id != self.firm_id {
                faults.push(LedgerFault::ForeignFirm(i));
            }
            if !meter.verify(&entry.reading) {
                faults.push(LedgerFault::Signature(i));
            }
            if chain_hash(prev.map(|p| &p.chain), &entry.reading.entry_bytes()) != entry.chain {
                faults.push(LedgerFault::Chain(i));
            }
            let ordered = prev.is_none_or(|p| p.reading.hour < entry.reading.hour);
            if !ordered || !is_hour_aligned(&entry.reading.hour) {
                faults.push(LedgerFault::Order(i));
            }
            prev = Some(entry);
        }
        faults
    }

    /// Exact total of `e` over the cycle, after full integrity verification.
    pub fn aggregate(&self, cycle: &CycleId, meter: &MeterPublicKey) -> Result<u64, MeasurementError> {
        if let Some(fault) = self.faults(meter).first() {
            return Err(match *fault {
                LedgerFault::Signature(i) => MeasurementError::SignatureInvalid(i),
                LedgerFault::Chain(i) => MeasurementError::ChainBroken(i),
                LedgerFault::Order(i) => MeasurementError::OrderViolated(i),
                LedgerFault::ForeignFirm(i) => MeasurementError::FirmMismatch {
                    expected: self.firm_id.clone(),
                    got: self.entries[i].reading.firm_id.clone(),
                },
            });
        }
        let total = self.cycle_sum(cycle);
        if total >= MAX_EMISSIONS {
            return Err(MeasurementError::RangeExceeded(total));
        }
        Ok(total)
    }

    /// Sum over the cycle without any verification.
    pub fn cycle_sum(&self, cycle: &CycleId) -> u64 {
        self.entries
            .iter()
            .filter(|e| cycle.contains(&e.reading.hour))
            .map(|e| u64::from(e.reading.e))
            .sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), MeasurementError> {
        for entry in &self.entries {
            let line = LedgerLine {
                firm_id: entry.reading.firm_id.clone(),
                hour: entry.reading.hour,
                e: entry.reading.e,
                signature: hex::encode(entry.reading.signature),
                chain: hex::encode(entry.chain.0),
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Loads a ledger file. The firm id is taken from the first line, or
    /// `firm_id` when the file is empty.
    pub fn read_from<R: BufRead>(firm_id: &str, r: R) -> Result<Self, MeasurementError> {
        let mut ledger = FirmLedger::new(firm_id);
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |msg: String| MeasurementError::Parse { line: n + 1, msg };
            let rec: LedgerLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let signature: [u8; 64] = hex::decode(&rec.signature)
                .map_err(|e| parse(e.to_string()))?
                .try_into()
                .map_err(|_| parse("signature must be 64 bytes".into()))?;
            let chain: [u8; 32] = hex::decode(&rec.chain)
                .map_err(|e| parse(e.to_string()))?
                .try_into()
                .map_err(|_| parse("chain hash must be 32 bytes".into()))?;
            if ledger.entries.is_empty() {
                ledger.firm_id = rec.firm_id.clone();
            }
            ledger.entries.push(LedgerEntry {
                reading: MeterReading {
                    firm_id: rec.firm_id,
                    hour: rec.hour,
                    e: rec.e,
                    signature,
                },
                chain: ChainHash(chain),
            });
        }
        Ok(ledger)
    }

    pub fn from_bytes(firm_id: &str, bytes: &[u8]) -> Result<Self, MeasurementError> {
        Self::read_from(firm_id, bytes)
    }
}

fn is_hour_aligned(t: &DateTime<Utc>) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerFault {
    Signature(usize),
    Chain(usize),
    Order(usize),
    ForeignFirm(usize),
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    hour: DateTime<Utc>,
    e: u64,
}

/// Builds a ledger from a CSV of `hour,e` rows (with header), signing every
/// row with the simulated meter key.
pub fn import_csv<R: std::io::Read>(
    firm_id: &str,
    meter: &MeterKeypair,
    reader: R,
) -> Result<FirmLedger, MeasurementError> {
    let mut ledger = FirmLedger::new(firm_id);
    let pk = meter.public();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (n, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| MeasurementError::Parse {
            line: n + 2,
            msg: e.to_string(),
        })?;
        let e = u32::try_from(row.e).map_err(|_| MeasurementError::Parse {
            line: n + 2,
            msg: format!("reading {} exceeds 2^32", row.e),
        })?;
        ledger.append_reading(meter.sign_reading(firm_id, row.hour, e), &pk)?;
    }
    Ok(ledger)
}

/// A firm's committed cycle total: `c = commit(E, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirmReport<G: PrimeGroup> {
    pub opening: Opening<G>,
    pub commitment: Commitment<G>,
}

/// A [`FirmReport`] with its identifying labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledReport<G: PrimeGroup> {
    pub firm_id: String,
    pub cycle: CycleId,
    pub report: FirmReport<G>,
}

impl<G: PrimeGroup> FirmReport<G> {
    pub fn emissions(&self) -> G::Scalar {
        self.opening.m
    }

    pub fn randomness(&self) -> G::Scalar {
        self.opening.r
    }

    pub fn self_verifies(&self, pp: &PublicParams<G>) -> bool {
        pp.verify_opening(&self.commitment, &self.opening)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportFile {
    version: u32,
    group: GroupDescriptor,
    firm_id: String,
    cycle: CycleId,
    m: String,
    r: String,
    c: String,
}

impl<G: PrimeGroup> LabeledReport<G> {
    pub fn to_json(&self) -> String {
        let file = ReportFile {
            version: 1,
            group: G::descriptor(),
            firm_id: self.firm_id.clone(),
            cycle: self.cycle.clone(),
            m: scalar_to_hex::<G>(&self.report.opening.m),
            r: scalar_to_hex::<G>(&self.report.opening.r),
            c: self.report.commitment.to_hex(),
        };
        serde_json::to_string_pretty(&file).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MeasurementError> {
        let parse = |msg: String| MeasurementError::Parse { line: 0, msg };
        let file: ReportFile = serde_json::from_str(s).map_err(|e| parse(e.to_string()))?;
        if file.version != 1 {
            return Err(parse(format!("unsupported report version {}", file.version)));
        }
        if file.group != G::descriptor() {
            return Err(parse(format!("report is for group {:?}", file.group.kind)));
        }
        Ok(LabeledReport {
            firm_id: file.firm_id,
            cycle: file.cycle,
            report: FirmReport {
                opening: Opening::new(scalar_from_hex::<G>(&file.m)?, scalar_from_hex::<G>(&file.r)?),
                commitment: Commitment::from_hex(&file.c)?,
            },
        })
    }
}

/// Aggregates the cycle and commits to it with fresh randomness.
pub fn build_report<G: PrimeGroup, R: RngCore + ?Sized>(
    pp: &PublicParams<G>,
    ledger: &FirmLedger,
    cycle: &CycleId,
    meter: &MeterPublicKey,
    rng: &mut R,
) -> Result<FirmReport<G>, MeasurementError> {
    let total = ledger.aggregate(cycle, meter)?;
    let r = G::try_random_scalar(rng)?;
    let opening = Opening::from_u64(total, r);
    Ok(FirmReport {
        opening,
        commitment: pp.commit(&opening),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckFailure {
    Signature(usize),
    Chain(usize),
    Order(usize),
    ForeignFirm(usize),
    /// The verified ledger total disagrees with the reported `E`.
    Aggregation {
        ledger_total: u64,
    },
    /// Reported `E` is at or above `2^40`.
    Range,
    /// `c != commit(E, r)`.
    CommitmentOpening,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckOutcome {
    pub failures: Vec<CheckFailure>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// On-site examination of a picked firm: meter signatures, the hash chain,
/// the cycle aggregate against the reported `E`, the range rule, and the
/// commitment opening. Every failing check is listed.
pub fn spot_check<G: PrimeGroup>(
    pp: &PublicParams<G>,
    report: &FirmReport<G>,
    ledger: &FirmLedger,
    cycle: &CycleId,
    meter: &MeterPublicKey,
) -> CheckOutcome {
    let mut failures: Vec<CheckFailure> = ledger
        .faults(meter)
        .into_iter()
        .map(|f| match f {
            LedgerFault::Signature(i) => CheckFailure::Signature(i),
            LedgerFault::Chain(i) => CheckFailure::Chain(i),
            LedgerFault::Order(i) => CheckFailure::Order(i),
            LedgerFault::ForeignFirm(i) => CheckFailure::ForeignFirm(i),
        })
        .collect();
    let ledger_total = ledger.cycle_sum(cycle);
    if G::scalar_from_u64(ledger_total) != report.emissions() {
        failures.push(CheckFailure::Aggregation { ledger_total });
    }
    if !G::scalar_to_u64(&report.emissions()).is_some_and(|m| m < MAX_EMISSIONS) {
        failures.push(CheckFailure::Range);
    }
    if !report.self_verifies(pp) {
        failures.push(CheckFailure::CommitmentOpening);
    }
    CheckOutcome { failures }
}
