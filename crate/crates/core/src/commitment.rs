//! Pedersen commitments `c = m·G + r·H`.
//!
//! Perfectly hiding, computationally binding under the discrete log of `H`
//! base `G`, and additively homomorphic:
//! `commit(m1, r1) + commit(m2, r2) == commit(m1 + m2, r1 + r2)`.

use std::fmt;
use std::iter::Sum;
use std::ops::Add;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{point_from_hex, point_to_hex, GroupDescriptor, GroupError, PrimeGroup};

/// Domain-separation string for the hash-derived second generator.
pub const H_DOMAIN: &[u8] = b"emissions-audit-kit/H/v1";

/// Version tag of the public-parameter envelope.
pub const PARAMS_VERSION: u32 = 1;

/// Exclusive upper bound on committed emission values (kg CO2). Keeps the
/// sum over up to `2^20` firms well below the production group order.
pub const MAX_EMISSIONS: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum CommitmentError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("openings do not collide")]
    NotACollision,
    #[error("collision has equal randomness; no trapdoor can be extracted")]
    DegenerateCollision,
    #[error("second generator is the identity")]
    DegenerateGenerator,
    #[error("parameter file is for group {found:?}, expected {expected:?}")]
    GroupMismatch {
        expected: GroupDescriptor,
        found: GroupDescriptor,
    },
    #[error("unsupported parameter envelope version {0}")]
    UnsupportedVersion(u32),
    #[error("base point G differs from the group's standard generator")]
    NonStandardBase,
    #[error("hash-derived H does not match its derivation")]
    HashDerivationMismatch,
    #[error("malformed parameter envelope: {0}")]
    Envelope(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupMode {
    /// `H` is hashed from [`H_DOMAIN`]; nobody knows its discrete log.
    HashDerived,
    /// `H = h·G` for a sampled `h` kept in memory. Whoever holds `h` can
    /// break binding, so this mode is for test oracles.
    Trusted,
}

impl std::str::FromStr for SetupMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hash" | "hash_derived" => Ok(SetupMode::HashDerived),
            "trusted" => Ok(SetupMode::Trusted),
            other => Err(format!("unknown setup mode `{other}`")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicParams<G: PrimeGroup> {
    mode: SetupMode,
    h: G::Point,
    trapdoor: Option<G::Scalar>,
}

impl<G: PrimeGroup> fmt::Debug for PublicParams<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicParams")
            .field("group", &G::KIND)
            .field("mode", &self.mode)
            .field("h", &point_to_hex::<G>(&self.h))
            .finish_non_exhaustive()
    }
}

impl<G: PrimeGroup> PublicParams<G> {
    pub fn setup<R: RngCore + ?Sized>(mode: SetupMode, rng: &mut R) -> Result<Self, CommitmentError> {
        match mode {
            SetupMode::HashDerived => Ok(Self::hash_derived()),
            SetupMode::Trusted => {
                // h is drawn from [1, q).
                let h = loop {
                    let h = G::try_random_scalar(rng)?;
                    if h != G::scalar_zero() {
                        break h;
                    }
                };
                Ok(Self::from_trapdoor(h))
            }
        }
    }

    pub fn hash_derived() -> Self {
        PublicParams {
            mode: SetupMode::HashDerived,
            h: G::hash_to_point(H_DOMAIN),
            trapdoor: None,
        }
    }

    /// Trusted-mode parameters with a caller-chosen trapdoor. Panics on zero.
    pub fn from_trapdoor(h: G::Scalar) -> Self {
        assert!(h != G::scalar_zero(), "trapdoor must be nonzero");
        PublicParams {
            mode: SetupMode::Trusted,
            h: G::mul_generator(&h),
            trapdoor: Some(h),
        }
    }

    /// Parameters for an arbitrary second base whose trapdoor is unknown
    /// here, e.g. a peer's published `H`.
    pub fn with_base(h: G::Point) -> Result<Self, CommitmentError> {
        if h == G::identity() {
            return Err(CommitmentError::DegenerateGenerator);
        }
        Ok(PublicParams {
            mode: SetupMode::Trusted,
            h,
            trapdoor: None,
        })
    }

    pub fn mode(&self) -> SetupMode {
        self.mode
    }

    pub fn g(&self) -> G::Point {
        G::generator()
    }

    pub fn h(&self) -> G::Point {
        self.h
    }

    pub fn trapdoor(&self) -> Option<G::Scalar> {
        self.trapdoor
    }

    /// Same parameters with the trapdoor dropped, as a peer would see them.
    pub fn public_only(&self) -> Self {
        PublicParams {
            trapdoor: None,
            ..*self
        }
    }

    pub fn commit(&self, opening: &Opening<G>) -> Commitment<G> {
        Commitment(G::mul_generator(&opening.m) + self.h * opening.r)
    }

    pub fn verify_opening(&self, c: &Commitment<G>, opening: &Opening<G>) -> bool {
        self.commit(opening) == *c
    }

    /// Recovers `h = (r' - r)^-1 · (m - m')` from two openings of the same
    /// commitment.
    pub fn extract_trapdoor_from_collision(
        &self,
        a: &Opening<G>,
        b: &Opening<G>,
    ) -> Result<G::Scalar, CommitmentError> {
        if a == b || self.commit(a) != self.commit(b) {
            return Err(CommitmentError::NotACollision);
        }
        let dr_inv = G::scalar_invert(&(b.r - a.r)).ok_or(CommitmentError::DegenerateCollision)?;
        // m + r·h = m' + r'·h  =>  h = (m - m') / (r' - r)
        Ok((a.m - b.m) * dr_inv)
    }

    pub fn to_envelope(&self) -> ParamsEnvelope {
        ParamsEnvelope {
            version: PARAMS_VERSION,
            group: G::descriptor(),
            mode: self.mode,
            g: point_to_hex::<G>(&G::generator()),
            h: point_to_hex::<G>(&self.h),
        }
    }

    pub fn from_envelope(env: &ParamsEnvelope) -> Result<Self, CommitmentError> {
        if env.version != PARAMS_VERSION {
            return Err(CommitmentError::UnsupportedVersion(env.version));
        }
        if env.group != G::descriptor() {
            return Err(CommitmentError::GroupMismatch {
                expected: G::descriptor(),
                found: env.group.clone(),
            });
        }
        if point_from_hex::<G>(&env.g)? != G::generator() {
            return Err(CommitmentError::NonStandardBase);
        }
        let h = point_from_hex::<G>(&env.h)?;
        if h == G::identity() {
            return Err(CommitmentError::DegenerateGenerator);
        }
        if env.mode == SetupMode::HashDerived && h != G::hash_to_point(H_DOMAIN) {
            return Err(CommitmentError::HashDerivationMismatch);
        }
        Ok(PublicParams {
            mode: env.mode,
            h,
            trapdoor: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_envelope()).expect("envelope serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CommitmentError> {
        let env: ParamsEnvelope = serde_json::from_str(s).map_err(|e| CommitmentError::Envelope(e.to_string()))?;
        Self::from_envelope(&env)
    }
}

/// On-disk form of [`PublicParams`]. The trapdoor has no field here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsEnvelope {
    pub version: u32,
    pub group: GroupDescriptor,
    pub mode: SetupMode,
    pub g: String,
    pub h: String,
}

/// Preimage `(m, r)` of a commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Opening<G: PrimeGroup> {
    pub m: G::Scalar,
    pub r: G::Scalar,
}

impl<G: PrimeGroup> Opening<G> {
    pub fn new(m: G::Scalar, r: G::Scalar) -> Self {
        Opening { m, r }
    }

    pub fn from_u64(m: u64, r: G::Scalar) -> Self {
        Opening {
            m: G::scalar_from_u64(m),
            r,
        }
    }

    pub fn zero() -> Self {
        Opening {
            m: G::scalar_zero(),
            r: G::scalar_zero(),
        }
    }

    /// `m || r`, each a fixed-length big-endian scalar.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = G::encode_scalar(&self.m);
        out.extend(G::encode_scalar(&self.r));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        if bytes.len() != 2 * G::SCALAR_BYTES {
            return Err(GroupError::MalformedScalar);
        }
        let (m, r) = bytes.split_at(G::SCALAR_BYTES);
        Ok(Opening {
            m: G::decode_scalar(m)?,
            r: G::decode_scalar(r)?,
        })
    }
}

impl<G: PrimeGroup> Add for Opening<G> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Opening {
            m: self.m + rhs.m,
            r: self.r + rhs.r,
        }
    }
}

impl<G: PrimeGroup> Sum for Opening<G> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Opening::zero(), Add::add)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Commitment<G: PrimeGroup>(pub G::Point);

impl<G: PrimeGroup> fmt::Debug for Commitment<G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({})", point_to_hex::<G>(&self.0))
    }
}

impl<G: PrimeGroup> Commitment<G> {
    pub fn identity() -> Self {
        Commitment(G::identity())
    }

    pub fn point(&self) -> G::Point {
        self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        G::encode_point(&self.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        G::decode_point(bytes).map(Commitment)
    }

    pub fn to_hex(&self) -> String {
        point_to_hex::<G>(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, GroupError> {
        point_from_hex::<G>(s).map(Commitment)
    }
}

impl<G: PrimeGroup> Add for Commitment<G> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Commitment(self.0 + rhs.0)
    }
}

impl<G: PrimeGroup> Sum for Commitment<G> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Commitment::identity(), Add::add)
    }
}

impl<'a, G: PrimeGroup> Sum<&'a Commitment<G>> for Commitment<G> {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

pub fn add_commitments<G: PrimeGroup>(a: &Commitment<G>, b: &Commitment<G>) -> Commitment<G> {
    *a + *b
}

pub fn add_openings<G: PrimeGroup>(a: &Opening<G>, b: &Opening<G>) -> Opening<G> {
    *a + *b
}
