//! Prime-order group abstraction.
//!
//! Every protocol in this crate is generic over [`PrimeGroup`]. Two
//! instantiations are provided:
//!
//! * [`Secp256k1`]: the SEC 2 curve `y^2 = x^3 + 7` over its 256-bit prime
//!   field, prime order, ~128-bit security. Points use 33-byte SEC1
//!   compressed encoding; scalars are 32-byte big-endian.
//! * [`ToyGroup`]: the order-101 subgroup of `Z_607^*`. Small enough that
//!   discrete logs and full enumerations are cheap, which is what the exact
//!   test oracles need. Never use it for anything else.

mod secp256k1;
mod toy;

use std::fmt::{self, Debug};
use std::hash::Hash;
use std::ops::{Add, Mul, Neg, Sub};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use secp256k1::Secp256k1;
pub use toy::{ToyGroup, ToyPoint, ToyScalar, TOY_GENERATOR, TOY_MODULUS, TOY_ORDER};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("malformed point encoding")]
    MalformedPoint,
    #[error("point is not in the prime-order subgroup")]
    NotInSubgroup,
    #[error("malformed scalar encoding")]
    MalformedScalar,
    #[error("randomness source failed: {0}")]
    Rng(String),
    #[error("operation not supported on group {0}")]
    Unsupported(GroupKind),
    #[error("no discrete log found")]
    NoDiscreteLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// secp256k1.
    ProductionCurve,
    /// Order-101 subgroup of `Z_607^*`.
    ToyGroup,
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::ProductionCurve => f.write_str("production_curve"),
            GroupKind::ToyGroup => f.write_str("toy_group"),
        }
    }
}

impl std::str::FromStr for GroupKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "production_curve" | "prod" | "secp256k1" => Ok(GroupKind::ProductionCurve),
            "toy_group" | "toy" => Ok(GroupKind::ToyGroup),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

/// Serialized group description: `{kind, q}` with `q` in lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDescriptor {
    pub kind: GroupKind,
    pub q: String,
}

/// A cyclic group of prime order `q` with a fixed generator.
///
/// Scalars are always canonical residues mod `q`; points are always members
/// of the prime-order group (decoding enforces this).
pub trait PrimeGroup: Copy + Debug + Eq + Send + Sync + 'static {
    type Scalar: Copy
        + Eq
        + Debug
        + Send
        + Sync
        + Add<Output = Self::Scalar>
        + Sub<Output = Self::Scalar>
        + Mul<Output = Self::Scalar>
        + Neg<Output = Self::Scalar>;

    type Point: Copy
        + Eq
        + Debug
        + Send
        + Sync
        + Add<Output = Self::Point>
        + Sub<Output = Self::Point>
        + Neg<Output = Self::Point>
        + Mul<Self::Scalar, Output = Self::Point>;

    const KIND: GroupKind;
    const SCALAR_BYTES: usize;
    const POINT_BYTES: usize;

    /// Group order `q`, big-endian, `SCALAR_BYTES` long.
    fn order_be() -> Vec<u8>;

    fn generator() -> Self::Point;
    fn identity() -> Self::Point;

    fn scalar_zero() -> Self::Scalar;
    fn scalar_one() -> Self::Scalar;
    fn scalar_from_u64(v: u64) -> Self::Scalar;
    fn scalar_invert(s: &Self::Scalar) -> Option<Self::Scalar>;

    /// Uniform scalar in `[0, q)` by rejection sampling.
    fn try_random_scalar<R: RngCore + ?Sized>(rng: &mut R) -> Result<Self::Scalar, GroupError>;

    fn encode_scalar(s: &Self::Scalar) -> Vec<u8>;
    fn decode_scalar(bytes: &[u8]) -> Result<Self::Scalar, GroupError>;

    fn encode_point(p: &Self::Point) -> Vec<u8>;
    fn decode_point(bytes: &[u8]) -> Result<Self::Point, GroupError>;

    /// `s * G`; may use a precomputed table.
    fn mul_generator(s: &Self::Scalar) -> Self::Point {
        Self::generator() * *s
    }

    /// Deterministic map from a domain string to a non-identity point of
    /// unknown discrete log: hash `domain || counter` into a candidate
    /// encoding and retry with the next counter until it decodes.
    fn hash_to_point(domain: &[u8]) -> Self::Point;

    /// Exhaustive discrete log with respect to [`PrimeGroup::generator`].
    fn brute_force_dlog(_p: &Self::Point) -> Result<Self::Scalar, GroupError> {
        Err(GroupError::Unsupported(Self::KIND))
    }

    fn descriptor() -> GroupDescriptor {
        GroupDescriptor {
            kind: Self::KIND,
            q: hex::encode(Self::order_be()),
        }
    }

    fn random_scalar<R: RngCore + ?Sized>(rng: &mut R) -> Self::Scalar {
        Self::try_random_scalar(rng).expect("randomness source failed")
    }

    /// Returns the scalar as an integer when it is below `2^64`.
    fn scalar_to_u64(s: &Self::Scalar) -> Option<u64> {
        let bytes = Self::encode_scalar(s);
        let split = bytes.len().saturating_sub(8);
        if bytes[..split].iter().any(|b| *b != 0) {
            return None;
        }
        Some(bytes[split..].iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b)))
    }
}

/// Point hex helpers used by the file formats.
pub fn point_to_hex<G: PrimeGroup>(p: &G::Point) -> String {
    hex::encode(G::encode_point(p))
}

pub fn point_from_hex<G: PrimeGroup>(s: &str) -> Result<G::Point, GroupError> {
    let bytes = hex::decode(s.trim()).map_err(|_| GroupError::MalformedPoint)?;
    G::decode_point(&bytes)
}

pub fn scalar_to_hex<G: PrimeGroup>(s: &G::Scalar) -> String {
    hex::encode(G::encode_scalar(s))
}

pub fn scalar_from_hex<G: PrimeGroup>(s: &str) -> Result<G::Scalar, GroupError> {
    let bytes = hex::decode(s.trim()).map_err(|_| GroupError::MalformedScalar)?;
    G::decode_scalar(&bytes)
}
