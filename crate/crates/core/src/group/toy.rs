use std::ops::{Add, Mul, Neg, Sub};

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{GroupError, GroupKind, PrimeGroup};

/// Modulus `p = 6 * 101 + 1` of the ambient multiplicative group.
pub const TOY_MODULUS: u16 = 607;
/// Prime order of the subgroup.
pub const TOY_ORDER: u16 = 101;
/// Smallest residue of multiplicative order 101 mod 607.
pub const TOY_GENERATOR: u16 = 7;

const P: u32 = TOY_MODULUS as u32;
const Q: u32 = TOY_ORDER as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ToyScalar(u16);

impl ToyScalar {
    pub fn new(v: u64) -> Self {
        ToyScalar((v % u64::from(Q)) as u16)
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

impl Add for ToyScalar {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        ToyScalar(((u32::from(self.0) + u32::from(rhs.0)) % Q) as u16)
    }
}

impl Sub for ToyScalar {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for ToyScalar {
    type Output = Self;
    fn neg(self) -> Self {
        ToyScalar(((Q - u32::from(self.0)) % Q) as u16)
    }
}

impl Mul for ToyScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        ToyScalar(((u32::from(self.0) * u32::from(rhs.0)) % Q) as u16)
    }
}

/// Element of the order-101 subgroup, stored as its residue mod 607.
/// The group law is written additively: `P + Q` is the product mod 607.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ToyPoint(u16);

impl ToyPoint {
    pub fn residue(self) -> u16 {
        self.0
    }
}

fn pow_mod(base: u32, mut exp: u32, modulus: u32) -> u32 {
    let mut acc = 1u32;
    let mut b = base % modulus;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % modulus;
        }
        b = b * b % modulus;
        exp >>= 1;
    }
    acc
}

fn in_subgroup(v: u32) -> bool {
    (1..P).contains(&v) && pow_mod(v, Q, P) == 1
}

impl Add for ToyPoint {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        ToyPoint((u32::from(self.0) * u32::from(rhs.0) % P) as u16)
    }
}

impl Neg for ToyPoint {
    type Output = Self;
    fn neg(self) -> Self {
        // x^(q-1) is the inverse inside an order-q subgroup.
        ToyPoint(pow_mod(u32::from(self.0), Q - 1, P) as u16)
    }
}

impl Sub for ToyPoint {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Mul<ToyScalar> for ToyPoint {
    type Output = Self;
    fn mul(self, rhs: ToyScalar) -> Self {
        ToyPoint(pow_mod(u32::from(self.0), u32::from(rhs.0), P) as u16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyGroup;

impl PrimeGroup for ToyGroup {
    type Scalar = ToyScalar;
    type Point = ToyPoint;

    const KIND: GroupKind = GroupKind::ToyGroup;
    const SCALAR_BYTES: usize = 2;
    const POINT_BYTES: usize = 2;

    fn order_be() -> Vec<u8> {
        TOY_ORDER.to_be_bytes().to_vec()
    }

    fn generator() -> ToyPoint {
        ToyPoint(TOY_GENERATOR)
    }

    fn identity() -> ToyPoint {
        ToyPoint(1)
    }

    fn scalar_zero() -> ToyScalar {
        ToyScalar(0)
    }

    fn scalar_one() -> ToyScalar {
        ToyScalar(1)
    }

    fn scalar_from_u64(v: u64) -> ToyScalar {
        ToyScalar::new(v)
    }

    fn scalar_invert(s: &ToyScalar) -> Option<ToyScalar> {
        if s.0 == 0 {
            return None;
        }
        Some(ToyScalar(pow_mod(u32::from(s.0), Q - 2, Q) as u16))
    }

    fn try_random_scalar<R: RngCore + ?Sized>(rng: &mut R) -> Result<ToyScalar, GroupError> {
        let mut buf = [0u8; 1];
        loop {
            rng.try_fill_bytes(&mut buf)
                .map_err(|e| GroupError::Rng(e.to_string()))?;
            let candidate = u32::from(buf[0] & 0x7f);
            if candidate < Q {
                return Ok(ToyScalar(candidate as u16));
            }
        }
    }

    fn encode_scalar(s: &ToyScalar) -> Vec<u8> {
        s.0.to_be_bytes().to_vec()
    }

    fn decode_scalar(bytes: &[u8]) -> Result<ToyScalar, GroupError> {
        let arr: [u8; 2] = bytes.try_into().map_err(|_| GroupError::MalformedScalar)?;
        let v = u16::from_be_bytes(arr);
        if u32::from(v) >= Q {
            return Err(GroupError::MalformedScalar);
        }
        Ok(ToyScalar(v))
    }

    fn encode_point(p: &ToyPoint) -> Vec<u8> {
        p.0.to_be_bytes().to_vec()
    }

    fn decode_point(bytes: &[u8]) -> Result<ToyPoint, GroupError> {
        let arr: [u8; 2] = bytes.try_into().map_err(|_| GroupError::MalformedPoint)?;
        let v = u16::from_be_bytes(arr);
        if v == 0 || u32::from(v) >= P {
            return Err(GroupError::MalformedPoint);
        }
        if !in_subgroup(u32::from(v)) {
            return Err(GroupError::NotInSubgroup);
        }
        Ok(ToyPoint(v))
    }

    fn hash_to_point(domain: &[u8]) -> ToyPoint {
        for counter in 0u32.. {
            let digest = Sha256::new()
                .chain_update(domain)
                .chain_update(counter.to_be_bytes())
                .finalize();
            if let Ok(p) = Self::decode_point(&digest[..2]) {
                if p != Self::identity() {
                    return p;
                }
            }
        }
        unreachable!("counter space exhausted")
    }

    fn brute_force_dlog(p: &ToyPoint) -> Result<ToyScalar, GroupError> {
        let mut acc = Self::identity();
        for n in 0..TOY_ORDER {
            if acc == *p {
                return Ok(ToyScalar(n));
            }
            acc = acc + Self::generator();
        }
        Err(GroupError::NoDiscreteLog)
    }
}
