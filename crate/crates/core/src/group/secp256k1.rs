use k256::elliptic_curve::ff::PrimeField;
use k256::elliptic_curve::ops::MulByGenerator;
use k256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use k256::{AffinePoint, EncodedPoint, FieldBytes, ProjectivePoint, Scalar};
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{GroupError, GroupKind, PrimeGroup};

/// secp256k1 order `n`.
const ORDER_BE: [u8; 32] = [
    0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xfe, 0xba, 0xae, 0xdc,
    0xe6, 0xaf, 0x48, 0xa0, 0x3b, 0xbf, 0xd2, 0x5e, 0x8c, 0xd0, 0x36, 0x41, 0x41,
];

/// secp256k1 (SEC 2, cofactor 1).
///
/// The identity has no SEC1 compressed form, so it is encoded as 33 zero
/// bytes to keep encodings fixed-length. With cofactor 1 every on-curve
/// point is in the prime-order group, so decoding failures surface as
/// [`GroupError::MalformedPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Secp256k1;

impl PrimeGroup for Secp256k1 {
    type Scalar = Scalar;
    type Point = ProjectivePoint;

    const KIND: GroupKind = GroupKind::ProductionCurve;
    const SCALAR_BYTES: usize = 32;
    const POINT_BYTES: usize = 33;

    fn order_be() -> Vec<u8> {
        ORDER_BE.to_vec()
    }

    fn generator() -> ProjectivePoint {
        ProjectivePoint::GENERATOR
    }

    fn identity() -> ProjectivePoint {
        ProjectivePoint::IDENTITY
    }

    fn scalar_zero() -> Scalar {
        Scalar::ZERO
    }

    fn scalar_one() -> Scalar {
        Scalar::ONE
    }

    fn scalar_from_u64(v: u64) -> Scalar {
        Scalar::from(v)
    }

    fn scalar_invert(s: &Scalar) -> Option<Scalar> {
        Option::from(s.invert())
    }

    fn try_random_scalar<R: RngCore + ?Sized>(rng: &mut R) -> Result<Scalar, GroupError> {
        let mut buf = FieldBytes::default();
        loop {
            rng.try_fill_bytes(&mut buf)
                .map_err(|e| GroupError::Rng(e.to_string()))?;
            if let Some(s) = Option::<Scalar>::from(Scalar::from_repr(buf)) {
                return Ok(s);
            }
        }
    }

    fn encode_scalar(s: &Scalar) -> Vec<u8> {
        s.to_bytes().to_vec()
    }

    fn decode_scalar(bytes: &[u8]) -> Result<Scalar, GroupError> {
        if bytes.len() != Self::SCALAR_BYTES {
            return Err(GroupError::MalformedScalar);
        }
        let mut repr = FieldBytes::default();
        repr.copy_from_slice(bytes);
        Option::from(Scalar::from_repr(repr)).ok_or(GroupError::MalformedScalar)
    }

    fn encode_point(p: &ProjectivePoint) -> Vec<u8> {
        if *p == ProjectivePoint::IDENTITY {
            return vec![0u8; Self::POINT_BYTES];
        }
        p.to_affine().to_encoded_point(true).as_bytes().to_vec()
    }

    fn decode_point(bytes: &[u8]) -> Result<ProjectivePoint, GroupError> {
        if bytes.len() != Self::POINT_BYTES {
            return Err(GroupError::MalformedPoint);
        }
        if bytes.iter().all(|b| *b == 0) {
            return Ok(ProjectivePoint::IDENTITY);
        }
        if bytes[0] != 0x02 && bytes[0] != 0x03 {
            return Err(GroupError::MalformedPoint);
        }
        let encoded = EncodedPoint::from_bytes(bytes).map_err(|_| GroupError::MalformedPoint)?;
        Option::<AffinePoint>::from(AffinePoint::from_encoded_point(&encoded))
            .map(ProjectivePoint::from)
            .ok_or(GroupError::MalformedPoint)
    }

    fn mul_generator(s: &Scalar) -> ProjectivePoint {
        ProjectivePoint::mul_by_generator(s)
    }

    fn hash_to_point(domain: &[u8]) -> ProjectivePoint {
        for counter in 0u32.. {
            let digest = Sha256::new()
                .chain_update(domain)
                .chain_update(counter.to_be_bytes())
                .finalize();
            let mut candidate = [0u8; 33];
            candidate[0] = 0x02;
            candidate[1..].copy_from_slice(&digest);
            if let Ok(p) = Self::decode_point(&candidate) {
                return p;
            }
        }
        unreachable!("counter space exhausted")
    }
}
