use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use emissions_audit::audit_protocol::{replay_verifier, Role, SessionConfig, Verdict};
use emissions_audit::commitment::{Commitment, Opening, PublicParams, MAX_EMISSIONS};
use emissions_audit::group::{PrimeGroup, Secp256k1, ToyGroup};
use emissions_audit::measurement::{build_report, CycleId, FirmLedger, MeterKeypair};
use emissions_audit::random_list::{derive_index, run_pick, FaultPolicy, PickBehavior, PickParams, PickParty};
use emissions_audit::sim_harness::{routing_violations, run_session, AdversarySpec, Behavior, DataSource, Tamper};

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_point<G: PrimeGroup>(rng: &mut ChaCha20Rng) -> G::Point {
    G::mul_generator(&G::random_scalar(rng))
}

fn distributive<G: PrimeGroup>(seed: u64) {
    let mut rng = rng(seed);
    let (a, b) = (G::random_scalar(&mut rng), G::random_scalar(&mut rng));
    let p = random_point::<G>(&mut rng);
    assert_eq!(p * (a + b), p * a + p * b);
}

/// `q·P`, written as `(q-1)·P + P`.
fn order_kills<G: PrimeGroup>(p: G::Point) -> bool {
    p * (-G::scalar_one()) + p == G::identity()
}

fn homomorphic<G: PrimeGroup>(pp: &PublicParams<G>, seed: u64) {
    let mut rng = rng(seed);
    let a = Opening::<G>::new(G::random_scalar(&mut rng), G::random_scalar(&mut rng));
    let b = Opening::<G>::new(G::random_scalar(&mut rng), G::random_scalar(&mut rng));
    let sum = Opening::new(a.m + b.m, a.r + b.r);
    assert_eq!(pp.commit(&a) + pp.commit(&b), pp.commit(&sum));
    assert!(pp.verify_opening(&pp.commit(&sum), &sum));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scalar_mul_distributes_toy(seed in any::<u64>()) {
        distributive::<ToyGroup>(seed);
    }

    #[test]
    fn scalar_mul_distributes_secp(seed in any::<u64>()) {
        distributive::<Secp256k1>(seed);
    }

    #[test]
    fn point_encoding_round_trips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_point::<Secp256k1>(&mut r);
        prop_assert_eq!(Secp256k1::decode_point(&Secp256k1::encode_point(&p)).unwrap(), p);
        let t = random_point::<ToyGroup>(&mut r);
        prop_assert_eq!(ToyGroup::decode_point(&ToyGroup::encode_point(&t)).unwrap(), t);
    }

    #[test]
    fn commitments_add_toy(seed in any::<u64>()) {
        homomorphic(&PublicParams::<ToyGroup>::hash_derived(), seed);
    }

    #[test]
    fn commitments_add_secp(seed in any::<u64>()) {
        homomorphic(&PublicParams::<Secp256k1>::hash_derived(), seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn order_times_point_is_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        prop_assert!(order_kills::<Secp256k1>(random_point::<Secp256k1>(&mut r)));
        prop_assert!(order_kills::<ToyGroup>(random_point::<ToyGroup>(&mut r)));
    }

    #[test]
    fn tampered_encoding_never_leaves_subgroup(seed in any::<u64>(), byte in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut r = rng(seed);
        let mut enc = Secp256k1::encode_point(&random_point::<Secp256k1>(&mut r));
        let i = byte.index(enc.len());
        enc[i] ^= 1 << bit;
        if let Ok(p) = Secp256k1::decode_point(&enc) {
            prop_assert!(order_kills::<Secp256k1>(p));
        }
        let mut enc = ToyGroup::encode_point(&random_point::<ToyGroup>(&mut r));
        let i = byte.index(enc.len());
        enc[i] ^= 1 << bit;
        if let Ok(p) = ToyGroup::decode_point(&enc) {
            prop_assert!(order_kills::<ToyGroup>(p));
        }
    }

    #[test]
    fn opening_bit_flip_breaks_verification(seed in any::<u64>(), byte in any::<prop::sample::Index>(), bit in 0u8..8) {
        let pp = PublicParams::<Secp256k1>::hash_derived();
        let mut r = rng(seed);
        let o = Opening::<Secp256k1>::new(Secp256k1::random_scalar(&mut r), Secp256k1::random_scalar(&mut r));
        let c: Commitment<Secp256k1> = pp.commit(&o);
        let mut bytes = o.to_bytes();
        let i = byte.index(bytes.len());
        bytes[i] ^= 1 << bit;
        if let Ok(o2) = Opening::<Secp256k1>::from_bytes(&bytes) {
            prop_assert!(!pp.verify_opening(&c, &o2));
        }
    }

    #[test]
    fn cycle_sum_ignores_order(values in prop::collection::vec(0u32..100_000, 0..40), seed in any::<u64>()) {
        let meter = MeterKeypair::from_seed([5; 32]);
        let start = Utc.with_ymd_and_hms(2025, 6, 1, 0, 0, 0).unwrap();
        let mut ledger = FirmLedger::new("F1");
        for (i, e) in values.iter().enumerate() {
            let reading = meter.sign_reading("F1", start + Duration::hours(i as i64), *e);
            ledger.append_reading(reading, &meter.public()).unwrap();
        }
        let cycle = CycleId::year(2025);
        let expected: u64 = values.iter().map(|v| u64::from(*v)).sum();
        prop_assert_eq!(ledger.aggregate(&cycle, &meter.public()).unwrap(), expected);
        let mut shuffled = ledger.clone();
        shuffled.entries_mut().shuffle(&mut rng(seed));
        prop_assert_eq!(shuffled.cycle_sum(&cycle), expected);

        let pp = PublicParams::<Secp256k1>::hash_derived();
        let report = build_report(&pp, &ledger, &cycle, &meter.public(), &mut rng(seed)).unwrap();
        prop_assert!(report.self_verifies(&pp));
        prop_assert!(Secp256k1::scalar_to_u64(&report.emissions()).is_some_and(|m| m < MAX_EMISSIONS));
    }

    #[test]
    fn derive_index_symmetric_and_in_range(l in 1u64..=64, a in any::<u64>(), b in any::<u64>()) {
        let (a, b) = (a % l, b % l);
        let i = derive_index(a, b, l);
        prop_assert!(i < l);
        prop_assert_eq!(i, derive_index(b, a, l));
    }

    #[test]
    fn honest_pick_is_a_k_subset(n in 0usize..20, k_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let k = ((n as f64) * k_frac).floor() as usize;
        let roster: Vec<usize> = (0..n).collect();
        let params = PickParams::Shared(PublicParams::<ToyGroup>::hash_derived());
        let out = run_pick(
            &roster, k, &params,
            &mut PickBehavior::Honest, &mut PickBehavior::Honest,
            FaultPolicy::HonestCompletes, &mut rng(seed),
        ).unwrap();
        let mut picked = out.picked.clone();
        picked.sort_unstable();
        picked.dedup();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(out.faulted.is_none());
    }

    #[test]
    fn inconsistent_revealer_is_the_one_faulted(
        n in 2usize..10, round_frac in 0.0f64..1.0, verifier_cheats in any::<bool>(), seed in any::<u64>(),
    ) {
        let k = n / 2 + 1;
        let round = ((k as f64) * round_frac).floor() as usize;
        let roster: Vec<usize> = (0..n).collect();
        let params = PickParams::Shared(PublicParams::<Secp256k1>::hash_derived());
        let mut cheat = PickBehavior::InconsistentReveal { round };
        let mut honest = PickBehavior::Honest;
        let (c, v, culprit): (&mut PickBehavior, &mut PickBehavior, _) = if verifier_cheats {
            (&mut honest, &mut cheat, PickParty::Verifier)
        } else {
            (&mut cheat, &mut honest, PickParty::Country)
        };
        let out = run_pick(&roster, k, &params, c, v, FaultPolicy::HonestCompletes, &mut rng(seed)).unwrap();
        prop_assert_eq!(out.faulted, Some(culprit));
        prop_assert_eq!(out.picked.len(), k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn honest_sessions_accept_the_true_total(n in 0usize..=64, k_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let k = ((n as f64) * k_frac).floor() as usize;
        let cfg = SessionConfig::simple(PublicParams::<Secp256k1>::hash_derived(), n, k);
        let r = run_session(&cfg, &DataSource::Uniform { max: 1 << 30 }, &AdversarySpec::honest(), seed).unwrap();
        prop_assert!(r.accepted_correct_sum());
        prop_assert_eq!(replay_verifier(&cfg, &r.transcript).unwrap(), r.verdict);
        prop_assert!(routing_violations(&r.transcript).is_empty());
    }

    #[test]
    fn sessions_replay_byte_identically(firm in 0usize..8, delta in -50i64..50, seed in any::<u64>()) {
        let cfg = SessionConfig::simple(PublicParams::<ToyGroup>::hash_derived(), 8, 3);
        let adv = AdversarySpec::honest()
            .corrupt(Role::Firm(firm), Behavior::TamperReport(Tamper::Delta(delta)))
            .unwrap();
        let data = DataSource::Uniform { max: 50 };
        let a = run_session(&cfg, &data, &adv, seed).unwrap();
        let b = run_session(&cfg, &data, &adv, seed).unwrap();
        prop_assert_eq!(
            a.transcript.export(&a.verdict.to_record()),
            b.transcript.export(&b.verdict.to_record())
        );
        prop_assert_eq!(replay_verifier(&cfg, &a.transcript).unwrap(), a.verdict);
        prop_assert!(routing_violations(&a.transcript).is_empty());
        if matches!(a.verdict, Verdict::Aborted(_)) {
            prop_assert!(delta != 0);
        }
    }
}
