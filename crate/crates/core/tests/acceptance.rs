//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use emissions_audit::audit_protocol::{
    run_audit, AbortReason, Conduct, EnvironmentData, Role, SessionConfig, Step, Verdict,
};
use emissions_audit::commitment::{Commitment, Opening, PublicParams, SetupMode};
use emissions_audit::group::{PrimeGroup, Secp256k1, ToyGroup};
use emissions_audit::measurement::{build_report, spot_check, CycleId, FirmLedger, MeterKeypair};
use emissions_audit::random_list::{
    derive_index, run_pick, BiasStrategy, FaultPolicy, PickBehavior, PickParams, PickSession,
};
use emissions_audit::sim_harness::{
    builtin_scenario, chi_square_uniform_p, corrupted_plaintexts, leakage_violations, routing_violations, run_session,
    run_trials, AdversarySpec, Behavior, DataSource, Prepared, Tamper,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, t: Duration) -> Result<(), String> {
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))
}

fn homomorphism_pairs<G: PrimeGroup>(seed: u64) -> Result<(), String> {
    let pp = PublicParams::<G>::hash_derived();
    let mut r = rng(seed);
    for i in 0..1000 {
        let a = Opening::<G>::new(G::random_scalar(&mut r), G::random_scalar(&mut r));
        let b = Opening::<G>::new(G::random_scalar(&mut r), G::random_scalar(&mut r));
        let lhs = pp.commit(&a) + pp.commit(&b);
        let rhs = pp.commit(&Opening::new(a.m + b.m, a.r + b.r));
        ensure(lhs == rhs, || format!("{} pair {i} differs", G::KIND))?;
    }
    Ok(())
}

fn c1_homomorphism() -> Outcome {
    let t = Instant::now();
    homomorphism_pairs::<ToyGroup>(1)?;
    homomorphism_pairs::<Secp256k1>(2)?;
    let t = t.elapsed();
    within(Duration::from_secs(5), t)?;
    Ok(format!("1000 pairs on each group, exact, {t:.2?}"))
}

/// All 101 commitments to `m`, sorted by encoding.
fn toy_multiset(pp: &PublicParams<ToyGroup>, m: u64) -> Vec<Vec<u8>> {
    let mut v: Vec<Vec<u8>> = (0..101)
        .map(|r| {
            pp.commit(&Opening::from_u64(m, ToyGroup::scalar_from_u64(r)))
                .to_bytes()
        })
        .collect();
    v.sort();
    v
}

fn c2_hiding() -> Outcome {
    let t = Instant::now();
    let pp = PublicParams::<ToyGroup>::hash_derived();
    let mut r = rng(3);
    for _ in 0..10 {
        let m1 = r.gen_range(0..101);
        let m2 = (m1 + r.gen_range(1..101)) % 101;
        let (a, b) = (toy_multiset(&pp, m1), toy_multiset(&pp, m2));
        ensure(a == b, || format!("multisets for m={m1} and m={m2} differ"))?;
        let mut distinct = a.clone();
        distinct.dedup();
        ensure(distinct.len() == 101, || format!("m={m1} does not cover the group"))?;
    }
    let t = t.elapsed();
    within(Duration::from_secs(10), t)?;
    Ok(format!("10 message pairs, identical multisets over all 101 r, {t:.2?}"))
}

fn c3_trapdoor() -> Outcome {
    let mut r = rng(4);
    for i in 0..100 {
        let pp = PublicParams::<ToyGroup>::setup(SetupMode::Trusted, &mut r).map_err(|e| e.to_string())?;
        let h = pp.trapdoor().ok_or("trusted setup kept no trapdoor")?;
        let h_inv = ToyGroup::scalar_invert(&h).ok_or("zero trapdoor")?;
        let a = Opening::<ToyGroup>::new(ToyGroup::random_scalar(&mut r), ToyGroup::random_scalar(&mut r));
        let m2 = a.m + ToyGroup::scalar_from_u64(r.gen_range(1..101));
        let b = Opening::new(m2, a.r + (a.m - m2) * h_inv);
        ensure(pp.commit(&a) == pp.commit(&b), || format!("trial {i}: not a collision"))?;
        let got = pp.extract_trapdoor_from_collision(&a, &b).map_err(|e| e.to_string())?;
        let dlog = ToyGroup::brute_force_dlog(&pp.h()).map_err(|e| e.to_string())?;
        ensure(got == dlog, || format!("trial {i}: recovered {got:?}, dlog {dlog:?}"))?;
        // (r'-r)^-1 (m'-m) with the primes on the second opening lands on -h.
        let literal = ToyGroup::scalar_invert(&(b.r - a.r)).ok_or("r' = r")? * (b.m - a.m);
        ensure(literal == -dlog, || format!("trial {i}: (r'-r)^-1 (m'-m) is not -h"))?;
    }
    Ok("100 collisions, trapdoor equals brute-force dlog of H every time; (r'-r)^-1 (m'-m) equals -h".into())
}

fn prepared<G: PrimeGroup>(name: &str) -> Result<Prepared<G>, String> {
    builtin_scenario(name)
        .ok_or_else(|| format!("no scenario {name}"))?
        .prepare(std::path::Path::new("."))
        .map_err(|e| e.to_string())
}

fn c4_detection() -> Outcome {
    let t = Instant::now();
    let p = prepared::<Secp256k1>("one-tamperer-n10-k3")?;
    let stats = run_trials(&p.config, &p.data, &p.adversary, 20_000, p.seed).map_err(|e| e.to_string())?;
    let rate = stats.abort_rate_at(6);
    ensure((0.289..=0.311).contains(&rate), || format!("step-6 abort rate {rate}"))?;
    ensure(stats.aborts() == stats.aborts_at(6), || {
        format!("aborts outside step 6: {:?}", stats.aborts_by_step)
    })?;
    ensure(stats.correct_sums == 0, || {
        format!("{} completed runs reported the true sum", stats.correct_sums)
    })?;
    let full = prepared::<Secp256k1>("one-tamperer-n10-k10")?;
    let all = run_trials(&full.config, &full.data, &full.adversary, 2_000, full.seed).map_err(|e| e.to_string())?;
    let full_rate = all.abort_rate_at(6);
    ensure(full_rate == 1.0, || format!("k=n abort rate {full_rate}"))?;
    let t = t.elapsed();
    within(Duration::from_secs(120), t)?;
    Ok(format!(
        "n=10 k=3: {rate:.4} over 20000; k=n: {full_rate} over 2000; {t:.1?}"
    ))
}

/// Exhaustive over every coin pair of every round for n=5, k=2.
fn exhaustive_pick_counts() -> BTreeMap<Vec<usize>, u64> {
    fn walk(session: PickSession<usize>, counts: &mut BTreeMap<Vec<usize>, u64>) {
        if session.is_done() {
            let mut s: Vec<usize> = session.picked().copied().collect();
            s.sort_unstable();
            *counts.entry(s).or_default() += 1;
            return;
        }
        let l = session.list_len() as u64;
        for mc in 0..l {
            for mv in 0..l {
                let mut next = session.clone();
                next.settle_round(derive_index(mc, mv, l) as usize);
                walk(next, counts);
            }
        }
    }
    let mut counts = BTreeMap::new();
    walk(PickSession::new(&[0, 1, 2, 3, 4], 2).expect("k <= n"), &mut counts);
    counts
}

fn pick_p(
    n: usize,
    k: usize,
    country: PickBehavior,
    verifier: PickBehavior,
    trials: u64,
    seed: u64,
) -> Result<f64, String> {
    let params = PickParams::Shared(PublicParams::<ToyGroup>::hash_derived());
    let roster: Vec<usize> = (0..n).collect();
    let mut r = rng(seed);
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for _ in 0..trials {
        let (mut c, mut v) = (country, verifier);
        let out = run_pick(
            &roster,
            k,
            &params,
            &mut c,
            &mut v,
            FaultPolicy::HonestCompletes,
            &mut r,
        )
        .map_err(|e| e.to_string())?;
        let mut s = out.picked;
        s.sort_unstable();
        *counts.entry(s).or_default() += 1;
    }
    let cells = (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1));
    let mut freq: Vec<u64> = counts.into_values().collect();
    freq.resize(cells, 0);
    Ok(chi_square_uniform_p(&freq))
}

fn c5_pick_uniformity() -> Outcome {
    let counts = exhaustive_pick_counts();
    let freq: Vec<u64> = counts.values().copied().collect();
    ensure(counts.len() == 10 && freq.iter().all(|f| *f == freq[0]), || {
        format!("exhaustive counts {counts:?}")
    })?;
    let mut report = vec![format!("exhaustive: 10 subsets x {}", freq[0])];
    let strategies = [
        ("constant-zero", BiasStrategy::ConstantZero),
        ("target-firm", BiasStrategy::TargetFirm { firm: 2 }),
        ("commitment-adaptive", BiasStrategy::CommitmentAdaptive),
    ];
    for (i, (name, s)) in strategies.into_iter().enumerate() {
        let p = pick_p(
            5,
            2,
            PickBehavior::Honest,
            PickBehavior::Bias(s),
            100_000,
            50 + i as u64,
        )?;
        ensure(p > 0.001, || format!("{name}: chi-square p = {p}"))?;
        report.push(format!("{name} p={p:.3}"));
    }
    for (n, k) in [(6, 3), (8, 1)] {
        let p = pick_p(n, k, PickBehavior::Honest, PickBehavior::Honest, 100_000, 60 + n as u64)?;
        ensure(p > 0.001, || format!("honest ({n},{k}): chi-square p = {p}"))?;
        report.push(format!("honest ({n},{k}) p={p:.3}"));
    }
    Ok(report.join("; "))
}

fn c6_summation() -> Outcome {
    let mut r = rng(6);
    for i in 0..200 {
        let n = r.gen_range(0..=64);
        let k = r.gen_range(0..=n);
        let config = SessionConfig::simple(PublicParams::<Secp256k1>::hash_derived(), n, k);
        let m: Vec<u64> = (0..n).map(|_| r.gen_range(0..1u64 << 40)).collect();
        let total: u64 = m.iter().sum();
        let (verdict, session) = run_audit(&config, EnvironmentData::Emissions(m), &Conduct::default(), &mut r)
            .map_err(|e| e.to_string())?;
        let cs: Option<Vec<Commitment<Secp256k1>>> = session.published_commitments().into_iter().collect();
        let sum_c: Commitment<Secp256k1> = cs.ok_or("missing commitment")?.into_iter().sum();
        let published = session.published_sum().ok_or("no published sum")?;
        ensure(sum_c == config.pp.commit(&published), || {
            format!("session {i}: product of commitments differs")
        })?;
        ensure(published.m == Secp256k1::scalar_from_u64(total), || {
            format!("session {i}: m is not the true sum")
        })?;
        ensure(
            verdict
                == Verdict::Completed {
                    accepted_m: published.m,
                },
            || format!("session {i}: verdict {verdict:?}"),
        )?;
    }
    for i in 0..1000u64 {
        let n = r.gen_range(1..=64);
        let config = SessionConfig::simple(PublicParams::<Secp256k1>::hash_derived(), n, r.gen_range(0..=n));
        let sign = if r.gen() { 1 } else { -1 };
        let (dm, dr) = if r.gen() { (sign, 0) } else { (0, sign) };
        let adv = AdversarySpec::honest()
            .corrupt(Role::Country, Behavior::MisreportSum { dm, dr })
            .map_err(|e| e.to_string())?;
        let res = run_session(&config, &DataSource::Uniform { max: 1 << 30 }, &adv, i).map_err(|e| e.to_string())?;
        let cause = res.verdict.abort();
        ensure(
            cause.is_some_and(|c| {
                c.step == Step::CheckSum && c.culprit == Role::Country && c.reason == AbortReason::SumMismatch
            }),
            || format!("perturbation {i} (dm={dm}, dr={dr}): {:?}", res.verdict),
        )?;
    }
    Ok("200 honest sessions sum exactly; 1000/1000 unit perturbations abort at step 7".into())
}

fn c7_leakage() -> Outcome {
    let mut r = rng(7);
    let mut checked = 0;
    for i in 0..1000u64 {
        let n = r.gen_range(2..=12);
        let k = r.gen_range(0..=n);
        let config = SessionConfig::simple(PublicParams::<ToyGroup>::hash_derived(), n, k);
        let mut adv = AdversarySpec::honest()
            .corrupt(Role::Verifier, Behavior::HonestButObserved)
            .map_err(|e| e.to_string())?;
        let tamperer = r.gen_range(0..n);
        adv = adv
            .corrupt(Role::Firm(tamperer), Behavior::TamperReport(Tamper::Delta(1)))
            .map_err(|e| e.to_string())?;
        let observer = (tamperer + 1) % n;
        adv = adv
            .corrupt(Role::Firm(observer), Behavior::HonestButObserved)
            .map_err(|e| e.to_string())?;
        let res = run_session(&config, &DataSource::Uniform { max: 90 }, &adv, i).map_err(|e| e.to_string())?;
        let leaks = leakage_violations(&res, &adv);
        ensure(leaks.is_empty(), || format!("session {i}: {leaks:?}"))?;
        let routing = routing_violations(&res.transcript);
        ensure(routing.is_empty(), || {
            format!("session {i}: misrouted messages {routing:?}")
        })?;
        let picked = res.selection.clone().unwrap_or_default();
        for f in corrupted_plaintexts(&res, &adv) {
            ensure(f == tamperer || f == observer || picked.contains(&f), || {
                format!("session {i}: corrupted parties saw firm {f}'s plaintext")
            })?;
        }
        checked += 1;
    }

    // Two unpicked honest firms, totals (a, b) vs (a', b') with a + b = a' + b':
    // the joint distribution of their broadcasts is the same.
    let pp = PublicParams::<ToyGroup>::hash_derived();
    let pairs = |m1: u64, m2: u64| {
        let mut v = Vec::with_capacity(101 * 101);
        for r1 in 0..101 {
            let c1 = pp
                .commit(&Opening::from_u64(m1, ToyGroup::scalar_from_u64(r1)))
                .to_bytes();
            for r2 in 0..101 {
                let c2 = pp
                    .commit(&Opening::from_u64(m2, ToyGroup::scalar_from_u64(r2)))
                    .to_bytes();
                v.push((c1.clone(), c2));
            }
        }
        v.sort();
        v
    };
    ensure(pairs(10, 30) == pairs(25, 15), || {
        "broadcast multisets differ for equal totals".into()
    })?;
    Ok(format!(
        "{checked} sessions, zero leakage or routing violations; exhaustive broadcast multisets equal"
    ))
}

fn c8_collusion() -> Outcome {
    let p = prepared::<Secp256k1>("collusion-n10-k3")?;
    let (mut unpicked, mut picked) = (0, 0);
    for i in 0..1000u64 {
        let res = run_session(&p.config, &p.data, &p.adversary, i).map_err(|e| e.to_string())?;
        let list = res
            .selection
            .clone()
            .ok_or_else(|| format!("run {i}: list never revealed"))?;
        if list.contains(&2) {
            picked += 1;
            let cause = res.verdict.abort();
            ensure(
                cause.is_some_and(|c| c.step == Step::CheckPicked && c.culprit == Role::Firm(2)),
                || format!("run {i}: firm picked but verdict {:?}", res.verdict),
            )?;
        } else {
            unpicked += 1;
            ensure(res.verdict.is_completed() && !res.accepted_correct_sum(), || {
                format!("run {i}: firm unpicked but verdict {:?}", res.verdict)
            })?;
        }
    }
    ensure(picked > 0 && unpicked > 0, || "one branch never exercised".into())?;
    Ok(format!(
        "{unpicked} unpicked runs pass step 7 with a wrong total; {picked} picked runs abort at step 6"
    ))
}

fn c9_measurement() -> Outcome {
    let meter = MeterKeypair::from_seed([9; 32]);
    let pk = meter.public();
    let cycle = CycleId::year(2025);
    let start = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let mut r = rng(9);
    let values: Vec<u32> = (0..8760).map(|_| r.gen_range(0..5_000_000)).collect();
    let mut ledger = FirmLedger::new("F1");
    for (h, e) in values.iter().enumerate() {
        let reading = meter.sign_reading("F1", start + chrono::Duration::hours(h as i64), *e);
        ledger.append_reading(reading, &pk).map_err(|e| e.to_string())?;
    }
    let resum: u64 = values.iter().map(|v| u64::from(*v)).sum();
    let agg = ledger.aggregate(&cycle, &pk).map_err(|e| e.to_string())?;
    ensure(agg == resum, || format!("aggregate {agg} vs re-sum {resum}"))?;

    let pp = PublicParams::<Secp256k1>::hash_derived();
    let report = build_report(&pp, &ledger, &cycle, &pk, &mut r).map_err(|e| e.to_string())?;
    ensure(spot_check(&pp, &report, &ledger, &cycle, &pk).passed(), || {
        "honest ledger fails".into()
    })?;
    let mut fields = [0u32; 5];
    for i in 0..500 {
        let mut bad = ledger.clone();
        let idx = r.gen_range(0..bad.len());
        let field = r.gen_range(0..5);
        fields[field] += 1;
        let entry = &mut bad.entries_mut()[idx];
        match field {
            0 => entry.reading.e ^= 1 << r.gen_range(0..22),
            1 => entry.reading.hour += chrono::Duration::hours(r.gen_range(1..48)),
            2 => entry.reading.firm_id.push('x'),
            3 => entry.reading.signature[r.gen_range(0..64)] ^= 1 << r.gen_range(0..8),
            _ => entry.chain.0[r.gen_range(0..32)] ^= 1 << r.gen_range(0..8),
        }
        let out = spot_check(&pp, &report, &bad, &cycle, &pk);
        ensure(!out.passed(), || {
            format!("trial {i}: field {field} of entry {idx} went unnoticed")
        })?;
    }
    Ok(format!(
        "8760 readings re-sum to {resum}; 500/500 tampers caught (per field {fields:?})"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("homomorphism", c1_homomorphism),
        ("exact hiding", c2_hiding),
        ("trapdoor collisions", c3_trapdoor),
        ("detection rate", c4_detection),
        ("pick uniformity", c5_pick_uniformity),
        ("verifiable summation", c6_summation),
        ("leakage boundary", c7_leakage),
        ("collusion control", c8_collusion),
        ("measurement pipeline", c9_measurement),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
