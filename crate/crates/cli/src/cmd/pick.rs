//! Two-party list pick over files: each round, both parties commit, swap
//! commitment files, reveal, and anyone settles the round from the four
//! files.

use std::path::{Path, PathBuf};

use emissions_audit::commitment::{Commitment, PublicParams};
use emissions_audit::group::{point_to_hex, scalar_from_hex, scalar_to_hex, GroupDescriptor, PrimeGroup};
use emissions_audit::random_list::{
    round_commit, run_pick, FaultPolicy, Phase, PickBehavior, PickParams, PickParty, PickRound, PickSession, Reveal,
    RoundRecord, RoundVerdict,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult, ErrorClass};
use crate::io::{self, with_group, Inputs};
use crate::Outcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PickState {
    version: u32,
    group: GroupDescriptor,
    /// `H` of the parameters both parties commit under.
    h: String,
    k: usize,
    roster: Vec<String>,
    /// Roster positions still in the list, in list order.
    remaining: Vec<usize>,
    /// Roster positions picked so far, in pick order.
    picked: Vec<usize>,
    rounds: Vec<serde_json::Value>,
}

impl PickState {
    fn round(&self) -> usize {
        self.picked.len()
    }

    fn done(&self) -> bool {
        self.picked.len() == self.k
    }

    fn picked_ids(&self) -> Vec<&str> {
        self.picked.iter().map(|i| self.roster[*i].as_str()).collect()
    }

    fn summary(&self, command: &str, out: &Path, inputs: &Inputs) -> serde_json::Value {
        json!({
            "command": command,
            "round": self.round(),
            "done": self.done(),
            "picked": self.picked_ids(),
            "out": out.display().to_string(),
            "inputs_sha256": inputs.digest(),
        })
    }

    fn check_params<G: PrimeGroup>(&self, pp: &PublicParams<G>) -> CliResult<()> {
        if self.version != 1 || self.group != G::descriptor() || self.h != point_to_hex::<G>(&pp.h()) {
            return Err(CliError::config("pick state does not match these parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommitMsg {
    version: u32,
    group: GroupDescriptor,
    round: usize,
    l: usize,
    party: PickParty,
    c: String,
}

/// A party's opening, kept private until the reveal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RevealMsg {
    version: u32,
    group: GroupDescriptor,
    round: usize,
    party: PickParty,
    m: u64,
    r: String,
}

fn parse_party(s: &str) -> CliResult<PickParty> {
    match s {
        "country" => Ok(PickParty::Country),
        "verifier" => Ok(PickParty::Verifier),
        other => Err(CliError::config(format!("unknown party `{other}`"))),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::new(ErrorClass::Parse, format!("{what}: {e}")))
}

fn read_roster(inputs: &mut Inputs, path: &Path) -> CliResult<Vec<String>> {
    let text = inputs.read(path)?;
    let roster: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = roster.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(CliError::config(format!("firm `{dup}` listed twice")));
    }
    Ok(roster)
}

fn new_state<G: PrimeGroup>(pp: &PublicParams<G>, roster: Vec<String>, k: usize) -> CliResult<PickState> {
    if k > roster.len() {
        return Err(CliError::config(format!("cannot pick {k} of {} firms", roster.len())));
    }
    Ok(PickState {
        version: 1,
        group: G::descriptor(),
        h: point_to_hex::<G>(&pp.h()),
        k,
        remaining: (0..roster.len()).collect(),
        roster,
        picked: Vec::new(),
        rounds: Vec::new(),
    })
}

fn write_state(path: &Path, state: &PickState) -> CliResult<()> {
    io::write(path, &serde_json::to_string_pretty(state).expect("state serializes"))
}

pub fn init(roster: &Path, k: usize, pp: &Path, out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("pick-init");
    let pp_text = inputs.read(pp)?;
    let roster = read_roster(&mut inputs, roster)?;
    inputs.note(&k.to_string());
    let kind = io::params_group(&pp_text)?;
    let state = with_group!(kind, G => new_state(&io::load_params::<G>(&pp_text)?, roster, k))?;
    write_state(out, &state)?;
    Outcome::ok(state.summary("pick-init", out, &inputs))
}

pub fn commit(
    state: &Path,
    pp: &Path,
    party: &str,
    seed: Option<u64>,
    out: &Path,
    secret: &Path,
) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("pick-commit");
    let state_text = inputs.read(state)?;
    let pp_text = inputs.read(pp)?;
    inputs.note(&format!("{party} {seed:?}"));
    let party = parse_party(party)?;
    let state: PickState = parse_json("pick state", &state_text)?;
    let kind = io::params_group(&pp_text)?;
    with_group!(kind, G => commit_in::<G>(&state, &pp_text, party, seed, out, secret, &inputs))
}

fn commit_in<G: PrimeGroup>(
    state: &PickState,
    pp_text: &str,
    party: PickParty,
    seed: Option<u64>,
    out: &Path,
    secret: &Path,
    inputs: &Inputs,
) -> CliResult<Outcome> {
    let pp = io::load_params::<G>(pp_text)?;
    state.check_params(&pp)?;
    if state.done() {
        return Err(CliError::config("pick is already complete"));
    }
    let l = state.remaining.len();
    let params = PickParams::Shared(pp);
    let (reveal, c) = round_commit(&params.base_for(party), l, &mut io::rng(seed));
    let msg = CommitMsg {
        version: 1,
        group: G::descriptor(),
        round: state.round(),
        l,
        party,
        c: c.to_hex(),
    };
    let opening = RevealMsg {
        version: 1,
        group: G::descriptor(),
        round: state.round(),
        party,
        m: reveal.m,
        r: scalar_to_hex::<G>(&reveal.r),
    };
    io::write(secret, &serde_json::to_string_pretty(&opening).expect("serializes"))?;
    io::write(out, &serde_json::to_string_pretty(&msg).expect("serializes"))?;
    Outcome::ok(json!({
        "command": "pick-commit",
        "round": msg.round,
        "party": party,
        "c": msg.c,
        "out": out.display().to_string(),
        "inputs_sha256": inputs.digest(),
    }))
}

pub fn reveal(secret: &Path, peer_commit: &Path, out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("pick-reveal");
    let own: RevealMsg = parse_json("secret", &inputs.read(secret)?)?;
    let peer: CommitMsg = parse_json("peer commitment", &inputs.read(peer_commit)?)?;
    if peer.round != own.round || peer.party != own.party.other() || peer.group != own.group {
        return Err(CliError::config(format!(
            "peer commitment is for round {} by {}, expected round {} by {}",
            peer.round,
            peer.party,
            own.round,
            own.party.other()
        )));
    }
    io::write(out, &serde_json::to_string_pretty(&own).expect("serializes"))?;
    Outcome::ok(json!({
        "command": "pick-reveal",
        "round": own.round,
        "party": own.party,
        "out": out.display().to_string(),
        "inputs_sha256": inputs.digest(),
    }))
}

pub fn settle(state: &Path, pp: &Path, commits: &[PathBuf], reveals: &[PathBuf], out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("pick-settle");
    let state_text = inputs.read(state)?;
    let pp_text = inputs.read(pp)?;
    let commits = commits
        .iter()
        .map(|p| parse_json::<CommitMsg>("commitment", &inputs.read(p)?))
        .collect::<CliResult<Vec<_>>>()?;
    let reveals = reveals
        .iter()
        .map(|p| parse_json::<RevealMsg>("reveal", &inputs.read(p)?))
        .collect::<CliResult<Vec<_>>>()?;
    let state: PickState = parse_json("pick state", &state_text)?;
    let kind = io::params_group(&pp_text)?;
    with_group!(kind, G => settle_in::<G>(state, &pp_text, &commits, &reveals, out, &inputs))
}

fn settle_in<G: PrimeGroup>(
    mut state: PickState,
    pp_text: &str,
    commits: &[CommitMsg],
    reveals: &[RevealMsg],
    out: &Path,
    inputs: &Inputs,
) -> CliResult<Outcome> {
    let pp = io::load_params::<G>(pp_text)?;
    state.check_params(&pp)?;
    if state.done() {
        return Err(CliError::config("pick is already complete"));
    }
    let (round_no, l) = (state.round(), state.remaining.len());
    let mut round = PickRound::<G>::new(round_no, l);
    let mut slots: [Option<Commitment<G>>; 2] = [None, None];
    for party in [PickParty::Country, PickParty::Verifier] {
        let msg = commits
            .iter()
            .find(|c| c.party == party)
            .ok_or_else(|| CliError::config(format!("no commitment from {party}")))?;
        if msg.round != round_no || msg.l != l || msg.group != G::descriptor() {
            return Err(CliError::config(format!(
                "{party}'s commitment is not for round {round_no}"
            )));
        }
        let c = Commitment::<G>::from_hex(&msg.c)?;
        round.record_commitment(party, c)?;
        slots[usize::from(party == PickParty::Verifier)] = Some(c);
    }
    let mut opened: [Option<Reveal<G>>; 2] = [None, None];
    for msg in reveals {
        if msg.round != round_no || msg.group != G::descriptor() {
            return Err(CliError::config(format!(
                "{}'s reveal is not for round {round_no}",
                msg.party
            )));
        }
        let rv = Reveal {
            m: msg.m,
            r: scalar_from_hex::<G>(&msg.r)?,
        };
        round.record_reveal(msg.party, rv)?;
        opened[usize::from(msg.party == PickParty::Verifier)] = Some(rv);
    }
    let params = PickParams::Shared(pp);
    let verdict = match round.check(&params)? {
        Phase::Settled { .. } => RoundVerdict::Settled {
            index: round.selected_index().expect("settled"),
        },
        Phase::Faulted(p) => RoundVerdict::Faulted(p),
        other => unreachable!("check returned {other:?}"),
    };
    let record = RoundRecord {
        round: round_no,
        l,
        country_commitment: slots[0],
        verifier_commitment: slots[1],
        country_reveal: opened[0],
        verifier_reveal: opened[1],
        verdict: verdict.clone(),
    };
    match verdict {
        RoundVerdict::Settled { index } => {
            let remaining = state.remaining.iter().map(|i| (*i, *i)).collect();
            let picked = state.picked.iter().map(|i| (*i, *i)).collect();
            let mut session = PickSession::from_parts(remaining, picked, state.k);
            session.settle_round(index);
            state.remaining = session.remaining_entries().iter().map(|e| e.0).collect();
            state.picked = session.picked_entries().iter().map(|e| e.0).collect();
            state.rounds.push(record.to_json());
            write_state(out, &state)?;
            let mut summary = state.summary("pick-settle", out, inputs);
            summary["selected"] = json!(state.roster[*state.picked.last().expect("just settled")]);
            Outcome::ok(summary)
        }
        RoundVerdict::Faulted(p) => Ok(Outcome {
            summary: json!({
                "command": "pick-settle",
                "verdict": "REJECT",
                "culprit": p,
                "round": round_no,
                "record": record.to_json(),
                "inputs_sha256": inputs.digest(),
            }),
            rejected: true,
        }),
        RoundVerdict::Unilateral { .. } => unreachable!("not produced by check"),
    }
}

pub fn pick(roster: &Path, k: usize, pp: &Path, seed: Option<u64>, out: &Path) -> CliResult<Outcome> {
    let mut inputs = Inputs::new("pick");
    let pp_text = inputs.read(pp)?;
    let roster = read_roster(&mut inputs, roster)?;
    inputs.note(&format!("{k} {seed:?}"));
    let kind = io::params_group(&pp_text)?;
    let state = with_group!(kind, G => pick_in::<G>(&pp_text, roster, k, seed))?;
    write_state(out, &state)?;
    Outcome::ok(state.summary("pick", out, &inputs))
}

fn pick_in<G: PrimeGroup>(pp_text: &str, roster: Vec<String>, k: usize, seed: Option<u64>) -> CliResult<PickState> {
    let pp = io::load_params::<G>(pp_text)?;
    let mut state = new_state(&pp, roster, k)?;
    let positions: Vec<usize> = (0..state.roster.len()).collect();
    let outcome = run_pick(
        &positions,
        k,
        &PickParams::Shared(pp),
        &mut PickBehavior::Honest,
        &mut PickBehavior::Honest,
        FaultPolicy::HonestCompletes,
        &mut io::rng(seed),
    )?;
    state.picked = outcome.picked;
    state.remaining.retain(|i| !state.picked.contains(i));
    state.rounds = outcome.rounds.iter().map(RoundRecord::to_json).collect();
    Ok(state)
}
