//! `emissions-audit`: batch front end for setup, ledgers, reports,
//! verifiable summation, the two-party list pick and simulation.
//!
//! Every command prints one JSON summary line on stdout. Exit status is 0 on
//! success, 3 when a verification rejects, and 1 on error, with
//! `{"error_class", "message"}` on stderr.

mod cmd;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliResult;

#[derive(Parser)]
#[command(
    name = "emissions-audit",
    version,
    about = "Commitment-based emissions reporting and audit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate public parameters.
    Setup {
        /// `toy` (order-101 test group) or `prod` (secp256k1).
        #[arg(long)]
        group: String,
        /// `hash` (H derived from a fixed domain string) or `trusted`.
        #[arg(long, default_value = "hash")]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign an `hour,e` CSV of meter readings into a hash-chained ledger.
    Ingest {
        #[arg(long)]
        firm: String,
        #[arg(long)]
        csv: PathBuf,
        /// 32-byte meter signing seed, hex.
        #[arg(long)]
        meter_seed: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a ledger over a cycle and commit to the total.
    Report {
        #[arg(long)]
        pp: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        firm: String,
        /// Meter public key, hex.
        #[arg(long)]
        meter_pk: String,
        /// Calendar year.
        #[arg(long)]
        cycle: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Report with the opening (private, for the country).
        #[arg(long)]
        out: PathBuf,
        /// Public commitment only, for broadcast.
        #[arg(long)]
        commitment_out: Option<PathBuf>,
    },
    /// Country side: check every report and publish the totals `(m, r)`.
    Aggregate {
        #[arg(long)]
        pp: PathBuf,
        #[arg(long, num_args = 0.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that the broadcast commitments add up to the published totals.
    VerifySum {
        #[arg(long)]
        pp: PathBuf,
        /// Commitment or report files.
        #[arg(long, num_args = 0..)]
        commitments: Vec<PathBuf>,
        #[arg(long)]
        sum: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start a two-party pick: roster (one firm id per line) and k.
    PickInit {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        pp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Commit to this party's value for the current round.
    PickCommit {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        pp: PathBuf,
        /// `country` or `verifier`.
        #[arg(long)]
        party: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Where to keep the opening until the reveal.
        #[arg(long)]
        secret: PathBuf,
    },
    /// Reveal, once the peer's commitment for the same round is in hand.
    PickReveal {
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        peer_commit: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check both openings and settle the round.
    PickSettle {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        pp: PathBuf,
        #[arg(long, num_args = 2)]
        commits: Vec<PathBuf>,
        #[arg(long, num_args = 1..=2)]
        reveals: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pick in one process with two honest parties.
    Pick {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        pp: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run many seeded audit sessions and print the stats table as CSV.
    Simulate {
        /// Built-in scenario name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one seeded audit session and export its transcript.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        transcript_out: PathBuf,
    },
    /// Replay a transcript through a fresh verifier and compare verdicts.
    TranscriptAudit {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        transcript: PathBuf,
    },
}

/// Command result: summary line, and whether a check rejected.
pub struct Outcome {
    pub summary: serde_json::Value,
    pub rejected: bool,
}

impl Outcome {
    pub fn ok(summary: serde_json::Value) -> CliResult<Outcome> {
        Ok(Outcome {
            summary,
            rejected: false,
        })
    }
}

fn dispatch(cmd: Command) -> CliResult<Outcome> {
    match cmd {
        Command::Setup { group, mode, seed, out } => cmd::setup::run(&group, &mode, seed, &out),
        Command::Ingest {
            firm,
            csv,
            meter_seed,
            out,
        } => cmd::measure::ingest(&firm, &csv, &meter_seed, &out),
        Command::Report {
            pp,
            ledger,
            firm,
            meter_pk,
            cycle,
            seed,
            out,
            commitment_out,
        } => cmd::measure::report(
            &pp,
            &ledger,
            &firm,
            &meter_pk,
            &cycle,
            seed,
            &out,
            commitment_out.as_deref(),
        ),
        Command::Aggregate { pp, reports, out } => cmd::summation::aggregate(&pp, &reports, &out),
        Command::VerifySum {
            pp,
            commitments,
            sum,
            out,
        } => cmd::summation::verify_sum(&pp, &commitments, &sum, out.as_deref()),
        Command::PickInit { roster, k, pp, out } => cmd::pick::init(&roster, k, &pp, &out),
        Command::PickCommit {
            state,
            pp,
            party,
            seed,
            out,
            secret,
        } => cmd::pick::commit(&state, &pp, &party, seed, &out, &secret),
        Command::PickReveal {
            secret,
            peer_commit,
            out,
        } => cmd::pick::reveal(&secret, &peer_commit, &out),
        Command::PickSettle {
            state,
            pp,
            commits,
            reveals,
            out,
        } => cmd::pick::settle(&state, &pp, &commits, &reveals, &out),
        Command::Pick {
            roster,
            k,
            pp,
            seed,
            out,
        } => cmd::pick::pick(&roster, k, &pp, seed, &out),
        Command::Simulate {
            scenario,
            trials,
            seed,
            out,
        } => cmd::simulate::simulate(&scenario, trials, seed, out.as_deref()),
        Command::Run {
            scenario,
            seed,
            transcript_out,
        } => cmd::simulate::run_one(&scenario, seed, &transcript_out),
        Command::TranscriptAudit { scenario, transcript } => cmd::simulate::transcript_audit(&scenario, &transcript),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(outcome) => {
            if !outcome.summary.is_null() {
                println!("{}", outcome.summary);
            }
            if outcome.rejected {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
