//! Subcommands behind the `secount` binary.
//!
//! Every command writes its report to the supplied writer and maps failures
//! onto a fixed exit-code contract (see [`CliError::exit_code`]).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use secount::analysis::{self, AnalysisError, AttackMethod, Coalition, InferredBit};
use secount::node::{self, NodeError, NodeOptions};
use secount::params::{BucketParams, ParamMode};
use secount::protocol::TallyError;
use secount::replay::{self, ReplayError, Verdict};
use secount::scenario::{ScenarioConfig, ScenarioMode, SimulationError};
use secount::seeding::{stream_rng, Stream};
use secount::transport::{MemoryChannel, Roster, TcpChannel, TcpOptions, Transcript};
use secount::Announce;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed for buckets {0:?}")]
    Mismatch(Vec<usize>),
    #[error("protocol fault: {0}")]
    Protocol(String),
    #[error("transport fault: {0}")]
    Transport(String),
    #[error("cannot write report: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            CliError::Protocol(_) => EXIT_PROTOCOL,
            CliError::Transport(_) | CliError::Output(_) => EXIT_TRANSPORT,
        }
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

impl From<TallyError> for CliError {
    fn from(err: TallyError) -> Self {
        match err {
            TallyError::Transport(err) => CliError::Transport(err.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(err: SimulationError) -> Self {
        match err {
            SimulationError::Params(err) => usage(err),
            SimulationError::Tally(err) => err.into(),
        }
    }
}

impl From<NodeError> for CliError {
    fn from(err: NodeError) -> Self {
        match err {
            NodeError::Usage(_) | NodeError::Params(_) => usage(err),
            NodeError::Protocol(_) => CliError::Protocol(err.to_string()),
            NodeError::Transport(err) => CliError::Transport(err.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "secount", version, about = "Private member counting around a ring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a scenario file with random secrets.
    Init(InitArgs),
    /// Run a whole tally in one process.
    Simulate(SimulateArgs),
    /// Run one participant over TCP.
    Node(NodeArgs),
    /// Merge per-node transcripts into one.
    Merge(MergeArgs),
    /// Replay a transcript against a scenario's secrets.
    Verify(VerifyArgs),
    /// Coalition attack on one participant's membership bits.
    Attack(AttackArgs),
    /// Jacobi-symbol probe on a transcript.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Memory,
    Tcp,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(short = 'n', long, default_value_t = 20)]
    pub ring_size: usize,
    #[arg(short = 'b', long, default_value_t = 100)]
    pub buckets: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "centimillionaire")]
    pub mode: ScenarioMode,
    #[arg(long, default_value = "random")]
    pub params: ParamMode,
    #[arg(long, default_value_t = 64)]
    pub bits: u64,
    #[arg(long, default_value = "calls")]
    pub announce: Announce,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TransportKind::Memory)]
    pub transport: TransportKind,
}

#[derive(Debug, Args)]
pub struct NodeArgs {
    #[arg(long)]
    pub roster: PathBuf,
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub config: PathBuf,
    /// Where to write the legs this node placed.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub connect_retries: u32,
    /// Seconds to wait on a single TCP read or acknowledgement.
    #[arg(long, default_value_t = 30)]
    pub timeout: u64,
    /// Seconds to wait for an expected incoming call.
    #[arg(long, default_value_t = 600)]
    pub wait: u64,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub parts: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub colluders: Vec<usize>,
    #[arg(long)]
    pub target: usize,
    /// Brute-force step budget per bucket.
    #[arg(long, default_value_t = 1 << 20)]
    pub budget: u64,
    /// Attack only this bucket.
    #[arg(long)]
    pub bucket: Option<usize>,
    /// Scenario file: gives colluders their own bits and enables scoring.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long)]
    pub bucket: Option<usize>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Init(args) => cmd_init(&args, out),
        Command::Simulate(args) => cmd_simulate(&args, out),
        Command::Node(args) => cmd_node(&args, out),
        Command::Merge(args) => cmd_merge(&args, out),
        Command::Verify(args) => cmd_verify(&args, out),
        Command::Attack(args) => cmd_attack(&args, out),
        Command::Probe(args) => cmd_probe(&args, out),
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    ScenarioConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_transcript(path: &Path) -> Result<Transcript, CliError> {
    Transcript::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn save_transcript(transcript: &Transcript, path: &Path) -> Result<(), CliError> {
    transcript
        .persist(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_init(args: &InitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.ring_size < 2 || args.buckets < 1 {
        return Err(usage("need at least 2 participants and 1 bucket"));
    }
    let mut rng = stream_rng(args.seed, Stream::Scenario { index: 0 });
    let mut config = ScenarioConfig::random(
        args.ring_size,
        args.buckets,
        args.mode,
        args.params,
        args.seed,
        &mut rng,
    );
    config.bits = args.bits;
    config.announce = args.announce;
    fs::write(&args.out, config.to_text()).map_err(|e| usage(format!("{}: {e}", args.out.display())))?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let output = match args.transport {
        TransportKind::Memory => config.simulate(&mut MemoryChannel::new(1..=config.ring_size))?,
        TransportKind::Tcp => {
            let mut channel = TcpChannel::bind_local(1..=config.ring_size, TcpOptions::default())
                .map_err(|e| CliError::Transport(e.to_string()))?;
            config.simulate(&mut channel)?
        }
    };
    let result = &output.result;

    for bucket in 1..=config.bucket_count {
        match (result.count(bucket), result.faults.get(&bucket)) {
            (Some(count), _) => writeln!(out, "bucket {bucket}: {count}")?,
            (None, Some(fault)) => writeln!(out, "bucket {bucket}: FAULT {fault}")?,
            (None, None) => writeln!(out, "bucket {bucket}: FAULT no count")?,
        }
    }
    let counts: Vec<String> = (1..=config.bucket_count)
        .map(|b| result.count(b).map_or_else(|| "-".to_string(), |c| c.to_string()))
        .collect();
    writeln!(out, "counts: {}", counts.join(" "))?;
    let occupied: Vec<(usize, usize)> = result.counts.iter().filter(|(_, &c)| c > 0).map(|(&b, &c)| (b, c)).collect();
    match (occupied.last(), occupied.first()) {
        (Some(&(rich, rich_size)), Some(&(poor, poor_size))) => {
            writeln!(out, "richest: bucket {rich} ({})", people(rich_size))?;
            writeln!(out, "poorest: bucket {poor} ({})", people(poor_size))?;
        }
        _ => writeln!(out, "richest: none\npoorest: none")?,
    }
    writeln!(out, "protocol calls: {}", result.protocol_calls)?;
    writeln!(out, "announce calls: {}", result.announce_calls)?;
    writeln!(out, "total calls: {}", result.total_calls())?;
    if let Some(path) = &args.transcript {
        save_transcript(&output.transcript, path)?;
        writeln!(out, "transcript: {}", path.display())?;
    }
    if !result.faults.is_empty() {
        let buckets: Vec<_> = result.faults.keys().collect();
        return Err(CliError::Protocol(format!("faulted buckets {buckets:?}")));
    }
    Ok(())
}

fn people(count: usize) -> String {
    match count {
        1 => "1 participant".into(),
        n => format!("{n} participants"),
    }
}

fn cmd_node(args: &NodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let roster_text =
        fs::read_to_string(&args.roster).map_err(|e| usage(format!("{}: {e}", args.roster.display())))?;
    let roster = Roster::parse(&roster_text).map_err(usage)?;
    let addr = roster
        .addr(args.index)
        .ok_or_else(|| usage(format!("index {} not in roster 1..={}", args.index, roster.len())))?;
    let listener = TcpListener::bind(addr).map_err(|e| CliError::Transport(format!("cannot listen on {addr}: {e}")))?;
    let options = NodeOptions {
        tcp: TcpOptions {
            timeout: Duration::from_secs(args.timeout),
            connect_retries: args.connect_retries,
            ..TcpOptions::default()
        },
        wait: Duration::from_secs(args.wait),
    };
    let report = node::run_node(listener, &roster, args.index, &config, &options)?;
    if let Some(path) = &args.transcript {
        let transcript = node::merge_node_legs(report.sent.clone()).map_err(|e| CliError::Protocol(e.to_string()))?;
        save_transcript(&transcript, path)?;
    }
    let counts: Vec<String> = (1..=config.bucket_count)
        .map(|b| report.counts.get(&b).map_or_else(|| "-".to_string(), |c| c.to_string()))
        .collect();
    writeln!(out, "participant {}", report.index)?;
    writeln!(out, "counts: {}", counts.join(" "))?;
    writeln!(out, "calls placed: {}", report.sent.len())?;
    if !report.faults.is_empty() {
        let buckets: Vec<_> = report.faults.keys().collect();
        return Err(CliError::Protocol(format!("faulted buckets {buckets:?}")));
    }
    Ok(())
}

fn cmd_merge(args: &MergeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let parts = args
        .parts
        .iter()
        .map(|p| load_transcript(p))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = node::merge_transcripts(&parts).map_err(usage)?;
    save_transcript(&merged, &args.out)?;
    writeln!(out, "merged {} transcripts into {}", parts.len(), args.out.display())?;
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let transcript = load_transcript(&args.transcript)?;
    let report = replay::replay(&transcript, &config).map_err(|e| match e {
        ReplayError::Transcript(e) => usage(e),
        ReplayError::Params(e) => usage(e),
    })?;
    for problem in &report.structure {
        writeln!(out, "FAIL {problem}")?;
    }
    for (bucket, verdict) in &report.verdicts {
        match verdict {
            Verdict::Pass { count } => writeln!(out, "bucket {bucket}: PASS {count}")?,
            Verdict::Fail { reason } => writeln!(out, "bucket {bucket}: FAIL {reason}")?,
        }
    }
    if report.passed() {
        writeln!(out, "PASS")?;
        Ok(())
    } else {
        writeln!(out, "FAIL")?;
        Err(CliError::Mismatch(report.failed_buckets()))
    }
}

fn transcript_params(transcript: &Transcript, only: Option<usize>) -> Result<Vec<BucketParams>, CliError> {
    let all = analysis::params_from_transcript(transcript).map_err(usage)?;
    match only {
        None => Ok(all),
        Some(bucket) => {
            let chosen: Vec<_> = all.into_iter().filter(|p| p.bucket_id == bucket).collect();
            if chosen.is_empty() {
                return Err(usage(format!("bucket {bucket} not in transcript")));
            }
            Ok(chosen)
        }
    }
}

fn cmd_attack(args: &AttackArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let transcript = load_transcript(&args.transcript)?;
    let config = args.config.as_deref().map(load_config).transpose()?;
    let all_params = transcript_params(&transcript, args.bucket)?;
    if args.colluders.contains(&args.target) {
        return Err(usage("the target cannot be one of the colluders"));
    }

    let mut scored = 0;
    let mut correct = 0;
    let mut total_work = 0u64;
    for params in &all_params {
        let bucket = params.bucket_id;
        let mut coalition = Coalition::new(args.colluders.iter().copied());
        if let Some(config) = &config {
            coalition = coalition.with_bits(
                args.colluders
                    .iter()
                    .filter_map(|&i| Some((i, config.values.get(i.checked_sub(1)?)?.is_member(bucket)))),
            );
        }
        let outcome = match analysis::collusion_attack(&transcript, params, &coalition, args.target, args.budget) {
            Ok(outcome) => outcome,
            Err(err @ (AnalysisError::NotSandwiched { .. } | AnalysisError::MissingData(_))) => {
                return Err(usage(err))
            }
            Err(err) => {
                writeln!(out, "bucket {bucket}: error {err}")?;
                continue;
            }
        };
        total_work += outcome.work;
        let method = match outcome.method {
            AttackMethod::CountSubtraction => "count-subtraction",
            AttackMethod::PohligHellman => "pohlig-hellman",
            AttackMethod::BruteForce => "brute-force",
        };
        let inferred = match outcome.inferred {
            InferredBit::Member => "member",
            InferredBit::Nonmember => "nonmember",
            InferredBit::Inconclusive => "inconclusive",
        };
        write!(out, "bucket {bucket}: {inferred} via {method}, work {}", outcome.work)?;
        if let Some(truth) = config
            .as_ref()
            .and_then(|c| c.values.get(args.target.checked_sub(1)?))
            .map(|v| v.is_member(bucket))
        {
            let right = match outcome.inferred {
                InferredBit::Member => Some(truth),
                InferredBit::Nonmember => Some(!truth),
                InferredBit::Inconclusive => None,
            };
            scored += 1;
            match right {
                Some(true) => {
                    correct += 1;
                    write!(out, " (correct)")?;
                }
                Some(false) => write!(out, " (wrong)")?,
                None => write!(out, " (truth: {})", if truth { "member" } else { "nonmember" })?,
            }
        }
        writeln!(out)?;
    }
    writeln!(out, "total work: {total_work}")?;
    if config.is_some() {
        writeln!(out, "correct: {correct}/{scored}")?;
    }
    Ok(())
}

fn cmd_probe(args: &ProbeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let transcript = load_transcript(&args.transcript)?;
    let mut found = BTreeMap::new();
    for params in transcript_params(&transcript, args.bucket)? {
        let probe = analysis::jacobi_probe(&transcript, &params).map_err(usage)?;
        let symbols: Vec<String> = probe.symbols.iter().map(|(from, s)| format!("{from}:{s:+}")).collect();
        match probe.first_member {
            Some(member) => {
                found.insert(probe.bucket, member);
                writeln!(out, "bucket {}: first member {member} [{}]", probe.bucket, symbols.join(" "))?
            }
            None => writeln!(out, "bucket {}: inconclusive [{}]", probe.bucket, symbols.join(" "))?,
        }
    }
    writeln!(out, "buckets exposed: {}", found.len())?;
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
