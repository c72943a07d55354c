//! Participant state machines for the two ring rounds, count extraction and
//! the in-process orchestration of a full tally.
//!
//! Round 1 walks the ring `C1 -> C2 -> ... -> CN -> C1`, each hop raising
//! the accumulator to the caller's secret `e`. Round 2 walks
//! `C1 -> ... -> CN`, each hop applying the matching `d`. Since every
//! `e * d` is 1 or 2 modulo phi, the last participant ends up holding
//! `x^(2^k)` where `k` is the number of members, and reads `k` off the
//! public ladder `x, x^2, x^4, ...`.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::One;
use thiserror::Error;

use crate::bigmod::{self, Natural};
use crate::params::{self, BucketParams, ExponentPair, ParamsError};
use crate::seeding::{stream_rng, Stream};
use crate::transport::{CallLeg, Channel, MessageKind, ProtocolMessage, Transcript, TransportError, BROADCAST};

pub type ParticipantIndex = usize;
pub type BucketId = usize;

/// Pair re-draws allowed when a round-1 output shares a factor with `n`.
const ROUND1_REDRAWS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolFault {
    #[error("bucket {bucket}: accumulator is not a unit modulo n")]
    CorruptedAccumulator { bucket: BucketId },
    #[error("bucket {bucket}: {reason}")]
    ProtocolOrder { bucket: BucketId, reason: &'static str },
    #[error("bucket {bucket}: final accumulator matches no x^(2^k)")]
    TallyMismatch { bucket: BucketId },
    #[error("bucket {bucket}: public numbers differ from the ones sent in round 1")]
    ParamsMismatch { bucket: BucketId },
    #[error("bucket {bucket}: {source}")]
    Params {
        bucket: BucketId,
        #[source]
        source: ParamsError,
    },
    #[error("expected {expected:?} lines, got {found:?}")]
    UnexpectedMessage { expected: MessageKind, found: MessageKind },
}

impl ProtocolFault {
    pub fn bucket(&self) -> Option<BucketId> {
        match self {
            ProtocolFault::CorruptedAccumulator { bucket }
            | ProtocolFault::ProtocolOrder { bucket, .. }
            | ProtocolFault::TallyMismatch { bucket }
            | ProtocolFault::ParamsMismatch { bucket }
            | ProtocolFault::Params { bucket, .. } => Some(*bucket),
            ProtocolFault::UnexpectedMessage { .. } => None,
        }
    }
}

/// A participant's private input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SecretValue {
    /// Wealth bucket, `1..=bucket_count`; member of exactly that bucket.
    Bucket(BucketId),
    /// Arbitrary predicates: bit `i` is membership in bucket `i + 1`.
    Bits(Vec<bool>),
}

impl SecretValue {
    pub fn is_member(&self, bucket: BucketId) -> bool {
        match self {
            SecretValue::Bucket(value) => *value == bucket,
            SecretValue::Bits(bits) => bucket
                .checked_sub(1)
                .and_then(|i| bits.get(i))
                .copied()
                .unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Idle,
    Round1Done,
    Round2Done,
}

/// The running residue passed around the ring for one bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accumulator {
    pub bucket_id: BucketId,
    pub value: Natural,
}

impl Accumulator {
    pub fn new(bucket_id: BucketId, value: Natural) -> Self {
        Accumulator { bucket_id, value }
    }

    fn check(&self, params: &BucketParams) -> Result<(), ProtocolFault> {
        let unit = self.value > Natural::one()
            && self.value < params.n
            && bigmod::gcd(&self.value, &params.n).is_one();
        if unit {
            Ok(())
        } else {
            Err(ProtocolFault::CorruptedAccumulator {
                bucket: self.bucket_id,
            })
        }
    }
}

/// Position-dependent duties in the ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Chooses the public numbers, opens round 1 and round 2.
    Initiator,
    Relay,
    /// Last in the ring: extracts counts and announces them.
    Extractor,
}

impl Role {
    pub fn at(position: usize, ring_size: usize) -> Role {
        if position == 0 {
            Role::Initiator
        } else if position + 1 == ring_size {
            Role::Extractor
        } else {
            Role::Relay
        }
    }
}

/// One ring member: its secret, the public numbers it has seen and the
/// exponent pairs it drew for them.
#[derive(Debug, Clone)]
pub struct Participant {
    index: ParticipantIndex,
    secret: SecretValue,
    seed: u64,
    params: BTreeMap<BucketId, BucketParams>,
    pairs: BTreeMap<BucketId, ExponentPair>,
    phase: Phase,
    counts: Option<BTreeMap<BucketId, usize>>,
    faults: BTreeMap<BucketId, ProtocolFault>,
}

impl Participant {
    /// `seed` keys this participant's private random streams.
    pub fn new(index: ParticipantIndex, secret: SecretValue, seed: u64) -> Self {
        Participant {
            index,
            secret,
            seed,
            params: BTreeMap::new(),
            pairs: BTreeMap::new(),
            phase: Phase::Idle,
            counts: None,
            faults: BTreeMap::new(),
        }
    }

    pub fn index(&self) -> ParticipantIndex {
        self.index
    }

    pub fn secret(&self) -> &SecretValue {
        &self.secret
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pair(&self, bucket: BucketId) -> Option<&ExponentPair> {
        self.pairs.get(&bucket)
    }

    /// Counts known to this participant: set by extraction or announcement.
    pub fn counts(&self) -> Option<&BTreeMap<BucketId, usize>> {
        self.counts.as_ref()
    }

    pub fn faults(&self) -> &BTreeMap<BucketId, ProtocolFault> {
        &self.faults
    }

    /// Raises `incoming` to this participant's `e` for the bucket, drawing the
    /// pair on first contact.
    pub fn round1_step(
        &mut self,
        params: &BucketParams,
        incoming: &Accumulator,
    ) -> Result<Accumulator, ProtocolFault> {
        let bucket = params.bucket_id;
        incoming.check(params)?;
        let member = self.secret.is_member(bucket);
        let mut rng = stream_rng(
            self.seed,
            Stream::ExponentPair {
                participant: self.index,
                bucket,
            },
        );
        let mut pair = match self.pairs.get(&bucket) {
            Some(pair) => pair.clone(),
            None => params::gen_exponent_pair(&params.phi, member, &mut rng)
                .map_err(|source| ProtocolFault::Params { bucket, source })?,
        };
        for _ in 0..ROUND1_REDRAWS {
            let value = incoming.value.modpow(&pair.e, &params.n);
            if bigmod::gcd(&value, &params.n).is_one() {
                self.pairs.insert(bucket, pair);
                self.params.insert(bucket, params.clone());
                self.phase = self.phase.max(Phase::Round1Done);
                return Ok(Accumulator::new(bucket, value));
            }
            pair = params::gen_exponent_pair(&params.phi, member, &mut rng)
                .map_err(|source| ProtocolFault::Params { bucket, source })?;
        }
        Err(ProtocolFault::CorruptedAccumulator { bucket })
    }

    /// Applies this participant's `d` for the bucket.
    pub fn round2_step(
        &mut self,
        params: &BucketParams,
        incoming: &Accumulator,
    ) -> Result<Accumulator, ProtocolFault> {
        let bucket = params.bucket_id;
        let pair = self.pairs.get(&bucket).ok_or(ProtocolFault::ProtocolOrder {
            bucket,
            reason: "round 2 before round 1",
        })?;
        incoming.check(params)?;
        let value = incoming.value.modpow(&pair.d, &params.n);
        self.phase = Phase::Round2Done;
        Ok(Accumulator::new(bucket, value))
    }

    /// Initiator: opens round 1 with `x^e1` for every bucket.
    pub fn initiate(&mut self, all_params: &[BucketParams]) -> Vec<ProtocolMessage> {
        let mut out = Vec::with_capacity(all_params.len());
        for params in all_params {
            let start = Accumulator::new(params.bucket_id, params.x.clone());
            match self.round1_step(params, &start) {
                Ok(acc) => out.push(round1_line(params, acc)),
                Err(fault) => self.record(fault),
            }
        }
        self.phase = self.phase.max(Phase::Round1Done);
        out
    }

    /// Relay or extractor: applies `e` to every incoming round-1 line.
    pub fn relay_round1(&mut self, ring_size: usize, body: &[ProtocolMessage]) -> Vec<ProtocolMessage> {
        let mut out = Vec::with_capacity(body.len());
        for message in body {
            let ProtocolMessage::Round1 { bucket, p, q, x, acc } = message else {
                self.record_unexpected(MessageKind::Round1, message);
                continue;
            };
            let params = match BucketParams::from_public(*bucket, p.clone(), q.clone(), x.clone(), ring_size) {
                Ok(params) => params,
                Err(source) => {
                    self.record(ProtocolFault::Params {
                        bucket: *bucket,
                        source,
                    });
                    continue;
                }
            };
            match self.round1_step(&params, &Accumulator::new(*bucket, acc.clone())) {
                Ok(next) => out.push(round1_line(&params, next)),
                Err(fault) => self.record(fault),
            }
        }
        self.phase = self.phase.max(Phase::Round1Done);
        out
    }

    /// Initiator: receives the closed round-1 chain and opens round 2.
    pub fn begin_round2(&mut self, body: &[ProtocolMessage]) -> Vec<ProtocolMessage> {
        let mut out = Vec::with_capacity(body.len());
        for message in body {
            let ProtocolMessage::Round1 { bucket, p, q, x, acc } = message else {
                self.record_unexpected(MessageKind::Round1, message);
                continue;
            };
            let Some(params) = self.params.get(bucket).cloned() else {
                self.record(ProtocolFault::ProtocolOrder {
                    bucket: *bucket,
                    reason: "round-1 chain closed for a bucket never opened",
                });
                continue;
            };
            if (p, q, x) != (&params.p, &params.q, &params.x) {
                self.record(ProtocolFault::ParamsMismatch { bucket: *bucket });
                continue;
            }
            match self.round2_step(&params, &Accumulator::new(*bucket, acc.clone())) {
                Ok(next) => out.push(round2_line(next)),
                Err(fault) => self.record(fault),
            }
        }
        out
    }

    /// Relay: applies `d` to every incoming round-2 line.
    pub fn relay_round2(&mut self, body: &[ProtocolMessage]) -> Vec<ProtocolMessage> {
        self.apply_round2(body)
            .into_iter()
            .map(|(_, acc)| round2_line(acc))
            .collect()
    }

    /// Extractor: applies `d` and reads off each bucket's count.
    pub fn extract(&mut self, body: &[ProtocolMessage]) -> BTreeMap<BucketId, usize> {
        let mut counts = BTreeMap::new();
        for (params, acc) in self.apply_round2(body) {
            match extract_count(&params, &acc) {
                Ok(k) => {
                    counts.insert(params.bucket_id, k);
                }
                Err(fault) => self.record(fault),
            }
        }
        self.counts = Some(counts.clone());
        counts
    }

    fn apply_round2(&mut self, body: &[ProtocolMessage]) -> Vec<(BucketParams, Accumulator)> {
        let mut out = Vec::with_capacity(body.len());
        for message in body {
            let ProtocolMessage::Round2 { bucket, acc } = message else {
                self.record_unexpected(MessageKind::Round2, message);
                continue;
            };
            let Some(params) = self.params.get(bucket).cloned() else {
                self.record(ProtocolFault::ProtocolOrder {
                    bucket: *bucket,
                    reason: "round 2 before round 1",
                });
                continue;
            };
            match self.round2_step(&params, &Accumulator::new(*bucket, acc.clone())) {
                Ok(next) => out.push((params, next)),
                Err(fault) => self.record(fault),
            }
        }
        self.phase = Phase::Round2Done;
        out
    }

    /// RESULT lines for the counts this participant extracted.
    pub fn announcement(&self) -> Vec<ProtocolMessage> {
        self.counts
            .iter()
            .flatten()
            .map(|(&bucket, &count)| ProtocolMessage::Result { bucket, count })
            .collect()
    }

    pub fn accept_announcement(&mut self, body: &[ProtocolMessage]) {
        let mut counts = BTreeMap::new();
        for message in body {
            match message {
                ProtocolMessage::Result { bucket, count } => {
                    counts.insert(*bucket, *count);
                }
                other => self.record_unexpected(MessageKind::Result, other),
            }
        }
        self.counts = Some(counts);
    }

    fn record(&mut self, fault: ProtocolFault) {
        if let Some(bucket) = fault.bucket() {
            self.faults.entry(bucket).or_insert(fault);
        }
    }

    fn record_unexpected(&mut self, expected: MessageKind, message: &ProtocolMessage) {
        if let Some(bucket) = message.bucket() {
            self.faults.entry(bucket).or_insert(ProtocolFault::UnexpectedMessage {
                expected,
                found: message.kind(),
            });
        }
    }
}

fn round1_line(params: &BucketParams, acc: Accumulator) -> ProtocolMessage {
    ProtocolMessage::Round1 {
        bucket: params.bucket_id,
        p: params.p.clone(),
        q: params.q.clone(),
        x: params.x.clone(),
        acc: acc.value,
    }
}

fn round2_line(acc: Accumulator) -> ProtocolMessage {
    ProtocolMessage::Round2 {
        bucket: acc.bucket_id,
        acc: acc.value,
    }
}

/// The unique `k` in `0..=ring_size` with `x^(2^k) = final`.
pub fn extract_count(params: &BucketParams, final_acc: &Accumulator) -> Result<usize, ProtocolFault> {
    params
        .ladder()
        .iter()
        .position(|power| *power == final_acc.value)
        .ok_or(ProtocolFault::TallyMismatch {
            bucket: params.bucket_id,
        })
}

/// How the extractor tells everyone the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Announce {
    /// One RESULT call to each other participant.
    #[default]
    Calls,
    /// A single conference call reaching everyone.
    Broadcast,
}

impl fmt::Display for Announce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Announce::Calls => "calls",
            Announce::Broadcast => "broadcast",
        })
    }
}

impl std::str::FromStr for Announce {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calls" => Ok(Announce::Calls),
            "broadcast" => Ok(Announce::Broadcast),
            other => Err(format!("unknown announce mode `{other}`")),
        }
    }
}

/// Per-bucket counts plus call accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TallyResult {
    pub counts: BTreeMap<BucketId, usize>,
    pub faults: BTreeMap<BucketId, ProtocolFault>,
    pub protocol_calls: usize,
    pub announce_calls: usize,
}

impl TallyResult {
    pub fn total_calls(&self) -> usize {
        self.protocol_calls + self.announce_calls
    }

    /// Count for `bucket`, or `None` if the bucket faulted.
    pub fn count(&self, bucket: BucketId) -> Option<usize> {
        self.counts.get(&bucket).copied()
    }
}

#[derive(Debug, Error)]
pub enum TallyError {
    #[error("a ring needs at least 2 participants, got {0}")]
    RingTooSmall(usize),
    #[error("ring order must list every participant exactly once")]
    BadRingOrder,
    #[error("public numbers were generated for a ring of {params}, not {ring}")]
    RingSizeMismatch { params: usize, ring: usize },
    #[error("transport fault: {0}")]
    Transport(#[from] TransportError),
}

/// Ring-level settings for one tally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TallyConfig {
    /// Call order; position 0 initiates and the last position extracts.
    pub ring_order: Vec<ParticipantIndex>,
    pub bucket_count: usize,
    pub announce: Announce,
}

impl TallyConfig {
    pub fn in_index_order(ring_size: usize, bucket_count: usize, announce: Announce) -> Self {
        TallyConfig {
            ring_order: (1..=ring_size).collect(),
            bucket_count,
            announce,
        }
    }
}

/// Which scheduled call a leg is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LegSlot {
    /// Round-1 call made by the participant at this ring position.
    Round1(usize),
    Round2(usize),
    /// Announcement to the participant at this ring position; the
    /// broadcast uses position 0.
    Announce(usize),
}

/// Drives every participant through a full tally over `channel`, one call
/// leg at a time, recording each leg in the public transcript.
pub struct Tally<'c, C: Channel + ?Sized> {
    participants: BTreeMap<ParticipantIndex, Participant>,
    params: Vec<BucketParams>,
    config: TallyConfig,
    channel: &'c mut C,
    transcript: Transcript,
    pending_round2: Option<Vec<ProtocolMessage>>,
    protocol_calls: usize,
    announce_calls: usize,
}

/// Everything a finished tally leaves behind.
#[derive(Debug, Clone)]
pub struct TallyOutput {
    pub result: TallyResult,
    pub transcript: Transcript,
    pub participants: Vec<Participant>,
}

impl<'c, C: Channel + ?Sized> Tally<'c, C> {
    pub fn new(
        participants: Vec<Participant>,
        params: Vec<BucketParams>,
        config: TallyConfig,
        channel: &'c mut C,
    ) -> Result<Self, TallyError> {
        let ring_size = config.ring_order.len();
        if ring_size < 2 {
            return Err(TallyError::RingTooSmall(ring_size));
        }
        let participants: BTreeMap<_, _> = participants.into_iter().map(|p| (p.index(), p)).collect();
        let mut order = config.ring_order.clone();
        order.sort_unstable();
        order.dedup();
        if order.len() != ring_size || order.iter().ne(participants.keys()) {
            return Err(TallyError::BadRingOrder);
        }
        if let Some(bad) = params.iter().find(|p| p.ring_size != ring_size) {
            return Err(TallyError::RingSizeMismatch {
                params: bad.ring_size,
                ring: ring_size,
            });
        }
        Ok(Tally {
            participants,
            params,
            config,
            channel,
            transcript: Transcript::new(),
            pending_round2: None,
            protocol_calls: 0,
            announce_calls: 0,
        })
    }

    pub fn participant(&self, index: ParticipantIndex) -> Option<&Participant> {
        self.participants.get(&index)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn ring_size(&self) -> usize {
        self.config.ring_order.len()
    }

    fn member(&mut self, position: usize) -> &mut Participant {
        let index = self.config.ring_order[position];
        self.participants.get_mut(&index).expect("ring order validated")
    }

    fn call(&mut self, from: usize, to: usize, body: Vec<ProtocolMessage>) -> Result<(), TallyError> {
        let leg = CallLeg::new(from, to, self.ring_size(), self.config.bucket_count, body);
        self.channel.send_call(&leg)?;
        self.transcript
            .append_leg(&leg)
            .expect("participants emit ascending single-kind bodies");
        Ok(())
    }

    fn hop(&mut self, from_pos: usize, to_pos: usize, body: Vec<ProtocolMessage>) -> Result<CallLeg, TallyError> {
        let from = self.config.ring_order[from_pos];
        let to = self.config.ring_order[to_pos];
        self.call(from, to, body)?;
        self.protocol_calls += 1;
        Ok(self.channel.receive(to)?)
    }

    /// `N` calls: `C1 -> C2 -> ... -> CN -> C1`.
    pub fn run_round1(&mut self) -> Result<(), TallyError> {
        let ring_size = self.ring_size();
        let params = self.params.clone();
        let mut body = self.member(0).initiate(&params);
        for position in 1..ring_size {
            let leg = self.hop(position - 1, position, body)?;
            body = self.member(position).relay_round1(ring_size, leg.body());
        }
        let closing = self.hop(ring_size - 1, 0, body)?;
        self.pending_round2 = Some(self.member(0).begin_round2(closing.body()));
        Ok(())
    }

    /// `N - 1` calls: `C1 -> ... -> CN`, ending with extraction at `CN`.
    pub fn run_round2(&mut self) -> Result<(), TallyError> {
        let ring_size = self.ring_size();
        let mut body = match self.pending_round2.take() {
            Some(body) => body,
            None => {
                self.run_round1()?;
                self.pending_round2.take().expect("round 1 leaves round-2 lines")
            }
        };
        for position in 1..ring_size {
            let leg = self.hop(position - 1, position, body)?;
            body = if position + 1 == ring_size {
                self.member(position).extract(leg.body());
                Vec::new()
            } else {
                self.member(position).relay_round2(leg.body())
            };
        }
        Ok(())
    }

    /// The extractor tells everyone else the counts.
    pub fn announce(&mut self) -> Result<(), TallyError> {
        let ring_size = self.ring_size();
        let extractor_pos = ring_size - 1;
        let extractor = self.config.ring_order[extractor_pos];
        let body = self.member(extractor_pos).announcement();
        match self.config.announce {
            Announce::Calls => {
                for position in 0..extractor_pos {
                    let to = self.config.ring_order[position];
                    self.call(extractor, to, body.clone())?;
                    self.announce_calls += 1;
                    let leg = self.channel.receive(to)?;
                    self.member(position).accept_announcement(leg.body());
                }
            }
            Announce::Broadcast => {
                self.call(extractor, BROADCAST, body)?;
                self.announce_calls += 1;
                for position in 0..extractor_pos {
                    let to = self.config.ring_order[position];
                    let leg = self.channel.receive(to)?;
                    self.member(position).accept_announcement(leg.body());
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> TallyOutput {
        let extractor = *self.config.ring_order.last().expect("ring has members");
        let counts = self.participants[&extractor].counts().cloned().unwrap_or_default();
        let mut faults = BTreeMap::new();
        for &index in &self.config.ring_order {
            for (bucket, fault) in self.participants[&index].faults() {
                faults.entry(*bucket).or_insert_with(|| fault.clone());
            }
        }
        let participants = self.config.ring_order.iter().map(|i| self.participants[i].clone()).collect();
        TallyOutput {
            result: TallyResult {
                counts,
                faults,
                protocol_calls: self.protocol_calls,
                announce_calls: self.announce_calls,
            },
            transcript: self.transcript,
            participants,
        }
    }
}

/// Round 1, round 2, extraction and announcement in one go.
pub fn run_tally<C: Channel + ?Sized>(
    participants: Vec<Participant>,
    params: Vec<BucketParams>,
    config: TallyConfig,
    channel: &mut C,
) -> Result<TallyOutput, TallyError> {
    let mut tally = Tally::new(participants, params, config, channel)?;
    tally.run_round1()?;
    tally.run_round2()?;
    tally.announce()?;
    Ok(tally.finish())
}
