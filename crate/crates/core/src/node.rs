//! One participant running as its own network node.
//!
//! Nodes follow the same schedule as the in-process tally: participant 1
//! opens both rounds, the last participant extracts and announces, and every
//! hop is one TCP connection to the ring successor taken from the roster.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::time::Duration;

use thiserror::Error;

use crate::params::ParamsError;
use crate::protocol::{Announce, BucketId, LegSlot, Participant, ProtocolFault, Role};
use crate::scenario::ScenarioConfig;
use crate::transport::tcp::{accept_leg, send_leg};
use crate::transport::{
    CallLeg, LegError, MessageKind, ProtocolMessage, Roster, TcpOptions, Transcript, TranscriptError,
    TransportError, BROADCAST,
};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("protocol fault: {0}")]
    Protocol(String),
    #[error("transport fault: {0}")]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone)]
pub struct NodeOptions {
    pub tcp: TcpOptions,
    /// How long to wait for an expected incoming call.
    pub wait: Duration,
}

impl Default for NodeOptions {
    fn default() -> Self {
        NodeOptions {
            tcp: TcpOptions::default(),
            wait: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeReport {
    pub index: usize,
    pub counts: BTreeMap<BucketId, usize>,
    pub faults: BTreeMap<BucketId, ProtocolFault>,
    /// Legs this node placed, tagged with their place in the schedule.
    pub sent: Vec<(LegSlot, CallLeg)>,
}

struct Node<'a> {
    listener: TcpListener,
    roster: &'a Roster,
    scenario: &'a ScenarioConfig,
    options: &'a NodeOptions,
    participant: Participant,
    sent: Vec<(LegSlot, CallLeg)>,
}

impl Node<'_> {
    fn ring_size(&self) -> usize {
        self.scenario.ring_size
    }

    fn index(&self) -> usize {
        self.participant.index()
    }

    fn successor(&self) -> usize {
        self.index() % self.ring_size() + 1
    }

    fn call(&mut self, slot: LegSlot, to: usize, body: Vec<ProtocolMessage>) -> Result<(), NodeError> {
        let leg = CallLeg::new(self.index(), to, self.ring_size(), self.scenario.bucket_count, body);
        let recipients: Vec<usize> = if to == BROADCAST {
            self.roster.indices().filter(|&i| i != self.index()).collect()
        } else {
            vec![to]
        };
        for recipient in recipients {
            let addr = self
                .roster
                .addr(recipient)
                .ok_or(TransportError::NoRoute(recipient))?;
            send_leg(addr, &leg, &self.options.tcp)?;
        }
        self.sent.push((slot, leg));
        Ok(())
    }

    fn await_leg(&self, expected: MessageKind) -> Result<CallLeg, NodeError> {
        let leg = accept_leg(&self.listener, self.index(), &self.options.tcp, Some(self.options.wait), None)?;
        match leg.hello() {
            Some((ring_size, bucket_count))
                if ring_size == self.ring_size() && bucket_count == self.scenario.bucket_count => {}
            _ => {
                return Err(NodeError::Protocol(format!(
                    "participant {} announced a different ring shape",
                    leg.from
                )))
            }
        }
        if let Some(kind) = leg.body_kind().filter(|&k| k != expected) {
            return Err(NodeError::Protocol(format!(
                "expected {} lines from participant {}, got {}",
                expected.keyword(),
                leg.from,
                kind.keyword()
            )));
        }
        Ok(leg)
    }

    fn run(mut self) -> Result<NodeReport, NodeError> {
        let ring_size = self.ring_size();
        let position = self.index() - 1;
        let successor = self.successor();
        match Role::at(position, ring_size) {
            Role::Initiator => {
                let params = self.scenario.bucket_params()?;
                let body = self.participant.initiate(&params);
                self.call(LegSlot::Round1(position), successor, body)?;
                let closing = self.await_leg(MessageKind::Round1)?;
                let body = self.participant.begin_round2(closing.body());
                self.call(LegSlot::Round2(position), successor, body)?;
                self.receive_announcement()?;
            }
            Role::Relay => {
                let incoming = self.await_leg(MessageKind::Round1)?;
                let body = self.participant.relay_round1(ring_size, incoming.body());
                self.call(LegSlot::Round1(position), successor, body)?;
                let incoming = self.await_leg(MessageKind::Round2)?;
                let body = self.participant.relay_round2(incoming.body());
                self.call(LegSlot::Round2(position), successor, body)?;
                self.receive_announcement()?;
            }
            Role::Extractor => {
                let incoming = self.await_leg(MessageKind::Round1)?;
                let body = self.participant.relay_round1(ring_size, incoming.body());
                self.call(LegSlot::Round1(position), successor, body)?;
                let incoming = self.await_leg(MessageKind::Round2)?;
                self.participant.extract(incoming.body());
                let body = self.participant.announcement();
                match self.scenario.announce {
                    Announce::Calls => {
                        for to in 1..ring_size {
                            self.call(LegSlot::Announce(to - 1), to, body.clone())?;
                        }
                    }
                    Announce::Broadcast => self.call(LegSlot::Announce(0), BROADCAST, body)?,
                }
            }
        }
        Ok(NodeReport {
            index: self.index(),
            counts: self.participant.counts().cloned().unwrap_or_default(),
            faults: self.participant.faults().clone(),
            sent: self.sent,
        })
    }

    fn receive_announcement(&mut self) -> Result<(), NodeError> {
        let leg = self.await_leg(MessageKind::Result)?;
        self.participant.accept_announcement(leg.body());
        Ok(())
    }
}

/// Plays participant `index` of `scenario` over TCP. `listener` must
/// already be bound to the roster address of `index`.
pub fn run_node(
    listener: TcpListener,
    roster: &Roster,
    index: usize,
    scenario: &ScenarioConfig,
    options: &NodeOptions,
) -> Result<NodeReport, NodeError> {
    if roster.len() != scenario.ring_size {
        return Err(NodeError::Usage(format!(
            "roster lists {} participants but the scenario has {}",
            roster.len(),
            scenario.ring_size
        )));
    }
    let participant = scenario
        .participant(index)
        .filter(|_| roster.addr(index).is_some())
        .ok_or_else(|| NodeError::Usage(format!("index {index} outside 1..={}", scenario.ring_size)))?;
    Node {
        listener,
        roster,
        scenario,
        options,
        participant,
        sent: Vec::new(),
    }
    .run()
}

/// Reassembles the public transcript from the legs every node placed.
pub fn merge_node_legs(sent: impl IntoIterator<Item = (LegSlot, CallLeg)>) -> Result<Transcript, LegError> {
    let mut legs: Vec<_> = sent.into_iter().collect();
    legs.sort_by_key(|(slot, _)| *slot);
    Transcript::from_legs(legs.iter().map(|(_, leg)| leg))
}

/// Schedule slot of a leg in an index-ordered ring, read off its body kind
/// and endpoints. Legs with an empty body carry no kind and are rejected.
pub fn slot_of(leg: &CallLeg) -> Option<LegSlot> {
    let position = leg.from.checked_sub(1)?;
    match leg.body_kind()? {
        MessageKind::Round1 => Some(LegSlot::Round1(position)),
        MessageKind::Round2 => Some(LegSlot::Round2(position)),
        MessageKind::Result => Some(LegSlot::Announce(leg.to.saturating_sub(1))),
        MessageKind::Hello | MessageKind::Bye => None,
    }
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Leg(#[from] LegError),
    #[error("cannot place leg {from} -> {to} in the call schedule")]
    Unplaceable { from: usize, to: usize },
    #[error("two legs claim the same place in the call schedule")]
    Duplicate,
}

/// Merges per-node transcripts into the transcript a single simulation
/// would have written.
pub fn merge_transcripts<'a>(parts: impl IntoIterator<Item = &'a Transcript>) -> Result<Transcript, MergeError> {
    let mut slotted = BTreeMap::new();
    for part in parts {
        for leg in part.legs()? {
            let slot = slot_of(&leg).ok_or(MergeError::Unplaceable {
                from: leg.from,
                to: leg.to,
            })?;
            if slotted.insert(slot, leg).is_some() {
                return Err(MergeError::Duplicate);
            }
        }
    }
    Ok(merge_node_legs(slotted)?)
}
