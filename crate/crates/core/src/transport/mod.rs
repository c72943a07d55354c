//! Delivery of call legs between participants.
//!
//! Both channels obey the same contract: a leg is delivered whole, legs to
//! one recipient arrive in the order they were sent, and `send_call` returns
//! only once the recipient holds the complete leg.

pub mod memory;
pub mod tcp;
pub mod transcript;
pub mod wire;

use std::time::Duration;

use thiserror::Error;

pub use memory::MemoryChannel;
pub use tcp::{Roster, TcpChannel, TcpOptions};
pub use transcript::{CallLeg, LegError, Transcript, TranscriptEntry, TranscriptError, BROADCAST};
pub use wire::{MessageKind, ProtocolMessage, WireError};

/// Receipt for one delivered leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub lines: usize,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot reach participant {to} at {addr}: {source}")]
    Connect {
        to: usize,
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o failure talking to {peer}: {source}")]
    Io {
        peer: String,
        #[source]
        source: std::io::Error,
    },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("no route to participant {0}")]
    NoRoute(usize),
    #[error("peer {peer} answered `{reply}` instead of OK")]
    BadAck { peer: String, reply: String },
    #[error("malformed call leg from {peer}: {reason}")]
    BadLeg { peer: String, reason: String },
    #[error("nothing delivered to participant {0}")]
    Empty(usize),
    #[error("channel closed")]
    Closed,
}

/// Carries call legs between ring members.
pub trait Channel {
    /// Delivers every line of `leg` to its recipient, or to every other
    /// participant when `leg.to` is [`BROADCAST`].
    fn send_call(&mut self, leg: &CallLeg) -> Result<Ack, TransportError>;

    /// Next leg waiting for `participant`, in arrival order.
    fn receive(&mut self, participant: usize) -> Result<CallLeg, TransportError>;
}
