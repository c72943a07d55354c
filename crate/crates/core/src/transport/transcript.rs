//! Call legs and the public, persistable record of every leg.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::wire::{self, MessageKind, ProtocolMessage, WireError};

/// Recipient index used for a single conference-call announcement.
pub const BROADCAST: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LegError {
    #[error("call leg must open with HELLO")]
    MissingHello,
    #[error("call leg must close with BYE")]
    MissingBye,
    #[error("unexpected {0:?} inside a call leg")]
    StrayControl(MessageKind),
    #[error("bucket ids must be strictly ascending ({previous} then {next})")]
    BucketOrder { previous: usize, next: usize },
    #[error("a call leg carries one message kind, saw {0:?} and {1:?}")]
    MixedKinds(MessageKind, MessageKind),
    #[error("HELLO names sender {hello} but the leg is from {from}")]
    SenderMismatch { hello: usize, from: usize },
}

/// One phone call: every bucket's line for a single ring hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallLeg {
    pub from: usize,
    pub to: usize,
    pub messages: Vec<ProtocolMessage>,
}

impl CallLeg {
    /// Wraps `body` in the HELLO/BYE envelope.
    pub fn new(
        from: usize,
        to: usize,
        ring_size: usize,
        bucket_count: usize,
        body: Vec<ProtocolMessage>,
    ) -> Self {
        let mut messages = Vec::with_capacity(body.len() + 2);
        messages.push(ProtocolMessage::Hello {
            from,
            ring_size,
            bucket_count,
        });
        messages.extend(body);
        messages.push(ProtocolMessage::Bye);
        CallLeg { from, to, messages }
    }

    pub fn validate(&self) -> Result<(), LegError> {
        match self.messages.first() {
            Some(ProtocolMessage::Hello { from, .. }) if *from == self.from => {}
            Some(ProtocolMessage::Hello { from, .. }) => {
                return Err(LegError::SenderMismatch {
                    hello: *from,
                    from: self.from,
                })
            }
            _ => return Err(LegError::MissingHello),
        }
        if self.messages.len() < 2 || self.messages.last() != Some(&ProtocolMessage::Bye) {
            return Err(LegError::MissingBye);
        }
        let mut previous: Option<(usize, MessageKind)> = None;
        for message in self.body() {
            let bucket = message
                .bucket()
                .ok_or(LegError::StrayControl(message.kind()))?;
            if let Some((last, kind)) = previous {
                if kind != message.kind() {
                    return Err(LegError::MixedKinds(kind, message.kind()));
                }
                if bucket <= last {
                    return Err(LegError::BucketOrder {
                        previous: last,
                        next: bucket,
                    });
                }
            }
            previous = Some((bucket, message.kind()));
        }
        Ok(())
    }

    /// Messages between HELLO and BYE.
    pub fn body(&self) -> &[ProtocolMessage] {
        match self.messages.len() {
            0..=2 => &[],
            len => &self.messages[1..len - 1],
        }
    }

    /// `(ring_size, bucket_count)` announced by the HELLO line.
    pub fn hello(&self) -> Option<(usize, usize)> {
        match self.messages.first() {
            Some(ProtocolMessage::Hello {
                ring_size,
                bucket_count,
                ..
            }) => Some((*ring_size, *bucket_count)),
            _ => None,
        }
    }

    /// Kind of the body lines, if there are any.
    pub fn body_kind(&self) -> Option<MessageKind> {
        self.body().first().map(ProtocolMessage::kind)
    }

    pub fn payload_numbers(&self) -> usize {
        self.body().iter().map(|m| m.payload().len()).sum()
    }

    pub fn encode(&self) -> String {
        self.messages.iter().map(ProtocolMessage::encode).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub from: usize,
    pub to: usize,
    pub message: ProtocolMessage,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {source}")]
    Wire {
        line: usize,
        #[source]
        source: WireError,
    },
    #[error("transcript line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("transcript leg starting at seq {seq}: {source}")]
    Leg {
        seq: u64,
        #[source]
        source: LegError,
    },
    #[error("transcript io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered public log of every message of every call leg.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_legs<'a>(legs: impl IntoIterator<Item = &'a CallLeg>) -> Result<Self, LegError> {
        let mut transcript = Transcript::new();
        for leg in legs {
            transcript.append_leg(leg)?;
        }
        Ok(transcript)
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends every line of `leg`, or nothing if the leg is malformed.
    pub fn append_leg(&mut self, leg: &CallLeg) -> Result<(), LegError> {
        leg.validate()?;
        let next = self.entries.last().map_or(1, |e| e.seq + 1);
        self.entries
            .extend(leg.messages.iter().enumerate().map(|(i, message)| TranscriptEntry {
                seq: next + i as u64,
                from: leg.from,
                to: leg.to,
                message: message.clone(),
            }));
        Ok(())
    }

    /// Regroups entries into call legs.
    pub fn legs(&self) -> Result<Vec<CallLeg>, TranscriptError> {
        let mut legs = Vec::new();
        let mut current: Option<(u64, CallLeg)> = None;
        for entry in &self.entries {
            let fault = |reason: &str| TranscriptError::Format {
                line: entry.seq as usize,
                reason: reason.to_string(),
            };
            match (&mut current, &entry.message) {
                (None, ProtocolMessage::Hello { .. }) => {
                    current = Some((
                        entry.seq,
                        CallLeg {
                            from: entry.from,
                            to: entry.to,
                            messages: vec![entry.message.clone()],
                        },
                    ));
                }
                (None, _) => return Err(fault("message outside a call leg")),
                (Some((_, leg)), message) => {
                    if leg.from != entry.from || leg.to != entry.to {
                        return Err(fault("legs interleaved on the same record"));
                    }
                    if matches!(message, ProtocolMessage::Hello { .. }) {
                        return Err(fault("HELLO before previous leg ended"));
                    }
                    leg.messages.push(message.clone());
                    if *message == ProtocolMessage::Bye {
                        let (seq, leg) = current.take().expect("open leg");
                        leg.validate()
                            .map_err(|source| TranscriptError::Leg { seq, source })?;
                        legs.push(leg);
                    }
                }
            }
        }
        if let Some((seq, _)) = current {
            return Err(TranscriptError::Leg {
                seq,
                source: LegError::MissingBye,
            });
        }
        Ok(legs)
    }

    /// `<seq> <from> <to> <message line>` per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let _ = write!(out, "{} {} {} {}", entry.seq, entry.from, entry.to, entry.message.encode());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TranscriptError> {
        let mut entries: Vec<TranscriptEntry> = Vec::new();
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let line = i + 1;
            let format = |reason: &str| TranscriptError::Format {
                line,
                reason: reason.to_string(),
            };
            let body = raw.strip_suffix('\n').ok_or_else(|| format("missing LF terminator"))?;
            let mut parts = body.splitn(4, ' ');
            let mut header = || -> Result<u64, TranscriptError> {
                let token = parts.next().ok_or_else(|| format("truncated entry"))?;
                if token.is_empty()
                    || !token.bytes().all(|b| b.is_ascii_digit())
                    || (token.len() > 1 && token.starts_with('0'))
                {
                    return Err(format("bad decimal in entry header"));
                }
                token.parse().map_err(|_| format("entry header out of range"))
            };
            let seq = header()?;
            let from = header()? as usize;
            let to = header()? as usize;
            let message_text = parts.next().ok_or_else(|| format("truncated entry"))?;
            let message =
                wire::decode(message_text).map_err(|source| TranscriptError::Wire { line, source })?;
            if entries.last().is_some_and(|last| seq <= last.seq) {
                return Err(format("sequence numbers must strictly increase"));
            }
            entries.push(TranscriptEntry {
                seq,
                from,
                to,
                message,
            });
        }
        Ok(Transcript { entries })
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
