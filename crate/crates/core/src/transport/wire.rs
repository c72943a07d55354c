//! Line grammar for one protocol message.
//!
//! ```text
//! HELLO <from> <ring_size> <bucket_count>
//! R1 <bucket> <p> <q> <x> <acc>
//! R2 <bucket> <acc>
//! RESULT <bucket> <count>
//! BYE
//! ```
//!
//! Fields are separated by a single space, integers are decimal without
//! leading zeros, and every line ends in LF.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bigmod::Natural;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed line at byte {offset}: {reason}")]
pub struct WireError {
    pub offset: usize,
    pub reason: String,
}

impl WireError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        WireError {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Hello,
    Round1,
    Round2,
    Result,
    Bye,
}

impl MessageKind {
    pub fn keyword(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::Round1 => "R1",
            MessageKind::Round2 => "R2",
            MessageKind::Result => "RESULT",
            MessageKind::Bye => "BYE",
        }
    }

    /// Number of integer fields after the keyword.
    fn field_count(self) -> usize {
        match self {
            MessageKind::Hello => 3,
            MessageKind::Round1 => 5,
            MessageKind::Round2 | MessageKind::Result => 2,
            MessageKind::Bye => 0,
        }
    }
}

impl FromStr for MessageKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "HELLO" => MessageKind::Hello,
            "R1" => MessageKind::Round1,
            "R2" => MessageKind::Round2,
            "RESULT" => MessageKind::Result,
            "BYE" => MessageKind::Bye,
            _ => return Err(()),
        })
    }
}

/// One line of a call leg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    Hello {
        from: usize,
        ring_size: usize,
        bucket_count: usize,
    },
    /// The four public numbers of a round-1 hop: `p, q, x, acc`.
    Round1 {
        bucket: usize,
        p: Natural,
        q: Natural,
        x: Natural,
        acc: Natural,
    },
    Round2 {
        bucket: usize,
        acc: Natural,
    },
    Result {
        bucket: usize,
        count: usize,
    },
    Bye,
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::Hello { .. } => MessageKind::Hello,
            ProtocolMessage::Round1 { .. } => MessageKind::Round1,
            ProtocolMessage::Round2 { .. } => MessageKind::Round2,
            ProtocolMessage::Result { .. } => MessageKind::Result,
            ProtocolMessage::Bye => MessageKind::Bye,
        }
    }

    pub fn bucket(&self) -> Option<usize> {
        match self {
            ProtocolMessage::Round1 { bucket, .. }
            | ProtocolMessage::Round2 { bucket, .. }
            | ProtocolMessage::Result { bucket, .. } => Some(*bucket),
            ProtocolMessage::Hello { .. } | ProtocolMessage::Bye => None,
        }
    }

    /// Numbers carried after the bucket id (or all fields for HELLO).
    pub fn payload(&self) -> Vec<Natural> {
        match self {
            ProtocolMessage::Hello {
                from,
                ring_size,
                bucket_count,
            } => vec![(*from).into(), (*ring_size).into(), (*bucket_count).into()],
            ProtocolMessage::Round1 { p, q, x, acc, .. } => {
                vec![p.clone(), q.clone(), x.clone(), acc.clone()]
            }
            ProtocolMessage::Round2 { acc, .. } => vec![acc.clone()],
            ProtocolMessage::Result { count, .. } => vec![(*count).into()],
            ProtocolMessage::Bye => Vec::new(),
        }
    }

    /// The LF-terminated wire line.
    pub fn encode(&self) -> String {
        format!("{self}\n")
    }

    /// Parses one line, with or without its trailing LF.
    pub fn decode(line: &str) -> Result<Self, WireError> {
        decode(line)
    }
}

impl fmt::Display for ProtocolMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().keyword())?;
        if let Some(bucket) = self.bucket() {
            write!(f, " {bucket}")?;
        }
        for value in self.payload() {
            write!(f, " {value}")?;
        }
        Ok(())
    }
}

pub fn encode(message: &ProtocolMessage) -> String {
    message.encode()
}

pub fn decode(line: &str) -> Result<ProtocolMessage, WireError> {
    let body = line.strip_suffix('\n').unwrap_or(line);
    if let Some(pos) = body.bytes().position(|b| !(0x20..0x7f).contains(&b)) {
        return Err(WireError::new(pos, "unexpected control or non-ASCII byte"));
    }

    let mut tokens = Vec::new();
    let mut start = 0;
    for (i, b) in body.bytes().enumerate() {
        if b == b' ' {
            tokens.push((start, &body[start..i]));
            start = i + 1;
        }
    }
    tokens.push((start, &body[start..]));
    if let Some(&(offset, _)) = tokens.iter().find(|(_, token)| token.is_empty()) {
        return Err(WireError::new(offset, "empty field"));
    }

    let (_, keyword) = tokens[0];
    let kind: MessageKind = keyword
        .parse()
        .map_err(|_| WireError::new(0, format!("unknown message kind `{keyword}`")))?;
    let fields = &tokens[1..];
    if fields.len() != kind.field_count() {
        let offset = fields.get(kind.field_count()).map_or(body.len(), |t| t.0);
        return Err(WireError::new(
            offset,
            format!(
                "{} expects {} fields, found {}",
                kind.keyword(),
                kind.field_count(),
                fields.len()
            ),
        ));
    }

    let numbers = fields
        .iter()
        .map(|&(offset, token)| parse_decimal(offset, token))
        .collect::<Result<Vec<_>, _>>()?;
    let small = |i: usize| -> Result<usize, WireError> {
        usize::try_from(&numbers[i])
            .map_err(|_| WireError::new(fields[i].0, "value does not fit a machine integer"))
    };

    Ok(match kind {
        MessageKind::Hello => ProtocolMessage::Hello {
            from: small(0)?,
            ring_size: small(1)?,
            bucket_count: small(2)?,
        },
        MessageKind::Round1 => {
            let bucket = small(0)?;
            let [_, p, q, x, acc]: [Natural; 5] = numbers.try_into().expect("arity checked");
            ProtocolMessage::Round1 {
                bucket,
                p,
                q,
                x,
                acc,
            }
        }
        MessageKind::Round2 => ProtocolMessage::Round2 {
            bucket: small(0)?,
            acc: numbers[1].clone(),
        },
        MessageKind::Result => ProtocolMessage::Result {
            bucket: small(0)?,
            count: small(1)?,
        },
        MessageKind::Bye => ProtocolMessage::Bye,
    })
}

fn parse_decimal(offset: usize, token: &str) -> Result<Natural, WireError> {
    if let Some(pos) = token.bytes().position(|b| !b.is_ascii_digit()) {
        return Err(WireError::new(offset + pos, "non-decimal character"));
    }
    if token.len() > 1 && token.starts_with('0') {
        return Err(WireError::new(offset, "leading zero"));
    }
    Ok(token.parse().expect("validated decimal"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nat(v: u64) -> Natural {
        Natural::from(v)
    }

    #[test]
    fn encode_examples() {
        let r2 = ProtocolMessage::Round2 {
            bucket: 17,
            acc: nat(49),
        };
        assert_eq!(r2.encode(), "R2 17 49\n");
        assert_eq!(ProtocolMessage::Bye.encode(), "BYE\n");
        let r1 = ProtocolMessage::Round1 {
            bucket: 1,
            p: nat(5),
            q: nat(17),
            x: nat(3),
            acc: nat(27),
        };
        assert_eq!(r1.encode(), "R1 1 5 17 3 27\n");
        let hello = ProtocolMessage::Hello {
            from: 1,
            ring_size: 20,
            bucket_count: 100,
        };
        assert_eq!(hello.encode(), "HELLO 1 20 100\n");
        let result = ProtocolMessage::Result {
            bucket: 3,
            count: 0,
        };
        assert_eq!(result.encode(), "RESULT 3 0\n");
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode("R2 17 49").unwrap(),
            ProtocolMessage::Round2 {
                bucket: 17,
                acc: nat(49)
            }
        );
        assert_eq!(decode("BYE\n").unwrap(), ProtocolMessage::Bye);
        assert_eq!(decode("RESULT 4 0").unwrap().payload(), vec![nat(0)]);
    }

    #[test]
    fn decode_rejects_malformed_lines() {
        let arity = decode("R1 1 5 17 3").unwrap_err();
        assert_eq!(arity.offset, 11);
        let zero = decode("R2 17 049").unwrap_err();
        assert_eq!(zero.offset, 6);
        assert_eq!(decode("R3 1 2").unwrap_err().offset, 0);
        assert_eq!(decode("R2 17 4x9").unwrap_err().offset, 7);
        assert_eq!(decode("R2  17 49").unwrap_err().offset, 3);
        assert!(decode("R2 17 49 ").is_err());
        assert!(decode("R2 17 49\r\n").is_err());
        assert!(decode("R2 17 -49").is_err());
        assert!(decode("BYE 1").is_err());
        assert!(decode("").is_err());
        assert!(decode("bye").is_err());
        assert!(decode("R2 17 49\n\n").is_err());
        assert!(decode("HELLO 1 2 99999999999999999999999").is_err());
    }

    fn natural() -> impl Strategy<Value = Natural> {
        prop::collection::vec(any::<u32>(), 0..6).prop_map(Natural::new)
    }

    pub(crate) fn message() -> impl Strategy<Value = ProtocolMessage> {
        prop_oneof![
            (any::<usize>(), any::<usize>(), any::<usize>()).prop_map(|(from, ring_size, bucket_count)| {
                ProtocolMessage::Hello {
                    from,
                    ring_size,
                    bucket_count,
                }
            }),
            (any::<usize>(), natural(), natural(), natural(), natural())
                .prop_map(|(bucket, p, q, x, acc)| ProtocolMessage::Round1 { bucket, p, q, x, acc }),
            (any::<usize>(), natural()).prop_map(|(bucket, acc)| ProtocolMessage::Round2 { bucket, acc }),
            (any::<usize>(), any::<usize>()).prop_map(|(bucket, count)| ProtocolMessage::Result { bucket, count }),
            Just(ProtocolMessage::Bye),
        ]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(m in message()) {
            let line = m.encode();
            prop_assert!(line.ends_with('\n') && line.is_ascii());
            prop_assert_eq!(decode(&line).unwrap(), m);
        }

        #[test]
        fn decode_never_panics(line in "[A-Z0-9 \n]{0,40}") {
            let _ = decode(&line);
        }
    }
}
