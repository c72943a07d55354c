use std::collections::{BTreeMap, VecDeque};

use super::{Ack, CallLeg, Channel, TransportError, BROADCAST};

type Tamper = Box<dyn FnMut(&mut CallLeg) + Send>;

/// FIFO mailboxes, one per participant, inside one process.
#[derive(Default)]
pub struct MemoryChannel {
    inboxes: BTreeMap<usize, VecDeque<CallLeg>>,
    tamper: Option<Tamper>,
}

impl MemoryChannel {
    pub fn new(participants: impl IntoIterator<Item = usize>) -> Self {
        MemoryChannel {
            inboxes: participants.into_iter().map(|i| (i, VecDeque::new())).collect(),
            tamper: None,
        }
    }

    /// Rewrites every delivered copy; the sender's leg is left untouched.
    /// Used to inject faults.
    pub fn with_tamper(mut self, tamper: impl FnMut(&mut CallLeg) + Send + 'static) -> Self {
        self.tamper = Some(Box::new(tamper));
        self
    }

    pub fn pending(&self, participant: usize) -> usize {
        self.inboxes.get(&participant).map_or(0, VecDeque::len)
    }

    fn deliver(&mut self, to: usize, leg: &CallLeg) -> Result<(), TransportError> {
        let mut copy = leg.clone();
        if let Some(tamper) = self.tamper.as_mut() {
            tamper(&mut copy);
        }
        self.inboxes
            .get_mut(&to)
            .ok_or(TransportError::NoRoute(to))?
            .push_back(copy);
        Ok(())
    }
}

impl Channel for MemoryChannel {
    fn send_call(&mut self, leg: &CallLeg) -> Result<Ack, TransportError> {
        if leg.to == BROADCAST {
            let recipients: Vec<usize> = self.inboxes.keys().copied().filter(|&i| i != leg.from).collect();
            for to in recipients {
                self.deliver(to, leg)?;
            }
        } else {
            self.deliver(leg.to, leg)?;
        }
        Ok(Ack {
            lines: leg.messages.len(),
        })
    }

    fn receive(&mut self, participant: usize) -> Result<CallLeg, TransportError> {
        self.inboxes
            .get_mut(&participant)
            .ok_or(TransportError::NoRoute(participant))?
            .pop_front()
            .ok_or(TransportError::Empty(participant))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::ProtocolMessage;

    fn leg(from: usize, to: usize, tag: usize) -> CallLeg {
        CallLeg::new(from, to, 3, 1, vec![ProtocolMessage::Result { bucket: 1, count: tag }])
    }

    #[test]
    fn fifo_per_recipient() {
        let mut channel = MemoryChannel::new(1..=3);
        channel.send_call(&leg(1, 2, 0)).unwrap();
        channel.send_call(&leg(3, 2, 1)).unwrap();
        assert_eq!(channel.receive(2).unwrap(), leg(1, 2, 0));
        assert_eq!(channel.receive(2).unwrap(), leg(3, 2, 1));
        assert!(matches!(channel.receive(2), Err(TransportError::Empty(2))));
    }

    #[test]
    fn broadcast_reaches_everyone_else() {
        let mut channel = MemoryChannel::new(1..=4);
        channel.send_call(&leg(4, BROADCAST, 2)).unwrap();
        assert_eq!((1..=4).map(|i| channel.pending(i)).collect::<Vec<_>>(), [1, 1, 1, 0]);
    }

    #[test]
    fn unknown_recipient() {
        let mut channel = MemoryChannel::new(1..=2);
        assert!(matches!(channel.send_call(&leg(1, 9, 0)), Err(TransportError::NoRoute(9))));
    }

    #[test]
    fn tamper_changes_only_delivered_copy() {
        let mut channel = MemoryChannel::new(1..=2).with_tamper(|leg| leg.messages.truncate(1));
        let sent = leg(1, 2, 0);
        channel.send_call(&sent).unwrap();
        assert_eq!(channel.receive(2).unwrap().messages.len(), 1);
        assert_eq!(sent.messages.len(), 3);
    }
}
