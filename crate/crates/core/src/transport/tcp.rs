//! One TCP connection per call leg: the caller writes the leg's lines, the
//! callee answers `OK\n` once it holds the whole leg, and the connection is
//! closed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{wire, Ack, CallLeg, Channel, ProtocolMessage, TransportError, BROADCAST};

const MAX_LINE_BYTES: u64 = 1 << 16;
const ACCEPT_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct TcpOptions {
    /// Bound on waiting for `OK` and on reading one leg.
    pub timeout: Duration,
    /// Extra connection attempts after the first refusal.
    pub connect_retries: u32,
    pub retry_delay: Duration,
}

impl Default for TcpOptions {
    fn default() -> Self {
        TcpOptions {
            timeout: Duration::from_secs(30),
            connect_retries: 0,
            retry_delay: Duration::from_millis(100),
        }
    }
}

/// Writes `leg` to `addr` over a fresh connection and waits for `OK`.
pub fn send_leg(addr: &str, leg: &CallLeg, options: &TcpOptions) -> Result<Ack, TransportError> {
    let mut stream = connect(addr, leg.to, options)?;
    let io_err = |source| TransportError::Io {
        peer: addr.to_string(),
        source,
    };
    stream.set_write_timeout(Some(options.timeout)).map_err(io_err)?;
    stream.set_read_timeout(Some(options.timeout)).map_err(io_err)?;
    stream
        .write_all(leg.encode().as_bytes())
        .and_then(|()| stream.flush())
        .map_err(|source| classify(addr, source, options.timeout))?;

    let mut reply = String::new();
    BufReader::new(&stream)
        .take(MAX_LINE_BYTES)
        .read_line(&mut reply)
        .map_err(|source| classify(addr, source, options.timeout))?;
    if reply != "OK\n" {
        return Err(TransportError::BadAck {
            peer: addr.to_string(),
            reply: reply.trim_end().to_string(),
        });
    }
    Ok(Ack {
        lines: leg.messages.len(),
    })
}

fn classify(peer: &str, source: io::Error, timeout: Duration) -> TransportError {
    match source.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout(timeout),
        _ => TransportError::Io {
            peer: peer.to_string(),
            source,
        },
    }
}

fn connect(addr: &str, to: usize, options: &TcpOptions) -> Result<TcpStream, TransportError> {
    let connect_err = |source| TransportError::Connect {
        to,
        addr: addr.to_string(),
        source,
    };
    let targets: Vec<SocketAddr> = addr.to_socket_addrs().map_err(connect_err)?.collect();
    let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
    for attempt in 0..=options.connect_retries {
        if attempt > 0 {
            thread::sleep(options.retry_delay);
        }
        for target in &targets {
            match TcpStream::connect_timeout(target, options.timeout) {
                Ok(stream) => return Ok(stream),
                Err(err) => last = err,
            }
        }
    }
    Err(connect_err(last))
}

/// Reads lines up to and including BYE, then answers `OK`.
pub fn read_leg(stream: &TcpStream, to: usize) -> Result<CallLeg, TransportError> {
    let peer = stream
        .peer_addr()
        .map_or_else(|_| "unknown peer".to_string(), |a| a.to_string());
    let bad = |reason: String| TransportError::BadLeg {
        peer: peer.clone(),
        reason,
    };
    let mut reader = BufReader::new(stream);
    let mut messages = Vec::new();
    loop {
        let mut line = String::new();
        let read = (&mut reader)
            .take(MAX_LINE_BYTES)
            .read_line(&mut line)
            .map_err(|source| classify(&peer, source, Duration::ZERO))?;
        if read == 0 {
            return Err(bad("connection closed before BYE".into()));
        }
        if !line.ends_with('\n') {
            return Err(bad("line too long or unterminated".into()));
        }
        let message = wire::decode(&line).map_err(|e| bad(e.to_string()))?;
        let done = message == ProtocolMessage::Bye;
        messages.push(message);
        if done {
            break;
        }
    }
    let from = match messages.first() {
        Some(ProtocolMessage::Hello { from, .. }) => *from,
        _ => return Err(bad("leg must open with HELLO".into())),
    };
    let leg = CallLeg { from, to, messages };
    leg.validate().map_err(|e| bad(e.to_string()))?;
    Ok(leg)
}

fn acknowledge(mut stream: &TcpStream) -> Result<(), TransportError> {
    stream
        .write_all(b"OK\n")
        .and_then(|()| stream.flush())
        .map_err(|source| TransportError::Io {
            peer: "caller".to_string(),
            source,
        })
}

/// Accepts one caller, reads its leg and acknowledges it.
///
/// Gives up with [`TransportError::Timeout`] once `wait` elapses without a
/// caller, or with [`TransportError::Closed`] when `stop` is raised.
pub fn accept_leg(
    listener: &TcpListener,
    to: usize,
    options: &TcpOptions,
    wait: Option<Duration>,
    stop: Option<&AtomicBool>,
) -> Result<CallLeg, TransportError> {
    let io_err = |source| TransportError::Io {
        peer: "listener".to_string(),
        source,
    };
    listener.set_nonblocking(true).map_err(io_err)?;
    let started = Instant::now();
    let stream = loop {
        match listener.accept() {
            Ok((stream, _)) => break stream,
            Err(err) if err.kind() == io::ErrorKind::WouldBlock => {
                if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
                    return Err(TransportError::Closed);
                }
                if let Some(wait) = wait.filter(|&w| started.elapsed() >= w) {
                    return Err(TransportError::Timeout(wait));
                }
                thread::sleep(ACCEPT_POLL);
            }
            Err(err) => return Err(io_err(err)),
        }
    };
    stream.set_nonblocking(false).map_err(io_err)?;
    stream.set_read_timeout(Some(options.timeout)).map_err(io_err)?;
    stream.set_write_timeout(Some(options.timeout)).map_err(io_err)?;
    let leg = read_leg(&stream, to)?;
    acknowledge(&stream)?;
    Ok(leg)
}

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("roster line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("roster must list participants 1..={expected} exactly once")]
    Incomplete { expected: usize },
}

/// Participant addresses, one `<index> <host:port>` line each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    addrs: BTreeMap<usize, String>,
}

impl Roster {
    pub fn new(addrs: BTreeMap<usize, String>) -> Self {
        Roster { addrs }
    }

    pub fn parse(text: &str) -> Result<Self, RosterError> {
        let mut addrs = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let format = |reason: &str| RosterError::Format {
                line: line_no,
                reason: reason.to_string(),
            };
            let (index, addr) = line.split_once(' ').ok_or_else(|| format("expected `<index> <host:port>`"))?;
            let index: usize = index.parse().map_err(|_| format("bad participant index"))?;
            if index == 0 || addr.is_empty() || addr.contains(' ') || !addr.contains(':') {
                return Err(format("expected `<index> <host:port>` with index >= 1"));
            }
            if addrs.insert(index, addr.to_string()).is_some() {
                return Err(format("duplicate participant index"));
            }
        }
        let expected = addrs.len();
        if addrs.keys().copied().ne(1..=expected) {
            return Err(RosterError::Incomplete { expected });
        }
        Ok(Roster { addrs })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (index, addr) in &self.addrs {
            let _ = writeln!(out, "{index} {addr}");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.addrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }

    pub fn addr(&self, index: usize) -> Option<&str> {
        self.addrs.get(&index).map(String::as_str)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.addrs.keys().copied()
    }
}

/// Loopback TCP between participants hosted in one process: every
/// participant gets a listener thread feeding its inbox.
pub struct TcpChannel {
    roster: Roster,
    options: TcpOptions,
    inboxes: BTreeMap<usize, Receiver<Result<CallLeg, TransportError>>>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl TcpChannel {
    /// Binds `127.0.0.1:0` for each participant.
    pub fn bind_local(
        participants: impl IntoIterator<Item = usize>,
        options: TcpOptions,
    ) -> io::Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let mut addrs = BTreeMap::new();
        let mut inboxes = BTreeMap::new();
        let mut workers = Vec::new();
        for index in participants {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            addrs.insert(index, listener.local_addr()?.to_string());
            let (tx, rx) = mpsc::channel();
            inboxes.insert(index, rx);
            let stop = Arc::clone(&stop);
            let options = options.clone();
            workers.push(thread::spawn(move || loop {
                match accept_leg(&listener, index, &options, None, Some(&stop)) {
                    Err(TransportError::Closed) => break,
                    outcome => {
                        if tx.send(outcome).is_err() {
                            break;
                        }
                    }
                }
            }));
        }
        Ok(TcpChannel {
            roster: Roster::new(addrs),
            options,
            inboxes,
            stop,
            workers,
        })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }
}

impl Channel for TcpChannel {
    fn send_call(&mut self, leg: &CallLeg) -> Result<Ack, TransportError> {
        let recipients: Vec<usize> = if leg.to == BROADCAST {
            self.roster.indices().filter(|&i| i != leg.from).collect()
        } else {
            vec![leg.to]
        };
        let mut ack = Ack { lines: 0 };
        for to in recipients {
            let addr = self.roster.addr(to).ok_or(TransportError::NoRoute(to))?;
            let mut addressed = leg.clone();
            addressed.to = to;
            ack = send_leg(addr, &addressed, &self.options)?;
        }
        Ok(ack)
    }

    fn receive(&mut self, participant: usize) -> Result<CallLeg, TransportError> {
        let inbox = self
            .inboxes
            .get(&participant)
            .ok_or(TransportError::NoRoute(participant))?;
        match inbox.recv_timeout(self.options.timeout) {
            Ok(outcome) => outcome,
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(self.options.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

impl Drop for TcpChannel {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bigmod::Natural;

    fn leg(from: usize, to: usize) -> CallLeg {
        CallLeg::new(
            from,
            to,
            3,
            2,
            vec![
                ProtocolMessage::Round2 {
                    bucket: 1,
                    acc: Natural::from(49u8),
                },
                ProtocolMessage::Round2 {
                    bucket: 2,
                    acc: Natural::from(50u8),
                },
            ],
        )
    }

    #[test]
    fn legs_cross_loopback_in_order() {
        let mut channel = TcpChannel::bind_local(1..=3, TcpOptions::default()).unwrap();
        channel.send_call(&leg(1, 2)).unwrap();
        channel.send_call(&leg(3, 2)).unwrap();
        assert_eq!(channel.receive(2).unwrap(), leg(1, 2));
        assert_eq!(channel.receive(2).unwrap(), leg(3, 2));
    }

    #[test]
    fn broadcast_over_tcp() {
        let mut channel = TcpChannel::bind_local(1..=3, TcpOptions::default()).unwrap();
        let announce = leg(3, BROADCAST);
        channel.send_call(&announce).unwrap();
        assert_eq!(channel.receive(1).unwrap().messages, announce.messages);
        assert_eq!(channel.receive(2).unwrap().messages, announce.messages);
    }

    #[test]
    fn closed_port_is_a_transport_fault() {
        let addr = {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap().to_string()
        };
        let err = send_leg(&addr, &leg(1, 2), &TcpOptions::default()).unwrap_err();
        assert!(matches!(err, TransportError::Connect { to: 2, .. }), "{err}");
    }

    #[test]
    fn silent_peer_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let holder = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            thread::sleep(Duration::from_millis(500));
            drop(stream);
        });
        let options = TcpOptions {
            timeout: Duration::from_millis(100),
            ..TcpOptions::default()
        };
        let err = send_leg(&addr, &leg(1, 2), &options).unwrap_err();
        assert!(matches!(err, TransportError::Timeout(_)), "{err}");
        holder.join().unwrap();
    }

    #[test]
    fn malformed_leg_is_rejected() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let sender = thread::spawn(move || {
            let mut stream = TcpStream::connect(addr).unwrap();
            stream.write_all(b"HELLO 1 3 1\nR2 1 049\nBYE\n").unwrap();
        });
        let err = accept_leg(&listener, 2, &TcpOptions::default(), Some(Duration::from_secs(5)), None)
            .unwrap_err();
        assert!(matches!(err, TransportError::BadLeg { .. }), "{err}");
        sender.join().unwrap();
    }

    #[test]
    fn accept_gives_up_after_wait() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let err = accept_leg(&listener, 1, &TcpOptions::default(), Some(Duration::from_millis(30)), None)
            .unwrap_err();
        assert!(matches!(err, TransportError::Timeout(_)));
    }

    #[test]
    fn roster_parsing() {
        let roster = Roster::parse("1 127.0.0.1:7001\n2 127.0.0.1:7002\n3 localhost:7003\n").unwrap();
        assert_eq!(roster.len(), 3);
        assert_eq!(roster.addr(3), Some("localhost:7003"));
        assert_eq!(Roster::parse(&roster.to_text()).unwrap(), roster);
        assert!(matches!(
            Roster::parse("1 a:1\n3 b:2\n"),
            Err(RosterError::Incomplete { .. })
        ));
        assert!(matches!(Roster::parse("1 nonsense\n"), Err(RosterError::Format { line: 1, .. })));
        assert!(matches!(Roster::parse("1 a:1\n1 b:2\n"), Err(RosterError::Format { line: 2, .. })));
    }
}
