//! Private counting around a ring of participants.
//!
//! `N` participants learn, for each bucket, how many of them are members
//! without learning who. The initiator publishes `p`, `q` and a base `x` per
//! bucket; each participant keeps a secret pair `(e, d)` with
//! `e * d = 1` (non-member) or `2` (member) modulo `(p-1)(q-1)`. One lap of
//! `e`s followed by one lap of `d`s leaves `x^(2^k)` at the last
//! participant, where `k` is the bucket's member count.
//!
//! Modules, bottom up:
//! - [`bigmod`]: modular arithmetic, primality, prime search.
//! - [`params`]: public bucket numbers and secret exponent pairs.
//! - [`protocol`]: participant state machines and the tally driver.
//! - [`transport`]: wire format, transcripts, in-memory and TCP channels.
//! - [`node`]: one participant as a TCP node.
//! - [`analysis`]: oracle, discrete-log attacks, Jacobi-symbol probe.
//! - [`scenario`], [`replay`]: scenario files and transcript verification.

pub mod analysis;
pub mod bigmod;
pub mod node;
pub mod params;
pub mod protocol;
pub mod replay;
pub mod scenario;
pub mod seeding;
pub mod transport;

pub use bigmod::Natural;
pub use params::{BasePolicy, BucketParams, ExponentPair, ParamMode};
pub use protocol::{run_tally, Announce, Participant, SecretValue, TallyConfig, TallyOutput, TallyResult};
pub use scenario::{ScenarioConfig, ScenarioMode};
pub use transport::{CallLeg, Channel, MemoryChannel, ProtocolMessage, TcpChannel, Transcript};
