//! Re-derives every accumulator of a published transcript from the
//! scenario's secrets and checks the announced counts against the oracle.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::params::ParamsError;
use crate::protocol::{BucketId, Participant};
use crate::scenario::ScenarioConfig;
use crate::transport::{CallLeg, ProtocolMessage, Transcript, TranscriptError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass { count: usize },
    Fail { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub verdicts: BTreeMap<BucketId, Verdict>,
    /// Schedule problems not tied to one bucket.
    pub structure: Vec<String>,
    pub protocol_legs: usize,
    pub announce_legs: usize,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.structure.is_empty() && self.verdicts.values().all(|v| matches!(v, Verdict::Pass { .. }))
    }

    pub fn failed_buckets(&self) -> Vec<BucketId> {
        self.verdicts
            .iter()
            .filter(|(_, v)| matches!(v, Verdict::Fail { .. }))
            .map(|(b, _)| *b)
            .collect()
    }
}

struct Checker {
    failures: BTreeMap<BucketId, String>,
}

impl Checker {
    fn fail(&mut self, bucket: BucketId, reason: String) {
        self.failures.entry(bucket).or_insert(reason);
    }

    /// Compares what a participant should have said with what the transcript
    /// says it said, bucket by bucket.
    fn compare(&mut self, stage: &str, expected: &[ProtocolMessage], actual: &CallLeg) {
        let expected: BTreeMap<_, _> = expected.iter().filter_map(|m| Some((m.bucket()?, m))).collect();
        let actual: BTreeMap<_, _> = actual.body().iter().filter_map(|m| Some((m.bucket()?, m))).collect();
        let buckets: BTreeSet<_> = expected.keys().chain(actual.keys()).copied().collect();
        for bucket in buckets {
            match (expected.get(&bucket), actual.get(&bucket)) {
                (Some(e), Some(a)) if e == a => {}
                (Some(_), Some(a)) => self.fail(bucket, format!("{stage}: recorded `{a}` does not recompute")),
                (Some(_), None) => self.fail(bucket, format!("{stage}: line missing")),
                (None, Some(a)) => self.fail(bucket, format!("{stage}: unexpected `{a}`")),
                (None, None) => unreachable!(),
            }
        }
    }
}

/// Replays `transcript` against the secrets of `scenario`.
pub fn replay(transcript: &Transcript, scenario: &ScenarioConfig) -> Result<ReplayReport, ReplayError> {
    let legs = transcript.legs()?;
    let ring_size = scenario.ring_size;
    let protocol_legs = 2 * ring_size - 1;
    let mut structure = Vec::new();
    let mut checker = Checker {
        failures: BTreeMap::new(),
    };

    let schedule_ok = legs.len() >= protocol_legs
        && legs.iter().take(protocol_legs).enumerate().all(|(j, leg)| {
            let (from, to) = if j < ring_size {
                (j + 1, (j + 1) % ring_size + 1)
            } else {
                (j - ring_size + 1, j - ring_size + 2)
            };
            leg.from == from && leg.to == to && leg.hello() == Some((ring_size, scenario.bucket_count))
        });
    if !schedule_ok {
        structure.push(format!(
            "expected {protocol_legs} protocol calls around the ring 1..={ring_size}"
        ));
        let verdicts = (1..=scenario.bucket_count)
            .map(|b| {
                (
                    b,
                    Verdict::Fail {
                        reason: "call schedule broken".into(),
                    },
                )
            })
            .collect();
        return Ok(ReplayReport {
            verdicts,
            structure,
            protocol_legs: legs.len().min(protocol_legs),
            announce_legs: legs.len().saturating_sub(protocol_legs),
        });
    }

    let params = scenario.bucket_params()?;
    let mut participants: Vec<Participant> = scenario.participants();

    let opened = participants[0].initiate(&params);
    checker.compare("round 1 call from participant 1", &opened, &legs[0]);
    for position in 1..ring_size {
        let out = participants[position].relay_round1(ring_size, legs[position - 1].body());
        checker.compare(&format!("round 1 call from participant {}", position + 1), &out, &legs[position]);
    }
    let out = participants[0].begin_round2(legs[ring_size - 1].body());
    checker.compare("round 2 call from participant 1", &out, &legs[ring_size]);
    for position in 1..ring_size - 1 {
        let out = participants[position].relay_round2(legs[ring_size + position - 1].body());
        checker.compare(
            &format!("round 2 call from participant {}", position + 1),
            &out,
            &legs[ring_size + position],
        );
    }
    let counts = participants[ring_size - 1].extract(legs[protocol_legs - 1].body());
    for participant in &participants {
        for (bucket, fault) in participant.faults() {
            checker.fail(*bucket, format!("participant {}: {fault}", participant.index()));
        }
    }

    let announcements = &legs[protocol_legs..];
    for leg in announcements {
        if leg.from != ring_size {
            structure.push(format!("announcement from participant {} instead of {ring_size}", leg.from));
        }
        for message in leg.body() {
            match message {
                ProtocolMessage::Result { bucket, count } if counts.get(bucket) != Some(count) => {
                    checker.fail(*bucket, format!("announced {count} but the chain yields {:?}", counts.get(bucket)))
                }
                ProtocolMessage::Result { .. } => {}
                other => structure.push(format!("unexpected `{other}` in an announcement")),
            }
        }
    }

    let oracle = scenario.oracle_counts();
    let verdicts = (1..=scenario.bucket_count)
        .map(|bucket| {
            let verdict = if let Some(reason) = checker.failures.remove(&bucket) {
                Verdict::Fail { reason }
            } else {
                match counts.get(&bucket) {
                    Some(&count) if count == oracle[&bucket] => Verdict::Pass { count },
                    Some(&count) => Verdict::Fail {
                        reason: format!("count {count} disagrees with oracle {}", oracle[&bucket]),
                    },
                    None => Verdict::Fail {
                        reason: "no count extracted".into(),
                    },
                }
            };
            (bucket, verdict)
        })
        .collect();

    Ok(ReplayReport {
        verdicts,
        structure,
        protocol_legs,
        announce_legs: announcements.len(),
    })
}
