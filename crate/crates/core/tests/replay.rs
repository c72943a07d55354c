use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secount::params::ParamMode;
use secount::replay::{replay, Verdict};
use secount::scenario::{ScenarioConfig, ScenarioMode};
use secount::transport::{MemoryChannel, Transcript};

fn scenario(seed: u64) -> (ScenarioConfig, Transcript) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ScenarioConfig::random(5, 4, ScenarioMode::Centimillionaire, ParamMode::Random, seed, &mut rng);
    let output = config.simulate(&mut MemoryChannel::new(1..=5)).unwrap();
    (config, output.transcript)
}

fn edit(transcript: &Transcript, f: impl Fn(&str) -> Option<String>) -> Transcript {
    let mut done = false;
    let text: Vec<String> = transcript
        .to_text()
        .lines()
        .map(|line| match (done, f(line)) {
            (false, Some(changed)) => {
                done = true;
                changed
            }
            _ => line.to_string(),
        })
        .collect();
    assert!(done, "nothing edited");
    Transcript::from_text(&(text.join("\n") + "\n")).unwrap()
}

#[test]
fn honest_transcript_passes() {
    let (config, transcript) = scenario(1);
    let report = replay(&transcript, &config).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!((report.protocol_legs, report.announce_legs), (9, 4));
    for (bucket, verdict) in &report.verdicts {
        assert_eq!(*verdict, Verdict::Pass { count: config.oracle_counts()[bucket] });
    }
}

#[test]
fn edited_round2_line_fails_only_its_bucket() {
    let (config, transcript) = scenario(2);
    let tampered = edit(&transcript, |line| {
        let fields: Vec<&str> = line.split(' ').collect();
        (fields[3] == "R2" && fields[4] == "3").then(|| {
            let acc: u128 = fields[5].parse().unwrap();
            format!("{} {} {} R2 3 {}", fields[0], fields[1], fields[2], acc + 1)
        })
    });
    let report = replay(&tampered, &config).unwrap();
    assert_eq!(report.failed_buckets(), vec![3]);
}

#[test]
fn edited_announcement_fails() {
    let (config, transcript) = scenario(3);
    let tampered = edit(&transcript, |line| {
        let fields: Vec<&str> = line.split(' ').collect();
        (fields[3] == "RESULT" && fields[4] == "1").then(|| {
            let count: usize = fields[5].parse().unwrap();
            format!("{} {} {} RESULT 1 {}", fields[0], fields[1], fields[2], count + 1)
        })
    });
    assert_eq!(replay(&tampered, &config).unwrap().failed_buckets(), vec![1]);
}

#[test]
fn wrong_secrets_fail() {
    let (mut config, transcript) = scenario(4);
    config.values.swap(0, 1);
    if config.values[0] != config.values[1] {
        assert!(!replay(&transcript, &config).unwrap().passed());
    }
}

#[test]
fn truncated_transcript_breaks_the_schedule() {
    let (config, transcript) = scenario(5);
    let legs = transcript.legs().unwrap();
    let short = Transcript::from_legs(&legs[..6]).unwrap();
    let report = replay(&short, &config).unwrap();
    assert!(!report.passed());
    assert!(!report.structure.is_empty());
}
