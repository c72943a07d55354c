use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secount::node::{self, NodeError, NodeOptions};
use secount::params::ParamMode;
use secount::scenario::{ScenarioConfig, ScenarioMode};
use secount::transport::{MemoryChannel, Roster, TcpOptions, TransportError};
use secount::Announce;

fn quick() -> NodeOptions {
    NodeOptions {
        tcp: TcpOptions {
            timeout: Duration::from_secs(5),
            connect_retries: 50,
            retry_delay: Duration::from_millis(20),
        },
        wait: Duration::from_secs(30),
    }
}

fn ring(config: &ScenarioConfig) -> Vec<Result<node::NodeReport, NodeError>> {
    let listeners: Vec<_> = (0..config.ring_size)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    let roster = Roster::new(
        listeners
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l.local_addr().unwrap().to_string()))
            .collect(),
    );
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(i, listener)| {
            let (roster, config) = (roster.clone(), config.clone());
            thread::spawn(move || node::run_node(listener, &roster, i + 1, &config, &quick()))
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

#[test]
fn broadcast_ring_over_tcp_matches_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut config = ScenarioConfig::random(4, 5, ScenarioMode::Centimillionaire, ParamMode::Fermat, 4, &mut rng);
    config.announce = Announce::Broadcast;
    let simulated = config.simulate(&mut MemoryChannel::new(1..=4)).unwrap();
    let reports: Vec<_> = ring(&config).into_iter().map(Result::unwrap).collect();
    for report in &reports {
        assert_eq!(report.counts, simulated.result.counts);
    }
    let transcript = node::merge_node_legs(reports.into_iter().flat_map(|r| r.sent)).unwrap();
    assert_eq!(transcript, simulated.transcript);
    assert_eq!(node::merge_transcripts([&transcript]).unwrap(), simulated.transcript);
}

#[test]
fn unreachable_successor_is_a_transport_fault() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = ScenarioConfig::random(2, 1, ScenarioMode::Centimillionaire, ParamMode::Fermat, 1, &mut rng);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let roster = Roster::new(
        [
            (1, listener.local_addr().unwrap().to_string()),
            (2, closed.local_addr().unwrap().to_string()),
        ]
        .into(),
    );
    drop(closed);
    let options = NodeOptions {
        tcp: TcpOptions::default(),
        wait: Duration::from_secs(1),
    };
    let err = node::run_node(listener, &roster, 1, &config, &options).unwrap_err();
    assert!(matches!(err, NodeError::Transport(TransportError::Connect { to: 2, .. })), "{err}");
}

#[test]
fn index_outside_the_ring_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = ScenarioConfig::random(2, 1, ScenarioMode::Centimillionaire, ParamMode::Fermat, 1, &mut rng);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let roster = Roster::new([(1, "127.0.0.1:1".to_string()), (2, "127.0.0.1:2".to_string())].into());
    let err = node::run_node(listener, &roster, 3, &config, &quick()).unwrap_err();
    assert!(matches!(err, NodeError::Usage(_)));
}
