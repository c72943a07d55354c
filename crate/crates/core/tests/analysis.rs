use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secount::analysis::{self, AttackMethod, Coalition, DlogResult, InferredBit};
use secount::bigmod;
use secount::params::{BasePolicy, ParamMode};
use secount::protocol::SecretValue;
use secount::scenario::{ScenarioConfig, ScenarioMode};
use secount::transport::MemoryChannel;
use secount::TallyOutput;

fn generic(bits: &[&str], param_mode: ParamMode, policy: BasePolicy, seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = ScenarioConfig::random(bits.len(), bits[0].len(), ScenarioMode::Generic, param_mode, seed, &mut rng);
    config.values = bits
        .iter()
        .map(|b| SecretValue::Bits(b.bytes().map(|c| c == b'1').collect()))
        .collect();
    config.base_policy = policy;
    config
}

fn run(config: &ScenarioConfig) -> TallyOutput {
    config.simulate(&mut MemoryChannel::new(1..=config.ring_size)).unwrap()
}

#[test]
fn probe_never_fires_with_jacobi_one_bases() {
    for seed in 0..200 {
        let mode = if seed % 2 == 0 { ParamMode::Fermat } else { ParamMode::Random };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ScenarioConfig::random(4, 2, ScenarioMode::Generic, mode, seed, &mut rng);
        let output = run(&config);
        for params in analysis::params_from_transcript(&output.transcript).unwrap() {
            let probe = analysis::jacobi_probe(&output.transcript, &params).unwrap();
            assert_eq!(probe.first_member, None, "seed {seed}");
            assert!(probe.symbols.iter().all(|(_, s)| *s == 1));
        }
    }
}

#[test]
fn probe_finds_the_first_member_when_x_has_symbol_minus_one() {
    let mut exposed = 0;
    let mut silent = 0;
    for seed in 0..40 {
        // bucket 1: only participant 2 is a member; bucket 2: nobody is
        let config = generic(&["00", "10", "00", "00"], ParamMode::Random, BasePolicy::AnyBase, seed);
        let output = run(&config);
        for params in analysis::params_from_transcript(&output.transcript).unwrap() {
            if bigmod::jacobi(&params.x, &params.n).unwrap() != -1 {
                continue;
            }
            let probe = analysis::jacobi_probe(&output.transcript, &params).unwrap();
            if params.bucket_id == 1 {
                assert_eq!(probe.first_member, Some(2), "seed {seed}");
                exposed += 1;
            } else {
                assert_eq!(probe.first_member, None);
                assert!(probe.symbols.iter().all(|(_, s)| *s == -1));
                silent += 1;
            }
        }
    }
    assert!(exposed > 5 && silent > 5, "{exposed} {silent}");
}

#[test]
fn everyone_else_colluding_needs_no_logarithm() {
    let config = generic(&["1", "0", "1", "1"], ParamMode::Random, BasePolicy::JacobiOne, 3);
    let output = run(&config);
    let params = &analysis::params_from_transcript(&output.transcript).unwrap()[0];
    let coalition = Coalition::new([1, 3, 4]).with_bits([(1, true), (3, true), (4, true)]);
    let outcome = analysis::collusion_attack(&output.transcript, params, &coalition, 2, 0).unwrap();
    assert_eq!(outcome.method, AttackMethod::CountSubtraction);
    assert_eq!(outcome.inferred, InferredBit::Nonmember);
}

#[test]
fn zero_budget_leaves_random_parameters_unbroken() {
    let config = generic(&["1", "1", "0"], ParamMode::Random, BasePolicy::JacobiOne, 8);
    let output = run(&config);
    let params = &analysis::params_from_transcript(&output.transcript).unwrap()[0];
    let outcome = analysis::collusion_attack(&output.transcript, params, &Coalition::new([1, 3]), 2, 0).unwrap();
    assert_eq!(outcome.inferred, InferredBit::Inconclusive);
    assert_eq!(outcome.work, 0);
}

#[test]
fn attack_needs_both_neighbours() {
    let config = generic(&["1", "1", "0", "0"], ParamMode::Fermat, BasePolicy::JacobiOne, 2);
    let output = run(&config);
    let params = &analysis::params_from_transcript(&output.transcript).unwrap()[0];
    let err = analysis::collusion_attack(&output.transcript, params, &Coalition::new([1]), 2, 10).unwrap_err();
    assert!(matches!(err, analysis::AnalysisError::NotSandwiched { target: 2, .. }));
}

#[test]
fn fermat_attack_on_the_initiator() {
    // target 1 sits between the extractor and participant 2
    for seed in 0..10 {
        let config = generic(&["1", "0", "0", "1", "0"], ParamMode::Fermat, BasePolicy::JacobiOne, seed);
        let output = run(&config);
        let params = &analysis::params_from_transcript(&output.transcript).unwrap()[0];
        let outcome = analysis::collusion_attack(&output.transcript, params, &Coalition::new([5, 2]), 1, 0).unwrap();
        assert_eq!(outcome.inferred, InferredBit::Member, "seed {seed}");
    }
}

#[test]
fn pohlig_hellman_matches_brute_force_on_small_orders() {
    let (p, q) = (BigUint::from(257u32), BigUint::from(17u32));
    let n = &p * &q;
    for g in [3u32, 5, 6, 10, 12] {
        let g = BigUint::from(g);
        for t in [0u64, 1, 2, 7, 100, 255] {
            let h = g.modpow(&BigUint::from(t), &n);
            let ph = analysis::pohlig_hellman_pow2(&g, &h, &n, &p, &q).unwrap();
            let DlogResult::Found { exponent, .. } = analysis::discrete_log_bruteforce(&g, &h, &n, 1 << 16) else {
                panic!("brute force must succeed below 2^16");
            };
            assert_eq!(ph.exponent, BigUint::from(exponent));
        }
    }
}
