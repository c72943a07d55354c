//! Reference oracle and attacks on published transcripts.
//!
//! Two adversaries are modelled. A coalition sandwiching a target recovers
//! the target's `e` and `d` by discrete logarithms over the target's
//! round-1 and round-2 traffic, which is cheap whenever the group order is
//! a power of two. An eavesdropper reads Jacobi symbols of round-2
//! accumulators, which expose the parity of every `d` when `x` itself is a
//! Jacobi non-residue.

use std::collections::{BTreeMap, BTreeSet};

use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::bigmod::{self, ArithmeticError, Natural};
use crate::params::BucketParams;
use crate::protocol::{BucketId, ParticipantIndex, SecretValue};
use crate::transport::{ProtocolMessage, Transcript, TranscriptError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("transcript lacks {0}")]
    MissingData(String),
    #[error("target {target} is not sandwiched between colluders (neighbours {before} and {after})")]
    NotSandwiched {
        target: ParticipantIndex,
        before: ParticipantIndex,
        after: ParticipantIndex,
    },
    #[error("element order is not a power of two modulo {0}")]
    NotTwoSmooth(Natural),
    #[error("{h} is not a power of {g}")]
    NoSolution { g: Natural, h: Natural },
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// Plain membership count with no privacy at all.
pub fn oracle_count(values: &[SecretValue], bucket: BucketId) -> usize {
    values.iter().filter(|v| v.is_member(bucket)).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DlogResult {
    Found { exponent: u64, work: u64 },
    Inconclusive { work: u64 },
}

impl DlogResult {
    pub fn work(&self) -> u64 {
        match self {
            DlogResult::Found { work, .. } | DlogResult::Inconclusive { work } => *work,
        }
    }
}

/// Smallest `t <= max_steps` with `g^t = h (mod n)`, by walking the powers
/// of `g`. Each multiplication counts as one unit of work.
pub fn discrete_log_bruteforce(g: &Natural, h: &Natural, n: &Natural, max_steps: u64) -> DlogResult {
    if let (Some(g), Some(h), Some(n)) = (g.to_u64(), h.to_u64(), n.to_u64()) {
        return bruteforce_u64(g, h, n, max_steps);
    }
    let target = h % n;
    let g = g % n;
    let mut current = Natural::one() % n;
    if current == target {
        return DlogResult::Found { exponent: 0, work: 0 };
    }
    for t in 1..=max_steps {
        current = (&current * &g) % n;
        if current == target {
            return DlogResult::Found { exponent: t, work: t };
        }
    }
    DlogResult::Inconclusive { work: max_steps }
}

fn bruteforce_u64(g: u64, h: u64, n: u64, max_steps: u64) -> DlogResult {
    let (g, target, n) = (u128::from(g % n), u128::from(h % n), u128::from(n));
    let mut current = 1 % n;
    if current == target {
        return DlogResult::Found { exponent: 0, work: 0 };
    }
    for t in 1..=max_steps {
        current = current * g % n;
        if current == target {
            return DlogResult::Found { exponent: t, work: t };
        }
    }
    DlogResult::Inconclusive { work: max_steps }
}

/// Discrete log in a group of power-of-two order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerOfTwoLog {
    /// `t` reduced modulo `order`.
    pub exponent: Natural,
    /// Multiplicative order of `g` modulo `n`.
    pub order: Natural,
    pub work: u64,
}

/// Solves `g^t = h (mod p*q)` when `g` has power-of-two order, recovering `t`
/// one bit at a time modulo each prime and stitching the two residues
/// together.
pub fn pohlig_hellman_pow2(
    g: &Natural,
    h: &Natural,
    n: &Natural,
    p: &Natural,
    q: &Natural,
) -> Result<PowerOfTwoLog, AnalysisError> {
    if &(p * q) != n {
        return Err(AnalysisError::MissingData("n = p * q".into()));
    }
    let mut work = 0u64;
    let (t_p, bits_p) = two_power_log_mod_prime(g, h, p, &mut work)?;
    let (t_q, bits_q) = two_power_log_mod_prime(g, h, q, &mut work)?;
    let (low, low_bits, high, high_bits) = if bits_p <= bits_q {
        (t_p, bits_p, t_q, bits_q)
    } else {
        (t_q, bits_q, t_p, bits_p)
    };
    let low_mask = (Natural::one() << low_bits) - 1u32;
    if (&high & &low_mask) != low {
        return Err(AnalysisError::NoSolution {
            g: g.clone(),
            h: h.clone(),
        });
    }
    let order = Natural::one() << high_bits;
    if g.modpow(&high, n) != h % n {
        return Err(AnalysisError::NoSolution {
            g: g.clone(),
            h: h.clone(),
        });
    }
    Ok(PowerOfTwoLog {
        exponent: high,
        order,
        work,
    })
}

/// Returns `(t mod 2^a, a)` where `2^a` is the order of `g` modulo `prime`.
fn two_power_log_mod_prime(
    g: &Natural,
    h: &Natural,
    prime: &Natural,
    work: &mut u64,
) -> Result<(Natural, u64), AnalysisError> {
    let g = g % prime;
    let h = h % prime;
    let no_solution = || AnalysisError::NoSolution {
        g: g.clone(),
        h: h.clone(),
    };
    if g.is_zero() || h.is_zero() {
        return Err(no_solution());
    }
    let square = |v: &Natural, work: &mut u64| {
        *work += 1;
        (v * v) % prime
    };

    // order of g is 2^bits
    let mut bits = 0u64;
    let mut y = g.clone();
    while !y.is_one() {
        if bits > prime.bits() {
            return Err(AnalysisError::NotTwoSmooth(prime.clone()));
        }
        y = square(&y, work);
        bits += 1;
    }
    if bits == 0 {
        return if h.is_one() { Ok((Natural::zero(), 0)) } else { Err(no_solution()) };
    }

    // the unique element of order 2
    let mut minus_one = g.clone();
    for _ in 1..bits {
        minus_one = square(&minus_one, work);
    }
    let g_inv = bigmod::modinv(&g, prime)?;
    let mut t = Natural::zero();
    let mut g_inv_pow = g_inv; // g^(-2^i)
    let mut residual = h.clone(); // h * g^(-t)
    for i in 0..bits {
        let mut probe = residual.clone();
        for _ in 0..(bits - 1 - i) {
            probe = square(&probe, work);
        }
        if probe == minus_one {
            t.set_bit(i, true);
            residual = (&residual * &g_inv_pow) % prime;
            *work += 1;
        } else if !probe.is_one() {
            return Err(no_solution());
        }
        g_inv_pow = square(&g_inv_pow, work);
    }
    if !residual.is_one() {
        return Err(no_solution());
    }
    Ok((t, bits))
}

/// What a coalition concluded about the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferredBit {
    Member,
    Nonmember,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    /// Everyone but the target colluded: subtract their bits from the count.
    CountSubtraction,
    PohligHellman,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackOutcome {
    pub target: ParticipantIndex,
    pub bucket: BucketId,
    pub inferred: InferredBit,
    pub method: AttackMethod,
    /// Group operations spent.
    pub work: u64,
}

/// The colluders and what they know of their own secrets for the attacked
/// bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coalition {
    pub members: BTreeSet<ParticipantIndex>,
    pub known_bits: BTreeMap<ParticipantIndex, bool>,
}

impl Coalition {
    pub fn new(members: impl IntoIterator<Item = ParticipantIndex>) -> Self {
        Coalition {
            members: members.into_iter().collect(),
            known_bits: BTreeMap::new(),
        }
    }

    pub fn with_bits(mut self, bits: impl IntoIterator<Item = (ParticipantIndex, bool)>) -> Self {
        self.known_bits.extend(bits);
        self
    }
}

/// Public traffic of one bucket, in transcript order.
#[derive(Debug, Clone, Default)]
pub struct BucketTraffic {
    /// `(from, to, acc)` of every round-1 line.
    pub round1: Vec<(ParticipantIndex, ParticipantIndex, Natural)>,
    pub round2: Vec<(ParticipantIndex, ParticipantIndex, Natural)>,
    pub announced: Option<usize>,
}

impl BucketTraffic {
    pub fn collect(transcript: &Transcript, bucket: BucketId) -> Result<Self, AnalysisError> {
        let mut traffic = BucketTraffic::default();
        for leg in transcript.legs()? {
            for message in leg.body() {
                match message {
                    ProtocolMessage::Round1 { bucket: b, acc, .. } if *b == bucket => {
                        traffic.round1.push((leg.from, leg.to, acc.clone()))
                    }
                    ProtocolMessage::Round2 { bucket: b, acc } if *b == bucket => {
                        traffic.round2.push((leg.from, leg.to, acc.clone()))
                    }
                    ProtocolMessage::Result { bucket: b, count } if *b == bucket => {
                        traffic.announced.get_or_insert(*count);
                    }
                    _ => {}
                }
            }
        }
        Ok(traffic)
    }

    /// Call order reconstructed from round-1 traffic.
    pub fn ring(&self) -> Vec<ParticipantIndex> {
        self.round1.iter().map(|(from, _, _)| *from).collect()
    }

    fn round1_out(&self, who: ParticipantIndex) -> Option<&Natural> {
        self.round1.iter().find(|(from, _, _)| *from == who).map(|(_, _, acc)| acc)
    }

    fn round1_in(&self, who: ParticipantIndex) -> Option<&Natural> {
        self.round1.iter().find(|(_, to, _)| *to == who).map(|(_, _, acc)| acc)
    }

    fn round2_out(&self, who: ParticipantIndex) -> Option<&Natural> {
        self.round2.iter().find(|(from, _, _)| *from == who).map(|(_, _, acc)| acc)
    }

    fn round2_in(&self, who: ParticipantIndex) -> Option<&Natural> {
        self.round2.iter().find(|(_, to, _)| *to == who).map(|(_, _, acc)| acc)
    }
}

/// Public numbers of every bucket, as carried by the first round-1 leg.
pub fn params_from_transcript(transcript: &Transcript) -> Result<Vec<BucketParams>, AnalysisError> {
    let legs = transcript.legs()?;
    let first = legs
        .first()
        .ok_or_else(|| AnalysisError::MissingData("any call leg".into()))?;
    let (ring_size, _) = first
        .hello()
        .ok_or_else(|| AnalysisError::MissingData("HELLO line".into()))?;
    first
        .body()
        .iter()
        .map(|message| match message {
            ProtocolMessage::Round1 { bucket, p, q, x, .. } => {
                BucketParams::from_public(*bucket, p.clone(), q.clone(), x.clone(), ring_size)
                    .map_err(|e| AnalysisError::MissingData(format!("valid public numbers: {e}")))
            }
            _ => Err(AnalysisError::MissingData("round-1 lines in the first leg".into())),
        })
        .collect()
}

/// Coalition attack on `target`'s membership bit in `params.bucket_id`.
///
/// With all other participants in the coalition the bit follows from the
/// announced count. Otherwise both ring neighbours of the target must
/// collude; the attack solves `a^e = c` over the target's round-1 hop and
/// `b^d = b'` over its round-2 hop, then tests `b^(e*d)` against `b` and
/// `b^2`. Logs use Pohlig-Hellman when phi is a power of two, else brute
/// force limited to `dl_budget` steps in total.
pub fn collusion_attack(
    transcript: &Transcript,
    params: &BucketParams,
    coalition: &Coalition,
    target: ParticipantIndex,
    dl_budget: u64,
) -> Result<AttackOutcome, AnalysisError> {
    let bucket = params.bucket_id;
    let traffic = BucketTraffic::collect(transcript, bucket)?;
    let ring = traffic.ring();
    let position = ring
        .iter()
        .position(|&i| i == target)
        .ok_or_else(|| AnalysisError::MissingData(format!("round-1 traffic from participant {target}")))?;
    let outcome = |inferred, method, work| AttackOutcome {
        target,
        bucket,
        inferred,
        method,
        work,
    };

    let others: Vec<_> = ring.iter().copied().filter(|&i| i != target).collect();
    let all_others_known = others
        .iter()
        .all(|i| coalition.members.contains(i) && coalition.known_bits.contains_key(i));
    if all_others_known {
        if let Some(count) = traffic.announced {
            let theirs = others.iter().filter(|i| coalition.known_bits[i]).count();
            let inferred = match count.checked_sub(theirs) {
                Some(0) => InferredBit::Nonmember,
                Some(1) => InferredBit::Member,
                _ => InferredBit::Inconclusive,
            };
            return Ok(outcome(inferred, AttackMethod::CountSubtraction, 0));
        }
    }

    let before = ring[(position + ring.len() - 1) % ring.len()];
    let after = ring[(position + 1) % ring.len()];
    if !coalition.members.contains(&before) || !coalition.members.contains(&after) {
        return Err(AnalysisError::NotSandwiched { target, before, after });
    }

    let missing = |what: &str| AnalysisError::MissingData(format!("{what} of participant {target}"));
    let a = if position == 0 {
        &params.x
    } else {
        traffic.round1_in(target).ok_or_else(|| missing("round-1 input"))?
    };
    let c = traffic.round1_out(target).ok_or_else(|| missing("round-1 output"))?;
    let b = if position == 0 {
        traffic.round1_in(target).ok_or_else(|| missing("closing round-1 input"))?
    } else {
        traffic.round2_in(target).ok_or_else(|| missing("round-2 input"))?
    };
    let b_out = traffic.round2_out(target).ok_or_else(|| missing("round-2 output"))?;

    let n = &params.n;
    let (e, d, work, method) = if params.is_two_smooth() {
        let e = pohlig_hellman_pow2(a, c, n, &params.p, &params.q)?;
        let d = pohlig_hellman_pow2(b, b_out, n, &params.p, &params.q)?;
        (e.exponent, d.exponent, e.work + d.work, AttackMethod::PohligHellman)
    } else {
        let e = discrete_log_bruteforce(a, c, n, dl_budget);
        let DlogResult::Found { exponent: e, work: e_work } = e else {
            return Ok(outcome(InferredBit::Inconclusive, AttackMethod::BruteForce, e.work()));
        };
        let d = discrete_log_bruteforce(b, b_out, n, dl_budget - e_work);
        let DlogResult::Found { exponent: d, work: d_work } = d else {
            return Ok(outcome(InferredBit::Inconclusive, AttackMethod::BruteForce, e_work + d.work()));
        };
        (Natural::from(e), Natural::from(d), e_work + d_work, AttackMethod::BruteForce)
    };

    let applied = b.modpow(&(e * d), n);
    let inferred = if applied == b % n {
        InferredBit::Nonmember
    } else if applied == (b * b) % n {
        InferredBit::Member
    } else {
        InferredBit::Inconclusive
    };
    Ok(outcome(inferred, method, work))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeOutcome {
    pub bucket: BucketId,
    /// First round-2 sender whose output flipped the Jacobi symbol to +1.
    pub first_member: Option<ParticipantIndex>,
    /// `(sender, jacobi(acc, n))` for every round-2 line, in call order.
    pub symbols: Vec<(ParticipantIndex, i8)>,
}

/// Eavesdropper probe: when `jacobi(x, n) = -1`, every round-1 accumulator
/// keeps symbol -1 (all `e` are odd), and in round 2 the symbol stays -1
/// until someone applies an even `d`, which happens exactly for members.
pub fn jacobi_probe(transcript: &Transcript, params: &BucketParams) -> Result<ProbeOutcome, AnalysisError> {
    let traffic = BucketTraffic::collect(transcript, params.bucket_id)?;
    let symbols = traffic
        .round2
        .iter()
        .map(|(from, _, acc)| Ok((*from, bigmod::jacobi(acc, &params.n)?)))
        .collect::<Result<Vec<_>, ArithmeticError>>()?;
    let first_member = if bigmod::jacobi(&params.x, &params.n)? == -1 {
        symbols.iter().find(|(_, symbol)| *symbol == 1).map(|(from, _)| *from)
    } else {
        None
    };
    Ok(ProbeOutcome {
        bucket: params.bucket_id,
        first_member,
        symbols,
    })
}

/// Multiplicative order of `g` modulo `n`, given the factorisation of any
/// multiple of it (for `n = p*q`, of `lcm(p - 1, q - 1)`) as
/// `(prime, exponent)` pairs.
pub fn multiplicative_order(
    g: &Natural,
    n: &Natural,
    lambda_factors: &[(Natural, u32)],
) -> Natural {
    let lambda = lambda_factors
        .iter()
        .fold(Natural::one(), |acc, (prime, exp)| acc * prime.pow(*exp));
    let mut order = lambda;
    for (prime, exp) in lambda_factors {
        for _ in 0..*exp {
            let (candidate, rem) = order.div_rem(prime);
            if !rem.is_zero() || !g.modpow(&candidate, n).is_one() {
                break;
            }
            order = candidate;
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat(v: u64) -> Natural {
        Natural::from(v)
    }

    #[test]
    fn oracle_examples() {
        let values = [SecretValue::Bucket(5), SecretValue::Bucket(5), SecretValue::Bucket(7)];
        assert_eq!(oracle_count(&values, 5), 2);
        assert_eq!(oracle_count(&values, 6), 0);
        assert_eq!(oracle_count(&vec![SecretValue::Bucket(1); 4], 1), 4);
        let bits = [SecretValue::Bits(vec![true, false]), SecretValue::Bits(vec![true, true])];
        assert_eq!(oracle_count(&bits, 1), 2);
        assert_eq!(oracle_count(&bits, 2), 1);
        assert_eq!(oracle_count(&bits, 3), 0);
    }

    #[test]
    fn bruteforce_examples() {
        assert_eq!(
            discrete_log_bruteforce(&nat(3), &nat(81), &nat(85), 100),
            DlogResult::Found { exponent: 4, work: 4 }
        );
        assert_eq!(
            discrete_log_bruteforce(&nat(11), &nat(11), &nat(85), 100),
            DlogResult::Found { exponent: 1, work: 1 }
        );
        assert_eq!(
            discrete_log_bruteforce(&nat(3), &nat(2), &nat(85), 16),
            DlogResult::Inconclusive { work: 16 }
        );
        assert_eq!(
            discrete_log_bruteforce(&nat(3), &nat(1), &nat(85), 0),
            DlogResult::Found { exponent: 0, work: 0 }
        );
        let big = Natural::from(u64::MAX) * 3u32;
        assert_eq!(
            discrete_log_bruteforce(&nat(3), &nat(81), &big, 10),
            DlogResult::Found { exponent: 4, work: 4 }
        );
    }

    #[test]
    fn pohlig_hellman_examples() {
        let solve = |g, h| pohlig_hellman_pow2(&nat(g), &nat(h), &nat(85), &nat(5), &nat(17));
        let log = solve(3, 81).unwrap();
        assert_eq!((log.exponent, log.order), (nat(4), nat(16)));
        assert_eq!(solve(3, 1).unwrap().exponent, nat(0));
        assert_eq!(solve(3, 3).unwrap().exponent, nat(1));
        assert!(matches!(solve(3, 2), Err(AnalysisError::NoSolution { .. })));
    }

    #[test]
    fn pohlig_hellman_rejects_odd_orders() {
        // 2 has order 3 modulo 7
        let err = pohlig_hellman_pow2(&nat(2), &nat(4), &nat(77), &nat(7), &nat(11)).unwrap_err();
        assert!(matches!(err, AnalysisError::NotTwoSmooth(_)), "{err}");
    }

    #[test]
    fn pohlig_hellman_matches_bruteforce_up_to_order_2_16() {
        for (p, q) in [(5u64, 17u64), (17, 257), (3, 65537), (257, 65537)] {
            let n = p * q;
            for g in [3u64, 5, 6, 7, 10, 12345 % n, n - 2] {
                if bigmod::gcd(&nat(g), &nat(n)) != nat(1) {
                    continue;
                }
                for t in [0u64, 1, 2, 3, 17, 255, 1000, 40_000, 65_535] {
                    let h = nat(g).modpow(&nat(t), &nat(n));
                    let ph = pohlig_hellman_pow2(&nat(g), &h, &nat(n), &nat(p), &nat(q)).unwrap();
                    match discrete_log_bruteforce(&nat(g), &h, &nat(n), 1 << 17) {
                        DlogResult::Found { exponent, .. } => {
                            assert_eq!(ph.exponent, nat(exponent), "g={g} t={t} n={n}")
                        }
                        other => panic!("bruteforce failed: {other:?}"),
                    }
                    assert!(ph.work <= 3 * 17 * 17);
                }
            }
        }
    }

    #[test]
    fn order_of_three_mod_85() {
        let factors = [(nat(2), 4)];
        assert_eq!(multiplicative_order(&nat(3), &nat(85), &factors), nat(16));
        assert_eq!(multiplicative_order(&nat(16), &nat(85), &factors), nat(2));
        assert_eq!(multiplicative_order(&nat(1), &nat(85), &factors), nat(1));
    }
}
