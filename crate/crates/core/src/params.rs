//! Public per-bucket numbers chosen by the initiator and the secret exponent
//! pairs every participant draws for itself.

use std::collections::HashSet;
use std::fmt;

use num_bigint::RandBigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bigmod::{self, ArithmeticError, Natural};

/// The five known primes of the form `2^k + 1`.
pub const FERMAT_PRIMES: [u32; 5] = [3, 5, 17, 257, 65537];

/// Largest ring the Fermat primes can serve: `2^16` is the biggest
/// power-of-two element order available, and a ring of `N` needs `2^(N+1)`.
pub const FERMAT_MAX_RING_SIZE: usize = 15;

/// Default modulus size in random mode. Demonstration scale only.
pub const DEFAULT_MODULUS_BITS: u64 = 64;

const SELECT_X_BUDGET: usize = 4096;
const EXPONENT_DRAW_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("ring size must be at least 2, got {0}")]
    RingTooSmall(usize),
    #[error("fermat primes cannot serve a ring of {ring_size}: at most {max} participants")]
    FermatUnsatisfiable { ring_size: usize, max: usize },
    #[error("no acceptable base x found after {attempts} candidates")]
    BaseUnsatisfiable { attempts: usize },
    #[error("no exponent coprime to phi found after {attempts} draws")]
    ExponentSearchFailed { attempts: usize },
    #[error("phi must be even and at least 8, got {0}")]
    InvalidPhi(Natural),
    #[error("{0} is not coprime to phi")]
    ExponentNotCoprime(Natural),
    #[error("invalid bucket parameters: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
}

/// How primes are chosen for a bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    /// Both primes are known Fermat primes, so phi is a power of two.
    Fermat,
    /// `p = 1 (mod 2^(N+1))` and `q` any odd prime, each half the modulus size.
    Random,
}

impl fmt::Display for ParamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamMode::Fermat => "fermat",
            ParamMode::Random => "random",
        })
    }
}

impl std::str::FromStr for ParamMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fermat" => Ok(ParamMode::Fermat),
            "random" => Ok(ParamMode::Random),
            other => Err(format!("unknown param mode `{other}`")),
        }
    }
}

/// Extra condition on the base `x` beyond the power-ladder requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasePolicy {
    /// Require `jacobi(x, n) = +1`, which hides the parity of every `d`
    /// from anyone reading round-2 traffic.
    #[default]
    JacobiOne,
    /// Accept any `x` meeting the ladder condition alone.
    AnyBase,
}

impl fmt::Display for BasePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasePolicy::JacobiOne => "jacobi",
            BasePolicy::AnyBase => "any",
        })
    }
}

impl std::str::FromStr for BasePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jacobi" => Ok(BasePolicy::JacobiOne),
            "any" => Ok(BasePolicy::AnyBase),
            other => Err(format!("unknown base policy `{other}`")),
        }
    }
}

/// Public numbers for one bucket's counting instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketParams {
    pub bucket_id: usize,
    pub p: Natural,
    pub q: Natural,
    pub n: Natural,
    pub phi: Natural,
    pub x: Natural,
    pub ring_size: usize,
}

impl BucketParams {
    /// Rebuilds the derived fields from the four public numbers and checks
    /// every structural invariant except primality (see [`Self::validate`]).
    pub fn from_public(
        bucket_id: usize,
        p: Natural,
        q: Natural,
        x: Natural,
        ring_size: usize,
    ) -> Result<Self, ParamsError> {
        if ring_size < 2 {
            return Err(ParamsError::RingTooSmall(ring_size));
        }
        let three = Natural::from(3u8);
        if p < three || q < three || p.is_even() || q.is_even() {
            return Err(ParamsError::Invalid("p and q must be odd primes"));
        }
        if p == q {
            return Err(ParamsError::Invalid("p and q must differ"));
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        let params = BucketParams {
            bucket_id,
            p,
            q,
            n,
            phi,
            x,
            ring_size,
        };
        if !ladder_is_valid(&params.x, &params.p, &params.q, ring_size) {
            return Err(ParamsError::Invalid(
                "x^(2^k) must be distinct, different from 1 and coprime to n",
            ));
        }
        Ok(params)
    }

    /// Full invariant check, including Miller-Rabin on both primes.
    pub fn validate(&self) -> Result<(), ParamsError> {
        let rebuilt = Self::from_public(
            self.bucket_id,
            self.p.clone(),
            self.q.clone(),
            self.x.clone(),
            self.ring_size,
        )?;
        if rebuilt != *self {
            return Err(ParamsError::Invalid("n or phi inconsistent with p and q"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for prime in [&self.p, &self.q] {
            if !bigmod::is_probable_prime(prime, bigmod::DEFAULT_MR_ROUNDS, &mut rng) {
                return Err(ParamsError::Invalid("p and q must be prime"));
            }
        }
        Ok(())
    }

    /// `x^(2^k) mod n` for `k = 0..=ring_size`.
    pub fn ladder(&self) -> Vec<Natural> {
        power_ladder(&self.x, &self.n, self.ring_size)
    }

    /// Whether phi is a power of two, i.e. every group order is 2-smooth.
    pub fn is_two_smooth(&self) -> bool {
        is_power_of_two(&(&self.p - 1u32)) && is_power_of_two(&(&self.q - 1u32))
    }
}

fn is_power_of_two(value: &Natural) -> bool {
    !value.is_zero() && value.count_ones() == 1
}

fn power_ladder(x: &Natural, n: &Natural, ring_size: usize) -> Vec<Natural> {
    let mut powers = Vec::with_capacity(ring_size + 1);
    let mut current = x % n;
    for _ in 0..=ring_size {
        let next = (&current * &current) % n;
        powers.push(std::mem::replace(&mut current, next));
    }
    powers
}

fn ladder_is_valid(x: &Natural, p: &Natural, q: &Natural, ring_size: usize) -> bool {
    let n = p * q;
    if x.is_zero() || x >= &n || !bigmod::gcd(x, &n).is_one() {
        return false;
    }
    let powers = power_ladder(x, &n, ring_size);
    let mut seen = HashSet::with_capacity(powers.len());
    powers.iter().all(|value| {
        !value.is_one()
            && !(value % p).is_zero()
            && !(value % q).is_zero()
            && seen.insert(value.clone())
    })
}

/// Draws a base `x` in `[2, n-2]` whose squaring ladder has `ring_size + 1`
/// distinct entries, none equal to 1 and none divisible by `p` or `q`.
pub fn select_x<R: Rng + ?Sized>(
    p: &Natural,
    q: &Natural,
    ring_size: usize,
    policy: BasePolicy,
    rng: &mut R,
) -> Result<Natural, ParamsError> {
    if p == q {
        return Err(ParamsError::Invalid("p and q must differ"));
    }
    let n = p * q;
    let low = Natural::from(2u8);
    let high = &n - 1u32; // exclusive upper bound, so x <= n - 2
    if high <= low {
        return Err(ParamsError::Invalid("modulus too small"));
    }
    for _ in 0..SELECT_X_BUDGET {
        let x = rng.gen_biguint_range(&low, &high);
        if !bigmod::gcd(&x, &n).is_one() {
            continue;
        }
        if policy == BasePolicy::JacobiOne && bigmod::jacobi(&x, &n)? != 1 {
            continue;
        }
        if ladder_is_valid(&x, p, q, ring_size) {
            return Ok(x);
        }
    }
    Err(ParamsError::BaseUnsatisfiable {
        attempts: SELECT_X_BUDGET,
    })
}

/// Fermat-prime pairs able to serve a ring of `ring_size`.
pub fn fermat_pairs(ring_size: usize) -> Vec<(u32, u32)> {
    let needed = ring_size as u32 + 1;
    let mut pairs = Vec::new();
    for (i, &p) in FERMAT_PRIMES.iter().enumerate() {
        for &q in &FERMAT_PRIMES[i + 1..] {
            if (p - 1).trailing_zeros().max((q - 1).trailing_zeros()) >= needed {
                pairs.push((p, q));
            }
        }
    }
    pairs
}

/// Chooses `p`, `q` and `x` for one bucket.
///
/// `bits` is the target modulus size in random mode and is ignored in Fermat
/// mode.
pub fn gen_bucket_params<R: Rng + ?Sized>(
    bucket_id: usize,
    ring_size: usize,
    mode: ParamMode,
    bits: u64,
    policy: BasePolicy,
    rng: &mut R,
) -> Result<BucketParams, ParamsError> {
    if ring_size < 2 {
        return Err(ParamsError::RingTooSmall(ring_size));
    }
    let (p, q) = match mode {
        ParamMode::Fermat => {
            if ring_size > FERMAT_MAX_RING_SIZE {
                return Err(ParamsError::FermatUnsatisfiable {
                    ring_size,
                    max: FERMAT_MAX_RING_SIZE,
                });
            }
            let pairs = fermat_pairs(ring_size);
            let &(p, q) = pairs.choose(rng).ok_or(ParamsError::FermatUnsatisfiable {
                ring_size,
                max: FERMAT_MAX_RING_SIZE,
            })?;
            (Natural::from(p), Natural::from(q))
        }
        ParamMode::Random => {
            let prime_bits = (bits / 2).max(8);
            let two_power = Natural::one() << (ring_size + 1);
            let p = bigmod::random_prime(prime_bits, &Natural::one(), &two_power, rng)?;
            let q = loop {
                let q = bigmod::random_prime(prime_bits, &Natural::one(), &Natural::from(2u8), rng)?;
                if q != p {
                    break q;
                }
            };
            (p, q)
        }
    };
    let x = select_x(&p, &q, ring_size, policy, rng)?;
    BucketParams::from_public(bucket_id, p, q, x, ring_size)
}

/// One participant's secret exponents for one bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExponentPair {
    pub e: Natural,
    pub d: Natural,
    pub member: bool,
}

impl ExponentPair {
    /// Completes a pair from a chosen `e`: `d = w * e^-1 mod phi`.
    pub fn from_e(e: Natural, phi: &Natural, member: bool) -> Result<Self, ParamsError> {
        check_phi(phi)?;
        if !bigmod::gcd(&e, phi).is_one() {
            return Err(ParamsError::ExponentNotCoprime(e));
        }
        let inverse = bigmod::modinv(&e, phi)?;
        let mut d = (inverse * Self::factor(member)) % phi;
        if d.is_zero() {
            d = phi.clone();
        }
        Ok(ExponentPair { e, d, member })
    }

    /// The exponent product this pair encodes: 2 for members, 1 otherwise.
    pub fn w(&self) -> u32 {
        Self::factor(self.member)
    }

    fn factor(member: bool) -> u32 {
        if member {
            2
        } else {
            1
        }
    }
}

fn check_phi(phi: &Natural) -> Result<(), ParamsError> {
    if phi.is_odd() || phi < &Natural::from(8u8) {
        return Err(ParamsError::InvalidPhi(phi.clone()));
    }
    Ok(())
}

/// Draws odd `e` uniformly from `[3, phi)` until it is coprime to phi, then
/// completes the pair.
pub fn gen_exponent_pair<R: Rng + ?Sized>(
    phi: &Natural,
    member: bool,
    rng: &mut R,
) -> Result<ExponentPair, ParamsError> {
    check_phi(phi)?;
    // odd values 3, 5, ..., phi - 1
    let odd_count = (phi - 2u32) >> 1;
    for _ in 0..EXPONENT_DRAW_BUDGET {
        let e = rng.gen_biguint_below(&odd_count) * 2u32 + 3u32;
        if bigmod::gcd(&e, phi).is_one() {
            return ExponentPair::from_e(e, phi, member);
        }
    }
    Err(ParamsError::ExponentSearchFailed {
        attempts: EXPONENT_DRAW_BUDGET,
    })
}

/// Parameters for buckets `1..=bucket_count`, each from its own seeded stream.
pub fn gen_all_bucket_params(
    seed: u64,
    bucket_count: usize,
    ring_size: usize,
    mode: ParamMode,
    bits: u64,
    policy: BasePolicy,
) -> Result<Vec<BucketParams>, ParamsError> {
    (1..=bucket_count)
        .map(|bucket| {
            let mut rng = crate::seeding::stream_rng(seed, crate::seeding::Stream::BucketParams { bucket });
            gen_bucket_params(bucket, ring_size, mode, bits, policy, &mut rng)
        })
        .collect()
}
