//! Arbitrary-precision number theory used by every other module.
//!
//! Magnitudes are plain [`BigUint`]s. Randomness is always injected so that a
//! fixed seed reproduces every prime, base and exponent.

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

/// Nonnegative arbitrary-precision integer.
pub type Natural = BigUint;

/// Miller-Rabin rounds used when callers do not pick their own.
pub const DEFAULT_MR_ROUNDS: u32 = 32;

/// Inputs below this bound are classified by trial division alone.
const TRIAL_DIVISION_BOUND: u64 = 1_000_000;

const SMALL_PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithmeticError {
    #[error("modulus must be at least 2, got {0}")]
    InvalidModulus(Natural),
    #[error("{value} has no inverse modulo {modulus}")]
    NotInvertible { value: Natural, modulus: Natural },
    #[error("jacobi symbol needs an odd modulus >= 3, got {0}")]
    InvalidJacobiModulus(Natural),
    #[error("no {bits}-bit prime congruent to {residue} mod {modulus} found after {attempts} candidates")]
    SearchFailed {
        bits: u64,
        residue: Natural,
        modulus: Natural,
        attempts: u64,
    },
}

/// `base^exponent mod modulus` by square-and-multiply.
pub fn modpow(
    base: &Natural,
    exponent: &Natural,
    modulus: &Natural,
) -> Result<Natural, ArithmeticError> {
    if modulus < &Natural::from(2u8) {
        return Err(ArithmeticError::InvalidModulus(modulus.clone()));
    }
    Ok(base.modpow(exponent, modulus))
}

pub fn gcd(a: &Natural, b: &Natural) -> Natural {
    a.gcd(b)
}

/// Inverse of `a` modulo `m` via the extended Euclidean algorithm.
///
/// The result lies in `1..m`.
pub fn modinv(a: &Natural, m: &Natural) -> Result<Natural, ArithmeticError> {
    if m < &Natural::from(2u8) {
        return Err(ArithmeticError::InvalidModulus(m.clone()));
    }
    let modulus = BigInt::from_biguint(Sign::Plus, m.clone());
    let (mut old_r, mut r) = (BigInt::from_biguint(Sign::Plus, a % m), modulus.clone());
    let (mut old_s, mut s) = (BigInt::one(), BigInt::zero());
    while !r.is_zero() {
        let quotient = &old_r / &r;
        let next_r = &old_r - &quotient * &r;
        old_r = std::mem::replace(&mut r, next_r);
        let next_s = &old_s - &quotient * &s;
        old_s = std::mem::replace(&mut s, next_s);
    }
    if !old_r.is_one() {
        return Err(ArithmeticError::NotInvertible {
            value: a.clone(),
            modulus: m.clone(),
        });
    }
    let t = old_s.mod_floor(&modulus);
    debug_assert!(!t.is_negative());
    Ok(t.to_biguint().expect("mod_floor by a positive modulus is nonnegative"))
}

/// Jacobi symbol `(a | n)` for odd `n >= 3`, returned as -1, 0 or +1.
pub fn jacobi(a: &Natural, n: &Natural) -> Result<i8, ArithmeticError> {
    if n < &Natural::from(3u8) || n.is_even() {
        return Err(ArithmeticError::InvalidJacobiModulus(n.clone()));
    }
    let mut a = a % n;
    let mut n = n.clone();
    let mut sign = 1i8;
    while !a.is_zero() {
        let twos = a.trailing_zeros().unwrap_or(0);
        if twos > 0 {
            a >>= twos;
            // (2 | n) = -1 exactly when n = 3 or 5 (mod 8)
            let n_mod_8 = low_bits(&n, 8);
            if twos % 2 == 1 && (n_mod_8 == 3 || n_mod_8 == 5) {
                sign = -sign;
            }
        }
        if low_bits(&a, 4) == 3 && low_bits(&n, 4) == 3 {
            sign = -sign;
        }
        std::mem::swap(&mut a, &mut n);
        a %= &n;
    }
    Ok(if n.is_one() { sign } else { 0 })
}

fn low_bits(value: &Natural, modulus: u64) -> u64 {
    value.iter_u64_digits().next().unwrap_or(0) % modulus
}

/// Probabilistic primality test.
///
/// Values below one million are decided exactly by trial division. Larger
/// values get small-prime screening followed by `rounds` Miller-Rabin rounds
/// with bases drawn from `rng`, so a composite slips through with probability
/// below `4^-rounds`.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &Natural, rounds: u32, rng: &mut R) -> bool {
    if let Some(small) = n.to_u64().filter(|&v| v < TRIAL_DIVISION_BOUND) {
        return is_prime_by_trial_division(small);
    }
    for &p in SMALL_PRIMES.iter() {
        if (n % p).is_zero() {
            return false;
        }
    }
    miller_rabin(n, rounds.max(1), rng)
}

/// Exact primality for machine-sized values.
pub fn is_prime_by_trial_division(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

fn miller_rabin<R: Rng + ?Sized>(n: &Natural, rounds: u32, rng: &mut R) -> bool {
    let one = Natural::one();
    let two = Natural::from(2u8);
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut y = a.modpow(&d, n);
        if y.is_one() || y == n_minus_one {
            continue;
        }
        for _ in 1..s {
            y = (&y * &y) % n;
            if y == n_minus_one {
                continue 'witness;
            }
            if y.is_one() {
                return false;
            }
        }
        return false;
    }
    true
}

/// Random prime of exactly `bits` bits with `p = residue (mod modulus)`.
///
/// Candidates are drawn uniformly from the arithmetic progression inside the
/// bit range; at most `50 * bits` of them are tested.
pub fn random_prime<R: Rng + ?Sized>(
    bits: u64,
    residue: &Natural,
    modulus: &Natural,
    rng: &mut R,
) -> Result<Natural, ArithmeticError> {
    let attempts = 50 * bits;
    let failed = || ArithmeticError::SearchFailed {
        bits,
        residue: residue.clone(),
        modulus: modulus.clone(),
        attempts,
    };
    if bits < 2 || modulus.is_zero() {
        return Err(failed());
    }
    let residue = residue % modulus;
    let low = Natural::one() << (bits - 1);
    let high = Natural::one() << bits; // exclusive

    // candidates are residue + k * modulus for k in [k_low, k_high)
    let k_low = if low > residue {
        (&low - &residue).div_ceil(modulus)
    } else {
        Natural::zero()
    };
    let k_high = if high > residue {
        (&high - &residue).div_ceil(modulus)
    } else {
        Natural::zero()
    };
    if k_low >= k_high {
        return Err(failed());
    }

    for _ in 0..attempts {
        let k = rng.gen_biguint_range(&k_low, &k_high);
        let candidate = &residue + k * modulus;
        if is_probable_prime(&candidate, DEFAULT_MR_ROUNDS, rng) {
            return Ok(candidate);
        }
    }
    Err(failed())
}

/// Largest `a` with `2^a | value`; zero maps to zero.
pub fn two_adic_valuation(value: &Natural) -> u64 {
    value.trailing_zeros().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nat(v: u64) -> Natural {
        Natural::from(v)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn modpow_examples() {
        assert_eq!(modpow(&nat(3), &nat(4), &nat(85)).unwrap(), nat(81));
        assert_eq!(modpow(&nat(12345), &nat(0), &nat(85)).unwrap(), nat(1));
        assert_eq!(modpow(&nat(3), &nat(64), &nat(85)).unwrap(), nat(1));
    }

    #[test]
    fn modpow_rejects_tiny_modulus() {
        assert_eq!(
            modpow(&nat(3), &nat(4), &nat(1)),
            Err(ArithmeticError::InvalidModulus(nat(1)))
        );
        assert!(modpow(&nat(3), &nat(4), &nat(0)).is_err());
    }

    #[test]
    fn gcd_examples() {
        assert_eq!(gcd(&nat(3), &nat(64)), nat(1));
        assert_eq!(gcd(&nat(0), &nat(7)), nat(7));
        assert_eq!(gcd(&nat(129), &nat(64)), nat(1));
    }

    #[test]
    fn modinv_examples() {
        assert_eq!(modinv(&nat(3), &nat(64)).unwrap(), nat(43));
        assert_eq!(modinv(&nat(1), &nat(97)).unwrap(), nat(1));
        assert!(matches!(
            modinv(&nat(2), &nat(64)),
            Err(ArithmeticError::NotInvertible { .. })
        ));
    }

    #[test]
    fn jacobi_examples() {
        assert_eq!(jacobi(&nat(1), &nat(85)).unwrap(), 1);
        assert_eq!(jacobi(&nat(2), &nat(15)).unwrap(), 1);
        assert_eq!(jacobi(&nat(2), &nat(3)).unwrap(), -1);
        assert_eq!(jacobi(&nat(5), &nat(15)).unwrap(), 0);
        assert!(jacobi(&nat(2), &nat(16)).is_err());
        assert!(jacobi(&nat(2), &nat(1)).is_err());
    }

    #[test]
    fn primality_examples() {
        let mut rng = rng();
        assert!(is_probable_prime(&nat(65537), 32, &mut rng));
        assert!(!is_probable_prime(&nat(85), 32, &mut rng));
        assert!(is_probable_prime(&nat(2), 32, &mut rng));
        assert!(!is_probable_prime(&nat(1), 32, &mut rng));
        assert!(!is_probable_prime(&nat(0), 32, &mut rng));
        // above the trial-division bound
        assert!(is_probable_prime(&nat(4_294_967_311), 32, &mut rng));
        assert!(!is_probable_prime(&nat(4_294_967_297), 32, &mut rng)); // 641 * 6700417
        // Carmichael number above the bound: 1024651 = 19 * 199 * 271
        assert!(!is_probable_prime(&nat(1_024_651), 32, &mut rng));
    }

    #[test]
    fn random_prime_with_congruence() {
        let mut rng = rng();
        let p = random_prime(12, &nat(1), &nat(16), &mut rng).unwrap();
        assert_eq!(p.bits(), 12);
        assert_eq!(&p % 16u32, nat(1));
        assert!(is_prime_by_trial_division(p.to_u64().unwrap()));
    }

    #[test]
    fn random_prime_vacuous_constraint() {
        let mut rng = rng();
        let p = random_prime(10, &nat(1), &nat(1), &mut rng).unwrap();
        assert_eq!(p.bits(), 10);
        assert!(is_prime_by_trial_division(p.to_u64().unwrap()));
    }

    #[test]
    fn random_prime_impossible_constraint() {
        let mut rng = rng();
        let modulus = Natural::one() << 64u32;
        assert!(matches!(
            random_prime(8, &nat(1), &modulus, &mut rng),
            Err(ArithmeticError::SearchFailed { .. })
        ));
    }

    #[test]
    fn random_prime_is_seed_deterministic() {
        let a = random_prime(40, &nat(1), &nat(1 << 10), &mut rng()).unwrap();
        let b = random_prime(40, &nat(1), &nat(1 << 10), &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn primality_agrees_with_trial_division_below_1e5() {
        let mut rng = rng();
        for n in 0u64..100_000 {
            assert_eq!(
                is_probable_prime(&nat(n), DEFAULT_MR_ROUNDS, &mut rng),
                is_prime_by_trial_division(n),
                "n = {n}"
            );
        }
    }

    #[test]
    fn miller_rabin_agrees_with_trial_division_above_bound() {
        let mut rng = rng();
        for n in 1_000_000u64..1_002_000 {
            assert_eq!(
                is_probable_prime(&nat(n), DEFAULT_MR_ROUNDS, &mut rng),
                is_prime_by_trial_division(n),
                "n = {n}"
            );
        }
    }

    fn legendre_by_enumeration(a: u64, p: u64) -> i8 {
        let a = a % p;
        if a == 0 {
            return 0;
        }
        if (1..p).any(|y| y * y % p == a) {
            1
        } else {
            -1
        }
    }

    #[test]
    fn jacobi_is_product_of_legendre_symbols() {
        let primes: Vec<u64> = (3..200).filter(|&v| is_prime_by_trial_division(v)).collect();
        for (i, &p) in primes.iter().enumerate() {
            for &q in &primes[i..] {
                let n = p * q;
                if n >= 1000 {
                    continue;
                }
                for a in 0..n {
                    let expected = legendre_by_enumeration(a, p) * legendre_by_enumeration(a, q);
                    assert_eq!(jacobi(&nat(a), &nat(n)).unwrap(), expected, "({a}|{n})");
                }
            }
        }
    }

    #[test]
    fn euler_theorem_on_prime_products() {
        let mut rng = rng();
        for _ in 0..50 {
            let p = random_prime(24, &nat(1), &nat(2), &mut rng).unwrap();
            let q = random_prime(24, &nat(1), &nat(2), &mut rng).unwrap();
            if p == q {
                continue;
            }
            let n = &p * &q;
            let phi = (&p - 1u32) * (&q - 1u32);
            let x = rng.gen_biguint_range(&nat(2), &n);
            if !gcd(&x, &n).is_one() {
                continue;
            }
            assert!(modpow(&x, &phi, &n).unwrap().is_one());
        }
    }

    proptest! {
        #[test]
        fn modpow_matches_iterated_multiplication(
            base in 0u64..1_000_000,
            exponent in 0u64..=4096,
            modulus in 2u64..1_000_000,
        ) {
            let mut expected = 1u64 % modulus;
            for _ in 0..exponent {
                expected = expected * (base % modulus) % modulus;
            }
            prop_assert_eq!(modpow(&nat(base), &nat(exponent), &nat(modulus)).unwrap(), nat(expected));
        }

        #[test]
        fn modinv_is_an_inverse(a in 0u64..1_000_000, m in 2u64..1_000_000) {
            let (a, m) = (nat(a), nat(m));
            match modinv(&a, &m) {
                Ok(t) => {
                    prop_assert!(gcd(&a, &m).is_one());
                    prop_assert!(t < m && !t.is_zero());
                    prop_assert_eq!((&a * &t) % &m, Natural::one());
                }
                Err(_) => prop_assert!(!gcd(&a, &m).is_one()),
            }
        }
    }
}
