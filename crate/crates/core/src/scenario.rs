//! Scenario files: ring size, bucket count, seeds, modes and every
//! participant's secret value.
//!
//! ```text
//! N=3 B=100 seed=7 mode=centimillionaire params=random bits=64 announce=calls
//! 1 42
//! 2 17
//! 3 42
//! ```
//!
//! `bits`, `announce` and `x` (`jacobi` or `any`) may be omitted. In
//! generic mode each value is a bit string of length `B`; character `i` is
//! membership in bucket `i + 1`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::analysis;
use crate::params::{self, BasePolicy, BucketParams, ParamMode, ParamsError, DEFAULT_MODULUS_BITS};
use crate::protocol::{
    run_tally, Announce, BucketId, Participant, SecretValue, TallyConfig, TallyError, TallyOutput,
};
use crate::transport::Channel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

fn config_error(line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioMode {
    /// One wealth bucket per participant.
    Centimillionaire,
    /// Arbitrary membership bits per bucket.
    Generic,
}

impl fmt::Display for ScenarioMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioMode::Centimillionaire => "centimillionaire",
            ScenarioMode::Generic => "generic",
        })
    }
}

impl FromStr for ScenarioMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centimillionaire" => Ok(ScenarioMode::Centimillionaire),
            "generic" => Ok(ScenarioMode::Generic),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub ring_size: usize,
    pub bucket_count: usize,
    pub mode: ScenarioMode,
    /// Secret of participant `i + 1` at position `i`.
    pub values: Vec<SecretValue>,
    pub seed: u64,
    pub param_mode: ParamMode,
    pub bits: u64,
    pub announce: Announce,
    pub base_policy: BasePolicy,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Tally(#[from] TallyError),
}

impl ScenarioConfig {
    /// The dinner-table scenario: 20 participants, 100 wealth buckets.
    pub fn centimillionaires<R: Rng + ?Sized>(seed: u64, rng: &mut R) -> Self {
        Self::random(20, 100, ScenarioMode::Centimillionaire, ParamMode::Random, seed, rng)
    }

    /// Uniformly random secrets for the given shape.
    pub fn random<R: Rng + ?Sized>(
        ring_size: usize,
        bucket_count: usize,
        mode: ScenarioMode,
        param_mode: ParamMode,
        seed: u64,
        rng: &mut R,
    ) -> Self {
        let values = (0..ring_size)
            .map(|_| match mode {
                ScenarioMode::Centimillionaire => SecretValue::Bucket(rng.gen_range(1..=bucket_count)),
                ScenarioMode::Generic => SecretValue::Bits((0..bucket_count).map(|_| rng.gen()).collect()),
            })
            .collect();
        ScenarioConfig {
            ring_size,
            bucket_count,
            mode,
            values,
            seed,
            param_mode,
            bits: DEFAULT_MODULUS_BITS,
            announce: Announce::Calls,
            base_policy: BasePolicy::JacobiOne,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| config_error(1, "empty config"))?;

        let mut fields = BTreeMap::new();
        for token in header.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| config_error(1, format!("expected key=value, got `{token}`")))?;
            if !["N", "B", "seed", "mode", "params", "bits", "announce", "x"].contains(&key) {
                return Err(config_error(1, format!("unknown key `{key}`")));
            }
            if fields.insert(key, value).is_some() {
                return Err(config_error(1, format!("duplicate key `{key}`")));
            }
        }
        fn field<T: FromStr>(
            fields: &BTreeMap<&str, &str>,
            key: &str,
            default: Option<T>,
        ) -> Result<T, ConfigError> {
            match fields.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| config_error(1, format!("bad value for `{key}`: `{raw}`"))),
                None => default.ok_or_else(|| config_error(1, format!("missing key `{key}`"))),
            }
        }
        let ring_size: usize = field(&fields, "N", None)?;
        let bucket_count: usize = field(&fields, "B", None)?;
        let seed: u64 = field(&fields, "seed", None)?;
        let mode: ScenarioMode = field(&fields, "mode", None)?;
        let param_mode: ParamMode = field(&fields, "params", None)?;
        let bits: u64 = field(&fields, "bits", Some(DEFAULT_MODULUS_BITS))?;
        let announce: Announce = field(&fields, "announce", Some(Announce::Calls))?;
        let base_policy: BasePolicy = field(&fields, "x", Some(BasePolicy::JacobiOne))?;
        if ring_size < 2 {
            return Err(config_error(1, "N must be at least 2"));
        }
        if bucket_count < 1 {
            return Err(config_error(1, "B must be at least 1"));
        }

        let mut values = BTreeMap::new();
        for (i, raw) in lines {
            let line = i + 1;
            let (index, value) = raw
                .trim()
                .split_once(' ')
                .ok_or_else(|| config_error(line, "expected `<index> <value>`"))?;
            let index: usize = index
                .parse()
                .map_err(|_| config_error(line, format!("bad participant index `{index}`")))?;
            if !(1..=ring_size).contains(&index) {
                return Err(config_error(line, format!("participant index {index} outside 1..={ring_size}")));
            }
            let secret = parse_value(mode, bucket_count, value.trim()).map_err(|r| config_error(line, r))?;
            if values.insert(index, secret).is_some() {
                return Err(config_error(line, format!("participant {index} listed twice")));
            }
        }
        if values.len() != ring_size {
            let missing: BTreeSet<usize> = (1..=ring_size).filter(|i| !values.contains_key(i)).collect();
            return Err(config_error(1, format!("no value for participants {missing:?}")));
        }

        Ok(ScenarioConfig {
            ring_size,
            bucket_count,
            mode,
            values: values.into_values().collect(),
            seed,
            param_mode,
            bits,
            announce,
            base_policy,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "N={} B={} seed={} mode={} params={} bits={} announce={}",
            self.ring_size, self.bucket_count, self.seed, self.mode, self.param_mode, self.bits, self.announce
        );
        if self.base_policy != BasePolicy::JacobiOne {
            let _ = write!(out, " x={}", self.base_policy);
        }
        out.push('\n');
        for (i, value) in self.values.iter().enumerate() {
            let rendered = match value {
                SecretValue::Bucket(b) => b.to_string(),
                SecretValue::Bits(bits) => bits.iter().map(|&b| if b { '1' } else { '0' }).collect(),
            };
            let _ = writeln!(out, "{} {}", i + 1, rendered);
        }
        out
    }

    pub fn participants(&self) -> Vec<Participant> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, value)| Participant::new(i + 1, value.clone(), self.seed))
            .collect()
    }

    pub fn participant(&self, index: usize) -> Option<Participant> {
        let value = self.values.get(index.checked_sub(1)?)?;
        Some(Participant::new(index, value.clone(), self.seed))
    }

    /// The initiator's public numbers for every bucket.
    pub fn bucket_params(&self) -> Result<Vec<BucketParams>, ParamsError> {
        params::gen_all_bucket_params(
            self.seed,
            self.bucket_count,
            self.ring_size,
            self.param_mode,
            self.bits,
            self.base_policy,
        )
    }

    pub fn tally_config(&self) -> TallyConfig {
        TallyConfig::in_index_order(self.ring_size, self.bucket_count, self.announce)
    }

    /// Direct counts with no privacy, for cross-checking.
    pub fn oracle_counts(&self) -> BTreeMap<BucketId, usize> {
        (1..=self.bucket_count)
            .map(|bucket| (bucket, analysis::oracle_count(&self.values, bucket)))
            .collect()
    }

    pub fn simulate<C: Channel + ?Sized>(&self, channel: &mut C) -> Result<TallyOutput, SimulationError> {
        let params = self.bucket_params()?;
        Ok(run_tally(self.participants(), params, self.tally_config(), channel)?)
    }
}

fn parse_value(mode: ScenarioMode, bucket_count: usize, raw: &str) -> Result<SecretValue, String> {
    match mode {
        ScenarioMode::Centimillionaire => {
            let bucket: usize = raw.parse().map_err(|_| format!("bad bucket `{raw}`"))?;
            if !(1..=bucket_count).contains(&bucket) {
                return Err(format!("bucket {bucket} outside 1..={bucket_count}"));
            }
            Ok(SecretValue::Bucket(bucket))
        }
        ScenarioMode::Generic => {
            if raw.len() != bucket_count || !raw.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(format!("expected {bucket_count} bits of 0/1, got `{raw}`"));
            }
            Ok(SecretValue::Bits(raw.bytes().map(|b| b == b'1').collect()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "N=3 B=10 seed=7 mode=centimillionaire params=fermat bits=64 announce=broadcast\n1 7\n3 7\n2 7\n";
        let config = ScenarioConfig::parse(text).unwrap();
        assert_eq!(config.ring_size, 3);
        assert_eq!(config.values, vec![SecretValue::Bucket(7); 3]);
        assert_eq!(config.announce, Announce::Broadcast);
        assert_eq!(ScenarioConfig::parse(&config.to_text()).unwrap(), config);
    }

    #[test]
    fn generic_bits_and_optional_keys() {
        let text = "N=2 B=3 seed=1 mode=generic params=random x=any\n1 101\n2 001\n";
        let config = ScenarioConfig::parse(text).unwrap();
        assert_eq!(config.bits, DEFAULT_MODULUS_BITS);
        assert_eq!(config.base_policy, BasePolicy::AnyBase);
        assert_eq!(config.oracle_counts(), BTreeMap::from([(1, 1), (2, 0), (3, 2)]));
        assert_eq!(ScenarioConfig::parse(&config.to_text()).unwrap(), config);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            ("", 1),
            ("N=3 B=10 seed=7 mode=centimillionaire\n", 1),
            ("N=2 B=10 seed=7 mode=centimillionaire params=random\n1 1\n2 11\n", 3),
            ("N=2 B=10 seed=7 mode=centimillionaire params=random\n1 1\n1 2\n", 3),
            ("N=2 B=10 seed=7 mode=centimillionaire params=random\n1 1\n3 2\n", 3),
            ("N=2 B=10 seed=7 mode=centimillionaire params=random\n1 1\n", 1),
            ("N=2 B=2 seed=7 mode=generic params=random\n1 10\n2 1\n", 3),
            ("N=1 B=2 seed=7 mode=generic params=random\n1 10\n", 1),
            ("N=2 B=2 seed=7 mode=generic params=random color=blue\n", 1),
            ("N=2 B=2 seed=x mode=generic params=random\n", 1),
        ];
        for (text, line) in cases {
            let err = ScenarioConfig::parse(text).unwrap_err();
            assert_eq!(err.line, line, "{text:?}: {err}");
        }
    }

    #[test]
    fn random_scenario_is_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = ScenarioConfig::centimillionaires(3, &mut rng);
        assert_eq!(config.values.len(), 20);
        assert_eq!(config.oracle_counts().values().sum::<usize>(), 20);
        assert_eq!(ScenarioConfig::parse(&config.to_text()).unwrap(), config);
    }
}
