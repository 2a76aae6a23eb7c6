//! Change propagation identifiers.
//!
//! A [`Cpid`] is a random (version 4) UUID. Controllers mint them locally,
//! so two independent controllers never need to coordinate to stay unique.

use std::fmt;
use std::str::FromStr;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use uuid::Uuid;

/// Textual length of a hyphenated UUID.
const CANONICAL_LEN: usize = 36;
const HYPHENS: [usize; 4] = [8, 13, 18, 23];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid CPID {input:?}: {reason}")]
pub struct ParseCpidError {
    pub input: String,
    pub reason: &'static str,
}

/// A change propagation identifier.
///
/// Always renders as the 36 character lowercase hyphenated form. Parsing is
/// strict: braces, URNs, uppercase digits and non-v4 UUIDs are rejected.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cpid(Uuid);

impl Cpid {
    pub fn from_uuid(uuid: Uuid) -> Result<Self, ParseCpidError> {
        if uuid.get_version_num() != 4 {
            return Err(ParseCpidError {
                input: uuid.to_string(),
                reason: "version nibble is not 4",
            });
        }
        Ok(Cpid(uuid))
    }

    pub fn as_uuid(&self) -> &Uuid {
        &self.0
    }
}

impl FromStr for Cpid {
    type Err = ParseCpidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseCpidError {
            input: s.to_owned(),
            reason,
        };
        if s.len() != CANONICAL_LEN {
            return Err(err("expected 36 characters"));
        }
        for (i, b) in s.bytes().enumerate() {
            let ok = if HYPHENS.contains(&i) {
                b == b'-'
            } else {
                b.is_ascii_digit() || (b'a'..=b'f').contains(&b)
            };
            if !ok {
                return Err(err("expected lowercase 8-4-4-4-12 hexadecimal layout"));
            }
        }
        let uuid = Uuid::parse_str(s).map_err(|_| err("not a UUID"))?;
        if uuid.get_version_num() != 4 {
            return Err(err("version nibble is not 4"));
        }
        Ok(Cpid(uuid))
    }
}

impl fmt::Display for Cpid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0.hyphenated(), f)
    }
}

impl fmt::Debug for Cpid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cpid({})", self.0.hyphenated())
    }
}

impl Serialize for Cpid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cpid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of fresh version 4 UUIDs, used for both CPIDs and span IDs.
///
/// Shareable across threads. A seeded generator yields the same sequence for
/// the same call order, which the deterministic simulator relies on.
pub struct IdGenerator {
    rng: Mutex<ChaCha20Rng>,
}

impl IdGenerator {
    pub fn from_entropy() -> Self {
        IdGenerator {
            rng: Mutex::new(ChaCha20Rng::from_os_rng()),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        IdGenerator {
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    fn next_uuid(&self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.rng.lock().fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }

    pub fn cpid(&self) -> Cpid {
        Cpid(self.next_uuid())
    }

    pub fn span_id(&self) -> SpanId {
        SpanId(self.next_uuid())
    }
}

impl Default for IdGenerator {
    fn default() -> Self {
        Self::from_entropy()
    }
}

impl fmt::Debug for IdGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IdGenerator").finish_non_exhaustive()
    }
}

/// Span identifier. Same textual rules as [`Cpid`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanId(Uuid);

impl FromStr for SpanId {
    type Err = ParseCpidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Cpid>().map(|c| SpanId(c.0))
    }
}

impl fmt::Display for SpanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0.hyphenated(), f)
    }
}

impl fmt::Debug for SpanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpanId({})", self.0.hyphenated())
    }
}

impl Serialize for SpanId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpanId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
