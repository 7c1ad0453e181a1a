//! Content hashing, addresses, and canonical serialization.
//!
//! Every hash in the system is SHA-256 over a canonical byte string. Canonical
//! serialization is compact JSON with struct fields in declaration order and
//! all maps ordered (`BTreeMap`), so two processes serializing the same value
//! produce identical bytes.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub const HASH_LEN: usize = 32;
pub const ADDR_LEN: usize = 20;

/// 256-bit hash, hex-encoded (lowercase, no prefix) wherever it is displayed
/// or serialized.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; HASH_LEN]);

impl Hash32 {
    pub fn digest(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        let mut h = [0u8; HASH_LEN];
        h.copy_from_slice(&out);
        Hash32(h)
    }

    pub fn zero() -> Self {
        Hash32([0u8; HASH_LEN])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    /// Number of leading zero bits, used as the proof-of-work difficulty
    /// measure.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", self.to_hex())
    }
}

impl FromStr for Hash32 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| format!("invalid hash hex: {e}"))?;
        if bytes.len() != HASH_LEN {
            return Err(format!("hash must be {HASH_LEN} bytes, got {}", bytes.len()));
        }
        let mut h = [0u8; HASH_LEN];
        h.copy_from_slice(&bytes);
        Ok(Hash32(h))
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// 160-bit account address, displayed with a `0x` prefix.
///
/// Addresses stand in for public keys: they are derived deterministically from
/// a label so that runs are reproducible.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; ADDR_LEN]);

impl Address {
    /// Derive an address from a stable label (device name, contract id, ...).
    pub fn derive(label: &str) -> Self {
        let h = Hash32::digest(format!("addr:{label}").as_bytes());
        let mut a = [0u8; ADDR_LEN];
        a.copy_from_slice(&h.0[..ADDR_LEN]);
        Address(a)
    }

    pub fn to_hex(self) -> String {
        format!("0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.to_hex())
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let stripped = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(stripped).map_err(|e| format!("invalid address hex: {e}"))?;
        if bytes.len() != ADDR_LEN {
            return Err(format!(
                "address must be {ADDR_LEN} bytes, got {}",
                bytes.len()
            ));
        }
        let mut a = [0u8; ADDR_LEN];
        a.copy_from_slice(&bytes);
        Ok(Address(a))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Canonical JSON bytes of a value. Panics only if a type fails to serialize,
/// which for the types in this crate cannot happen.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("canonical serialization")
}
