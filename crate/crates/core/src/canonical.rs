//! Canonical JSON: UTF-8, object keys sorted by byte value, no insignificant
//! whitespace, shortest round-trip numbers, minimal string escaping.
//!
//! Every digest and chain hash in the system is computed over these bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::digest::Digest;
use crate::error::Result;

/// Serialize `value` to canonical JSON bytes.
///
/// Routing through `serde_json::Value` sorts object keys (its map is a
/// `BTreeMap`, ordered by byte value for UTF-8 keys).
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let value = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&value)?)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = to_vec(value)?;
    Ok(String::from_utf8(bytes).expect("serde_json emits UTF-8"))
}

/// Digest of the canonical encoding of `value`.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> Result<Digest> {
    Ok(Digest::of(&to_vec(value)?))
}

/// Parse bytes as JSON and report whether they are already in canonical form.
pub fn is_canonical(bytes: &[u8]) -> bool {
    match serde_json::from_slice::<serde_json::Value>(bytes) {
        Ok(value) => serde_json::to_vec(&value).map(|b| b == bytes).unwrap_or(false),
        Err(_) => false,
    }
}

/// Parse canonical bytes into `T`, rejecting any input that is not byte-for-byte canonical.
pub fn from_canonical_slice<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    let reencoded = serde_json::to_vec(&value)?;
    if reencoded != bytes {
        return Err(crate::error::Error::InvalidInput(
            "document is not in canonical JSON form".into(),
        ));
    }
    Ok(serde_json::from_value(value)?)
}
