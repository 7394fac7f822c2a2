use serde::Serialize;
use sha2::{Digest, Sha256};

/// Compact JSON with object keys in sorted order.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so routing through
    // it sorts every nested object.
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&value).expect("JSON value serializes")
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// SHA-256 over the canonical serialization.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(canonical_json(value))
}
