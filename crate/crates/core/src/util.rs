use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short stable hash of a serializable configuration (first 16 hex digits of SHA-256).
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"a": 1}));
        assert_eq!(a, config_hash(&serde_json::json!({"a": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"a": 2})));
        assert_eq!(a.len(), 16);
    }
}
