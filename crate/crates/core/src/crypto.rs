//! Field-level encryption at rest and blind indexes for equality lookup.

use aes_gcm::aead::{Aead, AeadCore, OsRng};
use aes_gcm::{Aes256Gcm, Key, KeyInit, Nonce};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

const NONCE_LEN: usize = 12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("bad key: {0}")]
    BadKey(String),
    #[error("ciphertext failed authentication")]
    AuthenticationFailure,
}

/// Nonce-prefixed AES-256-GCM ciphertext plus the id of the key that sealed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedField {
    pub key_id: String,
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

/// Keyed digest of a normalized plaintext.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlindIndex(#[serde(with = "b64")] pub Vec<u8>);

/// Holds the symmetric field key and the separate blind-index key.
#[derive(Clone)]
pub struct FieldCipher {
    key_id: String,
    aead: Aes256Gcm,
    index_key: [u8; 32],
}

impl std::fmt::Debug for FieldCipher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldCipher")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

impl FieldCipher {
    pub fn new(key_id: impl Into<String>, field_key: &[u8], index_key: &[u8]) -> Result<Self, CryptoError> {
        if field_key.len() != 32 {
            return Err(CryptoError::BadKey(format!(
                "field key must be 32 bytes, got {}",
                field_key.len()
            )));
        }
        let index_key: [u8; 32] = index_key
            .try_into()
            .map_err(|_| CryptoError::BadKey(format!("index key must be 32 bytes, got {}", index_key.len())))?;
        let key_id = key_id.into();
        if key_id.is_empty() {
            return Err(CryptoError::BadKey("empty key id".into()));
        }
        Ok(Self {
            key_id,
            aead: Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(field_key)),
            index_key,
        })
    }

    /// Decodes base64 key material as found in configuration files.
    pub fn from_base64(key_id: impl Into<String>, field_key: &str, index_key: &str) -> Result<Self, CryptoError> {
        let decode = |what: &str, s: &str| {
            STANDARD
                .decode(s.trim())
                .map_err(|e| CryptoError::BadKey(format!("{what} is not base64: {e}")))
        };
        Self::new(
            key_id,
            &decode("field key", field_key)?,
            &decode("index key", index_key)?,
        )
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn encrypt(&self, plaintext: &[u8]) -> EncryptedField {
        let nonce = Aes256Gcm::generate_nonce(&mut OsRng);
        // Encryption only fails for plaintexts beyond the GCM length limit.
        let sealed = self
            .aead
            .encrypt(&nonce, plaintext)
            .expect("plaintext within AES-GCM limits");
        let mut ciphertext = Vec::with_capacity(NONCE_LEN + sealed.len());
        ciphertext.extend_from_slice(&nonce);
        ciphertext.extend_from_slice(&sealed);
        EncryptedField {
            key_id: self.key_id.clone(),
            ciphertext,
        }
    }

    pub fn encrypt_str(&self, plaintext: &str) -> EncryptedField {
        self.encrypt(plaintext.as_bytes())
    }

    pub fn decrypt(&self, field: &EncryptedField) -> Result<Vec<u8>, CryptoError> {
        if field.key_id != self.key_id {
            return Err(CryptoError::BadKey(format!(
                "field sealed with unknown key {:?}",
                field.key_id
            )));
        }
        if field.ciphertext.len() < NONCE_LEN {
            return Err(CryptoError::AuthenticationFailure);
        }
        let (nonce, sealed) = field.ciphertext.split_at(NONCE_LEN);
        self.aead
            .decrypt(Nonce::from_slice(nonce), sealed)
            .map_err(|_| CryptoError::AuthenticationFailure)
    }

    pub fn decrypt_str(&self, field: &EncryptedField) -> Result<String, CryptoError> {
        String::from_utf8(self.decrypt(field)?).map_err(|_| CryptoError::AuthenticationFailure)
    }

    /// HMAC-SHA-256 over the trimmed, case-folded text.
    pub fn blind_index(&self, plaintext: &str) -> BlindIndex {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.index_key).expect("HMAC accepts any key length");
        mac.update(normalize(plaintext).as_bytes());
        BlindIndex(mac.finalize().into_bytes().to_vec())
    }
}

pub fn normalize(text: &str) -> String {
    text.trim().to_lowercase()
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
pub(crate) fn test_cipher() -> FieldCipher {
    FieldCipher::new("test-1", &[7u8; 32], &[9u8; 32]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn round_trip() {
        let cipher = test_cipher();
        let field = cipher.encrypt_str("alice@example.org");
        assert_eq!(cipher.decrypt_str(&field).unwrap(), "alice@example.org");
        assert_eq!(field.key_id, "test-1");
    }

    #[test]
    fn tamper_fails_authentication() {
        let cipher = test_cipher();
        let mut field = cipher.encrypt_str("alice@example.org");
        for i in [0, NONCE_LEN, field.ciphertext.len() - 1] {
            let mut tampered = field.clone();
            tampered.ciphertext[i] ^= 0x01;
            assert_eq!(cipher.decrypt(&tampered), Err(CryptoError::AuthenticationFailure));
        }
        field.ciphertext.truncate(4);
        assert_eq!(cipher.decrypt(&field), Err(CryptoError::AuthenticationFailure));
    }

    #[test]
    fn wrong_key_is_rejected() {
        let field = test_cipher().encrypt_str("x");
        let other = FieldCipher::new("test-1", &[8u8; 32], &[9u8; 32]).unwrap();
        assert_eq!(other.decrypt(&field), Err(CryptoError::AuthenticationFailure));
        let renamed = FieldCipher::new("test-2", &[7u8; 32], &[9u8; 32]).unwrap();
        assert!(matches!(renamed.decrypt(&field), Err(CryptoError::BadKey(_))));
        assert!(matches!(
            FieldCipher::new("k", &[0u8; 16], &[0u8; 32]),
            Err(CryptoError::BadKey(_))
        ));
        assert!(matches!(
            FieldCipher::from_base64("k", "not base64!", ""),
            Err(CryptoError::BadKey(_))
        ));
    }

    #[test]
    fn ciphertext_hides_plaintext() {
        let cipher = test_cipher();
        let plaintext = b"alice@example.org";
        let field = cipher.encrypt(plaintext);
        assert!(!field.ciphertext.windows(plaintext.len()).any(|w| w == plaintext));
        let json = serde_json::to_string(&field).unwrap();
        assert!(!json.contains("alice"));
    }

    #[test]
    fn nonces_are_unique() {
        let cipher = test_cipher();
        let distinct: HashSet<Vec<u8>> = (0..10_000).map(|_| cipher.encrypt(b"same").ciphertext).collect();
        assert_eq!(distinct.len(), 10_000);
    }

    #[test]
    fn blind_index_normalizes() {
        let cipher = test_cipher();
        assert_eq!(cipher.blind_index("Alice@X.org"), cipher.blind_index(" alice@x.org"));
        assert_ne!(cipher.blind_index("alice@x.org"), cipher.blind_index("bob@x.org"));
        let other = FieldCipher::new("test-1", &[7u8; 32], &[10u8; 32]).unwrap();
        assert_ne!(cipher.blind_index("alice@x.org"), other.blind_index("alice@x.org"));
    }

    #[test]
    fn blind_index_no_collisions_in_corpus() {
        let cipher = test_cipher();
        let digests: HashSet<BlindIndex> = (0..100_000)
            .map(|i| cipher.blind_index(&format!("user{i}@example.org")))
            .collect();
        assert_eq!(digests.len(), 100_000);
    }

    #[test]
    fn serde_uses_base64() {
        let field = EncryptedField {
            key_id: "k".into(),
            ciphertext: vec![0, 1, 2, 255],
        };
        let json = serde_json::to_value(&field).unwrap();
        assert_eq!(json["ciphertext"], "AAEC/w==");
        assert_eq!(serde_json::from_value::<EncryptedField>(json).unwrap(), field);
    }
}
