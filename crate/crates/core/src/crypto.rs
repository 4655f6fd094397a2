//! Hybrid encryption for crypto-erase.
//!
//! Erased records are sealed under the authority's public key: a fresh
//! symmetric key encrypts the canonical record bytes, and that key is
//! wrapped with a key derived from an ephemeral X25519 exchange against
//! the authority key. The operator keeps only the envelope; the private
//! key never enters the store.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

pub const KEM_ID: &str = "x25519-hkdf-sha256";
pub const AEAD_ID: &str = "chacha20poly1305";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("cannot parse key material: {0}")]
    KeyParse(String),
    #[error("decryption failed: wrong key or tampered envelope")]
    DecryptFailure,
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorityPublicKey(pub [u8; 32]);

#[derive(Clone)]
pub struct AuthorityPrivateKey(pub [u8; 32]);

pub fn generate_keypair() -> (AuthorityPublicKey, AuthorityPrivateKey) {
    let mut seed = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut seed);
    let secret = StaticSecret::from(seed);
    let public = PublicKey::from(&secret);
    (
        AuthorityPublicKey(public.to_bytes()),
        AuthorityPrivateKey(secret.to_bytes()),
    )
}

fn armor(label: &str, bytes: &[u8]) -> String {
    format!(
        "-----BEGIN {label}-----\n{}\n-----END {label}-----\n",
        B64.encode(bytes)
    )
}

fn dearmor(label: &str, text: &str) -> Result<[u8; 32], CryptoError> {
    let begin = format!("-----BEGIN {label}-----");
    let end = format!("-----END {label}-----");
    let mut body = String::new();
    let mut inside = false;
    let mut seen = false;
    for line in text.lines() {
        let line = line.trim();
        if line == begin {
            inside = true;
            seen = true;
        } else if line == end {
            inside = false;
        } else if inside {
            body.push_str(line);
        }
    }
    if !seen {
        return Err(CryptoError::KeyParse(format!("missing `{begin}` block")));
    }
    let bytes = B64
        .decode(body.as_bytes())
        .map_err(|e| CryptoError::KeyParse(e.to_string()))?;
    bytes
        .try_into()
        .map_err(|_| CryptoError::KeyParse("key must be 32 bytes".into()))
}

const PUBLIC_LABEL: &str = "PD AUTHORITY PUBLIC KEY";
const PRIVATE_LABEL: &str = "PD AUTHORITY PRIVATE KEY";

impl AuthorityPublicKey {
    pub fn to_armored(&self) -> String {
        armor(PUBLIC_LABEL, &self.0)
    }

    pub fn from_armored(text: &str) -> Result<AuthorityPublicKey, CryptoError> {
        dearmor(PUBLIC_LABEL, text).map(AuthorityPublicKey)
    }
}

impl AuthorityPrivateKey {
    pub fn to_armored(&self) -> String {
        armor(PRIVATE_LABEL, &self.0)
    }

    pub fn from_armored(text: &str) -> Result<AuthorityPrivateKey, CryptoError> {
        dearmor(PRIVATE_LABEL, text).map(AuthorityPrivateKey)
    }
}

/// The sealed form of one erased record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kem_id: String,
    pub aead_id: String,
    pub ephemeral_pk: [u8; 32],
    pub wrap_nonce: [u8; 12],
    pub wrapped_key: Vec<u8>,
    pub data_nonce: [u8; 12],
    pub ciphertext: Vec<u8>,
}

impl Envelope {
    /// Single-line text form used inside segment files.
    pub fn encode(&self) -> String {
        format!(
            "v1 {} {} {} {} {} {} {}",
            self.kem_id,
            self.aead_id,
            B64.encode(self.ephemeral_pk),
            B64.encode(self.wrap_nonce),
            B64.encode(&self.wrapped_key),
            B64.encode(self.data_nonce),
            B64.encode(&self.ciphertext),
        )
    }

    pub fn decode(text: &str) -> Result<Envelope, CryptoError> {
        let parts: Vec<&str> = text.split_ascii_whitespace().collect();
        if parts.len() != 8 || parts[0] != "v1" {
            return Err(CryptoError::MalformedEnvelope(
                "expected 8 space-separated parts starting with `v1`".into(),
            ));
        }
        let b64 = |s: &str| {
            B64.decode(s.as_bytes())
                .map_err(|e| CryptoError::MalformedEnvelope(e.to_string()))
        };
        let fixed32 = |v: Vec<u8>| -> Result<[u8; 32], CryptoError> {
            v.try_into()
                .map_err(|_| CryptoError::MalformedEnvelope("bad length".into()))
        };
        let fixed12 = |v: Vec<u8>| -> Result<[u8; 12], CryptoError> {
            v.try_into()
                .map_err(|_| CryptoError::MalformedEnvelope("bad length".into()))
        };
        Ok(Envelope {
            kem_id: parts[1].to_string(),
            aead_id: parts[2].to_string(),
            ephemeral_pk: fixed32(b64(parts[3])?)?,
            wrap_nonce: fixed12(b64(parts[4])?)?,
            wrapped_key: b64(parts[5])?,
            data_nonce: fixed12(b64(parts[6])?)?,
            ciphertext: b64(parts[7])?,
        })
    }
}

fn derive_kek(shared: &[u8; 32], ephemeral_pk: &[u8; 32], authority_pk: &[u8; 32]) -> Key {
    let mut hasher = Sha256::new();
    hasher.update(b"pdstore envelope kek v1");
    hasher.update(shared);
    hasher.update(ephemeral_pk);
    hasher.update(authority_pk);
    let digest = hasher.finalize();
    *Key::from_slice(&digest)
}

/// Seal plaintext under the authority public key.
pub fn seal(authority: &AuthorityPublicKey, plaintext: &[u8]) -> Envelope {
    let mut rng = rand::thread_rng();

    let mut data_key_bytes = [0u8; 32];
    rng.fill_bytes(&mut data_key_bytes);
    let mut data_nonce = [0u8; 12];
    rng.fill_bytes(&mut data_nonce);
    let data_cipher = ChaCha20Poly1305::new(Key::from_slice(&data_key_bytes));
    let ciphertext = data_cipher
        .encrypt(Nonce::from_slice(&data_nonce), plaintext)
        .expect("encryption is infallible for in-memory buffers");

    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph_secret = StaticSecret::from(eph_seed);
    let eph_public = PublicKey::from(&eph_secret).to_bytes();
    let shared = eph_secret
        .diffie_hellman(&PublicKey::from(authority.0))
        .to_bytes();
    let kek = derive_kek(&shared, &eph_public, &authority.0);

    let mut wrap_nonce = [0u8; 12];
    rng.fill_bytes(&mut wrap_nonce);
    let wrap_cipher = ChaCha20Poly1305::new(&kek);
    let wrapped_key = wrap_cipher
        .encrypt(Nonce::from_slice(&wrap_nonce), data_key_bytes.as_slice())
        .expect("encryption is infallible for in-memory buffers");

    Envelope {
        kem_id: KEM_ID.to_string(),
        aead_id: AEAD_ID.to_string(),
        ephemeral_pk: eph_public,
        wrap_nonce,
        wrapped_key,
        data_nonce,
        ciphertext,
    }
}

/// Recover the sealed plaintext with the authority private key. Tampering
/// anywhere in the envelope is detected by the AEAD tags.
pub fn open(envelope: &Envelope, key: &AuthorityPrivateKey) -> Result<Vec<u8>, CryptoError> {
    if envelope.kem_id != KEM_ID || envelope.aead_id != AEAD_ID {
        return Err(CryptoError::MalformedEnvelope(format!(
            "unsupported algorithms {}/{}",
            envelope.kem_id, envelope.aead_id
        )));
    }
    let secret = StaticSecret::from(key.0);
    let authority_pk = PublicKey::from(&secret).to_bytes();
    let shared = secret
        .diffie_hellman(&PublicKey::from(envelope.ephemeral_pk))
        .to_bytes();
    let kek = derive_kek(&shared, &envelope.ephemeral_pk, &authority_pk);

    let wrap_cipher = ChaCha20Poly1305::new(&kek);
    let data_key = wrap_cipher
        .decrypt(
            Nonce::from_slice(&envelope.wrap_nonce),
            envelope.wrapped_key.as_slice(),
        )
        .map_err(|_| CryptoError::DecryptFailure)?;
    let data_key: [u8; 32] = data_key
        .try_into()
        .map_err(|_| CryptoError::DecryptFailure)?;

    let data_cipher = ChaCha20Poly1305::new(Key::from_slice(&data_key));
    data_cipher
        .decrypt(
            Nonce::from_slice(&envelope.data_nonce),
            envelope.ciphertext.as_slice(),
        )
        .map_err(|_| CryptoError::DecryptFailure)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_open_round_trip() {
        let (pk, sk) = generate_keypair();
        let plaintext = b"record v1\nref: user:00ff\nfield name: str \"Chiraz\"\n";
        let envelope = seal(&pk, plaintext);
        assert_eq!(open(&envelope, &sk).unwrap(), plaintext.to_vec());
    }

    #[test]
    fn wrong_key_fails() {
        let (pk, _) = generate_keypair();
        let (_, other_sk) = generate_keypair();
        let envelope = seal(&pk, b"secret");
        assert_eq!(
            open(&envelope, &other_sk).unwrap_err(),
            CryptoError::DecryptFailure
        );
    }

    #[test]
    fn flipped_ciphertext_bit_fails() {
        let (pk, sk) = generate_keypair();
        let mut envelope = seal(&pk, b"secret");
        envelope.ciphertext[0] ^= 1;
        assert_eq!(open(&envelope, &sk).unwrap_err(), CryptoError::DecryptFailure);
    }

    #[test]
    fn envelope_text_round_trip() {
        let (pk, sk) = generate_keypair();
        let envelope = seal(&pk, b"payload");
        let decoded = Envelope::decode(&envelope.encode()).unwrap();
        assert_eq!(decoded, envelope);
        assert_eq!(open(&decoded, &sk).unwrap(), b"payload".to_vec());
    }

    #[test]
    fn key_armor_round_trip() {
        let (pk, sk) = generate_keypair();
        let pk2 = AuthorityPublicKey::from_armored(&pk.to_armored()).unwrap();
        assert_eq!(pk2, pk);
        let sk2 = AuthorityPrivateKey::from_armored(&sk.to_armored()).unwrap();
        assert_eq!(sk2.0, sk.0);
        assert!(AuthorityPublicKey::from_armored("not a key").is_err());
    }
}
