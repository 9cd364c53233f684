//! X25519 key agreement and AES-256-GCM envelopes between farm gateways and
//! miners.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use hkdf::Hkdf;
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

/// Recorded in genesis blocks.
pub const CIPHER_SUITE: &str = "x25519+hkdf-sha256+aes-256-gcm";
pub const PUBLIC_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

const SEALED_VERSION: u8 = 0x01;
const HKDF_INFO: &[u8] = b"agrichain aes-256-gcm v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key")]
    MalformedKey,
    #[error("authentication failed")]
    Authentication,
    #[error("nonce counter exhausted")]
    NonceExhausted,
    #[error("malformed sealed payload: {0}")]
    Malformed(&'static str),
}

/// Gateway-to-miner and miner-to-gateway traffic use separate nonce spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Uplink = 0,
    Downlink = 1,
}

pub struct KeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    pub fn public_key(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.public.to_bytes()
    }

    pub fn derive_shared_key(&self, peer_public: &[u8]) -> Result<SharedKey, CryptoError> {
        derive_shared_key(self, peer_public)
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public.as_bytes())
            .finish_non_exhaustive()
    }
}

/// Deterministic in `seed`; the seed is the clamped-on-use secret scalar.
pub fn generate_keypair(seed: &[u8; 32]) -> KeyPair {
    let secret = StaticSecret::from(*seed);
    let public = PublicKey::from(&secret);
    KeyPair { secret, public }
}

pub fn parse_public_key(bytes: &[u8]) -> Result<[u8; PUBLIC_KEY_LEN], CryptoError> {
    bytes.try_into().map_err(|_| CryptoError::MalformedKey)
}

#[derive(Clone, PartialEq, Eq)]
pub struct SharedKey([u8; 32]);

impl std::fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

impl SharedKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// X25519 followed by HKDF-SHA256. Low-order peer keys are rejected.
pub fn derive_shared_key(own: &KeyPair, peer_public: &[u8]) -> Result<SharedKey, CryptoError> {
    let peer = PublicKey::from(parse_public_key(peer_public)?);
    let dh = own.secret.diffie_hellman(&peer);
    if !dh.was_contributory() {
        return Err(CryptoError::MalformedKey);
    }
    let hk = Hkdf::<Sha256>::new(None, dh.as_bytes());
    let mut okm = [0u8; 32];
    hk.expand(HKDF_INFO, &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(SharedKey(okm))
}

/// Per-key message counter. Nonce = 4-byte channel id ‖ 8-byte counter.
#[derive(Debug, Clone)]
pub struct NonceCounter {
    channel: Channel,
    next: u64,
}

impl NonceCounter {
    pub fn new(channel: Channel) -> Self {
        Self { channel, next: 0 }
    }

    /// Starts at an arbitrary counter value.
    pub fn starting_at(channel: Channel, next: u64) -> Self {
        Self { channel, next }
    }

    pub fn next_nonce(&mut self) -> Result<[u8; NONCE_LEN], CryptoError> {
        if self.next == u64::MAX {
            return Err(CryptoError::NonceExhausted);
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce[..4].copy_from_slice(&(self.channel as u32).to_be_bytes());
        nonce[4..].copy_from_slice(&self.next.to_be_bytes());
        self.next += 1;
        Ok(nonce)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedPayload {
    pub ciphertext: Vec<u8>,
    pub nonce: Vec<u8>,
    pub auth_tag: Vec<u8>,
    pub sender_public_key: Vec<u8>,
}

fn full_aad(associated_data: &[u8], sender_public_key: &[u8]) -> Vec<u8> {
    let mut aad = Vec::with_capacity(associated_data.len() + sender_public_key.len() + 4);
    aad.extend_from_slice(&(associated_data.len() as u32).to_be_bytes());
    aad.extend_from_slice(associated_data);
    aad.extend_from_slice(sender_public_key);
    aad
}

/// Encrypts under the next counter nonce. The sender public key is bound into
/// the associated data.
pub fn seal(
    key: &SharedKey,
    counter: &mut NonceCounter,
    sender_public_key: &[u8; PUBLIC_KEY_LEN],
    plaintext: &[u8],
    associated_data: &[u8],
) -> Result<SealedPayload, CryptoError> {
    let nonce = counter.next_nonce()?;
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("key is 32 bytes");
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(
            Nonce::from_slice(&nonce),
            &full_aad(associated_data, sender_public_key),
            &mut buf,
        )
        .map_err(|_| CryptoError::Authentication)?;
    Ok(SealedPayload {
        ciphertext: buf,
        nonce: nonce.to_vec(),
        auth_tag: tag.to_vec(),
        sender_public_key: sender_public_key.to_vec(),
    })
}

pub fn open(
    key: &SharedKey,
    sealed: &SealedPayload,
    associated_data: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if sealed.nonce.len() != NONCE_LEN
        || sealed.auth_tag.len() != TAG_LEN
        || sealed.sender_public_key.len() != PUBLIC_KEY_LEN
    {
        return Err(CryptoError::Authentication);
    }
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("key is 32 bytes");
    let mut buf = sealed.ciphertext.clone();
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&sealed.nonce),
            &full_aad(associated_data, &sealed.sender_public_key),
            &mut buf,
            Tag::from_slice(&sealed.auth_tag),
        )
        .map_err(|_| CryptoError::Authentication)?;
    Ok(buf)
}

impl SealedPayload {
    /// `version u8 ‖ nonce (u8 len) ‖ tag (u8 len) ‖ ciphertext (u32 BE len) ‖
    /// sender public key (u8 len)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.nonce.len() + self.auth_tag.len() + self.ciphertext.len() + 32);
        out.push(SEALED_VERSION);
        out.push(self.nonce.len() as u8);
        out.extend_from_slice(&self.nonce);
        out.push(self.auth_tag.len() as u8);
        out.extend_from_slice(&self.auth_tag);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.push(self.sender_public_key.len() as u8);
        out.extend_from_slice(&self.sender_public_key);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut rest = bytes;
        let mut take = |n: usize| -> Result<&[u8], CryptoError> {
            if rest.len() < n {
                return Err(CryptoError::Malformed("truncated"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        if take(1)?[0] != SEALED_VERSION {
            return Err(CryptoError::Malformed("unknown version"));
        }
        let n = take(1)?[0] as usize;
        let nonce = take(n)?.to_vec();
        let n = take(1)?[0] as usize;
        let auth_tag = take(n)?.to_vec();
        let n = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
        let ciphertext = take(n)?.to_vec();
        let n = take(1)?[0] as usize;
        let sender_public_key = take(n)?.to_vec();
        if !rest.is_empty() {
            return Err(CryptoError::Malformed("trailing bytes"));
        }
        Ok(Self {
            ciphertext,
            nonce,
            auth_tag,
            sender_public_key,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(tag: u8) -> KeyPair {
        generate_keypair(&[tag; 32])
    }

    #[test]
    fn keypair_is_deterministic() {
        assert_eq!(pair(1).public_key(), pair(1).public_key());
        assert_ne!(pair(1).public_key(), pair(2).public_key());
        let pk = pair(3).public_key();
        assert_eq!(parse_public_key(pk.as_ref()).unwrap(), pk);
    }

    #[test]
    fn agreement_is_symmetric_and_peer_specific() {
        let (a, b, c) = (pair(1), pair(2), pair(3));
        let ab = a.derive_shared_key(&b.public_key()).unwrap();
        assert_eq!(ab, b.derive_shared_key(&a.public_key()).unwrap());
        assert_ne!(ab, a.derive_shared_key(&c.public_key()).unwrap());
        assert!(a.derive_shared_key(&a.public_key()).is_ok());
    }

    #[test]
    fn rejects_bad_peer_keys() {
        let a = pair(1);
        assert_eq!(a.derive_shared_key(&[0u8; 31]), Err(CryptoError::MalformedKey));
        assert_eq!(a.derive_shared_key(&[0u8; 32]), Err(CryptoError::MalformedKey));
    }

    fn sealed_fixture() -> (SharedKey, SealedPayload) {
        let (a, b) = (pair(1), pair(2));
        let key = a.derive_shared_key(&b.public_key()).unwrap();
        let mut ctr = NonceCounter::new(Channel::Uplink);
        let sealed = seal(&key, &mut ctr, &a.public_key(), b"frequency counts", b"round 0").unwrap();
        (key, sealed)
    }

    #[test]
    fn seal_open_and_tamper() {
        let (key, sealed) = sealed_fixture();
        assert_eq!(open(&key, &sealed, b"round 0").unwrap(), b"frequency counts");
        assert_eq!(open(&key, &sealed, b"round 1"), Err(CryptoError::Authentication));
        let mut bad = sealed.clone();
        bad.ciphertext[0] ^= 1;
        assert_eq!(open(&key, &bad, b"round 0"), Err(CryptoError::Authentication));
        let mut bad = sealed.clone();
        bad.sender_public_key[5] ^= 0x80;
        assert_eq!(open(&key, &bad, b"round 0"), Err(CryptoError::Authentication));
    }

    #[test]
    fn nonces_count_up_per_channel() {
        let mut up = NonceCounter::new(Channel::Uplink);
        let mut down = NonceCounter::new(Channel::Downlink);
        let (u0, u1, d0) = (up.next_nonce().unwrap(), up.next_nonce().unwrap(), down.next_nonce().unwrap());
        assert_ne!(u0, u1);
        assert_ne!(u0, d0);
        assert_eq!(&u1[4..], &1u64.to_be_bytes());
    }

    #[test]
    fn nonce_exhaustion() {
        let mut c = NonceCounter::starting_at(Channel::Uplink, u64::MAX - 1);
        assert!(c.next_nonce().is_ok());
        assert_eq!(c.next_nonce(), Err(CryptoError::NonceExhausted));
        let (key, _) = sealed_fixture();
        assert_eq!(
            seal(&key, &mut c, &[9; 32], b"x", b"").unwrap_err(),
            CryptoError::NonceExhausted
        );
    }

    #[test]
    fn sealed_bytes_round_trip() {
        let (_, sealed) = sealed_fixture();
        let bytes = sealed.to_bytes();
        assert_eq!(bytes[0], 0x01);
        assert_eq!(SealedPayload::from_bytes(&bytes).unwrap(), sealed);
        assert!(SealedPayload::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(SealedPayload::from_bytes(&extra).is_err());
    }

    #[test]
    fn every_bit_of_every_field_is_authenticated() {
        let (key, sealed) = sealed_fixture();
        let fields: [fn(&mut SealedPayload) -> &mut Vec<u8>; 4] = [
            |s| &mut s.ciphertext,
            |s| &mut s.nonce,
            |s| &mut s.auth_tag,
            |s| &mut s.sender_public_key,
        ];
        for field in fields {
            let len = field(&mut sealed.clone()).len();
            for bit in 0..len * 8 {
                let mut bad = sealed.clone();
                field(&mut bad)[bit / 8] ^= 1 << (bit % 8);
                assert!(open(&key, &bad, b"round 0").is_err());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip(payload in proptest::collection::vec(any::<u8>(), 0..512), aad in proptest::collection::vec(any::<u8>(), 0..32)) {
            let (key, _) = sealed_fixture();
            let mut ctr = NonceCounter::new(Channel::Downlink);
            let sealed = seal(&key, &mut ctr, &[7; 32], &payload, &aad).unwrap();
            let reparsed = SealedPayload::from_bytes(&sealed.to_bytes()).unwrap();
            prop_assert_eq!(open(&key, &reparsed, &aad).unwrap(), payload);
        }
    }
}
