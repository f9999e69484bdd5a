//! Secure key length, universal-hash privacy amplification, key
//! verification and the on-disk key store.

mod hash;
mod keystore;
mod length;

use thiserror::Error;

pub use hash::{
    hash_block, is_probable_prime, prime_above_pow2, privacy_amplify, verify_digests, verify_keys, HashParams,
    DEFAULT_BLOCK_BITS,
};
pub use keystore::{decode_key, encode_key, KeyStore};
pub use length::{optimal_rate, secure_length, SecureLengthInputs, COHERENT_ATTACK_LIMIT, DEFAULT_SAFETY_BITS};

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("requested {out_len} output bits from a {key_len}-bit key")]
    OutputTooLong { out_len: usize, key_len: usize },
    #[error("block size must be positive")]
    ZeroBlock,
    #[error("key store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("key for epoch {0} already stored")]
    Exists(u32),
    #[error("malformed key file: {0}")]
    Malformed(String),
}
