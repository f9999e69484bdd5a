//! Blockwise modular universal hashing `(m k + n) mod p`.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;

use super::PrivacyError;
use crate::model::{KeyBuffer, KeyStage};
use crate::seed::{rng_for, tags};

pub const DEFAULT_BLOCK_BITS: usize = 4096;

/// Smallest prime above 2^bits, stored as the offset from 2^bits.
const PRIME_OFFSETS: [(usize, u32); 11] = [
    (3, 3),
    (8, 1),
    (16, 1),
    (32, 15),
    (64, 13),
    (128, 51),
    (256, 297),
    (512, 75),
    (1024, 643),
    (2048, 981),
    (4096, 1761),
];

const SMALL_PRIMES: [u32; 25] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97];

/// Trial division followed by Miller-Rabin with the first 25 prime bases.
pub fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if *n == sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    for d in (101u32..2000).step_by(2) {
        if (n % d).is_zero() {
            return *n == BigUint::from(d);
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'bases: for &a in &SMALL_PRIMES {
        let a = BigUint::from(a);
        if a >= n_minus_1 {
            continue;
        }
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than 2^bits.
pub fn prime_above_pow2(bits: usize) -> BigUint {
    let base = BigUint::one() << bits;
    if let Some(&(_, off)) = PRIME_OFFSETS.iter().find(|(b, _)| *b == bits) {
        return base + off;
    }
    let mut c = base + 1u32;
    while !is_probable_prime(&c) {
        c += 1u32;
    }
    c
}

/// One member of the hash family.
#[derive(Debug, Clone, PartialEq)]
pub struct HashParams {
    pub p: BigUint,
    pub m: BigUint,
    pub n: BigUint,
    pub out_len: usize,
}

impl HashParams {
    /// Draws `m` in [1, p) and `n` in [0, p) from a generator seeded by
    /// `(seed, tag, index)`.
    pub fn derive(p: &BigUint, seed: u64, tag: u64, index: u64, out_len: usize) -> HashParams {
        let mut rng = rng_for(seed, tag, index);
        let mut draw = || {
            let mut bytes = vec![0u8; (p.bits() as usize + 64).div_ceil(8)];
            rng.fill_bytes(&mut bytes);
            BigUint::from_bytes_be(&bytes)
        };
        let m = draw() % (p - 1u32) + 1u32;
        let n = draw() % p;
        HashParams { p: p.clone(), m, n, out_len }
    }
}

fn bits_to_int(bits: &[bool]) -> BigUint {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    BigUint::from_bytes_be(&bytes) >> (bytes.len() * 8 - bits.len())
}

/// `(m k + n) mod p` for the block read as a big-endian integer.
pub fn hash_block(block: &[bool], params: &HashParams) -> BigUint {
    (&params.m * bits_to_int(block) + &params.n) % &params.p
}

fn low_bits(x: &BigUint, count: usize) -> impl Iterator<Item = bool> + '_ {
    (0..count as u64).rev().map(move |i| x.bit(i))
}

/// Compresses the corrected key to `out_len` bits. Each block of
/// `block_bits` contributes a share proportional to its length, taken from
/// the least significant bits of its hash.
pub fn privacy_amplify(
    key: &KeyBuffer,
    out_len: usize,
    shared_seed: u64,
    block_bits: usize,
) -> Result<KeyBuffer, PrivacyError> {
    let n = key.len();
    if out_len > n {
        return Err(PrivacyError::OutputTooLong { out_len, key_len: n });
    }
    if block_bits == 0 {
        return Err(PrivacyError::ZeroBlock);
    }
    let mut out = Vec::with_capacity(out_len);
    if out_len > 0 {
        let p = prime_above_pow2(block_bits);
        for (i, block) in key.bits.chunks(block_bits).enumerate() {
            let start = i * block_bits;
            let end = start + block.len();
            let share = out_len * end / n - out_len * start / n;
            if share == 0 {
                continue;
            }
            let params = HashParams::derive(&p, shared_seed, tags::PRIVACY, i as u64, share);
            out.extend(low_bits(&hash_block(block, &params), share));
        }
    }
    Ok(KeyBuffer::new(out, KeyStage::Secure, key.epoch_id))
}

fn round_digest(bits: &[bool], round: u32, shared_seed: u64, p: &BigUint, block_bits: usize) -> u32 {
    let mut digest = bits.len() as u32;
    for (i, block) in bits.chunks(block_bits).enumerate() {
        let index = ((round as u64) << 32) | i as u64;
        let params = HashParams::derive(p, shared_seed, tags::VERIFY, index, 32);
        digest = digest.wrapping_add(hash_block(block, &params).iter_u32_digits().next().unwrap_or(0));
    }
    digest
}

/// One 32-bit digest per round: the low 32 bits of every block hash and the
/// key length, summed. Rounds use independent hash functions.
pub fn verify_digests(bits: &[bool], rounds: u32, shared_seed: u64, block_bits: usize) -> Vec<u32> {
    let block_bits = block_bits.max(1);
    let p = prime_above_pow2(block_bits);
    (0..rounds).map(|r| round_digest(bits, r, shared_seed, &p, block_bits)).collect()
}

/// Compares both keys over `rounds` independent digests, stopping at the
/// first mismatch.
pub fn verify_keys(alice: &KeyBuffer, bob: &KeyBuffer, rounds: u32, shared_seed: u64) -> bool {
    let p = prime_above_pow2(DEFAULT_BLOCK_BITS);
    (0..rounds).all(|r| {
        round_digest(&alice.bits, r, shared_seed, &p, DEFAULT_BLOCK_BITS)
            == round_digest(&bob.bits, r, shared_seed, &p, DEFAULT_BLOCK_BITS)
    })
}
