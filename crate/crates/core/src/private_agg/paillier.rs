//! Paillier encryption with generator `n + 1`.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PRIME_ATTEMPTS: usize = 16;

#[derive(Clone, PartialEq, Eq, Serialize)]
pub struct PublicKey {
    #[serde(serialize_with = "hex_biguint")]
    pub n: BigUint,
    #[serde(skip)]
    n_squared: BigUint,
    pub bits: usize,
}

fn hex_biguint<S: serde::Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_str_radix(16))
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({} bits, id {:016x})", self.bits, self.fingerprint())
    }
}

impl PublicKey {
    pub fn new(n: BigUint) -> Self {
        let bits = n.bits() as usize;
        let n_squared = &n * &n;
        Self { n, n_squared, bits }
    }

    /// Short identifier derived from the modulus.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.n.to_bytes_be());
        u64::from_be_bytes(digest[..8].try_into().unwrap())
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(Error::PlaintextOutOfRange);
        }
        let r = loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                break r;
            }
        };
        // (n + 1)^m = 1 + m n mod n²
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let value = gm * r.modpow(&self.n, &self.n_squared) % &self.n_squared;
        Ok(Ciphertext {
            value,
            key: self.fingerprint(),
        })
    }

    pub fn encrypt_u64<R: RngCore + CryptoRng>(&self, m: u64, rng: &mut R) -> Result<Ciphertext> {
        self.encrypt(&BigUint::from(m), rng)
    }

    /// Ciphertext of `m1 + m2 mod n`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let key = self.fingerprint();
        if a.key != key || b.key != key {
            return Err(Error::KeyMismatch);
        }
        Ok(Ciphertext {
            value: &a.value * &b.value % &self.n_squared,
            key,
        })
    }
}

/// Factorization-derived secrets. Deliberately not serializable.
#[derive(Clone)]
pub struct PrivateKey {
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct Keypair {
    pub public: PublicKey,
    private: PrivateKey,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub value: BigUint,
    /// Fingerprint of the public key it was made under.
    pub key: u64,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext(key {:016x})", self.key)
    }
}

fn l_function(x: &BigUint, p: &BigUint) -> BigUint {
    (x - BigUint::one()) / p
}

/// Key generation with two primes of `bits / 2` bits each from `rng`;
/// deterministic for a seeded generator.
pub fn keygen<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<Keypair> {
    if bits < 256 || bits % 2 != 0 {
        return Err(Error::InvalidInput(format!("key length {bits} must be even and at least 256")));
    }
    for _ in 0..PRIME_ATTEMPTS {
        let p = glass_pumpkin::prime::from_rng(bits / 2, rng).map_err(|_| Error::PrimeGenerationFailed(PRIME_ATTEMPTS))?;
        let q = glass_pumpkin::prime::from_rng(bits / 2, rng).map_err(|_| Error::PrimeGenerationFailed(PRIME_ATTEMPTS))?;
        if p == q {
            continue;
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        if !n.gcd(&phi).is_one() || n.bits() as usize != bits {
            continue;
        }
        let public = PublicKey::new(n);
        let g = &public.n + 1u32;
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let hp = l_function(&g.modpow(&(&p - 1u32), &p_squared), &p).modinv(&p);
        let hq = l_function(&g.modpow(&(&q - 1u32), &q_squared), &q).modinv(&q);
        let q_inv_p = q.modinv(&p);
        let (Some(hp), Some(hq), Some(q_inv_p)) = (hp, hq, q_inv_p) else {
            continue;
        };
        return Ok(Keypair {
            public,
            private: PrivateKey {
                p,
                q,
                p_squared,
                q_squared,
                hp,
                hq,
                q_inv_p,
            },
        });
    }
    Err(Error::PrimeGenerationFailed(PRIME_ATTEMPTS))
}

impl Keypair {
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint> {
        if c.key != self.public.fingerprint() {
            return Err(Error::KeyMismatch);
        }
        let k = &self.private;
        let mp = l_function(&c.value.modpow(&(&k.p - 1u32), &k.p_squared), &k.p) * &k.hp % &k.p;
        let mq = l_function(&c.value.modpow(&(&k.q - 1u32), &k.q_squared), &k.q) * &k.hq % &k.q;
        // CRT: m = mq + q ((mp - mq) q^{-1} mod p)
        let diff = (&mp + &k.p - (&mq % &k.p)) % &k.p;
        Ok(&mq + &k.q * (diff * &k.q_inv_p % &k.p))
    }

    pub fn decrypt_u64(&self, c: &Ciphertext) -> Result<u64> {
        let m = self.decrypt(c)?;
        if m.is_zero() {
            return Ok(0);
        }
        m.try_into()
            .map_err(|_| Error::InvalidInput("decrypted value does not fit in 64 bits".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(seed: u64) -> Keypair {
        keygen(512, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn seeded_keygen_is_deterministic() {
        assert_eq!(key(1).public, key(1).public);
        assert_ne!(key(1).public, key(2).public);
        assert_eq!(key(1).public.bits, 512);
    }

    #[test]
    fn round_trips_and_addition() {
        let k = key(7);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let e0 = k.public.encrypt_u64(0, &mut rng).unwrap();
        assert_eq!(k.decrypt_u64(&e0).unwrap(), 0);
        let a = k.public.encrypt_u64(5, &mut rng).unwrap();
        let b = k.public.encrypt_u64(5, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(k.decrypt_u64(&a).unwrap(), 5);
        assert_eq!(k.decrypt_u64(&b).unwrap(), 5);
        let s = k.public.add(&k.public.encrypt_u64(3, &mut rng).unwrap(), &k.public.encrypt_u64(4, &mut rng).unwrap()).unwrap();
        assert_eq!(k.decrypt_u64(&s).unwrap(), 7);
        let zz = k.public.add(&e0, &k.public.encrypt_u64(0, &mut rng).unwrap()).unwrap();
        assert_eq!(k.decrypt_u64(&zz).unwrap(), 0);
        let mut acc = k.public.encrypt_u64(0, &mut rng).unwrap();
        for _ in 0..40 {
            acc = k.public.add(&acc, &k.public.encrypt_u64(1, &mut rng).unwrap()).unwrap();
        }
        assert_eq!(k.decrypt_u64(&acc).unwrap(), 40);
    }

    #[test]
    fn range_and_key_errors() {
        let k = key(3);
        let other = key(4);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(k.public.encrypt(&k.public.n, &mut rng), Err(Error::PlaintextOutOfRange)));
        let c = k.public.encrypt_u64(1, &mut rng).unwrap();
        let d = other.public.encrypt_u64(1, &mut rng).unwrap();
        assert!(matches!(k.public.add(&c, &d), Err(Error::KeyMismatch)));
        assert!(matches!(other.decrypt(&c), Err(Error::KeyMismatch)));
        // wrap-around modulo n
        let top = k.public.encrypt(&(&k.public.n - 1u32), &mut rng).unwrap();
        let two = k.public.encrypt_u64(2, &mut rng).unwrap();
        assert_eq!(k.decrypt_u64(&k.public.add(&top, &two).unwrap()).unwrap(), 1);
        assert!(keygen(128, &mut rng).is_err());
    }

    #[test]
    fn random_round_trips() {
        let k = key(11);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let m = rng.gen_biguint_below(&k.public.n);
            assert_eq!(k.decrypt(&k.public.encrypt(&m, &mut rng).unwrap()).unwrap(), m);
        }
    }
}
