//! Counter-based randomness.
//!
//! Every draw is a pure function of `(seed, key, counter)`: the three words
//! are folded through the SplitMix64 finalizer. Streams keyed by cell id or
//! stage name are therefore independent of iteration and thread order, and
//! the exact erased/resegmented cells are reproducible across platforms.

use rand::RngCore;
use sha2::{Digest, Sha256};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Output word `counter` of stream `(seed, key)`.
#[inline]
pub fn keyed_u64(seed: u64, key: u64, counter: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ key.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix64(b ^ counter.wrapping_mul(0xAEF1_7502_108E_F2D9))
}

/// Seed for a named stage and parameter, e.g. `("erase", "p=0.5/img_03")`.
pub fn derive_seed(master: u64, stage: &str, param: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update(param.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Stable 64-bit key for a string (first 8 bytes of its SHA-256).
pub fn string_key(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, key: u64) -> Self {
        Self {
            seed,
            key,
            counter: 0,
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = keyed_u64(self.seed, self.key, self.counter);
        self.counter += 1;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
