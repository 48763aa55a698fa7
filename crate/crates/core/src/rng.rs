//! Named, counter-keyed random streams.
//!
//! Every random draw in the crate comes from a [`StreamRng`] keyed by the master
//! seed, a stream name and a short tuple of indices (replication, player,
//! particle, ...). Keys are mixed with splitmix64 into a ChaCha8 key, so a stream
//! is a pure function of its key: draws never depend on scheduling or on how
//! many other streams were consumed before.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

/// Stream names used across the crate. Documented in the README.
pub mod streams {
    pub const FORWARD: &str = "forward";
    pub const THIN: &str = "thin";
    pub const FIXEDPOINT: &str = "fixedpoint";
    pub const MATCHING: &str = "matching";
    pub const NPLAYER: &str = "nplayer";
    pub const CHAOS: &str = "chaos";
    pub const PILOT: &str = "pilot";
    pub const RATE: &str = "rate";
    pub const REFERENCE: &str = "reference";
    pub const CHECKS: &str = "checks";
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives a child seed from `(master, name, indices)`.
pub fn derive_seed(master: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(fnv1a(name)));
    for (pos, &i) in indices.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(i.wrapping_add((pos as u64 + 1) << 56)));
    }
    h
}

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(master: u64, name: &str, indices: &[u64]) -> Self {
        let base = derive_seed(master, name, indices);
        let mut key = [0u8; 32];
        let mut s = base;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        StreamRng {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for o in out {
            *o = self.normal();
        }
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform index in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.inner.next_u64();
            let m = u128::from(v) * u128::from(n);
            if (m as u64) <= zone {
                return (m >> 64) as usize;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_pure_functions_of_their_key() {
        let mut a = StreamRng::new(7, streams::FORWARD, &[3, 4]);
        let mut b = StreamRng::new(7, streams::FORWARD, &[3, 4]);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn distinct_keys_give_distinct_streams() {
        let x = StreamRng::new(7, streams::FORWARD, &[3, 4]).next_u64();
        assert_ne!(x, StreamRng::new(7, streams::FORWARD, &[4, 3]).next_u64());
        assert_ne!(x, StreamRng::new(8, streams::FORWARD, &[3, 4]).next_u64());
        assert_ne!(x, StreamRng::new(7, streams::THIN, &[3, 4]).next_u64());
        assert_ne!(x, StreamRng::new(7, streams::FORWARD, &[3, 4, 0]).next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut r = StreamRng::new(1, "moments", &[]);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = StreamRng::new(2, "below", &[]);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[r.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
