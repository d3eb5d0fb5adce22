//! Reproducible, splittable random streams.
//!
//! Every stream is a ChaCha12 generator keyed by the root seed and positioned on a
//! 64-bit stream id derived from the path of `substream` calls that produced it.
//! Children depend only on `(root seed, path)`, never on how many draws the parent
//! has already made, so chains, replicas and probes get independent sequences that
//! can be regenerated in isolation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    path: u64,
    rng: ChaCha12Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0)
    }

    fn at(seed: u64, path: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = seed;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(path);
        Self { seed, path, rng }
    }

    /// Independent child stream labelled by `id`.
    pub fn substream(&self, id: u64) -> Self {
        let path = splitmix64(self.path ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::at(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn rademacher(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut bits = 0u64;
        for i in 0..n {
            if i % 64 == 0 {
                bits = self.rng.next_u64();
            }
            out.push(if bits & 1 == 1 { 1.0 } else { -1.0 });
            bits >>= 1;
        }
        out
    }

    pub fn standard_normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(self)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
