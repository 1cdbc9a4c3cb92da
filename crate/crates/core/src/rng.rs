//! Deterministic, splittable random source.
//!
//! Mask sampling has to produce the same result whether colour classes are
//! updated sequentially or in parallel, and an experiment has to replay
//! byte-for-byte from its seed at any thread count. A counter-based
//! generator gives both: every draw is a pure function of (key, index), so
//! consumers can address draws by position instead of sharing mutable state.
//!
//! The output function is the SplitMix64 finalizer over a Weyl sequence,
//! which is the standard construction for this kind of stateless stream.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn to_unit(v: u64) -> f64 {
    // 53 mantissa bits, result in [0, 1)
    (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Seeded stream of random draws, cheaply forkable into independent
/// substreams. Identical seeds give identical draw sequences.
#[derive(Debug, Clone)]
pub struct RandomSource {
    key: u64,
    counter: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            key: mix(seed ^ GAMMA),
            counter: 0,
        }
    }

    /// Derive an independent substream identified by `tag`. Forking does not
    /// disturb this stream, so skipping a fork entirely (e.g. a layer that
    /// does no sampling this step) cannot shift any other stream.
    pub fn fork(&self, tag: u64) -> Self {
        RandomSource {
            key: mix(self.key ^ mix(tag.wrapping_add(GAMMA))),
            counter: 0,
        }
    }

    /// Substream keyed by a string label (layer names and the like).
    pub fn fork_str(&self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h = (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.fork(h)
    }

    /// Stateless draw addressed by position. `at(i)` equals the i-th value
    /// of the stream regardless of what has been drawn statefully.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        mix(self.key.wrapping_add(index.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) addressed by position.
    #[inline]
    pub fn uniform_at(&self, index: u64) -> f64 {
        to_unit(self.at(index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform integer in [0, n). n must be nonzero.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift; bias is O(n / 2^64), irrelevant at our scales.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller. Consumes two draws.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = to_unit(self.next_u64());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
