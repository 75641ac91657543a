use super::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX2: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

/// SplitMix64 generator with a stream id.
///
/// The state advances by the golden-ratio increment `0x9E3779B97F4A7C15`; each
/// output is the SplitMix64 finalizer (multipliers `0xBF58476D1CE4E5B9`,
/// `0x94D049BB133111EB`, shifts 30/27/31) of the new state. Streams start from
/// `mix(seed ^ mix(stream + GOLDEN))`, so `(seed, stream)` fully determines the
/// output sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    stream: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            state: mix(seed ^ mix(stream.wrapping_add(GOLDEN))),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent generator keyed by this generator's identity and `stream`.
    /// Does not depend on how many values have been drawn.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::with_stream(mix(self.seed ^ mix(self.stream ^ GOLDEN)), stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval, clamped to [1e-12, 1 - 1e-12].
    pub fn uniform_open(&mut self) -> f64 {
        self.next_f64().clamp(1e-12, 1.0 - 1e-12)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Gumbel(0, 1) transform of a uniform draw, `-ln(-ln u)` with `u` clamped to
/// [1e-12, 1 - 1e-12].
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.clamp(1e-12, 1.0 - 1e-12).ln()).ln()
}

/// I.i.d. Gumbel(0, 1) samples of the given shape.
pub fn gumbel_sample(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| gumbel_from_uniform(rng.next_f64())).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
