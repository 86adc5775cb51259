//! Deterministic parallel primitives.
//!
//! Work over `n` items is cut into fixed-size chunks. Chunk `j` draws its
//! random numbers from ChaCha stream `j` of the run seed and produces one
//! partial result; partials are combined left to right on the calling
//! thread. Results therefore do not depend on the rayon pool size.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Items per work chunk.
pub const CHUNK: usize = 4096;

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a tag into a seed (SplitMix64 finalizer) to derive independent
/// sub-run seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn chunk_ranges(n: usize, chunk: usize) -> impl Iterator<Item = Range<usize>> {
    (0..n.div_ceil(chunk)).map(move |j| j * chunk..((j + 1) * chunk).min(n))
}

/// Maps every chunk of `0..n` in parallel; the output is in chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<usize>) -> T + Sync + Send,
{
    let nchunks = n.div_ceil(chunk);
    (0..nchunks)
        .into_par_iter()
        .map(|j| f(j, j * chunk..((j + 1) * chunk).min(n)))
        .collect()
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Weighted first and second moments of a scalar, for Monte-Carlo means
/// and their standard errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightedMoments {
    pub weight: CompensatedSum,
    pub first: CompensatedSum,
    pub second: CompensatedSum,
    pub count: usize,
}

impl WeightedMoments {
    #[inline]
    pub fn push(&mut self, w: f64, x: f64) {
        self.weight.add(w);
        self.first.add(w * x);
        self.second.add(w * x * x);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &WeightedMoments) {
        self.weight.merge(&other.weight);
        self.first.merge(&other.first);
        self.second.merge(&other.second);
        self.count += other.count;
    }

    /// Weighted total `sum w x`.
    pub fn total(&self) -> f64 {
        self.first.value()
    }

    /// Standard error of `sum w x` when the items are an i.i.d. sample with
    /// equal weights.
    pub fn standard_error(&self) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let w = self.weight.value();
        let mean = self.first.value() / w;
        let var = (self.second.value() / w - mean * mean).max(0.0) * n / (n - 1.0);
        w * (var / n).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(7, 3).random();
        let b: u64 = stream_rng(7, 3).random();
        let c: u64 = stream_rng(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn chunk_results_independent_of_pool_size() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                map_chunks(100_000, CHUNK, |j, r| {
                    let mut rng = stream_rng(1, j as u64);
                    r.map(|_| rng.random::<f64>()).sum::<f64>()
                })
            })
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::new();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn moments_standard_error() {
        let mut m = WeightedMoments::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.push(0.25, x);
        }
        assert!((m.total() - 2.5).abs() < 1e-15);
        // sample variance 5/3, se of the mean sqrt(5/12)
        assert!((m.standard_error() - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }
}
