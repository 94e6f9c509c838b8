//! Named, seed-derived random streams.
//!
//! Every stochastic call site receives an explicit [`Rng`] taken from a
//! named stream, so a run is reproducible from `(seed, config)` alone.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;

/// Counter-based generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a generator for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(splitmix(seed ^ splitmix(fnv1a(name.as_bytes()))))
}

/// Derives a generator for `(seed, name, index)`, e.g. one per episode.
pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix(
        seed ^ splitmix(fnv1a(name.as_bytes()) ^ splitmix(index)),
    ))
}

/// Standard-normal draws shaped `rows x cols`.
pub fn normal(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Uniform draws in `[lo, hi)` shaped `rows x cols`.
pub fn uniform(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, "data").random()).collect();
        let mut s = stream(7, "data");
        let b: Vec<u64> = (0..4).map(|_| s.random()).collect();
        let mut t = stream(7, "train");
        let c: Vec<u64> = (0..4).map(|_| t.random()).collect();
        // a draws the first value four times from fresh streams
        assert!(a.iter().all(|v| *v == a[0]));
        assert_eq!(a[0], b[0]);
        assert_ne!(b, c);
        assert_ne!(
            substream(7, "episode", 0).random::<u64>(),
            substream(7, "episode", 1).random::<u64>()
        );
    }
}
