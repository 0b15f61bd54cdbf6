//! Per-path random streams.
//!
//! Every path draws from its own ChaCha8 generator seeded by mixing the
//! master seed with the path index, so results do not depend on how paths
//! are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

pub type PathRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` under master seed `master`.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn path_rng(master: u64, stream: u64) -> PathRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, stream))
}

/// Generator for a named sub-stream of a path, e.g. one layer of a random measure.
pub fn sub_rng(master: u64, stream: u64, sub: u64) -> PathRng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        stream_seed(master, stream) ^ splitmix64(sub.wrapping_add(0x5851_F42D)),
    ))
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Poisson variate; inversion for small means.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < 12.0 {
        let u = uniform(rng);
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    } else {
        Poisson::new(mean)
            .map(|d| d.sample(rng) as u64)
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| path_rng(7, 3).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| path_rng(7, 3).random()).collect();
        assert_eq!(a, b);
        assert_ne!(
            path_rng(7, 3).random::<u64>(),
            path_rng(7, 4).random::<u64>()
        );
        assert_ne!(
            path_rng(7, 3).random::<u64>(),
            path_rng(8, 3).random::<u64>()
        );
    }

    #[test]
    fn poisson_moments() {
        let mut rng = path_rng(1, 0);
        for &m in &[0.05, 2.5, 40.0] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| poisson(&mut rng, m) as f64).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (m / n as f64).sqrt();
            assert!((mean - m).abs() < 5.0 * se, "mean {mean} vs {m}");
            assert!((var / m - 1.0).abs() < 0.03, "var {var} vs {m}");
        }
    }
}
