//! Glorot uniform weight initialization.

use crate::rng::SeedRng;
use crate::tensor::Element;

/// Draws `len` values uniformly from [−b, b] with b = sqrt(6 / (fan_in +
/// fan_out)). Draws happen in f64, so the same seed produces the same
/// weights in either precision.
pub fn glorot_uniform<E: Element>(
    fan_in: usize,
    fan_out: usize,
    len: usize,
    rng: &mut SeedRng,
) -> Vec<E> {
    assert!(fan_in + fan_out > 0, "glorot fans must be nonempty");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len)
        .map(|_| E::from_f64(rng.uniform_range(-bound, bound)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_the_bound() {
        let mut rng = SeedRng::new(7);
        let fan_in = 27;
        let fan_out = 36;
        let b = (6.0 / 63.0f64).sqrt();
        let v: Vec<f64> = glorot_uniform(fan_in, fan_out, 10_000, &mut rng);
        assert!(v.iter().all(|x| x.abs() <= b));
        // Something should land near the edges, otherwise the bound is wrong.
        assert!(v.iter().any(|x| x.abs() > 0.9 * b));
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let mut rng = SeedRng::new(100);
        let n = 20_000;
        let v: Vec<f64> = glorot_uniform(64, 64, n, &mut rng);
        let b = (6.0 / 128.0f64).sqrt();
        let mean = v.iter().sum::<f64>() / n as f64;
        // Standard error of the mean of U[-b, b] is b / sqrt(3 n).
        let se = b / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, 3se {}", 3.0 * se);
    }

    #[test]
    fn same_seed_reproduces_in_both_precisions() {
        let a: Vec<f32> = glorot_uniform(9, 9, 100, &mut SeedRng::new(5));
        let b: Vec<f32> = glorot_uniform(9, 9, 100, &mut SeedRng::new(5));
        assert_eq!(a, b);
        let c: Vec<f64> = glorot_uniform(9, 9, 100, &mut SeedRng::new(5));
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(*x, *y as f32);
        }
    }
}
