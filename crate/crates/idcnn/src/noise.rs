//! Impulsive-noise corruption models.
//!
//! Pixels are selected by one Bernoulli draw per pixel in raster order from
//! the seeded generator, then the selected pixels receive replacement
//! channel values. The ground-truth map marks *selection*: a drawn triple
//! that happens to equal the original still counts as corrupted, which gives
//! the detector an inherent label-noise floor of about rho/256^3 per pixel.

use crate::error::{Error, Result};
use crate::image::{ColorImage, NoiseMap};
use crate::rng::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseModel {
    /// Channel Together Random Impulse: each channel of a selected pixel is
    /// replaced by an independent uniform value in [0, 255].
    Ctri,
    /// Salt & Pepper: each channel of a selected pixel becomes 0 or 255 with
    /// equal probability.
    Spin,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctri" => Ok(NoiseModel::Ctri),
            "spin" => Ok(NoiseModel::Spin),
            other => Err(Error::contract(format!(
                "unknown noise model '{other}' (expected ctri or spin)"
            ))),
        }
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseModel::Ctri => write!(f, "ctri"),
            NoiseModel::Spin => write!(f, "spin"),
        }
    }
}

/// A fully-specified corruption: model, density and seed.
#[derive(Clone, Copy, Debug)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub rho: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn apply(&self, image: &ColorImage) -> Result<(ColorImage, NoiseMap)> {
        let mut rng = SeedRng::new(self.seed);
        corrupt(image, self.model, self.rho, &mut rng)
    }
}

/// Noise density used while building a training set: either one fixed value
/// or a fresh uniform draw per corrupted variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainingNoise {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl TrainingNoise {
    pub fn draw(&self, rng: &mut SeedRng) -> f64 {
        match *self {
            TrainingNoise::Fixed(rho) => rho,
            TrainingNoise::Uniform { lo, hi } => rng.uniform_range(lo, hi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TrainingNoise::Fixed(rho) => (0.0..=1.0).contains(&rho),
            TrainingNoise::Uniform { lo, hi } => {
                (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract("training noise density must lie in [0, 1]"))
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::contract(format!(
            "noise density {rho} outside [0, 1]"
        )));
    }
    Ok(())
}

/// CTRI corruption; returns the noisy image and the selection map.
pub fn corrupt_ctri(image: &ColorImage, rho: f64, rng: &mut SeedRng) -> Result<(ColorImage, NoiseMap)> {
    corrupt(image, NoiseModel::Ctri, rho, rng)
}

/// SPIN corruption; returns the noisy image and the selection map.
pub fn corrupt_spin(image: &ColorImage, rho: f64, rng: &mut SeedRng) -> Result<(ColorImage, NoiseMap)> {
    corrupt(image, NoiseModel::Spin, rho, rng)
}

pub fn corrupt(
    image: &ColorImage,
    model: NoiseModel,
    rho: f64,
    rng: &mut SeedRng,
) -> Result<(ColorImage, NoiseMap)> {
    check_rho(rho)?;
    let (h, w) = image.dims();
    let mut noisy = image.clone();
    let mut map = NoiseMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if !rng.bernoulli(rho) {
                continue;
            }
            map.set(y, x, 1.0);
            let mut rgb = [0u8; 3];
            for v in &mut rgb {
                *v = match model {
                    NoiseModel::Ctri => rng.uniform_u8(),
                    NoiseModel::Spin => {
                        if rng.bernoulli(0.5) {
                            0
                        } else {
                            255
                        }
                    }
                };
            }
            noisy.set_pixel(y, x, rgb);
        }
    }
    Ok((noisy, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize) -> ColorImage {
        let mut rng = SeedRng::new(1234);
        let mut img = ColorImage::new(h, w);
        for b in img.data_mut() {
            *b = rng.uniform_u8();
        }
        img
    }

    #[test]
    fn rho_zero_is_identity() {
        let img = test_image(8, 8);
        let (noisy, map) = corrupt_ctri(&img, 0.0, &mut SeedRng::new(1)).unwrap();
        assert_eq!(noisy, img);
        assert_eq!(map.flagged_count(), 0);
        let (noisy, map) = corrupt_spin(&img, 0.0, &mut SeedRng::new(1)).unwrap();
        assert_eq!(noisy, img);
        assert_eq!(map.flagged_count(), 0);
    }

    #[test]
    fn rho_one_flags_everything() {
        let img = test_image(6, 9);
        let (_, map) = corrupt_ctri(&img, 1.0, &mut SeedRng::new(2)).unwrap();
        assert_eq!(map.flagged_count(), 54);
    }

    #[test]
    fn unflagged_pixels_are_bit_identical() {
        let img = test_image(32, 32);
        let (noisy, map) = corrupt_ctri(&img, 0.4, &mut SeedRng::new(3)).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if !map.flagged(y, x) {
                    assert_eq!(noisy.pixel(y, x), img.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn spin_values_are_extreme() {
        let img = test_image(16, 16);
        let (noisy, map) = corrupt_spin(&img, 0.5, &mut SeedRng::new(4)).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if map.flagged(y, x) {
                    for v in noisy.pixel(y, x) {
                        assert!(v == 0 || v == 255);
                    }
                }
            }
        }
    }

    #[test]
    fn spin_zero_fraction_is_balanced() {
        let img = test_image(64, 64);
        let (noisy, map) = corrupt_spin(&img, 0.5, &mut SeedRng::new(5)).unwrap();
        let mut zeros = 0u64;
        let mut total = 0u64;
        for y in 0..64 {
            for x in 0..64 {
                if map.flagged(y, x) {
                    for v in noisy.pixel(y, x) {
                        total += 1;
                        if v == 0 {
                            zeros += 1;
                        }
                    }
                }
            }
        }
        // Binomial(total, 0.5) within 4 sigma.
        let mean = total as f64 * 0.5;
        let sigma = (total as f64 * 0.25).sqrt();
        assert!(
            (zeros as f64 - mean).abs() <= 4.0 * sigma,
            "zeros {zeros} of {total}"
        );
    }

    #[test]
    fn same_seed_reproduces() {
        let img = test_image(20, 20);
        let a = corrupt_ctri(&img, 0.3, &mut SeedRng::new(9)).unwrap();
        let b = corrupt_ctri(&img, 0.3, &mut SeedRng::new(9)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let spec = NoiseSpec {
            model: NoiseModel::Ctri,
            rho: 0.3,
            seed: 9,
        };
        let c = spec.apply(&img).unwrap();
        assert_eq!(c.0, a.0);
        assert_eq!(c.1, a.1);
    }

    #[test]
    fn invalid_rho_rejected() {
        let img = test_image(2, 2);
        assert!(corrupt_ctri(&img, -0.1, &mut SeedRng::new(1)).is_err());
        assert!(corrupt_ctri(&img, 1.5, &mut SeedRng::new(1)).is_err());
    }

    #[test]
    fn flagged_fraction_tracks_rho() {
        let img = test_image(128, 128);
        let q = 128.0 * 128.0;
        for &rho in &[0.1, 0.3, 0.5] {
            let (_, map) = corrupt_ctri(&img, rho, &mut SeedRng::new(7)).unwrap();
            let mean = q * rho;
            let sigma = (q * rho * (1.0 - rho)).sqrt();
            let got = map.flagged_count() as f64;
            assert!((got - mean).abs() <= 4.0 * sigma, "rho {rho}: {got}");
        }
    }
}
