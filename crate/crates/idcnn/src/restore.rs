//! Adaptive arithmetic mean restoration of flagged pixels, and the
//! switching-filter composition of detection and restoration.
//!
//! Only originally-unflagged pixels ever serve as references, so
//! restoration is independent of processing order and safe to parallelize
//! per pixel.

use crate::error::{Error, Result};
use crate::image::{ColorImage, NoiseMap};
use crate::model::IdcnnModel;
use crate::par;
use crate::tensor::Element;

#[derive(Clone, Debug)]
pub struct RestoreConfig {
    /// Side of the starting window, odd, >= 3.
    pub initial_window: usize,
    /// Side increment when no clean pixel is found, even, >= 2.
    pub growth_step: usize,
    /// Maximum window side; `None` means 2·max(h, w)+1, which always covers
    /// the whole image.
    pub max_window: Option<usize>,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        RestoreConfig {
            initial_window: 3,
            growth_step: 2,
            max_window: None,
        }
    }
}

impl RestoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_window < 3 || self.initial_window.is_multiple_of(2) {
            return Err(Error::contract("initial window side must be odd and >= 3"));
        }
        if self.growth_step < 2 || !self.growth_step.is_multiple_of(2) {
            return Err(Error::contract("window growth step must be even and >= 2"));
        }
        if let Some(m) = self.max_window {
            if m < self.initial_window || m % 2 == 0 {
                return Err(Error::contract(
                    "maximum window side must be odd and >= the initial side",
                ));
            }
        }
        Ok(())
    }
}

/// Replaces every flagged pixel with the per-channel mean of the clean
/// pixels inside the smallest centered odd window (clipped at the borders)
/// that contains at least one clean pixel. Unflagged pixels pass through
/// bit-identical.
pub fn adaptive_mean_restore(
    noisy: &ColorImage,
    map: &NoiseMap,
    cfg: &RestoreConfig,
) -> Result<ColorImage> {
    cfg.validate()?;
    let (h, w) = noisy.dims();
    if map.dims() != (h, w) {
        return Err(Error::contract(format!(
            "map dims {:?} do not match image dims {:?}",
            map.dims(),
            noisy.dims()
        )));
    }
    if !map.is_binary() {
        return Err(Error::contract("restoration needs a binary noise map"));
    }
    if map.flagged_count() == map.data().len() {
        return Err(Error::contract(
            "no reference pixels: every pixel is flagged as noisy",
        ));
    }

    let flagged: Vec<usize> = (0..h * w).filter(|&i| map.data()[i] != 0.0).collect();
    let max_side = cfg.max_window.unwrap_or(2 * h.max(w) + 1);

    let restored: Vec<Option<[u8; 3]>> = par::map_indexed(flagged.len(), |k| {
        let idx = flagged[k];
        let (y, x) = (idx / w, idx % w);
        mean_in_smallest_window(noisy, map, y, x, cfg, max_side)
    });

    let mut out = noisy.clone();
    for (k, rgb) in restored.iter().enumerate() {
        match rgb {
            Some(rgb) => {
                let idx = flagged[k];
                out.set_pixel(idx / w, idx % w, *rgb);
            }
            None => {
                return Err(Error::contract(
                    "no reference pixels within the maximum window",
                ))
            }
        }
    }
    Ok(out)
}

/// Accumulates clipped Chebyshev rings outward until the window holds a
/// clean pixel, then averages all clean pixels collected so far. Ring sums
/// are cumulative, so the result equals a full scan of the final window.
fn mean_in_smallest_window(
    noisy: &ColorImage,
    map: &NoiseMap,
    y: usize,
    x: usize,
    cfg: &RestoreConfig,
    max_side: usize,
) -> Option<[u8; 3]> {
    let (h, w) = noisy.dims();
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    let mut covered: isize = -1; // largest ring radius accumulated so far

    let mut side = cfg.initial_window;
    loop {
        let r = (side / 2) as isize;
        for ring in (covered + 1)..=r {
            accumulate_ring(noisy, map, y, x, ring, h, w, &mut sums, &mut count);
        }
        covered = r;
        if count >= 1 {
            let mut rgb = [0u8; 3];
            for q in 0..3 {
                rgb[q] = (sums[q] as f64 / count as f64).round() as u8;
            }
            return Some(rgb);
        }
        if side >= max_side {
            return None;
        }
        side += cfg.growth_step;
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_ring(
    noisy: &ColorImage,
    map: &NoiseMap,
    y: usize,
    x: usize,
    ring: isize,
    h: usize,
    w: usize,
    sums: &mut [u64; 3],
    count: &mut u64,
) {
    let (y, x) = (y as isize, x as isize);
    let mut visit = |yy: isize, xx: isize| {
        if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
            return;
        }
        let (yy, xx) = (yy as usize, xx as usize);
        if !map.flagged(yy, xx) {
            let px = noisy.pixel(yy, xx);
            for q in 0..3 {
                sums[q] += px[q] as u64;
            }
            *count += 1;
        }
    };
    if ring == 0 {
        visit(y, x);
        return;
    }
    for xx in (x - ring)..=(x + ring) {
        visit(y - ring, xx);
        visit(y + ring, xx);
    }
    for yy in (y - ring + 1)..=(y + ring - 1) {
        visit(yy, x - ring);
        visit(yy, x + ring);
    }
}

/// Detect-then-restore: returns the restored image together with the
/// detection map it used.
pub fn switching_filter<E: Element>(
    noisy: &ColorImage,
    model: &IdcnnModel<E>,
    threshold: f64,
    cfg: &RestoreConfig,
) -> Result<(ColorImage, NoiseMap)> {
    let map = model.detect(noisy, threshold)?;
    let restored = adaptive_mean_restore(noisy, &map, cfg)?;
    Ok((restored, map))
}
