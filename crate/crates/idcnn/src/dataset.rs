//! Training-set construction: multi-scale bicubic resizing, exact geometric
//! augmentation, corruption and non-overlapping patch extraction.
//!
//! The pipeline order is resize → (optional) augment → corrupt → extract,
//! so every resized/augmented variant receives independent noise drawn from
//! a generator derived per (image, scale, variant).

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ColorImage, NoiseMap};
use crate::io;
use crate::noise::{corrupt, NoiseModel, TrainingNoise};
use crate::par;
use crate::rng::SeedRng;

/// The four resize scales used when building a training set.
pub const DEFAULT_SCALES: [f64; 4] = [1.0, 0.9, 0.8, 0.7];

/// Where a patch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub image_id: usize,
    pub scale_idx: usize,
    pub aug_idx: usize,
    pub grid_y: usize,
    pub grid_x: usize,
}

/// One training example: a corrupted patch and its ground-truth map.
#[derive(Clone, Debug)]
pub struct Patch {
    pub noisy: ColorImage,
    pub map: NoiseMap,
    pub provenance: Provenance,
}

/// A set of p×p training patches.
#[derive(Clone, Debug, Default)]
pub struct PatchSet {
    pub p: usize,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }
    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Catmull-Rom kernel (a = −0.5).
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic resize with pixel-center alignment, edge-clamped sampling and
/// results clamped to [0, 255]. Output dims are round(scale·h) ×
/// round(scale·w). Scale 1 returns the image bit-identical.
pub fn bicubic_resize(image: &ColorImage, scale: f64) -> Result<ColorImage> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::contract(format!(
            "resize scale {scale} outside (0, 1]"
        )));
    }
    if scale == 1.0 {
        return Ok(image.clone());
    }
    let (h, w) = image.dims();
    let oh = (scale * h as f64).round() as usize;
    let ow = (scale * w as f64).round() as usize;
    if oh < 1 || ow < 1 {
        return Err(Error::contract(format!(
            "resize output dimension would vanish ({h}x{w} at scale {scale})"
        )));
    }

    let mut out = ColorImage::new(oh, ow);
    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
    par::for_each_chunk_mut(out.data_mut(), 3 * ow, |oy, row| {
        let sy = (oy as f64 + 0.5) / scale - 0.5;
        let y0 = sy.floor() as isize;
        let fy = sy - y0 as f64;
        let wy: [f64; 4] = std::array::from_fn(|i| cubic_weight(fy - (i as f64 - 1.0)));
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) / scale - 0.5;
            let x0 = sx.floor() as isize;
            let fx = sx - x0 as f64;
            let wx: [f64; 4] = std::array::from_fn(|j| cubic_weight(fx - (j as f64 - 1.0)));
            for q in 0..3 {
                let mut acc = 0.0;
                for (i, &wyi) in wy.iter().enumerate() {
                    let yy = clamp(y0 + i as isize - 1, h);
                    for (j, &wxj) in wx.iter().enumerate() {
                        let xx = clamp(x0 + j as isize - 1, w);
                        acc += wyi * wxj * image.channel(yy, xx, q) as f64;
                    }
                }
                row[3 * ox + q] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    Ok(out)
}

/// The augmentation family: the image itself, its three right-angle
/// rotations, and the up-down flip. All five are exact pixel permutations.
pub fn augment(image: &ColorImage) -> Vec<ColorImage> {
    vec![
        image.clone(),
        image.rot90(),
        image.rot180(),
        image.rot270(),
        image.flip_ud(),
    ]
}

/// Cuts the aligned non-overlapping p×p grid anchored at the top-left
/// corner; the right/bottom remainders are discarded. Image and map are
/// cropped identically.
pub fn extract_patches(image: &ColorImage, map: &NoiseMap, p: usize) -> Result<PatchSet> {
    let (h, w) = image.dims();
    if map.dims() != (h, w) {
        return Err(Error::contract("patch extraction: map dims differ from image"));
    }
    if p == 0 || p > h.min(w) {
        return Err(Error::contract(format!(
            "patch size {p} does not fit a {h}x{w} image"
        )));
    }
    let rows = h / p;
    let cols = w / p;
    let mut patches = Vec::with_capacity(rows * cols);
    for gy in 0..rows {
        for gx in 0..cols {
            let mut noisy = ColorImage::new(p, p);
            let mut m = NoiseMap::zeros(p, p);
            for y in 0..p {
                for x in 0..p {
                    noisy.set_pixel(y, x, image.pixel(gy * p + y, gx * p + x));
                    m.set(y, x, map.at(gy * p + y, gx * p + x));
                }
            }
            patches.push(Patch {
                noisy,
                map: m,
                provenance: Provenance {
                    image_id: 0,
                    scale_idx: 0,
                    aug_idx: 0,
                    grid_y: gy,
                    grid_x: gx,
                },
            });
        }
    }
    Ok(PatchSet { p, patches })
}

/// Training-set construction parameters.
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub patch_size: usize,
    pub scales: Vec<f64>,
    pub augment: bool,
    pub noise_model: NoiseModel,
    pub density: TrainingNoise,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(patch_size: usize, density: TrainingNoise, seed: u64) -> Self {
        DatasetConfig {
            patch_size,
            scales: DEFAULT_SCALES.to_vec(),
            augment: false,
            noise_model: NoiseModel::Ctri,
            density,
            seed,
        }
    }
}

/// Lists the PPM images of a directory in filename order.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("ppm"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Builds the full patch set for a directory of PPM images: per image,
/// resize at each scale, optionally augment, corrupt each variant with its
/// own derived generator, and extract patches. Variants smaller than the
/// patch size are skipped.
pub fn build_training_set(dir: impl AsRef<Path>, cfg: &DatasetConfig) -> Result<PatchSet> {
    let files = list_images(&dir)?;
    if files.is_empty() {
        return Err(Error::contract(format!(
            "no PPM images found in {}",
            dir.as_ref().display()
        )));
    }
    cfg.density.validate()?;
    let images: Vec<ColorImage> = files.iter().map(io::read_ppm).collect::<Result<_>>()?;
    let sets: Vec<Result<Vec<Patch>>> = par::map_indexed(images.len(), |i| {
        patches_for_image(&images[i], i, cfg)
    });
    let mut out = PatchSet {
        p: cfg.patch_size,
        patches: Vec::new(),
    };
    for set in sets {
        out.patches.extend(set?);
    }
    if out.patches.is_empty() {
        return Err(Error::contract(
            "every image variant was smaller than the patch size",
        ));
    }
    Ok(out)
}

fn patches_for_image(image: &ColorImage, image_id: usize, cfg: &DatasetConfig) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for (scale_idx, &scale) in cfg.scales.iter().enumerate() {
        let resized = match bicubic_resize(image, scale) {
            Ok(r) => r,
            Err(_) => continue, // image vanishes at this scale
        };
        let variants = if cfg.augment {
            augment(&resized)
        } else {
            vec![resized]
        };
        for (aug_idx, variant) in variants.into_iter().enumerate() {
            let (h, w) = variant.dims();
            if cfg.patch_size > h.min(w) {
                continue;
            }
            let mut rng = SeedRng::derive(
                cfg.seed,
                &[image_id as u64, scale_idx as u64, aug_idx as u64],
            );
            let rho = cfg.density.draw(&mut rng);
            let (noisy, map) = corrupt(&variant, cfg.noise_model, rho, &mut rng)?;
            let mut set = extract_patches(&noisy, &map, cfg.patch_size)?;
            for patch in &mut set.patches {
                patch.provenance.image_id = image_id;
                patch.provenance.scale_idx = scale_idx;
                patch.provenance.aug_idx = aug_idx;
            }
            out.extend(set.patches);
        }
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 8] = b"IDCNPSET";

/// Caches a patch set as a flat binary file.
///
/// Layout (little-endian): magic `IDCNPSET`, version u32 = 1, count u32,
/// p u32; then per patch: image_id/scale_idx/aug_idx/grid_y/grid_x as u32,
/// 3·p·p noisy bytes (RGB interleaved, row-major), p·p map bytes (0/1).
pub fn save_patchset(set: &PatchSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let p = set.p;
    let mut out = Vec::with_capacity(20 + set.patches.len() * (20 + 4 * p * p));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(set.patches.len() as u32).to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    for patch in &set.patches {
        let pr = patch.provenance;
        for v in [pr.image_id, pr.scale_idx, pr.aug_idx, pr.grid_y, pr.grid_x] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(patch.noisy.data());
        out.extend(patch.map.data().iter().map(|&v| if v != 0.0 { 1u8 } else { 0 }));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_patchset(path: impl AsRef<Path>) -> Result<PatchSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(path, "truncated patch cache"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u32_at = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    if take(&mut pos, 8)? != CACHE_MAGIC {
        return Err(Error::format(path, "bad patch cache magic"));
    }
    let version = u32_at(&mut pos)?;
    if version != 1 {
        return Err(Error::format(path, format!("unknown cache version {version}")));
    }
    let count = u32_at(&mut pos)? as usize;
    let p = u32_at(&mut pos)? as usize;
    if p == 0 {
        return Err(Error::format(path, "zero patch size"));
    }
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let mut prov = [0u32; 5];
        for v in &mut prov {
            *v = u32_at(&mut pos)?;
        }
        let noisy = ColorImage::from_raw(p, p, take(&mut pos, 3 * p * p)?.to_vec())?;
        let map_bytes = take(&mut pos, p * p)?;
        let map = NoiseMap::from_raw(
            p,
            p,
            map_bytes.iter().map(|&b| if b != 0 { 1.0 } else { 0.0 }).collect(),
        )?;
        patches.push(Patch {
            noisy,
            map,
            provenance: Provenance {
                image_id: prov[0] as usize,
                scale_idx: prov[1] as usize,
                aug_idx: prov[2] as usize,
                grid_y: prov[3] as usize,
                grid_x: prov[4] as usize,
            },
        });
    }
    Ok(PatchSet { p, patches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn gradient_image(h: usize, w: usize) -> ColorImage {
        let mut img = ColorImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(
                    y,
                    x,
                    [
                        ((x * 255) / w.max(1)) as u8,
                        ((y * 255) / h.max(1)) as u8,
                        (((x + y) * 127) / (h + w)) as u8,
                    ],
                );
            }
        }
        img
    }

    #[test]
    fn scale_one_is_bit_identical() {
        let img = gradient_image(33, 47);
        assert_eq!(bicubic_resize(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let mut img = ColorImage::new(20, 30);
        for v in img.data_mut() {
            *v = 137;
        }
        for &s in &[0.9, 0.8, 0.7, 0.5] {
            let out = bicubic_resize(&img, s).unwrap();
            assert!(out.data().iter().all(|&v| v == 137), "scale {s}");
        }
    }

    #[test]
    fn bsd_scale_dimensions() {
        let img = gradient_image(321, 481);
        let expect = [(321, 481), (289, 433), (257, 385), (225, 337)];
        for (&s, &(eh, ew)) in DEFAULT_SCALES.iter().zip(&expect) {
            let out = bicubic_resize(&img, s).unwrap();
            assert_eq!(out.dims(), (eh, ew), "scale {s}");
        }
    }

    #[test]
    fn invalid_scales_rejected() {
        let img = gradient_image(10, 10);
        assert!(bicubic_resize(&img, 0.0).is_err());
        assert!(bicubic_resize(&img, 1.5).is_err());
        assert!(bicubic_resize(&img, 0.01).is_err()); // vanishing output
    }

    #[test]
    fn augment_family() {
        let img = gradient_image(6, 9);
        let fam = augment(&img);
        assert_eq!(fam.len(), 5);
        assert_eq!(fam[0], img);
        assert_eq!(fam[1].dims(), (9, 6));
        assert_eq!(fam[2].dims(), (6, 9));
        assert_eq!(fam[3].dims(), (9, 6));
        assert_eq!(fam[4], img.flip_ud());
    }

    #[test]
    fn patch_grid_counts() {
        let img = gradient_image(321, 481);
        let map = NoiseMap::zeros(321, 481);
        let set = extract_patches(&img, &map, 41).unwrap();
        assert_eq!(set.len(), 7 * 11);
        let whole = extract_patches(&gradient_image(41, 41), &NoiseMap::zeros(41, 41), 41).unwrap();
        assert_eq!(whole.len(), 1);
        assert!(extract_patches(&img, &map, 482).is_err());
    }

    #[test]
    fn patches_tile_the_cropped_image() {
        let img = gradient_image(10, 13);
        let map = NoiseMap::zeros(10, 13);
        let set = extract_patches(&img, &map, 4).unwrap();
        assert_eq!(set.len(), 2 * 3);
        // Reassemble and compare with the crop.
        for patch in &set.patches {
            let (gy, gx) = (patch.provenance.grid_y, patch.provenance.grid_x);
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(patch.noisy.pixel(y, x), img.pixel(gy * 4 + y, gx * 4 + x));
                }
            }
        }
    }

    #[test]
    fn four_scale_patch_count_for_bsd_geometry() {
        let img = gradient_image(321, 481);
        let mut total = 0;
        for &s in DEFAULT_SCALES.iter() {
            let r = bicubic_resize(&img, s).unwrap();
            let (h, w) = r.dims();
            total += (h / 41) * (w / 41);
        }
        assert_eq!(total, 241);
    }

    #[test]
    fn build_training_set_small_clean_image() {
        let dir = tempdir().unwrap();
        let img = gradient_image(82, 82);
        io::write_ppm(&img, dir.path().join("a.ppm")).unwrap();
        let cfg = DatasetConfig {
            scales: vec![1.0],
            ..DatasetConfig::new(41, TrainingNoise::Fixed(0.0), 7)
        };
        let set = build_training_set(dir.path(), &cfg).unwrap();
        assert_eq!(set.len(), 4);
        for p in &set.patches {
            assert_eq!(p.map.flagged_count(), 0);
        }
    }

    #[test]
    fn build_training_set_is_deterministic() {
        let dir = tempdir().unwrap();
        io::write_ppm(&gradient_image(90, 70), dir.path().join("a.ppm")).unwrap();
        io::write_ppm(&gradient_image(70, 90), dir.path().join("b.ppm")).unwrap();
        let cfg = DatasetConfig::new(21, TrainingNoise::Fixed(0.3), 99);
        let a = build_training_set(dir.path(), &cfg).unwrap();
        let b = build_training_set(dir.path(), &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.patches.iter().zip(&b.patches) {
            assert_eq!(x.noisy, y.noisy);
            assert_eq!(x.map, y.map);
            assert_eq!(x.provenance, y.provenance);
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempdir().unwrap();
        let cfg = DatasetConfig::new(21, TrainingNoise::Fixed(0.1), 1);
        assert!(build_training_set(dir.path(), &cfg).is_err());
    }

    #[test]
    fn patchset_cache_round_trip() {
        let dir = tempdir().unwrap();
        io::write_ppm(&gradient_image(64, 64), dir.path().join("a.ppm")).unwrap();
        let cfg = DatasetConfig {
            scales: vec![1.0, 0.8],
            ..DatasetConfig::new(21, TrainingNoise::Fixed(0.25), 3)
        };
        let set = build_training_set(dir.path(), &cfg).unwrap();
        let cache = dir.path().join("set.bin");
        save_patchset(&set, &cache).unwrap();
        let back = load_patchset(&cache).unwrap();
        assert_eq!(back.p, set.p);
        assert_eq!(back.len(), set.len());
        for (a, b) in set.patches.iter().zip(&back.patches) {
            assert_eq!(a.noisy, b.noisy);
            assert_eq!(a.map, b.map);
            assert_eq!(a.provenance, b.provenance);
        }
    }

    #[test]
    fn uniform_density_draws_vary_per_variant() {
        let dir = tempdir().unwrap();
        io::write_ppm(&gradient_image(64, 64), dir.path().join("a.ppm")).unwrap();
        let cfg = DatasetConfig {
            scales: vec![1.0],
            augment: true,
            ..DatasetConfig::new(21, TrainingNoise::Uniform { lo: 0.1, hi: 0.5 }, 5)
        };
        let set = build_training_set(dir.path(), &cfg).unwrap();
        // 5 variants, 9 patches each
        assert_eq!(set.len(), 45);
        let mut densities = std::collections::BTreeSet::new();
        for p in &set.patches {
            densities.insert(p.provenance.aug_idx);
        }
        assert_eq!(densities.len(), 5);
    }
}
